"""Command-line entry point.

``clockforge <command> --config FILE [--out DIR] [--threads N] [--seed S]``

Each command writes ``<command>.csv`` and ``manifest.json`` into the output
directory. Exit codes: 0 success, 2 configuration error, 3 numerical error,
4 results invalidated by a fringe hop.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

import numpy as np

from . import bounds, clock, estimation, noise, optimizer, protocols
from .config import COMMANDS, config_hash, load_config
from .errors import ClockforgeError, ConfigurationError
from .prior import prior_for, width_from_interrogation

log = logging.getLogger("clockforge")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_HOP = 0, 2, 3, 4


def _version() -> str:
    try:
        return version("artifact")
    except PackageNotFoundError:  # pragma: no cover - running from a source tree
        return "0+unknown"


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def _write_csv(path: Path, header: list[str], rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(r.get(h, "")) for h in header])


def _pmap(fn, items, threads: int):
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


# commands ------------------------------------------------------------------


def cmd_bounds(cfg, args):
    rows = []
    for n in cfg.n_atoms:
        for d in cfg.delta_phi:
            pr = prior_for(d, n)
            ghz = protocols.prepare_state(protocols.ProtocolSpec.ghz(n))
            css_model = protocols.statistical_model(protocols.ProtocolSpec.css(n), pr)
            res = bounds.oqi(n, pr, cfg.tol, cfg.max_iter)
            row = {
                "N": n,
                "delta_phi": d,
                "oqi": res.bound,
                "oqi_converged": res.converged,
                "bqcrb_ghz": bounds.bqcrb(ghz, pr),
                "bcrb_css": estimation.bcrb(css_model),
                "bmse_css_optimal": estimation.optimal_bayes_estimate(css_model)[1].bmse,
                "pi_hl": bounds.pi_heisenberg_limit(n),
                "oqi_asymptotic": bounds.oqi_asymptotic(n, d),
            }
            if cfg.include_poi:
                row["poi"] = bounds.poi_optimal(n, pr, cfg.tol, cfg.max_iter).bound
            rows.append(row)
    header = ["N", "delta_phi", "oqi", "oqi_converged", "bqcrb_ghz", "bcrb_css", "bmse_css_optimal", "pi_hl", "oqi_asymptotic"]
    if cfg.include_poi:
        header.append("poi")
    return header, rows, {}, EXIT_OK


def cmd_protocol(cfg, args):
    rows = []
    for i, entry in enumerate(cfg.protocols):
        spec = entry.build()
        for d in cfg.delta_phi:
            pr = prior_for(d, spec.n_atoms)
            model = protocols.statistical_model(spec, pr)
            _, rep = estimation.estimate(model, spec.estimator)
            rows.append({
                "index": i, "kind": spec.kind, "N": spec.n_atoms, "estimator": spec.estimator,
                "delta_phi": d, "bmse": rep.bmse, "efm": rep.efm,
                "bcrb": estimation.bcrb(model), "bqcrb": bounds.bqcrb(protocols.prepare_state(spec), pr),
            })  # fmt: skip
    header = ["index", "kind", "N", "estimator", "delta_phi", "bmse", "efm", "bcrb", "bqcrb"]
    return header, rows, {}, EXIT_OK


def cmd_optimize(cfg, args):
    rows, sets = [], {}
    for t in cfg.T_over_Z:
        d = width_from_interrogation(t, 1.0, cfg.alpha)
        pr = prior_for(d, cfg.n_atoms)
        warm = []
        for layers in sorted(cfg.layers, key=lambda l: (l[0] + l[1], l)):
            starts = tuple(optimizer.embed_params(p, low, layers) for low, p in warm if low[0] <= layers[0] and low[1] <= layers[1])
            task = optimizer.OptimizationTask(
                cfg.n_atoms, tuple(layers), pr, cfg.objective, cfg.budget, args.seed if args.seed is not None else cfg.seed,
                warm_start=starts, top_k=cfg.top_k,
            )  # fmt: skip
            cs = optimizer.optimize_protocol(task)
            warm.append((tuple(layers), np.asarray(cs.best.spec.params)))
            sets[f"T{t!r}_n{layers[0]}m{layers[1]}"] = json.loads(cs.to_json())
            efm = estimation.efm_transform(cs.best.value, pr.variance)
            rows.append({
                "T_over_Z": t, "delta_phi": d, "n": layers[0], "m": layers[1], "bmse": cs.best.value,
                "efm": efm, "sigma_scaled": noise.adev_dimensionless(efm, t), "converged": cs.metadata["converged"],
            })  # fmt: skip
    header = ["T_over_Z", "delta_phi", "n", "m", "bmse", "efm", "sigma_scaled", "converged"]
    return header, rows, {"candidates": sets}, EXIT_OK


def _clock_job(job):
    return clock.run_clock(job)


def cmd_clock(cfg, args):
    nz = cfg.noise.build()
    Z = nz.Z
    n = cfg.protocol.n_atoms
    curve = None
    if cfg.prior.mode == "calibrated":
        grid = cfg.prior.T_grid or list(np.round(np.logspace(math.log10(0.02), math.log10(0.6), 10), 4))
        curve = clock.iterate_prior(n, nz, [g * Z for g in grid], cfg.prior.stages, cfg.prior.n_cycles, cfg.seed)
    servo = clock.ServoConfig(**cfg.servo.model_dump())
    seed = args.seed if args.seed is not None else cfg.seed
    jobs, meta = [], []
    for t in cfg.T_over_Z:
        T, T_D = t * Z, cfg.TD_over_Z * Z
        if curve is not None:
            width = float(curve(T))
        else:
            width = clock._prior_width(T, T_D, nz)
        if cfg.protocol.kind == "sss" and cfg.optimize_mu:
            est = cfg.protocol.estimator
            mu = optimizer.optimize_sss_mu(n, prior_for(width, n), est)
            spec = protocols.ProtocolSpec.sss(n, mu, estimator=est)
        else:
            spec = cfg.protocol.build()
        _, rep = estimation.estimate(protocols.statistical_model(spec, prior_for(width, n), derivative=False), spec.estimator)
        theory = clock.theory_sigma(rep.efm, T, T_D, nz)
        base = clock.ClockConfig(spec, nz, T, width, T_D, cfg.n_cycles, seed, servo)
        for r, s in enumerate(clock.spawn_seeds(seed + int(round(t * 1e6)), cfg.runs)):
            jobs.append(replace(base, seed=s))
            meta.append((t, r, width, theory))
    results = _pmap(_clock_job, jobs, args.threads)
    rows = []
    for (t, r, width, theory), res in zip(meta, results):
        rows.append({
            "T_over_Z": t, "TD_over_Z": cfg.TD_over_Z, "run": r, "seed": res.config.seed, "delta_phi": width,
            "sigma_scaled": res.sigma_scaled, "theory_scaled": theory, "fringe_hop": res.fringe_hop,
            "first_hop": "" if res.first_hop is None else res.first_hop, "phase_std": res.phase_std,
        })  # fmt: skip
    header = ["T_over_Z", "TD_over_Z", "run", "seed", "delta_phi", "sigma_scaled", "theory_scaled", "fringe_hop", "first_hop", "phase_std"]
    hopped = any(res.fringe_hop for res in results)
    extra = {"fringe_hops": int(sum(res.fringe_hop for res in results)), "runs": [j.manifest() for j in jobs]}
    return header, rows, extra, EXIT_HOP if hopped else EXIT_OK


def cmd_prior(cfg, args):
    nz = cfg.noise.build()
    Z = nz.Z
    seed = args.seed if args.seed is not None else cfg.seed
    curve = clock.iterate_prior(cfg.n_atoms, nz, [t * Z for t in cfg.T_over_Z], cfg.stages, cfg.n_cycles, seed)
    rows = []
    for st in curve.stages:
        for T, v in zip(st["T"], st["variance"]):
            rows.append({"stage": st["stage"], "T_over_Z": T / Z, "variance": v, "kind": "measured" if st["stage"] else "heuristic"})
    for T in cfg.T_over_Z:
        rows.append({"stage": cfg.stages, "T_over_Z": T, "variance": float(curve.variance(T * Z)), "kind": "fit"})
    return ["stage", "T_over_Z", "variance", "kind"], rows, {"coeffs": curve.coeffs.tolist()}, EXIT_OK


def cmd_deadtime(cfg, args):
    nz = cfg.noise.build()
    Z = nz.Z
    rows, summary = [], []
    for td in cfg.TD_over_Z:
        scan = clock.stability_scan(cfg.kind, cfg.n_atoms, [t * Z for t in cfg.T_over_Z], td * Z, nz, cfg.estimator)
        for n, s, t in zip(scan.n_atoms, scan.sigma_min, scan.T_min):
            rows.append({"TD_over_Z": td, "N": n, "sigma_min": s, "T_min_over_Z": t / Z, "sigma_lim": scan.sigma_lim,
                         "T_lim_over_Z": "" if scan.T_lim is None else scan.T_lim / Z,
                         "N_crit": "" if scan.N_crit is None else scan.N_crit})  # fmt: skip
        summary.append({"TD_over_Z": td, "sigma_lim": scan.sigma_lim, "N_crit": scan.N_crit})
    header = ["TD_over_Z", "N", "sigma_min", "T_min_over_Z", "sigma_lim", "T_lim_over_Z", "N_crit"]
    return header, rows, {"summary": summary}, EXIT_OK


def cmd_allan(cfg, args):
    nz = cfg.noise.build()
    seed = args.seed if args.seed is not None else cfg.seed
    y = noise.generate_trace(nz, cfg.T_C, cfg.n_cycles, seed)
    taus = cfg.taus
    if taus is None:
        m = np.unique(np.round(np.logspace(0, math.log10(cfg.n_cycles // 3), 25)))
        taus = list(m * cfg.T_C)
    curve = noise.allan_deviation(y, cfg.T_C, taus)
    if cfg.export_trace:
        noise.export_trace(Path(args.out) / "trace.bin", y, cfg.T_C, nz, seed)
    rows = [{"tau_s": float(t), "sigma": float(s), "stderr": float(e)} for t, s, e in zip(curve.taus, curve.sigmas, curve.uncertainties)]
    return ["tau_s", "sigma", "stderr"], rows, {"Z": nz.Z}, EXIT_OK


HANDLERS = {
    "bounds": cmd_bounds,
    "protocol": cmd_protocol,
    "optimize": cmd_optimize,
    "clock": cmd_clock,
    "prior": cmd_prior,
    "deadtime": cmd_deadtime,
    "allan": cmd_allan,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="clockforge", description="Bayesian frequency metrology studies")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="YAML configuration file")
        sp.add_argument("--out", default=os.environ.get("CLOCKFORGE_OUT", "clockforge-out"))
        sp.add_argument("--threads", type=int, default=int(os.environ.get("CLOCKFORGE_THREADS", "1")))
        sp.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.command, args.config)
        if args.threads < 1:
            raise ConfigurationError("--threads must be >= 1")
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise ConfigurationError("--seed must be an unsigned 64-bit integer")
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        header, rows, extra, status = HANDLERS[args.command](cfg, args)
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ClockforgeError as exc:
        print(f"numerical error in {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    _write_csv(out / f"{args.command}.csv", header, rows)
    manifest = {
        "command": args.command,
        "version": _version(),
        "config": cfg.model_dump(mode="json"),
        "config_hash": config_hash(cfg),
        "seed_override": args.seed,
        "columns": header,
        "status": status,
        **extra,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str))
    if status == EXIT_HOP:
        print("fringe hop detected; results flagged", file=sys.stderr)
    return status


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
