"""Closed-loop clock simulation, prior-width calibration and stability scans.

Times are in the units of the :class:`~clockforge.noise.NoiseSpec` (the LO
coherence time ``Z`` follows from it); frequencies are angular. One cycle
interrogates for ``T`` and idles for ``T_D``. Per cycle the loop

1. accumulates ``phi_k = (w_k - c_k) T`` where ``w_k`` is the free-running
   LO frequency offset averaged over the interrogation and ``c_k`` the
   applied correction,
2. samples an outcome from ``P(x | phi_k)`` evaluated exactly at ``phi_k``,
3. maps it to ``phi_est`` and de-shrinks it by ``s = 1 - BMSE/delta_phi^2``,
4. forms the frequency estimate ``w_hat_k = c_k + m_k / T`` and updates the
   correction with the servo.

The de-shrunk estimate ``m_k`` is unbiased, so ``w_hat`` is the open-loop LO
frequency plus white measurement noise of variance ``efm / T^2``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numba
import numpy as np
from scipy.optimize import minimize_scalar

from . import estimation, noise as noise_mod, protocols
from .errors import (
    CalibrationError,
    InvalidArgumentError,
    PrecisionWarning,
    ScanRangeError,
    UnsupportedError,
)
from .prior import CHI, deadtime_width, prior_for, width_from_interrogation, combine_widths
from .protocols import ProtocolSpec

__all__ = [
    "ServoConfig",
    "ClockConfig",
    "ClockRunResult",
    "HopReport",
    "PriorCurve",
    "ScanResult",
    "run_clock",
    "run_many",
    "spawn_seeds",
    "detect_fringe_hop",
    "stage0_variance",
    "iterate_prior",
    "measure_deadtime_width",
    "ctl_efm",
    "stability_scan",
    "theory_sigma",
]

HOP_WINDOW = 200


@dataclass(frozen=True)
class ServoConfig:
    """Frequency servo.

    ``kind='predictor'`` fits a ridge-regularized linear predictor on the
    last ``history_len`` frequency estimates (weights summing to one) every
    ``refit_every`` cycles, with the integrator running until the first fit.
    ``kind='integrator'`` applies ``c += gain * m / T``.
    """

    kind: str = "predictor"
    history_len: int = 50
    ridge: float = 1e-6
    gain: float = 0.5
    refit_every: int = 1000

    def __post_init__(self):
        if self.kind not in ("predictor", "integrator"):
            raise InvalidArgumentError(f"unknown servo kind {self.kind!r}")
        if self.history_len < 1:
            raise InvalidArgumentError("history_len must be >= 1")
        if not 0 < self.gain < 2:
            raise InvalidArgumentError("gain must lie in (0, 2)")
        if self.ridge < 0 or self.refit_every < 1:
            raise InvalidArgumentError("ridge must be >= 0 and refit_every >= 1")


@dataclass(frozen=True)
class ClockConfig:
    """Everything needed to reproduce one closed-loop run.

    Attributes
    ----------
    measurement : {'sample', 'expected'}
        ``expected`` replaces the sampled estimate by its conditional mean,
        a noiseless loop used for convergence checks.
    initial_offset : float
        Static angular frequency offset added to the LO.
    """

    protocol: ProtocolSpec
    noise: noise_mod.NoiseSpec
    T: float
    prior_width: float
    T_D: float = 0.0
    n_cycles: int = 100_000
    seed: int = 0
    servo: ServoConfig = field(default_factory=ServoConfig)
    measurement: str = "sample"
    initial_offset: float = 0.0
    burn_in: int | None = None
    noise_scale: float = 1.0

    def __post_init__(self):
        if not self.T > 0 or self.T_D < 0:
            raise InvalidArgumentError("T must be positive and T_D non-negative")
        if not self.prior_width > 0:
            raise InvalidArgumentError("prior_width must be positive")
        if self.n_cycles < 2 * HOP_WINDOW:
            raise InvalidArgumentError(f"n_cycles must be >= {2 * HOP_WINDOW}")
        if self.measurement not in ("sample", "expected"):
            raise InvalidArgumentError("measurement must be 'sample' or 'expected'")
        if self.noise_scale < 0:
            raise InvalidArgumentError("noise_scale must be non-negative")

    @property
    def T_C(self) -> float:
        return self.T + self.T_D

    @property
    def duty_cycle(self) -> float:
        return self.T / self.T_C

    def manifest(self) -> dict:
        d = asdict(self)
        d["protocol"] = self.protocol.to_dict()
        d["noise"] = self.noise.to_dict()
        d["rng"] = "numpy.PCG64 via SeedSequence(seed).spawn(2): [noise, measurement]"
        return d


@dataclass(frozen=True)
class HopReport:
    hopped: bool
    first_index: int | None


@dataclass(eq=False)
class ClockRunResult:
    """Outcome of one closed-loop run.

    ``extrapolated_sigma`` is ``sigma(tau) sqrt(tau)`` in the noise-spec time
    unit; ``sigma_scaled`` multiplies it by ``omega0 sqrt(Z)``. Both are only
    meaningful when ``fringe_hop`` is false. ``capture_range`` is the hop
    threshold on the window-mean phase used for this protocol.
    """

    config: ClockConfig
    adev: noise_mod.AdevCurve
    fringe_hop: bool
    first_hop: int | None
    histogram: tuple
    extrapolated_sigma: float
    sigma_scaled: float
    phase_std: float
    capture_range: float = math.pi
    phases: np.ndarray | None = None
    estimates: np.ndarray | None = None
    stabilized: np.ndarray | None = None


def spawn_seeds(master: int, n: int) -> list[int]:
    """Per-run seeds split from ``master`` with :class:`numpy.random.SeedSequence`."""
    return [int(s.generate_state(1, np.uint64)[0]) for s in np.random.SeedSequence(master).spawn(n)]


def _substeps(T: float, T_D: float, max_den: int = 64) -> tuple[int, int]:
    if T_D == 0:
        return 1, 0
    frac = Fraction(T_D / T).limit_denominator(max_den)
    if abs(float(frac) - T_D / T) > 1e-9 * (T_D / T):
        raise UnsupportedError(f"T_D/T = {T_D / T!r} is not a ratio of small integers")
    return frac.denominator, frac.numerator


@numba.njit(cache=True)
def _loop(phi_free, T, psi, u, mvals, est_rows, s, expected, unif,
          predictor, gain, hist_len, ridge, refit_every):  # fmt: skip
    n = phi_free.size
    dim = psi.size
    phis = np.empty(n)
    mhat = np.empty(n)
    corr = np.empty(n)
    p = np.empty(dim)
    v = np.empty(dim, dtype=np.complex128)
    nf = hist_len - 1
    hist = np.zeros(hist_len)
    xtx = np.zeros((nf, nf))
    xty = np.zeros(nf)
    coef = np.zeros(nf)
    feat_prev = np.zeros(nf)
    fitted = False
    c = 0.0
    for k in range(n):
        corr[k] = c
        phi = phi_free[k] - c * T
        phis[k] = phi
        for j in range(dim):
            v[j] = psi[j] * np.exp(-1j * mvals[j] * phi)
        total = 0.0
        for i in range(dim):
            acc = 0.0 + 0.0j
            for j in range(dim):
                acc += u[i, j] * v[j]
            p[i] = acc.real * acc.real + acc.imag * acc.imag
            total += p[i]
        if expected:
            est = 0.0
            for i in range(dim):
                est += p[i] * est_rows[i]
            est /= total
        else:
            target = unif[k] * total
            cum = 0.0
            row = dim - 1
            for i in range(dim):
                cum += p[i]
                if target < cum:
                    row = i
                    break
            est = est_rows[row]
        m = est / s
        mhat[k] = m
        w_hat = c + m / T
        # ring buffer: hist[k % hist_len] holds w_hat_k
        hist[k % hist_len] = w_hat
        if predictor and nf > 0 and k >= hist_len:
            # regress w_hat_k - w_hat_{k-1} on features built at k-1
            y = w_hat - hist[(k - 1) % hist_len]
            for a in range(nf):
                xty[a] += feat_prev[a] * y
                for b in range(nf):
                    xtx[a, b] += feat_prev[a] * feat_prev[b]
        if predictor and nf > 0 and k >= hist_len - 1:
            for a in range(nf):
                feat_prev[a] = hist[(k - 1 - a) % hist_len] - w_hat
        if predictor and nf > 0 and k >= 2 * hist_len and (k + 1) % refit_every == 0:
            tr = 0.0
            for a in range(nf):
                tr += xtx[a, a]
            lam = ridge * tr / nf + 1e-300
            mat = xtx.copy()
            for a in range(nf):
                mat[a, a] += lam
            coef = np.linalg.solve(mat, xty)
            fitted = True
        if fitted:
            pred = w_hat
            for a in range(nf):
                pred += coef[a] * feat_prev[a]
            c = pred
        else:
            c = c + gain * m / T
    return phis, mhat, corr


def _estimator_rows(spec: ProtocolSpec, width: float):
    pr = prior_for(width, spec.n_atoms)
    circuit = protocols.build_circuit(spec)
    model = protocols.model_from_circuit(circuit, pr, derivative=False)
    table, report = estimation.estimate(model, spec.estimator)
    s = report.deshrink
    if not s > 1e-6:
        raise CalibrationError(f"prior width {width!r} leaves no information to feed back")
    return circuit, table.values[circuit.groups], s, report


def capture_range(circuit: protocols.Circuit, est_rows: np.ndarray, s: float, n_grid: int = 2049) -> float:
    """Half-width of the basin of the true lock point, capped at ``pi``.

    The first ``phi > 0`` where the expected de-shrunk estimate stops being
    positive. For ``sin(phi)``-like signals this is ``pi``; for GHZ it is
    ``pi / N``.
    """
    phis = np.linspace(0.0, math.pi, n_grid)[1:]
    rows = protocols.signal_probabilities(
        protocols.Circuit(circuit.psi, circuit.u_meas, circuit.m_values, np.arange(circuit.psi.size)), phis
    )
    mean_est = est_rows @ rows / s
    bad = np.flatnonzero(mean_est <= 0)
    return float(phis[bad[0]]) if bad.size else math.pi


def detect_fringe_hop(phases, estimates, window: int = HOP_WINDOW, threshold: float = math.pi) -> HopReport:
    """Flag a fringe hop in a locked-loop record.

    Fires in the first non-overlapping window where the mean of
    ``phi - phi_est`` exceeds ``pi`` or the mean of ``phi`` exceeds
    ``threshold`` in magnitude.
    """
    phases = np.asarray(phases, dtype=float)
    estimates = np.asarray(estimates, dtype=float)
    n = (phases.size // window) * window
    if n == 0:
        return HopReport(False, None)
    diff = (phases[:n] - estimates[:n]).reshape(-1, window).mean(axis=1)
    mean_phi = phases[:n].reshape(-1, window).mean(axis=1)
    bad = np.flatnonzero((np.abs(diff) > math.pi) | (np.abs(mean_phi) > min(threshold, math.pi)))
    if bad.size == 0:
        return HopReport(False, None)
    return HopReport(True, int(bad[0] * window))


def _adev_taus(n: int, T_C: float, per_decade: int = 8) -> np.ndarray:
    m_max = max(1, n // 4)
    m = np.unique(np.round(np.logspace(0, math.log10(m_max), int(per_decade * math.log10(max(m_max, 10))) + 2)))
    return m * T_C


def run_clock(cfg: ClockConfig, keep_traces: bool = False) -> ClockRunResult:
    """Simulate the closed feedback loop described by ``cfg``."""
    spec = cfg.protocol
    n_t, n_d = _substeps(cfg.T, cfg.T_D)
    steps = n_t + n_d
    dt = cfg.T / n_t
    noise_seed, meas_seed = np.random.SeedSequence(cfg.seed).spawn(2)
    n = cfg.n_cycles
    y = noise_mod.generate_trace(cfg.noise, dt, n * steps, np.random.default_rng(noise_seed))
    y = cfg.noise_scale * y.reshape(n, steps)
    omega0 = cfg.noise.omega0
    y_interrog = y[:, :n_t].mean(axis=1) + cfg.initial_offset / omega0
    y_cycle = y.mean(axis=1) + cfg.initial_offset / omega0
    phi_free = omega0 * cfg.T * y_interrog

    circuit, est_rows, s, _ = _estimator_rows(spec, cfg.prior_width)
    unif = np.random.default_rng(meas_seed).random(n)
    servo = cfg.servo
    phis, mhat, corr = _loop(
        np.ascontiguousarray(phi_free), cfg.T, np.ascontiguousarray(circuit.psi),
        np.ascontiguousarray(circuit.u_meas), circuit.m_values.astype(float),
        np.ascontiguousarray(est_rows, dtype=float), s, cfg.measurement == "expected", unif,
        servo.kind == "predictor", servo.gain, servo.history_len, servo.ridge, servo.refit_every,
    )  # fmt: skip
    stabilized = y_cycle - corr / omega0
    capture = capture_range(circuit, est_rows, s)
    hop = detect_fringe_hop(phis, mhat, threshold=capture)

    burn = cfg.burn_in if cfg.burn_in is not None else max(2 * servo.refit_every + 2 * servo.history_len, n // 100)
    burn = min(burn, n // 2)
    tail = stabilized[burn:]
    curve = noise_mod.allan_deviation(tail, cfg.T_C, _adev_taus(tail.size, cfg.T_C))
    m_lo = min(500.0, tail.size / 200.0)
    fit_range = (m_lo * cfg.T_C, tail.size / 20.0 * cfg.T_C)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PrecisionWarning)
        try:
            ext = noise_mod.extrapolate_unit_time(curve, fit_range)
        except Exception:  # too short for the fit window
            ext = math.nan
    scale = omega0 * math.sqrt(cfg.noise.Z)
    hist = np.histogram(phis[burn:], bins=128, range=(-math.pi, math.pi))
    return ClockRunResult(
        cfg, curve, hop.hopped, hop.first_index, hist, ext, ext * scale, float(np.std(phis[burn:])),
        capture, phis if keep_traces else None, mhat if keep_traces else None,
        stabilized if keep_traces else None,
    )  # fmt: skip


def run_many(cfg: ClockConfig, n_runs: int) -> list[ClockRunResult]:
    """Independent runs with seeds split from ``cfg.seed``."""
    from dataclasses import replace

    return [run_clock(replace(cfg, seed=s)) for s in spawn_seeds(cfg.seed, n_runs)]


# prior-width calibration ----------------------------------------------------


def stage0_variance(n_atoms: int, T_over_Z, alpha: int = 0) -> np.ndarray:
    """Heuristic prior variance: log-log line through ``(0.01, 0.01^(4/3) N^(-1/4))``
    and ``(1, chi(alpha))``."""
    x0, y0 = math.log(0.01), math.log(0.01 ** (4 / 3) * n_atoms ** (-0.25))
    x1, y1 = 0.0, math.log(CHI[alpha])
    x = np.log(np.asarray(T_over_Z, dtype=float))
    return np.exp(y0 + (y1 - y0) * (x - x0) / (x1 - x0))


@dataclass(eq=False)
class PriorCurve:
    """Calibrated prior width ``delta_phi(T)`` as a log-log polynomial."""

    coeffs: np.ndarray
    Z: float
    alpha: int
    stages: list = field(default_factory=list)

    def variance(self, T) -> np.ndarray:
        x = np.log(np.asarray(T, dtype=float) / self.Z)
        return np.exp(np.polyval(self.coeffs, x))

    def width(self, T) -> np.ndarray:
        return np.sqrt(self.variance(T))

    def __call__(self, T):
        w = self.width(T)
        return float(w) if np.ndim(w) == 0 else w


def _fit_curve(x_t: np.ndarray, var: np.ndarray, alpha: int, degree: int = 5) -> np.ndarray:
    x = np.append(np.log(x_t), 0.0)
    yv = np.append(np.log(var), math.log(CHI[alpha]))
    deg = min(degree, x.size - 1)
    return np.polyfit(x, yv, deg)


def iterate_prior(
    n_atoms: int,
    noise: noise_mod.NoiseSpec,
    T_grid,
    stages: int = 3,
    n_cycles: int = 100_000,
    seed: int = 0,
    servo: ServoConfig | None = None,
) -> PriorCurve:
    """Self-consistent prior width from repeated closed-loop simulation.

    Stage 0 uses :func:`stage0_variance`. Stage 1 runs CSS, later stages the
    SSS with twisting optimized for the current width, both with the optimal
    Bayesian estimator. After each stage the variance of the locked-loop
    phases is fitted by a fifth-order log-log polynomial through the power-law
    anchor at ``T = Z``; points that hopped are left out.

    Raises
    ------
    CalibrationError
        If every grid point of a stage hops.
    """
    from .optimizer import optimize_sss_mu

    if stages < 1:
        raise InvalidArgumentError("stages must be >= 1")
    alpha = noise.alpha
    Z = noise.Z
    T_grid = np.asarray(sorted(T_grid), dtype=float)
    servo = servo or ServoConfig()
    x_t = T_grid / Z
    coeffs = _fit_curve(x_t, stage0_variance(n_atoms, x_t, alpha), alpha, degree=1)
    curve = PriorCurve(coeffs, Z, alpha)
    curve.stages.append({"stage": 0, "T": T_grid.tolist(), "variance": curve.variance(T_grid).tolist()})
    seeds = spawn_seeds(seed, stages)
    for stage in range(1, stages + 1):
        measured, kept = [], []
        for i, (T, run_seed) in enumerate(zip(T_grid, spawn_seeds(seeds[stage - 1], T_grid.size))):
            width = float(curve.width(T))
            if stage == 1:
                spec = ProtocolSpec.css(n_atoms)
            else:
                mu = optimize_sss_mu(n_atoms, prior_for(width, n_atoms), "optimal_bayes")
                spec = ProtocolSpec.sss(n_atoms, mu)
            res = run_clock(ClockConfig(spec, noise, T, width, n_cycles=n_cycles, seed=run_seed, servo=servo))
            if not res.fringe_hop:
                measured.append(res.phase_std**2)
                kept.append(i)
        if not kept:
            raise CalibrationError(f"every grid point hopped in stage {stage}")
        coeffs = _fit_curve(x_t[kept], np.asarray(measured), alpha)
        curve = PriorCurve(coeffs, Z, alpha, curve.stages)
        curve.stages.append(
            {"stage": stage, "T": T_grid[kept].tolist(), "variance": measured, "hopped": sorted(set(range(T_grid.size)) - set(kept))}
        )
    return curve


def measure_deadtime_width(noise: noise_mod.NoiseSpec, T_D: float, n_cycles: int = 100_000, seed: int = 0) -> float:
    """Width of the phase error accumulated across one dead time.

    The free-running LO is simulated with cycle duration ``T_D``; the change
    of the cycle-averaged frequency between consecutive cycles times ``T_D``
    is the phase a servo cannot anticipate. Returns its standard deviation.
    """
    if n_cycles < 10_000:
        raise InvalidArgumentError("n_cycles must be >= 1e4")
    if T_D < 0:
        raise InvalidArgumentError("T_D must be non-negative")
    if T_D == 0:
        return 0.0
    y = noise_mod.generate_trace(noise, T_D, n_cycles, seed)
    w_new = noise.omega0 * np.diff(y)
    return float(np.std(w_new * T_D))


# theory-mode stability scan ----------------------------------------------------


def _sin_readout_bmse(delta_phi: float) -> float:
    # posterior variance given a perfect readout of sin(phi): the ambiguity
    # set of phi is {a + 2 pi k, pi - a + 2 pi k}
    pr = prior_for(delta_phi, 1)
    phi = pr.nodes
    a = np.arcsin(np.sin(phi))
    ks = np.arange(-6, 7)
    cands = np.concatenate([a[:, None] + 2 * math.pi * ks, (math.pi - a)[:, None] + 2 * math.pi * ks], axis=1)
    logw = -0.5 * (cands / delta_phi) ** 2
    w = np.exp(logw - logw.max(axis=1, keepdims=True))
    w /= w.sum(axis=1, keepdims=True)
    mean = np.sum(w * cands, axis=1)
    return float(np.dot(pr.weights, np.sum(w * (cands - mean[:, None]) ** 2, axis=1)))


def ctl_efm(delta_phi: float, estimator: str = "linear") -> float:
    """Effective measurement variance of an ``S_y`` readout as ``N -> inf``.

    Only the prior-width (coherence-time) contribution survives. Linear:
    ``sinh(d^2) - d^2``, shared by CSS and SSS. Optimal Bayes: the posterior
    variance left by a perfect readout of ``sin(phi)``.
    """
    d2 = delta_phi**2
    if estimator == "linear":
        return math.sinh(d2) - d2
    if estimator == "optimal_bayes":
        b = _sin_readout_bmse(delta_phi)
        return estimation.efm_transform(b, d2) if b > 0 else 0.0
    raise InvalidArgumentError(f"unknown estimator {estimator!r}")


def protocol_efm(kind: str, n_atoms: int, delta_phi: float, estimator: str) -> float:
    """Smallest efm of a standard protocol at prior width ``delta_phi``.

    SSS twisting is optimized; linear estimators use the closed forms.
    """
    from .optimizer import optimize_sss_mu

    if estimator == "linear" and kind == "css":
        return protocols.analytic_efm("css", n_atoms, delta_phi)
    if estimator == "linear" and kind == "sss":
        res = minimize_scalar(
            lambda mu: _safe_sss_efm(n_atoms, delta_phi, mu), bounds=(0.0, 1.0), method="bounded", options={"xatol": 1e-10}
        )
        return float(min(res.fun, protocols.analytic_efm("css", n_atoms, delta_phi)))
    pr = prior_for(delta_phi, n_atoms)
    if kind == "css":
        spec = ProtocolSpec.css(n_atoms, estimator)
    elif kind == "sss":
        spec = ProtocolSpec.sss(n_atoms, optimize_sss_mu(n_atoms, pr, estimator), estimator=estimator)
    elif kind == "ghz":
        spec = ProtocolSpec.ghz(n_atoms, estimator=estimator)
    else:
        raise InvalidArgumentError(f"unsupported protocol kind {kind!r}")
    model = protocols.statistical_model(spec, pr, derivative=False)
    return estimation.estimate(model, estimator)[1].efm


def _safe_sss_efm(n, d, mu):
    try:
        return protocols.analytic_efm("sss", n, d, mu)
    except Exception:
        return math.inf


def theory_sigma(efm: float, T: float, T_D: float, noise: noise_mod.NoiseSpec) -> float:
    """Scaled ADEV ``sigma omega0 sqrt(tau Z)`` from an efm."""
    Z = noise.Z
    return noise_mod.adev_dimensionless(efm, T / Z, T_D / Z)


def _prior_width(T: float, T_D: float, noise: noise_mod.NoiseSpec) -> float:
    Z = noise.Z
    a = noise.alpha
    return combine_widths(width_from_interrogation(T, Z, a), deadtime_width(T_D, Z, a))


def _dick_scaled(noise: noise_mod.NoiseSpec, T: float, T_D: float) -> float:
    # sigma^2 omega0^2 tau Z at tau = 1
    return noise_mod.dick_effect(noise, T, T_D, 1.0) * noise.omega0**2 * noise.Z


@dataclass
class ScanResult:
    """Theory-mode stability figures, all scaled by ``omega0 sqrt(tau Z)``."""

    n_atoms: list
    sigma_min: list
    T_min: list
    sigma_lim: float
    T_lim: float | None
    N_crit: int | None
    dick_zero: bool
    rows: list = field(default_factory=list)


def stability_scan(
    kind: str,
    N_list,
    T_grid,
    T_D: float,
    noise: noise_mod.NoiseSpec,
    estimator: str = "linear",
) -> ScanResult:
    """Minimal total ADEV per ``N`` and the dead-time floor.

    Raises
    ------
    ScanRangeError
        If a minimum over ``T_grid`` falls on the first or last grid point.
    """
    T_grid = np.asarray(sorted(T_grid), dtype=float)
    if T_grid.size < 3:
        raise InvalidArgumentError("T_grid needs at least 3 points")
    dick = np.array([_dick_scaled(noise, T, T_D) for T in T_grid])
    widths = np.array([_prior_width(T, T_D, noise) for T in T_grid])
    rows = []
    sig_min, t_min = [], []
    for n in N_list:
        tot = []
        for T, w, dk in zip(T_grid, widths, dick):
            efm = protocol_efm(kind, int(n), float(w), estimator)
            q2 = theory_sigma(efm, T, T_D, noise) ** 2
            tot.append(math.sqrt(q2 + dk))
            rows.append({"N": int(n), "T": float(T), "delta_phi": float(w), "efm": efm, "sigma_qpn_ctl": math.sqrt(q2), "sigma_dick": math.sqrt(dk), "sigma_total": tot[-1]})
        i = int(np.argmin(tot))
        if i in (0, T_grid.size - 1):
            raise ScanRangeError(f"minimum for N={n} at the edge of T_grid (T={T_grid[i]!r})")
        sig_min.append(tot[i])
        t_min.append(float(T_grid[i]))
    if T_D == 0:
        return ScanResult([int(n) for n in N_list], sig_min, t_min, 0.0, None, None, True, rows)
    lim = np.array(
        [math.sqrt(theory_sigma(ctl_efm(w, estimator), T, T_D, noise) ** 2 + dk) if ctl_efm(w, estimator) > 0 else math.sqrt(dk)
         for T, w, dk in zip(T_grid, widths, dick)]
    )  # fmt: skip
    j = int(np.argmin(lim))
    if j in (0, T_grid.size - 1):
        raise ScanRangeError(f"sigma_lim minimum at the edge of T_grid (T={T_grid[j]!r})")
    sigma_lim, T_lim = float(lim[j]), float(T_grid[j])
    n_crit = None
    for n in sorted(int(v) for v in N_list):
        efm = protocol_efm(kind, n, float(widths[j]), estimator)
        if theory_sigma(efm, T_lim, T_D, noise) <= 1.01 * sigma_lim:
            n_crit = n
            break
    return ScanResult([int(n) for n in N_list], sig_min, t_min, sigma_lim, T_lim, n_crit, False, rows)
