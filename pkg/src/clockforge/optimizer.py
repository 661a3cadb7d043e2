"""Global optimization of variational Ramsey protocols.

Differential evolution (scipy, rand/1/bin) explores the parameter box of an
``[n, m]`` class; the best members are then refined by a compass search.
Twist strengths are boxed to ``[-2 pi, 2 pi]`` and rotation angles to
``[-pi, pi]``.

Regions of the ``(mu_1, mu_2)`` plane: I ``(+,+)``, II ``(-,+)``,
III ``(-,-)``, IV ``(+,-)`` inside ``|mu| <= pi``; V ``|mu_1| > pi`` only,
VI ``|mu_2| > pi`` only, VII both.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import differential_evolution, minimize_scalar

from . import estimation, protocols
from .errors import InvalidArgumentError
from .prior import PriorModel
from .protocols import ProtocolSpec, variational_param_count

__all__ = [
    "DE_SETTINGS",
    "OptimizationTask",
    "Candidate",
    "CandidateSet",
    "Objective",
    "compass_search",
    "optimize_protocol",
    "optimize_sss_mu",
    "landscape_scan",
    "embed_params",
    "region_label",
    "region_box",
    "REGIONS",
]

DE_SETTINGS = {"strategy": "rand1bin", "popsize": 15, "mutation": 0.7, "recombination": 0.9}
MU_BOX = 2 * math.pi
REGIONS = ("I", "II", "III", "IV", "V", "VI", "VII")


class Objective:
    """BMSE of an ``[n, m]`` protocol as a function of its flat parameters."""

    def __init__(self, n_atoms: int, layers: tuple, prior: PriorModel, estimator: str = "optimal_bayes"):
        self.n_atoms = int(n_atoms)
        self.layers = tuple(layers)
        self.prior = prior
        self.estimator = estimator
        self.dim = variational_param_count(*self.layers)
        self.evaluations = 0

    def spec(self, params) -> ProtocolSpec:
        return ProtocolSpec.variational(self.n_atoms, *self.layers, tuple(float(p) for p in params), self.estimator)

    def __call__(self, params) -> float:
        self.evaluations += 1
        model = protocols.statistical_model(self.spec(params), self.prior, derivative=False)
        return estimation.estimate(model, self.estimator)[1].bmse


def compass_search(f, x0, lower, upper, step: float = 0.25, tol: float = 1e-10, max_evals: int = 20000):
    """Derivative-free coordinate pattern search inside a box.

    The step is halved whenever no coordinate move improves ``f``; stops when
    it falls below ``tol``.
    """
    x = np.clip(np.asarray(x0, dtype=float), lower, upper)
    fx = f(x)
    evals = 1
    while step >= tol and evals < max_evals:
        improved = False
        for i in range(x.size):
            for sgn in (1.0, -1.0):
                y = x.copy()
                y[i] = min(max(y[i] + sgn * step, lower[i]), upper[i])
                if y[i] == x[i]:
                    continue
                fy = f(y)
                evals += 1
                if fy < fx:
                    x, fx, improved = y, fy, True
                    break
        if not improved:
            step *= 0.5
    return x, float(fx)


def _split(n: int, m: int, p):
    p = np.asarray(p, dtype=float)
    k = n + m
    n_free = k - 1 if n >= 1 else k
    mus = list(p[:k])
    pairs = [tuple(v) for v in p[k : k + 2 * n_free].reshape(n_free, 2)]
    if n >= 1:
        pairs = [(0.0, 0.0)] + pairs
    rest = p[k + 2 * n_free :]
    return mus, pairs, list(rest)


def _pack(n: int, m: int, mus, pairs, rots) -> np.ndarray:
    free = pairs[1:] if n >= 1 else pairs
    return np.array(list(mus) + [a for pair in free for a in pair] + list(rots), dtype=float)


def embed_params(params, lower: tuple, upper: tuple) -> np.ndarray:
    """Map ``lower``-class parameters into the ``upper`` class with idle extra twists."""
    n0, m0 = lower
    n1, m1 = upper
    if n1 < n0 or m1 < m0:
        raise InvalidArgumentError("upper class must contain the lower class")
    mus, pairs, rots = _split(n0, m0, params)
    prep_mu = [0.0] * (n1 - n0) + mus[:n0] if n0 == 0 else mus[:n0] + [0.0] * (n1 - n0)
    prep_ax = pairs[:n0] + [(0.0, 0.0)] * (n1 - n0)
    meas_mu = mus[n0:] + [0.0] * (m1 - m0)
    meas_ax = pairs[n0:] + [(0.0, 0.0)] * (m1 - m0)
    return _pack(n1, m1, prep_mu + meas_mu, prep_ax + meas_ax, rots)


def region_label(mu1: float, mu2: float) -> str:
    b1, b2 = abs(mu1) > math.pi, abs(mu2) > math.pi
    if b1 and b2:
        return "VII"
    if b1:
        return "V"
    if b2:
        return "VI"
    return {(True, True): "I", (False, True): "II", (False, False): "III", (True, False): "IV"}[(mu1 >= 0, mu2 >= 0)]


def region_box(label: str) -> tuple[tuple, tuple]:
    """``(mu1_range, mu2_range)`` boxes; V-VII use the positive band."""
    pi = math.pi
    boxes = {
        "I": ((0, pi), (0, pi)),
        "II": ((-pi, 0), (0, pi)),
        "III": ((-pi, 0), (-pi, 0)),
        "IV": ((0, pi), (-pi, 0)),
        "V": ((pi, 2 * pi), (-pi, pi)),
        "VI": ((-pi, pi), (pi, 2 * pi)),
        "VII": ((pi, 2 * pi), (pi, 2 * pi)),
    }
    if label not in boxes:
        raise InvalidArgumentError(f"unknown region {label!r}")
    return boxes[label]


def _bounds(layers: tuple, region: str | None) -> tuple[np.ndarray, np.ndarray]:
    n, m = layers
    dim = variational_param_count(n, m)
    lo = np.full(dim, -math.pi)
    hi = np.full(dim, math.pi)
    k = n + m
    lo[:k], hi[:k] = -MU_BOX, MU_BOX
    if region is not None:
        if k < 2:
            raise InvalidArgumentError("regions need at least two twists")
        (a0, a1), (b0, b1) = region_box(region)
        lo[0], hi[0], lo[1], hi[1] = a0, a1, b0, b1
    return lo, hi


@dataclass(frozen=True)
class Candidate:
    spec: ProtocolSpec
    value: float
    region: str | None = None


@dataclass
class CandidateSet:
    """Protocols sorted by ascending objective, with run metadata."""

    candidates: list
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.candidates = sorted(self.candidates, key=lambda c: c.value)

    @property
    def best(self) -> Candidate:
        return self.candidates[0]

    def __len__(self):
        return len(self.candidates)

    def to_json(self) -> str:
        rows = [{"protocol": c.spec.to_dict(), "objective": c.value, "region": c.region} for c in self.candidates]
        return json.dumps({"candidates": rows, "metadata": self.metadata}, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "CandidateSet":
        d = json.loads(text)
        cands = [Candidate(ProtocolSpec.from_dict(r["protocol"]), float(r["objective"]), r["region"]) for r in d["candidates"]]
        return cls(cands, d.get("metadata", {}))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())


@dataclass(frozen=True)
class OptimizationTask:
    """Parameters of one variational optimization.

    ``budget`` caps objective evaluations of the evolution stage; ``warm_start``
    seeds the initial population with given parameter vectors.
    """

    n_atoms: int
    layers: tuple
    prior: PriorModel
    objective: str = "optimal_bayes"
    budget: int = 20000
    seed: int = 0
    region: str | None = None
    warm_start: tuple = ()
    top_k: int = 3

    def __post_init__(self):
        if self.objective not in ("optimal_bayes", "linear"):
            raise InvalidArgumentError(f"unknown objective {self.objective!r}")
        dim = variational_param_count(*self.layers)
        if self.budget < DE_SETTINGS["popsize"] * dim * 2:
            raise InvalidArgumentError("budget must cover at least two generations")


def optimize_protocol(task: OptimizationTask) -> CandidateSet:
    """Differential evolution over the task's box, then compass polish."""
    obj = Objective(task.n_atoms, task.layers, task.prior, task.objective)
    lo, hi = _bounds(task.layers, task.region)
    dim = obj.dim
    pop = DE_SETTINGS["popsize"] * dim
    rng = np.random.default_rng(task.seed)
    init = lo + (hi - lo) * rng.random((pop, dim))
    for i, w in enumerate(task.warm_start[:pop]):
        init[i] = np.clip(np.asarray(w, dtype=float), lo, hi)
    maxiter = max(1, task.budget // pop - 1)
    history: list[float] = []

    def cb(intermediate_result):
        history.append(float(intermediate_result.fun))

    res = differential_evolution(
        obj, list(zip(lo, hi)), strategy=DE_SETTINGS["strategy"], popsize=DE_SETTINGS["popsize"],
        mutation=DE_SETTINGS["mutation"], recombination=DE_SETTINGS["recombination"], init=init,
        maxiter=maxiter, tol=1e-12, atol=0.0, polish=False, rng=task.seed, callback=cb, updating="deferred",
    )  # fmt: skip
    order = np.argsort(res.population_energies)
    starts = [res.population[i] for i in order[: task.top_k]]
    cands = []
    for x0 in starts:
        x, fx = compass_search(obj, x0, lo, hi)
        label = region_label(x[0], x[1]) if sum(task.layers) >= 2 else None
        cands.append(Candidate(obj.spec(x), fx, label))
    meta = {
        "de": dict(DE_SETTINGS, maxiter=maxiter, population=pop, polish="compass tol 1e-10"),
        "seed": task.seed,
        "converged": bool(res.success),
        "message": str(res.message),
        "evaluations": obj.evaluations,
        "best_history": history,
        "n_atoms": task.n_atoms,
        "layers": list(task.layers),
        "prior_width": task.prior.width,
        "region": task.region,
    }
    return CandidateSet(cands, meta)


def optimize_sss_mu(
    n_atoms: int, prior: PriorModel, estimator: str = "optimal_bayes", branch: str = "first"
) -> float:
    """Twisting strength minimizing the SSS BMSE on ``prior``.

    A log-spaced scan over ``(1e-4, pi)`` brackets the minimum, which is then
    refined by bounded scalar minimization. ``branch='first'`` keeps the
    smallest-``mu`` local minimum (the squeezing branch); ``'global'`` may
    return an over-twisted state whose lock range is much narrower.
    """
    if branch not in ("first", "global"):
        raise InvalidArgumentError("branch must be 'first' or 'global'")
    if n_atoms < 2:
        return 0.0

    def f(mu):
        spec = ProtocolSpec.sss(n_atoms, float(mu), estimator=estimator)
        return estimation.estimate(protocols.statistical_model(spec, prior, derivative=False), estimator)[1].bmse

    grid = np.concatenate(([0.0], np.logspace(-4, math.log10(math.pi), 48)))
    vals = np.array([f(mu) for mu in grid])
    i = int(np.argmin(vals))
    if branch == "first":
        local = [j for j in range(1, grid.size - 1) if vals[j] < vals[j - 1] and vals[j] <= vals[j + 1]]
        if local:
            i = local[0]
    if i == 0:
        return 0.0
    lo = grid[i - 1]
    hi = grid[min(i + 1, grid.size - 1)]
    res = minimize_scalar(f, bounds=(lo, hi), method="bounded", options={"xatol": 1e-9})
    return float(res.x) if res.fun <= vals[i] else float(grid[i])


def landscape_scan(
    n_atoms: int,
    prior: PriorModel,
    grid: int = 64,
    estimator: str = "optimal_bayes",
    span: float = MU_BOX,
    seed: int = 0,
) -> tuple[np.ndarray, CandidateSet]:
    """Objective map of the ``[1, 1]`` class over the ``(mu_1, mu_2)`` plane.

    At every grid point the six rotation angles are optimized by compass
    search, warm-started from the neighbouring point. Returns the map
    (``grid x grid``, row index ``mu_1``) and per-region polished minima.
    """
    if grid < 64:
        raise InvalidArgumentError("grid must be at least 64 x 64")
    obj = Objective(n_atoms, (1, 1), prior, estimator)
    mus = np.linspace(-span, span, grid)
    lo, hi = _bounds((1, 1), None)
    rng = np.random.default_rng(seed)
    rot0 = rng.uniform(-math.pi, math.pi, obj.dim - 2)
    values = np.empty((grid, grid))
    rots = np.empty((grid, grid, obj.dim - 2))
    prev = rot0
    for i, m1 in enumerate(mus):
        order = range(grid) if i % 2 == 0 else range(grid - 1, -1, -1)
        for j in order:
            m2 = mus[j]

            def g(r, m1=m1, m2=m2):
                return obj(np.concatenate(([m1, m2], r)))

            r, v = compass_search(g, prev, lo[2:], hi[2:], step=0.5, tol=1e-3)
            values[i, j] = v
            rots[i, j] = r
            prev = r
    cands = []
    for label in REGIONS:
        mask = np.array([[region_label(a, b) == label for b in mus] for a in mus])
        if not mask.any():
            continue
        idx = np.unravel_index(np.argmin(np.where(mask, values, np.inf)), values.shape)
        (a0, a1), (b0, b1) = region_box(label)
        rlo, rhi = lo.copy(), hi.copy()
        rlo[:2], rhi[:2] = (a0, b0), (a1, b1)
        x0 = np.concatenate(([mus[idx[0]], mus[idx[1]]], rots[idx]))
        x, fx = compass_search(obj, x0, rlo, rhi, step=0.1)
        cands.append(Candidate(obj.spec(x), fx, label))
    meta = {"grid": grid, "span": span, "n_atoms": n_atoms, "prior_width": prior.width, "estimator": estimator}
    return values, CandidateSet(cands, meta)
