"""Single-cycle estimators and error functionals.

All integrals over the phase are sums over the quadrature nodes of the
model's prior, so errors of different protocols evaluated on the same prior
are directly comparable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateSignalError,
    InvalidArgumentError,
    NumericalConsistencyError,
    QuadratureResolutionError,
)
from .protocols import ConditionalModel

__all__ = [
    "EstimatorTable",
    "ErrorReport",
    "linear_estimate",
    "optimal_bayes_estimate",
    "estimate",
    "posterior_variance",
    "bcrb",
    "fisher_information",
    "efm_transform",
    "deshrink_factor",
]

#: Outcomes less likely than this carry no weight in the Bayes sums.
OUTCOME_FLOOR = 1e-300
#: Probability floor inside the Fisher-information quotient.
FISHER_FLOOR = 1e-14


@dataclass(frozen=True, eq=False)
class EstimatorTable:
    """Map from outcome label to phase estimate.

    Attributes
    ----------
    kind : {'linear', 'optimal_bayes'}
    outcomes : ndarray
        Outcome labels ``x``.
    values : ndarray
        Estimates ``phi_est(x)`` in radians, aligned with ``outcomes``.
    scale : float or None
        Linear scaling ``a`` (``phi_est = a x``); ``None`` for optimal Bayes.
    """

    kind: str
    outcomes: np.ndarray
    values: np.ndarray
    scale: float | None = None

    def __post_init__(self):
        if self.kind not in ("linear", "optimal_bayes"):
            raise InvalidArgumentError(f"unknown estimator kind {self.kind!r}")
        for name in ("outcomes", "values"):
            a = np.array(getattr(self, name), dtype=float)
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if not np.all(np.isfinite(self.values)):
            raise NumericalConsistencyError("non-finite estimate")

    def __call__(self, index):
        """Estimate for outcome index (or array of indices)."""
        return self.values[index]

    def as_dict(self) -> dict[float, float]:
        return dict(zip(self.outcomes.tolist(), self.values.tolist()))


@dataclass(frozen=True)
class ErrorReport:
    """Bayesian error of one estimator on one model.

    ``efm`` is the effective measurement variance
    ``(1/bmse - 1/prior_var)^-1``, infinite when nothing was learned.
    """

    bmse: float
    prior_var: float
    n_nodes: int = 0
    truncation: float = 0.0
    efm: float = field(init=False)

    def __post_init__(self):
        if not (self.bmse >= -1e-15 and self.bmse <= self.prior_var * (1 + 1e-9) + 1e-15):
            raise NumericalConsistencyError(f"bmse {self.bmse!r} outside [0, {self.prior_var!r}]")
        bmse = min(max(self.bmse, 0.0), self.prior_var)
        object.__setattr__(self, "bmse", bmse)
        object.__setattr__(self, "efm", efm_transform(bmse, self.prior_var) if bmse > 0 else 0.0)

    @property
    def deshrink(self) -> float:
        """Factor ``s = 1 - bmse/prior_var`` undoing the estimator's shrinkage."""
        return deshrink_factor(self.bmse, self.prior_var)

    def to_dict(self) -> dict[str, float]:
        return {
            "bmse": self.bmse,
            "prior_var": self.prior_var,
            "efm": self.efm,
            "n_nodes": self.n_nodes,
            "truncation": self.truncation,
        }


def efm_transform(bmse: float, prior_var: float) -> float:
    """Effective measurement variance from a BMSE and the prior variance.

    Examples
    --------
    >>> efm_transform(0.05, 0.1)
    0.1
    """
    if not prior_var > 0:
        raise InvalidArgumentError("prior_var must be positive")
    if not bmse > 0:
        raise InvalidArgumentError("bmse must be positive")
    if bmse > prior_var * (1 + 1e-12):
        raise NumericalConsistencyError(f"bmse {bmse!r} exceeds prior variance {prior_var!r}")
    if bmse >= prior_var:
        return math.inf
    # algebraically equal to 1/(1/bmse - 1/prior_var) without the cancellation
    return bmse * prior_var / (prior_var - bmse)


def deshrink_factor(bmse: float, prior_var: float) -> float:
    if not prior_var > 0:
        raise InvalidArgumentError("prior_var must be positive")
    return 1.0 - bmse / prior_var


def _report(model: ConditionalModel, bmse: float) -> ErrorReport:
    pr = model.prior
    return ErrorReport(float(bmse), pr.variance, pr.n_nodes, pr.truncation)


def linear_estimate(model: ConditionalModel) -> tuple[EstimatorTable, ErrorReport]:
    """Optimally scaled linear estimator ``phi_est = a x``.

    ``a = E[phi X] / E[X^2]`` and ``BMSE = E[phi^2] - E[phi X]^2 / E[X^2]``
    with expectations over the prior and the outcome distribution.

    Raises
    ------
    DegenerateSignalError
        If ``E[X^2]`` vanishes.
    """
    w = model.prior.weights
    phi = model.prior.nodes
    x = model.outcomes
    mean_x = x @ model.probs
    mean_x2 = (x * x) @ model.probs
    num = float(np.dot(w, phi * mean_x))
    den = float(np.dot(w, mean_x2))
    if not den > 0:
        raise DegenerateSignalError("outcome second moment vanishes; linear scale undefined")
    a = num / den
    bmse = model.prior.variance - num * num / den
    table = EstimatorTable("linear", x, a * x, a)
    return table, _report(model, bmse)


def _joint(model: ConditionalModel) -> tuple[np.ndarray, np.ndarray]:
    wp = model.probs * model.prior.weights
    p_x = wp.sum(axis=1)
    first = wp @ model.prior.nodes
    return p_x, first


def optimal_bayes_estimate(model: ConditionalModel) -> tuple[EstimatorTable, ErrorReport]:
    """Posterior-mean estimator and its BMSE.

    ``BMSE = E[phi^2] - sum_x (sum_q w_q P(x|phi_q) phi_q)^2 / P(x)``;
    outcomes with ``P(x) < 1e-300`` are dropped from the sum and estimate 0.
    """
    p_x, first = _joint(model)
    ok = p_x >= OUTCOME_FLOOR
    est = np.zeros_like(p_x)
    est[ok] = first[ok] / p_x[ok]
    gain = float(np.sum(first[ok] ** 2 / p_x[ok]))
    bmse = model.prior.variance - gain
    return EstimatorTable("optimal_bayes", model.outcomes, est), _report(model, bmse)


def estimate(model: ConditionalModel, kind: str) -> tuple[EstimatorTable, ErrorReport]:
    if kind == "linear":
        return linear_estimate(model)
    if kind == "optimal_bayes":
        return optimal_bayes_estimate(model)
    raise InvalidArgumentError(f"unknown estimator kind {kind!r}")


def posterior_variance(model: ConditionalModel) -> float:
    """Average posterior variance ``sum_x P(x) Var(phi | x)``.

    Computed from explicit posteriors, independently of the BMSE shortcut.
    """
    w = model.prior.weights
    phi = model.prior.nodes
    total = 0.0
    for row in model.probs:
        joint = row * w
        px = joint.sum()
        if px < OUTCOME_FLOOR:
            continue
        post = joint / px
        mean = np.dot(post, phi)
        total += px * np.dot(post, (phi - mean) ** 2)
    return float(total)


def _fd_derivative(model: ConditionalModel) -> np.ndarray:
    """Fourth-order finite differences of ``P(x|phi)`` on the node grid.

    Fornberg weights per node handle the non-uniform Gauss-Legendre spacing.
    """
    phi = model.prior.nodes
    n = phi.size
    if n < 5:
        raise QuadratureResolutionError("need at least 5 nodes for differentiation")
    spacing = np.diff(phi)
    if spacing.max() > 0.25:
        raise QuadratureResolutionError(
            f"node spacing {spacing.max():.3f} rad too coarse for finite differences"
        )
    out = np.empty_like(model.probs)
    for q in range(n):
        lo = min(max(q - 2, 0), n - 5)
        idx = np.arange(lo, lo + 5)
        c = _fornberg_first(phi[idx] - phi[q])
        out[:, q] = model.probs[:, idx] @ c
    return out


def _fornberg_first(offsets: np.ndarray) -> np.ndarray:
    # first-derivative weights from the Vandermonde system sum c_j d_j^k = [k == 1]
    k = np.arange(offsets.size)
    vander = offsets[None, :] ** k[:, None]
    rhs = (k == 1).astype(float)
    return np.linalg.solve(vander, rhs)


def fisher_information(model: ConditionalModel) -> np.ndarray:
    """Classical Fisher information ``F(phi_q)`` at every node."""
    d = model.dprobs if model.dprobs is not None else _fd_derivative(model)
    p = np.maximum(model.probs, FISHER_FLOOR)
    return np.sum(d * d / p, axis=0)


def bcrb(model: ConditionalModel) -> float:
    """van Trees bound ``1 / (E[F] + 1/delta_phi^2)``.

    Uses the model's analytic derivative when present, finite differences
    otherwise.
    """
    f_bar = float(np.dot(model.prior.weights, fisher_information(model)))
    return 1.0 / (f_bar + model.prior.information)
