"""Gaussian phase priors, their quadrature, and prior-width models.

The prior over the accumulated phase is a zero-mean Gaussian of width
``delta_phi``. Every integral over phase in the package is replaced by the
same fixed quadrature rule: Gauss-Legendre nodes on a truncated symmetric
interval, reweighted by the Gaussian density and renormalized.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import bisect
from scipy.special import roots_legendre

from .errors import InvalidArgumentError, NoSolutionError, QuadratureResolutionError

__all__ = [
    "PriorModel",
    "NoiseExponent",
    "gaussian_prior",
    "prior_for",
    "required_nodes",
    "width_from_interrogation",
    "deadtime_width",
    "combine_widths",
    "coherence_time",
    "CHI",
]

DEFAULT_NODES = 201
DEFAULT_TRUNCATION = 8.0
#: Fitted prior-variance prefactors of the power-law width model.
CHI = {-1: 1.0, 0: 1.7, 1: 2.0}


@dataclass(frozen=True, eq=False)
class PriorModel:
    """Gaussian prior with its quadrature representation.

    Attributes
    ----------
    width : float
        Standard deviation ``delta_phi`` in radians.
    nodes, weights : ndarray
        Quadrature nodes (radians) and normalized weights.
    truncation : float
        Half-range of the grid in units of ``width``.
    """

    width: float
    nodes: np.ndarray
    weights: np.ndarray
    truncation: float

    def __post_init__(self):
        for name in ("nodes", "weights"):
            a = np.array(getattr(self, name), dtype=float)
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def n_nodes(self) -> int:
        return self.nodes.size

    @property
    def variance(self) -> float:
        """Quadrature second moment (equals ``width**2`` to 1e-8)."""
        return float(np.dot(self.weights, self.nodes**2))

    @property
    def information(self) -> float:
        """Fisher information of the prior, ``1/width**2``."""
        return 1.0 / self.width**2

    def expectation(self, values) -> float:
        return float(np.dot(self.weights, values))


@dataclass(frozen=True)
class NoiseExponent:
    """Power-law exponent of the LO Allan variance and its width prefactor."""

    alpha: int

    def __post_init__(self):
        if self.alpha not in CHI:
            raise InvalidArgumentError(f"alpha must be one of -1, 0, 1; got {self.alpha!r}")

    @property
    def chi(self) -> float:
        return CHI[self.alpha]


def _alpha(alpha) -> NoiseExponent:
    return alpha if isinstance(alpha, NoiseExponent) else NoiseExponent(int(alpha))


def gaussian_prior(
    delta_phi: float, n_nodes: int = DEFAULT_NODES, truncation: float = DEFAULT_TRUNCATION
) -> PriorModel:
    """Quadrature rule for a zero-mean Gaussian prior.

    The grid spans ``[-h, h]`` with ``h = truncation * delta_phi``; when
    ``delta_phi > pi/3`` the half-range is widened to at least ``3 pi`` so the
    neighbouring fringes are resolved.

    Raises
    ------
    QuadratureResolutionError
        If the discrete moments miss the Gaussian ones (mean to
        ``1e-10 delta_phi``, variance to relative ``1e-8``) or the truncation
        removes a noticeable share of the density.
    """
    if not (delta_phi > 0 and math.isfinite(delta_phi)):
        raise InvalidArgumentError(f"delta_phi must be positive and finite, got {delta_phi!r}")
    if isinstance(n_nodes, bool) or int(n_nodes) != n_nodes or n_nodes < 11 or n_nodes % 2 == 0:
        raise InvalidArgumentError(f"n_nodes must be an odd integer >= 11, got {n_nodes!r}")
    if not truncation > 0:
        raise InvalidArgumentError("truncation must be positive")
    half = truncation * delta_phi
    if delta_phi > math.pi / 3:
        half = max(half, 3 * math.pi)
    x, gl = roots_legendre(int(n_nodes))
    nodes = half * x
    nodes = 0.5 * (nodes - nodes[::-1])
    gl = 0.5 * (gl + gl[::-1])
    # The density width is matched so the truncated rule keeps the variance
    # exactly; at truncation 8 the correction is below 1e-13.
    sigma = delta_phi
    for _ in range(8):
        w = gl * np.exp(-0.5 * (nodes / sigma) ** 2)
        w = w / w.sum()
        var = float(np.dot(w, nodes**2))
        if var <= 0:
            break
        sigma *= delta_phi / math.sqrt(var)
    mean = float(np.dot(w, nodes))
    var = float(np.dot(w, nodes**2))
    resolved = abs(sigma / delta_phi - 1.0) <= 1e-6
    if not resolved or abs(mean) > 1e-10 * delta_phi or abs(var / delta_phi**2 - 1.0) > 1e-8:
        raise QuadratureResolutionError(
            f"prior moments off (mean {mean:.3e}, var ratio {var / delta_phi**2:.12f}); "
            "increase n_nodes or truncation"
        )
    return PriorModel(float(delta_phi), nodes, w, half / delta_phi)


def required_nodes(delta_phi: float, bandwidth: float, truncation: float = DEFAULT_TRUNCATION) -> int:
    """Node count resolving ``exp(i k phi)`` for ``|k| <= bandwidth`` on the grid.

    Gauss-Legendre with ``n`` nodes integrates polynomials of degree ``2n-1``
    exactly; a Fourier mode of frequency ``k`` on ``[-h, h]`` needs a degree of
    about ``k h`` and the Gaussian envelope adds a fixed overhead.
    """
    half = truncation * delta_phi
    if delta_phi > math.pi / 3:
        half = max(half, 3 * math.pi)
    n = int(math.ceil(0.65 * bandwidth * half + 1.5 * truncation + 40))
    n = max(n, DEFAULT_NODES)
    return n if n % 2 == 1 else n + 1


def prior_for(delta_phi: float, n_atoms: int, truncation: float = DEFAULT_TRUNCATION) -> PriorModel:
    """Gaussian prior with enough nodes for signals of an ``n_atoms`` ensemble.

    Probabilities of a Dicke-space protocol contain Fourier components up to
    ``exp(i N phi)``.
    """
    return gaussian_prior(delta_phi, required_nodes(delta_phi, n_atoms, truncation), truncation)


def width_from_interrogation(T: float, Z: float, alpha) -> float:
    """Power-law prior width ``sqrt(chi(alpha) (T/Z)^(2+alpha))``."""
    if not (T > 0 and Z > 0):
        raise InvalidArgumentError("T and Z must be positive")
    a = _alpha(alpha)
    return math.sqrt(a.chi * (T / Z) ** (2 + a.alpha))


def deadtime_width(T_D: float, Z: float, alpha) -> float:
    """Prior broadening from dead time, ``sqrt(2 (T_D/Z)^(2+alpha))``."""
    if T_D < 0 or not Z > 0:
        raise InvalidArgumentError("T_D must be >= 0 and Z > 0")
    a = _alpha(alpha)
    return math.sqrt(2.0 * (T_D / Z) ** (2 + a.alpha))


def combine_widths(delta_phi_T: float, delta_phi_D: float) -> float:
    """Width of the sum of two independent Gaussian phase errors."""
    if delta_phi_T < 0 or delta_phi_D < 0:
        raise InvalidArgumentError("widths must be non-negative")
    if delta_phi_T == 0 and delta_phi_D == 0:
        raise InvalidArgumentError("at least one width must be positive")
    return math.hypot(delta_phi_T, delta_phi_D)


def coherence_time(sigma_lo: Callable[[float], float], omega0: float, T_D: float = 0.0) -> float:
    """Laser coherence time ``Z`` defined by ``sigma_lo(Z + T_D) omega0 Z = 1``.

    Solved by bisection to relative accuracy 1e-10 after a geometric bracket
    search.

    Examples
    --------
    >>> z = coherence_time(lambda tau: 1.59155e-16, 2 * math.pi * 1e15)
    >>> round(z, 4)
    1.0
    """
    if not omega0 > 0 or T_D < 0:
        raise InvalidArgumentError("omega0 must be positive and T_D non-negative")

    def f(z: float) -> float:
        return sigma_lo(z + T_D) * omega0 * z - 1.0

    lo, hi = 1.0, 1.0
    f_lo = f(lo)
    step = 4.0
    for _ in range(400):
        if f_lo < 0:
            break
        lo /= step
        f_lo = f(lo)
    f_hi = f(hi)
    for _ in range(400):
        if f_hi > 0:
            break
        hi *= step
        f_hi = f(hi)
    if not (f_lo < 0 < f_hi):
        raise NoSolutionError("could not bracket the coherence time")
    return float(bisect(f, lo, hi, xtol=1e-300, rtol=1e-12, maxiter=2000))
