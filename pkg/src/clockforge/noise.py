"""Local-oscillator noise synthesis and frequency-stability statistics.

Noise is specified by two-sample variance coefficients ``h~_alpha`` with
``sigma_y^2(tau) = sum_alpha h~_alpha tau^alpha`` for ``alpha`` in
``{-1, 0, 1}`` (white, flicker and random-walk frequency noise). The
equivalent one-sided spectral density is
``S_y(f) = h_{-1} + h_0 / f + h_1 / f^2`` with ``h`` from :func:`h_from_htilde`.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.optimize import nnls

from .errors import ConfigurationError, InsufficientDataError, InvalidArgumentError, PrecisionWarning
from .prior import coherence_time

__all__ = [
    "NoiseSpec",
    "AdevCurve",
    "FlickerBank",
    "h_from_htilde",
    "htilde_from_h",
    "spectral_density",
    "generate_trace",
    "flicker_bank",
    "ar1_allan_variance",
    "allan_deviation",
    "dick_effect",
    "total_adev",
    "adev_from_efm",
    "adev_dimensionless",
    "adev_local",
    "extrapolate_unit_time",
    "loglog_slope",
    "export_trace",
    "load_trace",
    "export_adev",
]

ALPHAS = (-1, 0, 1)


def h_from_htilde(alpha: int, htilde: float) -> float:
    """Spectral coefficient ``h`` for a two-sample coefficient ``h~``.

    White FM ``sigma^2 = h / (2 tau)``, flicker FM ``sigma^2 = 2 ln 2 h``,
    random-walk FM ``sigma^2 = (2 pi^2 / 3) h tau``.
    """
    if alpha == -1:
        return 2.0 * htilde
    if alpha == 0:
        return htilde / (2.0 * math.log(2.0))
    if alpha == 1:
        return 3.0 * htilde / (2.0 * math.pi**2)
    raise InvalidArgumentError(f"alpha must be one of {ALPHAS}")


def htilde_from_h(alpha: int, h: float) -> float:
    return h / h_from_htilde(alpha, 1.0)


@dataclass(frozen=True)
class NoiseSpec:
    """Power-law LO noise.

    Parameters
    ----------
    components : dict
        ``alpha -> h~_alpha`` in fractional-frequency units.
    omega0 : float
        Angular transition frequency (rad/s).
    """

    components: dict
    omega0: float = 1.0

    def __post_init__(self):
        comps = {}
        for k, v in dict(self.components).items():
            a = int(k)
            if a not in ALPHAS:
                raise InvalidArgumentError(f"alpha must be one of {ALPHAS}, got {k!r}")
            v = float(v)
            if v < 0 or not math.isfinite(v):
                raise InvalidArgumentError("noise coefficients must be finite and non-negative")
            if v > 0:
                comps[a] = v
        if not comps:
            raise InvalidArgumentError("at least one noise coefficient must be positive")
        if not self.omega0 > 0:
            raise InvalidArgumentError("omega0 must be positive")
        object.__setattr__(self, "components", comps)

    def __hash__(self):
        return hash((tuple(sorted(self.components.items())), self.omega0))

    def sigma(self, tau: float) -> float:
        """LO Allan deviation at ``tau``."""
        return math.sqrt(sum(h * tau**a for a, h in self.components.items()))

    @property
    def Z(self) -> float:
        """Coherence time of the free-running LO."""
        return _coherence(self)

    @property
    def alpha(self) -> int:
        """The single noise exponent; mixed specs raise."""
        if len(self.components) != 1:
            raise InvalidArgumentError("spec mixes several noise types")
        return next(iter(self.components))

    def to_dict(self) -> dict:
        return {"components": {str(k): v for k, v in self.components.items()}, "omega0": self.omega0}

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSpec":
        return cls({int(k): v for k, v in d["components"].items()}, d.get("omega0", 1.0))


@lru_cache(maxsize=256)
def _coherence(spec: NoiseSpec) -> float:
    return coherence_time(spec.sigma, spec.omega0)


def spectral_density(spec: NoiseSpec, f) -> np.ndarray:
    """One-sided ``S_y(f)``."""
    f = np.asarray(f, dtype=float)
    out = np.zeros_like(f)
    for a, ht in spec.components.items():
        out = out + h_from_htilde(a, ht) * f ** (-(1 + a))
    return out


# flicker synthesis -----------------------------------------------------------


def ar1_allan_variance(rho: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Allan variance at averaging factor ``m`` of a unit-variance AR(1) chain.

    Returns a ``len(m) x len(rho)`` matrix. With ``S(m)`` the variance of a sum
    of ``m`` consecutive samples and ``C(m)`` the covariance of adjacent sums,
    ``sigma^2(m) = (S - C) / m^2``.
    """
    rho = np.asarray(rho, dtype=float)[None, :]
    m = np.asarray(m, dtype=float)[:, None]
    g = 1.0 - rho
    rm = rho**m
    s = m * (1 + rho) / g - 2 * rho * (1 - rm) / g**2
    c = rho * (1 - rm) ** 2 / g**2
    return (s - c) / m**2


@dataclass(frozen=True, eq=False)
class FlickerBank:
    """Damped random walks whose sum has a flat Allan deviation."""

    rho: np.ndarray
    variance: np.ndarray
    m_grid: np.ndarray
    flatness: float

    def allan_variance(self, m) -> np.ndarray:
        return ar1_allan_variance(self.rho, np.atleast_1d(m)) @ self.variance


@lru_cache(maxsize=64)
def flicker_bank(n_cycles: int, per_decade: int = 2) -> FlickerBank:
    """Unit-level (``sigma^2 = 1``) flicker bank for traces of ``n_cycles``.

    Relaxation rates are log-spaced from ``1 / (2 n T_C)`` to ``2 / T_C``;
    variances come from a non-negative least-squares fit of the closed-form
    AR(1) Allan variance to 1 on a log grid of averaging factors.

    Raises
    ------
    ConfigurationError
        If the fitted Allan deviation deviates from flat by more than 2% over
        ``1 <= m <= n / 10``.
    """
    if n_cycles < 2:
        raise InvalidArgumentError("n_cycles must be >= 2")
    lo, hi = 1.0 / (2.0 * n_cycles), 2.0
    decades = math.log10(hi / lo)
    k = max(2, int(math.ceil(per_decade * decades)) + 1)
    rates = np.logspace(math.log10(lo), math.log10(hi), k)
    rho = np.exp(-rates)
    m_max = max(2.0, n_cycles / 10.0)
    m_grid = np.unique(np.round(np.logspace(0, math.log10(m_max), 8 * k)))
    A = ar1_allan_variance(rho, m_grid)
    v, _ = nnls(A, np.ones(m_grid.size))
    fit = A @ v
    flatness = float(np.max(np.abs(np.sqrt(fit) - 1.0)))
    if flatness > 0.02:
        raise ConfigurationError(
            f"flicker bank for n_cycles={n_cycles} is flat only to {flatness:.1%}; band coverage insufficient"
        )
    for a in (rho, v, m_grid):
        a.setflags(write=False)
    return FlickerBank(rho, v, m_grid, flatness)


def _flicker_trace(n: int, rng: np.random.Generator, htilde: float) -> np.ndarray:
    bank = flicker_bank(n)
    out = np.zeros(n)
    for rho, var in zip(bank.rho, bank.variance):
        if var <= 0:
            continue
        sd = math.sqrt(var * htilde)
        innov = rng.standard_normal(n) * (sd * math.sqrt(1.0 - rho * rho))
        innov[0] = rng.standard_normal() * sd
        out += _ar1_filter(innov, rho)
    return out


def _ar1_filter(innov: np.ndarray, rho: float) -> np.ndarray:
    from scipy.signal import lfilter

    return lfilter([1.0], [1.0, -rho], innov)


def generate_trace(spec: NoiseSpec, T_C: float, n_cycles: int, seed: int) -> np.ndarray:
    """Cycle-averaged fractional-frequency deviations ``y_k``.

    White FM is iid Gaussian of variance ``h~/T_C``. Random-walk FM integrates
    a Brownian ``y(t)`` with diffusion ``3 h~`` exactly over each cycle.
    Flicker FM sums calibrated AR(1) chains. Bit-reproducible in ``seed``.
    """
    if not T_C > 0:
        raise InvalidArgumentError("T_C must be positive")
    n = int(n_cycles)
    if n < 2:
        raise InvalidArgumentError("n_cycles must be >= 2")
    rng = np.random.default_rng(seed)
    y = np.zeros(n)
    for a in ALPHAS:
        ht = spec.components.get(a)
        if not ht:
            continue
        if a == -1:
            y += rng.standard_normal(n) * math.sqrt(ht / T_C)
        elif a == 0:
            y += _flicker_trace(n, rng, ht)
        else:
            d = 3.0 * ht * T_C
            steps = rng.standard_normal(n) * math.sqrt(d)
            bridge = rng.standard_normal(n) * math.sqrt(d / 12.0)
            start = np.concatenate(([0.0], np.cumsum(steps)[:-1]))
            y += start + 0.5 * steps + bridge
    return y


# Allan deviation -----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class AdevCurve:
    """Allan deviation with standard errors at ``taus``."""

    taus: np.ndarray
    sigmas: np.ndarray
    uncertainties: np.ndarray = field(default=None)

    def __post_init__(self):
        taus = np.asarray(self.taus, dtype=float)
        sig = np.asarray(self.sigmas, dtype=float)
        unc = np.zeros_like(sig) if self.uncertainties is None else np.asarray(self.uncertainties, dtype=float)
        if taus.shape != sig.shape or unc.shape != sig.shape:
            raise InvalidArgumentError("taus, sigmas and uncertainties must have equal length")
        if np.any(np.diff(taus) <= 0):
            raise InvalidArgumentError("taus must be strictly increasing")
        for name, a in (("taus", taus), ("sigmas", sig), ("uncertainties", unc)):
            a.setflags(write=False)
            object.__setattr__(self, name, a)


def allan_deviation(trace, T_C: float, taus) -> AdevCurve:
    """Non-overlapping Allan deviation.

    ``sigma^2(tau) = sum_j (ybar_{j+1} - ybar_j)^2 / (2 (M - 1))`` with ``M``
    segment averages of ``m = tau / T_C`` cycles. The standard error follows
    from the spread of the squared differences.

    Examples
    --------
    >>> allan_deviation([1.0, -1.0] * 4, 1.0, [1.0]).sigmas.round(12).tolist()
    [1.414213562373]
    """
    y = np.asarray(trace, dtype=float)
    if not T_C > 0:
        raise InvalidArgumentError("T_C must be positive")
    taus = np.atleast_1d(np.asarray(taus, dtype=float))
    sig, unc = [], []
    for tau in taus:
        m = tau / T_C
        mi = int(round(m))
        if mi < 1 or abs(m - mi) > 1e-9 * max(1.0, m):
            raise InvalidArgumentError(f"tau={tau!r} is not a positive multiple of T_C={T_C!r}")
        n_seg = y.size // mi
        if n_seg < 3:
            raise InsufficientDataError(f"tau={tau!r} leaves {n_seg} segments; need at least 3")
        ybar = y[: n_seg * mi].reshape(n_seg, mi).mean(axis=1)
        half_sq = 0.5 * np.diff(ybar) ** 2
        var = float(half_sq.mean())
        s = math.sqrt(var)
        se_var = float(half_sq.std(ddof=1) / math.sqrt(half_sq.size)) if half_sq.size > 1 else math.inf
        sig.append(s)
        unc.append(se_var / (2 * s) if s > 0 else 0.0)
    return AdevCurve(taus, np.array(sig), np.array(unc))


def loglog_slope(curve: AdevCurve, fit_range=None) -> float:
    t, s = _select(curve, fit_range)
    return float(np.polyfit(np.log(t), np.log(s), 1)[0])


def _select(curve: AdevCurve, fit_range):
    t, s = curve.taus, curve.sigmas
    if fit_range is not None:
        lo, hi = fit_range
        keep = (t >= lo * (1 - 1e-12)) & (t <= hi * (1 + 1e-12))
        t, s = t[keep], s[keep]
    return t, s


def extrapolate_unit_time(curve: AdevCurve, fit_range=None) -> float:
    """Least-squares constant ``c`` in ``sigma(tau) = c / sqrt(tau)``.

    Warns with :class:`PrecisionWarning` if the log-log slope in the range
    deviates from -1/2 by more than 0.1.

    Raises
    ------
    InsufficientDataError
        With fewer than 4 points in the range.
    """
    t, s = _select(curve, fit_range)
    if t.size < 4:
        raise InsufficientDataError("need at least 4 points in the fit range")
    if np.any(s <= 0):
        return float(np.mean(s * np.sqrt(t)))
    slope = float(np.polyfit(np.log(t), np.log(s), 1)[0])
    if abs(slope + 0.5) > 0.1:
        warnings.warn(f"ADEV slope {slope:.3f} is not white-like in the fit range", PrecisionWarning, stacklevel=2)
    return float(np.mean(s * np.sqrt(t)))


# Dick effect and composition -------------------------------------------------


def dick_effect(
    spec: NoiseSpec, T: float, T_D: float, tau: float, k_max: int = 1_000_000, return_tail: bool = False
):
    """Allan variance added by LO noise aliased through the dead time.

    ``(1/tau) (T_C/T)^2 sum_k S_y(k/T_C) sin^2(pi k T/T_C) / (pi k)^2``,
    truncated at ``k_max`` and completed by the integral tail estimate
    (``sin^2`` replaced by its mean 1/2). Exactly zero when ``T_D = 0``.
    """
    if not (T > 0 and tau > 0) or T_D < 0:
        raise InvalidArgumentError("T and tau must be positive and T_D non-negative")
    if T_D == 0:
        return (0.0, 0.0) if return_tail else 0.0
    tc = T + T_D
    k = np.arange(1, int(k_max) + 1, dtype=float)
    s = spectral_density(spec, k / tc)
    terms = s * np.sin(math.pi * k * (T / tc)) ** 2 / (math.pi * k) ** 2
    total = float(np.sum(terms[::-1]))
    K = float(k_max)
    tail = 0.0
    for a, ht in spec.components.items():
        h = h_from_htilde(a, ht)
        # integral of h (k/tc)^-(1+a) / (pi k)^2 from K to infinity, times 1/2
        p = 3 + a
        tail += 0.5 * h * tc ** (1 + a) / (math.pi**2 * (p - 1) * K ** (p - 1))
    if total > 0 and tail > 0.01 * total:
        warnings.warn(f"Dick sum tail is {tail / total:.1%} of the sum; raise k_max", PrecisionWarning, stacklevel=2)
    pref = (tc / T) ** 2 / tau
    value = pref * (total + tail)
    return (value, pref * tail) if return_tail else value


def total_adev(qpn_ctl: float, dick: float) -> float:
    """``sqrt(sigma_QPN+CTL^2 + sigma_Dick^2)`` from the two variances."""
    if qpn_ctl < 0 or dick < 0:
        raise InvalidArgumentError("variances must be non-negative")
    return math.sqrt(qpn_ctl + dick)


def adev_from_efm(efm: float, T: float, T_D: float, tau: float, omega0: float) -> float:
    """Allan deviation ``(1/omega0) (Delta phi_M / T) sqrt(T_C / tau)``."""
    if not (efm > 0 and T > 0 and tau > 0 and omega0 > 0) or T_D < 0:
        raise InvalidArgumentError("arguments must be positive")
    return math.sqrt(efm) / (omega0 * T) * math.sqrt((T + T_D) / tau)


def adev_dimensionless(efm: float, T_over_Z: float, TD_over_Z: float = 0.0) -> float:
    """``sigma omega0 sqrt(tau Z) = Delta phi_M sqrt(T_C/Z) (Z/T)``."""
    if not (efm > 0 and T_over_Z > 0) or TD_over_Z < 0:
        raise InvalidArgumentError("arguments must be positive")
    return math.sqrt(efm) * math.sqrt(T_over_Z + TD_over_Z) / T_over_Z


def adev_local(xi: float, n_atoms: int, T: float, T_D: float, tau: float, omega0: float) -> float:
    """Small-prior limit ``xi / (omega0 T sqrt(N)) sqrt(T_C / tau)``."""
    return adev_from_efm(xi**2 / n_atoms, T, T_D, tau, omega0)


# exports -------------------------------------------------------------------


def export_trace(path, trace, T_C: float, spec: NoiseSpec, seed: int) -> Path:
    """Write ``path`` as raw little-endian float64 plus ``path.json`` metadata."""
    path = Path(path)
    np.asarray(trace, dtype="<f8").tofile(path)
    meta = {"T_C": T_C, "spec": spec.to_dict(), "seed": seed, "n": int(np.size(trace)), "dtype": "<f8"}
    sidecar = path.with_name(path.name + ".json")
    sidecar.write_text(json.dumps(meta, indent=2))
    return sidecar


def load_trace(path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    meta = json.loads(path.with_name(path.name + ".json").read_text())
    return np.fromfile(path, dtype=meta.get("dtype", "<f8")), meta


def export_adev(path, curve: AdevCurve) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tau_s", "sigma", "stderr"])
        for row in zip(curve.taus, curve.sigmas, curve.uncertainties):
            w.writerow([repr(float(v)) for v in row])
