"""Ramsey protocols and their discretized statistical models.

A protocol prepares a probe state, lets it pick up the phase through
``R_z(phi) = exp(-i phi S_z)``, applies a measurement unitary and projects
onto the Dicke basis (optionally coarse-grained, e.g. into parity classes).
The resulting conditional probabilities ``P(x|phi)`` on the prior quadrature
grid form a :class:`ConditionalModel`.

Supported kinds are the coherent spin state (``css``), the squeezed spin state
(``sss``), the GHZ state (``ghz``), the variational ``[n, m]`` one-axis-twisting
circuits (``variational``) and the phase-operator interferometer (``poi``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, NamedTuple

import numpy as np
from scipy.special import comb

from . import spin
from .errors import DomainError, InvalidArgumentError, NumericalConsistencyError
from .prior import PriorModel

__all__ = [
    "ProtocolSpec",
    "Circuit",
    "ConditionalModel",
    "SpinMoments",
    "PhaseOperator",
    "variational_param_count",
    "unpack_variational",
    "build_circuit",
    "prepare_state",
    "statistical_model",
    "signal_probabilities",
    "sss_moments",
    "sss_theta",
    "css_amplitudes",
    "analytic_efm",
    "linear_closed_form",
    "ghz_parity_bmse",
    "phase_operator",
]

KINDS = ("css", "sss", "ghz", "variational", "poi")
ESTIMATORS = ("linear", "optimal_bayes")
READOUTS = ("projective", "parity")


def variational_param_count(n: int, m: int) -> int:
    """Number of free parameters of the ``[n, m]`` class.

    Each twist contributes a strength and an axis (two angles), the two outer
    rotations contribute two angles each; the first preparation twist is pinned
    to the z axis. Without preparation twists nothing is pinned.
    """
    if n < 0 or m < 0:
        raise InvalidArgumentError("layer counts must be non-negative")
    return 4 + 3 * (n + m) - (2 if n >= 1 else 0)


@dataclass(frozen=True)
class ProtocolSpec:
    """Complete description of a Ramsey interrogation.

    Parameters
    ----------
    n_atoms : int
        Ensemble size ``N``.
    kind : {'css', 'sss', 'ghz', 'variational', 'poi'}
    params : tuple of float
        Kind-specific parameters. ``sss``: ``(mu, theta)``. ``variational``:
        ``[mu_1..mu_{n+m}, axis angle pairs, n-rotation pair, m-rotation pair]``
        where the axis pairs skip the pinned first preparation twist.
        ``poi``: real parts followed by imaginary parts of the probe state.
    layers : tuple of int
        ``(n, m)`` for the variational class, ``(0, 0)`` otherwise.
    estimator : {'optimal_bayes', 'linear'}
    readout : {'projective', 'parity'}
        Parity readout is available for GHZ only.
    """

    n_atoms: int
    kind: str
    params: tuple = ()
    layers: tuple = (0, 0)
    estimator: str = "optimal_bayes"
    readout: str = "projective"

    def __post_init__(self):
        spin.DickeBasis(self.n_atoms)
        object.__setattr__(self, "n_atoms", int(self.n_atoms))
        if self.kind not in KINDS:
            raise InvalidArgumentError(f"unknown protocol kind {self.kind!r}")
        if self.estimator not in ESTIMATORS:
            raise InvalidArgumentError(f"unknown estimator {self.estimator!r}")
        if self.readout not in READOUTS:
            raise InvalidArgumentError(f"unknown readout {self.readout!r}")
        if self.readout == "parity" and self.kind != "ghz":
            raise InvalidArgumentError("parity readout is defined for GHZ only")
        params = tuple(float(p) for p in self.params)
        if not all(math.isfinite(p) for p in params):
            raise InvalidArgumentError("protocol parameters must be finite")
        object.__setattr__(self, "params", params)
        layers = tuple(int(v) for v in self.layers)
        object.__setattr__(self, "layers", layers)
        expected = {
            "css": 0,
            "ghz": 0,
            "sss": 2,
            "poi": 2 * (self.n_atoms + 1),
        }.get(self.kind)
        if self.kind == "variational":
            expected = variational_param_count(*layers)
        elif layers != (0, 0):
            raise InvalidArgumentError("layers apply to the variational class only")
        if len(params) != expected:
            raise InvalidArgumentError(
                f"{self.kind} protocol with N={self.n_atoms} takes {expected} parameters, got {len(params)}"
            )

    # constructors -----------------------------------------------------------
    @classmethod
    def css(cls, n_atoms: int, estimator: str = "optimal_bayes") -> "ProtocolSpec":
        return cls(n_atoms, "css", estimator=estimator)

    @classmethod
    def sss(cls, n_atoms: int, mu: float, theta: float | None = None, estimator: str = "optimal_bayes"):
        """Squeezed state; ``theta=None`` selects the variance-minimizing angle."""
        if theta is None:
            theta = sss_theta(n_atoms, mu)
        return cls(n_atoms, "sss", (mu, theta), estimator=estimator)

    @classmethod
    def ghz(cls, n_atoms: int, readout: str = "projective", estimator: str = "optimal_bayes"):
        return cls(n_atoms, "ghz", estimator=estimator, readout=readout)

    @classmethod
    def variational(cls, n_atoms: int, n: int, m: int, params, estimator: str = "optimal_bayes"):
        return cls(n_atoms, "variational", tuple(params), (n, m), estimator=estimator)

    @classmethod
    def poi(cls, state: spin.StateVector, estimator: str = "optimal_bayes") -> "ProtocolSpec":
        a = state.amplitudes
        return cls(state.basis.n_atoms, "poi", tuple(a.real) + tuple(a.imag), estimator=estimator)

    # serialization ------------------------------------------------------------
    def to_dict(self) -> dict[str, Any]:
        """Flat key-value form; floats survive a JSON round trip bit-exactly."""
        return {
            "kind": self.kind,
            "n_atoms": self.n_atoms,
            "estimator": self.estimator,
            "readout": self.readout,
            "layers": list(self.layers),
            "params": list(self.params),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ProtocolSpec":
        unknown = set(d) - {"kind", "n_atoms", "estimator", "readout", "layers", "params"}
        if unknown:
            raise InvalidArgumentError(f"unknown protocol keys {sorted(unknown)}")
        return cls(
            int(d["n_atoms"]),
            d["kind"],
            tuple(d.get("params", ())),
            tuple(d.get("layers", (0, 0))),
            d.get("estimator", "optimal_bayes"),
            d.get("readout", "projective"),
        )

    def with_estimator(self, estimator: str) -> "ProtocolSpec":
        return ProtocolSpec(self.n_atoms, self.kind, self.params, self.layers, estimator, self.readout)


class VariationalParams(NamedTuple):
    mus: np.ndarray
    axes: list  # unit vectors, one per twist
    n_rotation: tuple
    m_rotation: tuple


def unpack_variational(n: int, m: int, params) -> VariationalParams:
    """Split a flat variational parameter vector into its parts."""
    p = np.asarray(params, dtype=float)
    if p.size != variational_param_count(n, m):
        raise InvalidArgumentError(f"[{n},{m}] takes {variational_param_count(n, m)} parameters, got {p.size}")
    k = n + m
    mus = p[:k]
    n_free = k - 1 if n >= 1 else k
    pairs = p[k : k + 2 * n_free].reshape(n_free, 2)
    axes = [spin.Z_AXIS] if n >= 1 else []
    axes += [spin.axis_from_angles(a, b) for a, b in pairs]
    rest = p[k + 2 * n_free :]
    return VariationalParams(mus, axes, (rest[0], rest[1]), (rest[2], rest[3]))


@dataclass(frozen=True, eq=False)
class Circuit:
    """Compiled protocol: probe state, measurement unitary and outcome map.

    Row ``j`` of ``u_meas @ R_z(phi) psi`` is the amplitude of Dicke state
    ``M_j`` after the measurement unitary; ``groups[j]`` is the index of the
    outcome it reports and ``values`` the numeric outcome labels.
    """

    psi: np.ndarray
    u_meas: np.ndarray
    values: np.ndarray
    groups: np.ndarray

    @property
    def n_outcomes(self) -> int:
        return self.values.size

    @property
    def m_values(self) -> np.ndarray:
        return spin._m_values(self.psi.size - 1)

    @property
    def coarse(self) -> np.ndarray:
        """``n_outcomes x dim`` 0/1 matrix summing Dicke rows into outcomes."""
        g = np.zeros((self.values.size, self.psi.size))
        g[self.groups, np.arange(self.psi.size)] = 1.0
        return g


@lru_cache(maxsize=None)
def css_amplitudes(n_atoms: int) -> np.ndarray:
    """Binomial amplitudes ``sqrt(C(N, M+N/2) / 2^N)`` of the x-polarized CSS."""
    k = np.arange(n_atoms + 1)
    a = np.sqrt(comb(n_atoms, k, exact=False) / 2.0**n_atoms)
    a = a / np.linalg.norm(a)
    a.setflags(write=False)
    return a


def _css_state(n: int) -> np.ndarray:
    # R_y(-pi/2) applied to the ground state; the binomial closed form is
    # checked against the rotation in the tests.
    return spin.rotation_matrix(n, spin.Y_AXIS, -math.pi / 2)[:, 0]


def _dicke_identity_groups(n: int) -> tuple[np.ndarray, np.ndarray]:
    return spin._m_values(n).copy(), np.arange(n + 1)


def build_circuit(spec: ProtocolSpec) -> Circuit:
    """Compile a :class:`ProtocolSpec` into state, measurement and outcome map."""
    n = spec.n_atoms
    m_vals = spin._m_values(n)
    values, groups = _dicke_identity_groups(n)
    measure_sy = spin.rotation_matrix(n, spin.X_AXIS, math.pi / 2)
    if spec.kind == "css":
        psi = _css_state(n)
        u = measure_sy
    elif spec.kind == "sss":
        mu, theta = spec.params
        psi = _css_state(n)
        psi = np.exp(-0.5j * mu * m_vals**2) * psi
        psi = spin.rotation_matrix(n, spin.X_AXIS, theta) @ psi
        u = measure_sy
    elif spec.kind == "ghz":
        psi = np.zeros(n + 1, dtype=complex)
        psi[0] = psi[-1] = 1 / math.sqrt(2)
        # working point shift R_z(-pi/(2N)) on the state side
        psi = np.exp(1j * (math.pi / (2 * n)) * m_vals) * psi
        if spec.readout == "parity":
            vx = spin._xy_eig(n, 0)
            u = vx.conj().T
            # sigma_x^{(x)N} eigenvalue is (-1)^(atoms along -x) = (-1)^(N/2 - M_x)
            parity = (-1.0) ** n * (-1.0) ** np.rint(n / 2 - m_vals)
            values = np.array([-1.0, 1.0])
            groups = (parity > 0).astype(int)
        elif n % 2 == 0:
            u = spin.rotation_matrix(n, spin.X_AXIS, math.pi / 2)
        else:
            u = spin.rotation_matrix(n, spin.Y_AXIS, math.pi / 2)
    elif spec.kind == "variational":
        nl, ml = spec.layers
        vp = unpack_variational(nl, ml, spec.params)
        psi = _css_state(n)
        for j in range(nl):
            psi = spin.oat_matrix(n, vp.axes[j], vp.mus[j]) @ psi
        r_n = spin.axis_rotation(n, *vp.n_rotation)
        psi = r_n @ psi
        u = r_n.conj().T
        for j in range(nl, nl + ml):
            u = spin.oat_matrix(n, vp.axes[j], vp.mus[j]) @ u
        u = spin.axis_rotation(n, *vp.m_rotation) @ u
    elif spec.kind == "poi":
        half = n + 1
        p = np.asarray(spec.params)
        psi = p[:half] + 1j * p[half:]
        norm = np.linalg.norm(psi)
        if abs(norm - 1.0) > 1e-8:
            raise InvalidArgumentError(f"POI probe state has norm {norm!r}")
        psi = psi / norm
        ph = phase_operator(n)
        u = ph.eigenvectors.conj().T
        values = ph.eigenvalues.copy()
    else:  # pragma: no cover - guarded by ProtocolSpec
        raise InvalidArgumentError(spec.kind)
    psi = np.asarray(psi, dtype=complex)
    psi = psi / np.linalg.norm(psi)
    for a in (psi, u, values, groups):
        a.setflags(write=False)
    return Circuit(psi, np.ascontiguousarray(u), values, groups)


def prepare_state(spec: ProtocolSpec) -> spin.StateVector:
    """Probe state of the protocol (working-point shifts included)."""
    return spin.StateVector(spin.DickeBasis(spec.n_atoms), build_circuit(spec).psi)


def signal_probabilities(circuit: Circuit, phis, derivative: bool = False):
    """Outcome probabilities ``P[x, q]`` at the phases ``phis``.

    With ``derivative=True`` also returns ``dP/dphi`` computed analytically
    from ``d/dphi exp(-i phi M) = -i M exp(-i phi M)``.
    """
    phis = np.atleast_1d(np.asarray(phis, dtype=float))
    m = circuit.m_values
    phase = np.exp(-1j * np.outer(m, phis))
    amp = circuit.u_meas @ (circuit.psi[:, None] * phase)
    p_rows = amp.real**2 + amp.imag**2
    coarse = circuit.coarse
    probs = coarse @ p_rows
    if not derivative:
        return probs
    damp = circuit.u_meas @ ((-1j * m * circuit.psi)[:, None] * phase)
    dp_rows = 2.0 * (amp.conj() * damp).real
    return probs, coarse @ dp_rows


@dataclass(frozen=True, eq=False)
class ConditionalModel:
    """Discretized statistical model ``P(x | phi_q)``.

    Attributes
    ----------
    outcomes : ndarray
        Numeric outcome labels ``x``.
    prior : PriorModel
    probs : ndarray, shape (n_outcomes, n_nodes)
    dprobs : ndarray or None
        Analytic ``dP/dphi`` on the nodes when available.
    """

    outcomes: np.ndarray
    prior: PriorModel
    probs: np.ndarray
    dprobs: np.ndarray | None = field(default=None)

    def __post_init__(self):
        probs = np.array(self.probs, dtype=float)
        outcomes = np.array(self.outcomes, dtype=float)
        if probs.ndim != 2 or probs.shape != (outcomes.size, self.prior.n_nodes):
            raise InvalidArgumentError(
                f"probability table shape {probs.shape} does not match "
                f"({outcomes.size}, {self.prior.n_nodes})"
            )
        if np.any(probs < -1e-12):
            raise NumericalConsistencyError("negative outcome probability")
        probs = np.clip(probs, 0.0, None)
        sums = probs.sum(axis=0)
        if np.max(np.abs(sums - 1.0)) > 1e-10:
            raise NumericalConsistencyError(f"column sums deviate from 1 by {np.max(np.abs(sums - 1.0)):.2e}")
        probs.setflags(write=False)
        outcomes.setflags(write=False)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "outcomes", outcomes)
        if self.dprobs is not None:
            d = np.array(self.dprobs, dtype=float)
            if d.shape != probs.shape:
                raise InvalidArgumentError("derivative table shape mismatch")
            d.setflags(write=False)
            object.__setattr__(self, "dprobs", d)

    @property
    def n_outcomes(self) -> int:
        return self.outcomes.size


def statistical_model(spec: ProtocolSpec, prior: PriorModel, derivative: bool = True) -> ConditionalModel:
    """Conditional model of ``spec`` on the nodes of ``prior``."""
    circuit = build_circuit(spec)
    return model_from_circuit(circuit, prior, derivative)


def model_from_circuit(circuit: Circuit, prior: PriorModel, derivative: bool = True) -> ConditionalModel:
    if derivative:
        probs, dprobs = signal_probabilities(circuit, prior.nodes, derivative=True)
    else:
        probs, dprobs = signal_probabilities(circuit, prior.nodes), None
    return ConditionalModel(circuit.values, prior, probs, dprobs)


# closed forms ---------------------------------------------------------------


@dataclass(frozen=True)
class SpinMoments:
    """Second-order spin moments entering the linear-estimator closed forms."""

    ex_sx: float
    ex_sx2: float
    ex_sy2: float
    n_atoms: int

    @property
    def wineland_xi(self) -> float:
        """Wineland parameter ``sqrt(N) Delta S_y / <S_x>`` (``<S_y> = 0``)."""
        return math.sqrt(self.n_atoms * self.ex_sy2) / self.ex_sx


def _sss_ab(n: int, mu: float) -> tuple[float, float]:
    c = math.cos(mu / 2)
    a = 1.0 - math.cos(mu) ** (n - 2)
    b = 4.0 * math.sin(mu / 2) * c ** (n - 2)
    return a, b


def sss_moments(n_atoms: int, mu: float) -> SpinMoments:
    """Closed-form moments of the one-axis-twisted CSS at optimal alignment."""
    n = int(n_atoms)
    if n < 2:
        raise InvalidArgumentError("squeezing needs N >= 2")
    a, b = _sss_ab(n, mu)
    c = math.cos(mu / 2)
    ex_sx = 0.5 * n * c ** (n - 1)
    ex_sx2 = 0.25 * n * (n * (1.0 - c ** (2 * n - 2)) - 0.5 * (n - 1) * a) + ex_sx**2
    ex_sy2 = 0.25 * n * (1.0 + 0.25 * (n - 1) * (a - math.hypot(a, b)))
    return SpinMoments(ex_sx, ex_sx2, ex_sy2, n)


def _rotated_sy2(n: int, mu: float, theta: float) -> float:
    psi = _css_state(n)
    m = spin._m_values(n)
    psi = spin.rotation_matrix(n, spin.X_AXIS, theta) @ (np.exp(-0.5j * mu * m**2) * psi)
    sy = spin._ops(n)[1]
    return float(np.vdot(psi, sy @ (sy @ psi)).real)


def _fold_half(t: float) -> float:
    # R_x(theta + pi) only flips the sign of S_y, so theta lives mod pi
    t = math.remainder(t, math.pi)
    return float(math.pi / 2 if t == -math.pi / 2 else t)


@lru_cache(maxsize=4096)
def sss_theta(n_atoms: int, mu: float) -> float:
    """Rotation angle about x that moves the minimal variance onto ``S_y``.

    The squeezing ellipse is tilted by ``(1/2) arctan(B/A)`` relative to one
    of the two transverse axes; the four sign and quarter-turn variants are
    evaluated on the state and the one reaching the closed-form minimal
    variance is returned, folded into ``(-pi/2, pi/2]``. If none does (a
    degenerate tilt), the angle is taken from the exact covariance of the
    twisted state.
    """
    n = int(n_atoms)
    if n < 2 or mu == 0.0:
        return 0.0
    a, b = _sss_ab(n, mu)
    target = sss_moments(n, mu).ex_sy2
    half = 0.5 * math.atan2(b, a)
    cands = [_fold_half(s * half + q * math.pi / 2) for s in (1, -1) for q in (0, 1)]
    best = min(cands, key=lambda t: _rotated_sy2(n, mu, t))
    if abs(_rotated_sy2(n, mu, best) - target) <= 1e-9 * max(1.0, target):
        return float(best)
    # covariance fallback: minimal eigen-direction in the y-z plane
    psi = np.exp(-0.5j * mu * spin._m_values(n) ** 2) * _css_state(n)
    sx, sy, sz = spin._ops(n)
    vyy = np.vdot(psi, sy @ sy @ psi).real
    vzz = np.vdot(psi, sz @ sz @ psi).real
    vyz = 0.5 * np.vdot(psi, (sy @ sz + sz @ sy) @ psi).real
    cands = [0.5 * math.atan2(2 * vyz, vyy - vzz) + s * math.pi / 2 for s in (-1, 0, 1)]
    cands += [-c for c in cands]
    return _fold_half(min(cands, key=lambda t: _rotated_sy2(n, mu, t)))


def linear_closed_form(moments: SpinMoments, delta_phi: float) -> tuple[float, float]:
    """Optimal linear scale ``a`` and BMSE for an ``S_y`` readout.

    Uses ``int P phi <X> = <S_x> d^2 e^{-d^2/2}`` and
    ``int P <X^2> = e^{-d^2} (<S_y^2> cosh d^2 + <S_x^2> sinh d^2)``.
    """
    d2 = delta_phi**2
    den = moments.ex_sy2 * math.cosh(d2) + moments.ex_sx2 * math.sinh(d2)
    a = moments.ex_sx * d2 * math.exp(d2 / 2) / den
    bmse = d2 * (1.0 - d2 * moments.ex_sx**2 / den)
    return a, bmse


def ghz_parity_bmse(n_atoms: int, delta_phi: float) -> float:
    """BMSE of the GHZ parity readout (binary, hence linear and optimal)."""
    x = (n_atoms * delta_phi) ** 2
    return delta_phi**2 * (1.0 - x * math.exp(-x))


def analytic_efm(kind: str, n_atoms: int, delta_phi: float, mu: float | None = None) -> float:
    """Closed-form effective measurement variance ``(Delta phi_M)^2``.

    Parameters
    ----------
    kind : {'css', 'sss', 'ghz'}
    mu : float, optional
        Twisting strength for ``sss``.
    """
    if not delta_phi > 0:
        raise InvalidArgumentError("delta_phi must be positive")
    d2 = delta_phi**2
    n = n_atoms
    if kind == "css":
        val = math.cosh(d2) / n + math.sinh(d2) - d2
    elif kind == "sss":
        if mu is None:
            raise InvalidArgumentError("sss needs mu")
        mo = sss_moments(n, mu)
        val = (mo.ex_sy2 * math.cosh(d2) + mo.ex_sx2 * math.sinh(d2)) / mo.ex_sx**2 - d2
    elif kind == "ghz":
        x = n * n * d2
        if x > 700:  # exp overflows; nothing is learned at this width
            return math.inf
        val = math.exp(x) / n**2 - d2
    else:
        raise InvalidArgumentError(f"no closed form for {kind!r}")
    if not val > 0:
        raise DomainError(f"{kind} closed form left its domain (value {val!r})")
    return val


# phase operator ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PhaseOperator:
    """Eigenbasis of the phase operator and the sine state."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # column s is |s>
    sine_state: spin.StateVector

    @property
    def matrix(self) -> np.ndarray:
        v = self.eigenvectors
        return (v * self.eigenvalues) @ v.conj().T


@lru_cache(maxsize=None)
def phase_operator(n_atoms: int) -> PhaseOperator:
    """Phase operator with eigenvalues ``2 pi s/(N+1)``, ``s = -N/2..N/2``.

    ``|s> = sum_M exp(-i phi_s M) |M> / sqrt(N+1)``. The sine state has
    amplitudes ``sqrt(2/(N+1)) sin(pi (k + 1/2)/(N+1))`` with ``k = M + N/2``,
    which are unit-normalized exactly.
    """
    basis = spin.DickeBasis(n_atoms)
    n = basis.n_atoms
    m = spin._m_values(n)
    s = m.copy()
    phis = 2 * math.pi * s / (n + 1)
    vecs = np.exp(-1j * np.outer(m, phis)) / math.sqrt(n + 1)
    k = np.arange(n + 1)
    amps = math.sqrt(2.0 / (n + 1)) * np.sin(math.pi * (k + 0.5) / (n + 1))
    sine = spin.StateVector(basis, amps.astype(complex))
    phis.setflags(write=False)
    vecs.setflags(write=False)
    return PhaseOperator(phis, vecs, sine)
