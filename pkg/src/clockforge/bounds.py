"""Bounds optimized over measurements and probe states.

The phase enters through ``R_z(phi)``, so averaging over a prior only damps
the coherences: ``rho_bar[M, M'] = rho[M, M'] c(M - M')`` with
``c(k) = E[exp(-i phi k)]``. The companion ``rho_bar'`` uses
``d(k) = E[phi exp(-i phi k)]``. Both are evaluated with the prior's
quadrature rule.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from . import spin
from .errors import ConditioningWarning, InvalidArgumentError, NumericalConsistencyError, UnsupportedError
from .estimation import OUTCOME_FLOOR
from .prior import PriorModel
from .protocols import phase_operator

__all__ = [
    "AveragedState",
    "OqiResult",
    "averaged_state",
    "sld_operator",
    "bqcrb",
    "bqcrb_qfi",
    "averaged_qfi",
    "oqi",
    "poi_optimal",
    "ctl_oqi",
    "oqi_asymptotic",
    "pi_heisenberg_limit",
    "DENSE_CAP",
]

DENSE_CAP = 64
EIG_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class AveragedState:
    """Prior-averaged state ``rho_bar`` and first phase moment ``rho_bar'``."""

    rho_bar: np.ndarray
    rho_bar_prime: np.ndarray
    prior: PriorModel

    def __post_init__(self):
        for name in ("rho_bar", "rho_bar_prime"):
            a = getattr(self, name)
            if np.max(np.abs(a - a.conj().T)) > 1e-10:
                raise NumericalConsistencyError(f"{name} is not Hermitian")
        if abs(np.trace(self.rho_bar).real - 1.0) > 1e-10:
            raise NumericalConsistencyError("rho_bar trace differs from 1")


@dataclass
class OqiResult:
    """Outcome of an alternating state/measurement optimization.

    Attributes
    ----------
    bound : float
        Best value found (rad^2).
    optimal_state : StateVector
    L_operator : ndarray
        Hermitian estimator operator at the optimum.
    iterations : int
    converged : bool
    trace : list of float
        Bound after every iteration.
    """

    bound: float
    optimal_state: spin.StateVector
    L_operator: np.ndarray
    iterations: int
    converged: bool
    trace: list = field(default_factory=list)


def _check_prior(prior: PriorModel) -> None:
    if not isinstance(prior, PriorModel):
        raise UnsupportedError("bounds are implemented for Gaussian PriorModel instances only")


def _phase_moments(prior: PriorModel, n: int) -> tuple[np.ndarray, np.ndarray]:
    """``c(k)`` and ``d(k)`` as Toeplitz matrices indexed by ``(M, M')``."""
    k = np.arange(-n, n + 1)
    e = np.exp(-1j * np.outer(k, prior.nodes))
    c_k = e @ prior.weights
    d_k = e @ (prior.weights * prior.nodes)
    idx = np.arange(n + 1)
    diff = idx[:, None] - idx[None, :] + n
    return c_k[diff], d_k[diff]


def averaged_state(state: spin.StateVector, prior: PriorModel) -> AveragedState:
    _check_prior(prior)
    psi = state.amplitudes
    rho = np.outer(psi, psi.conj())
    c, d = _phase_moments(prior, state.basis.n_atoms)
    return AveragedState(rho * c, rho * d, prior)


def sld_operator(avg: AveragedState) -> tuple[np.ndarray, float]:
    """Solve ``rho_bar' = (L rho_bar + rho_bar L)/2`` and return ``(L, Tr rho_bar L^2)``.

    Matrix elements between eigenvectors whose eigenvalue sum falls below
    ``1e-12 max(lambda)`` are set to zero.
    """
    lam, v = np.linalg.eigh(avg.rho_bar)
    lam = np.clip(lam, 0.0, None)
    rp = v.conj().T @ avg.rho_bar_prime @ v
    s = lam[:, None] + lam[None, :]
    keep = s > EIG_FLOOR * lam.max()
    dropped = np.sum(np.abs(rp[~keep]) ** 2)
    total = np.sum(np.abs(rp) ** 2)
    if total > 0 and dropped > 0.5 * total:
        warnings.warn("eigenvalue floor removed most of the weight of rho_bar'", ConditioningWarning, stacklevel=2)
    l_eig = np.zeros_like(rp)
    l_eig[keep] = 2.0 * rp[keep] / s[keep]
    gain = float(np.sum(2.0 * np.abs(rp[keep]) ** 2 / s[keep]))
    L = v @ l_eig @ v.conj().T
    return 0.5 * (L + L.conj().T), gain


def bqcrb(state: spin.StateVector, prior: PriorModel) -> float:
    """Bayesian quantum Cramer-Rao bound ``delta_phi^2 - Tr(rho_bar L^2)``."""
    _, gain = sld_operator(averaged_state(state, prior))
    return prior.variance - gain


def averaged_qfi(state: spin.StateVector, prior: PriorModel) -> float:
    """Quantum Fisher information of ``rho_bar`` for the generator ``S_z``."""
    avg = averaged_state(state, prior)
    lam, v = np.linalg.eigh(avg.rho_bar)
    lam = np.clip(lam, 0.0, None)
    sz = v.conj().T @ (spin._m_values(state.basis.n_atoms)[:, None] * v)
    s = lam[:, None] + lam[None, :]
    keep = s > EIG_FLOOR * lam.max()
    diff = lam[:, None] - lam[None, :]
    return float(2.0 * np.sum(diff[keep] ** 2 / s[keep] * np.abs(sz[keep]) ** 2))


def bqcrb_qfi(state: spin.StateVector, prior: PriorModel) -> float:
    """Gaussian-prior shortcut ``delta_phi^2 (1 - delta_phi^2 F_Q[rho_bar])``.

    For a Gaussian prior ``rho_bar' = -i delta_phi^2 [S_z, rho_bar]``, which
    turns the SLD equation into the QFI of ``rho_bar``.
    """
    d2 = prior.variance
    return d2 * (1.0 - d2 * averaged_qfi(state, prior))


def _oqi_operator(L: np.ndarray, prior: PriorModel, n: int) -> np.ndarray:
    # sum_q w_q R_z(phi_q)^dag (L^2 - 2 phi_q L) R_z(phi_q)
    #   = L^2 o conj(C) - 2 L o conj(D)
    c, d = _phase_moments(prior, n)
    A = (L @ L) * c.conj() - 2.0 * L * d.conj()
    return 0.5 * (A + A.conj().T)


def _check_n(n_atoms: int) -> int:
    n = spin.DickeBasis(n_atoms).n_atoms
    if n > DENSE_CAP:
        raise InvalidArgumentError(f"dense optimization capped at N={DENSE_CAP}; use pi_heisenberg_limit beyond")
    return n


def _alternate(n, prior, psi0, step_L, tol, max_iter, stagnation=20) -> OqiResult:
    basis = spin.DickeBasis(n)
    psi = np.asarray(psi0, dtype=complex)
    best = math.inf
    best_psi, best_L = psi, None
    trace = []
    converged = False
    since_improved = 0
    for it in range(1, max_iter + 1):
        L, value = step_L(psi)
        trace.append(value)
        prev = best
        if value < best:
            best, best_psi, best_L = value, psi, L
        if math.isfinite(prev) and prev - value <= tol * abs(value):
            if value <= prev:
                converged = True
                break
            since_improved += 1
            if since_improved >= stagnation:
                # the state update stopped improving: flag, do not resolve
                converged = False
                break
        else:
            since_improved = 0
        A = _oqi_operator(L, prior, n)
        _, vecs = np.linalg.eigh(A)
        psi = vecs[:, 0]
    state = spin.StateVector(basis, best_psi / np.linalg.norm(best_psi))
    return OqiResult(float(best), state, best_L, len(trace), converged, trace)


def oqi(
    n_atoms: int,
    prior: PriorModel,
    tol: float = 1e-9,
    max_iter: int = 500,
    initial: spin.StateVector | None = None,
) -> OqiResult:
    """Optimal quantum interferometer bound by alternating minimization.

    Each iteration solves the SLD equation for the current state and then
    replaces the state by the eigenvector of the OQI operator with the most
    negative eigenvalue. Starts from the sine state unless ``initial`` is
    given. Stops on relative improvement below ``tol``, or flagged as not
    converged after 20 iterations without improvement or at ``max_iter``.
    """
    _check_prior(prior)
    n = _check_n(n_atoms)
    if not tol > 0:
        raise InvalidArgumentError("tol must be positive")
    psi0 = phase_operator(n).sine_state.amplitudes if initial is None else initial.amplitudes
    basis = spin.DickeBasis(n)

    def step(psi):
        L, gain = sld_operator(averaged_state(spin.StateVector(basis, psi / np.linalg.norm(psi)), prior))
        return L, prior.variance - gain

    return _alternate(n, prior, psi0, step, tol, max_iter)


def poi_optimal(
    n_atoms: int,
    prior: PriorModel,
    tol: float = 1e-9,
    max_iter: int = 500,
    initial: spin.StateVector | None = None,
) -> OqiResult:
    """Best probe state for the phase-operator measurement.

    The measurement is fixed to the phase-operator eigenbasis; the estimator
    is the posterior mean of the current state and ``L`` is diagonal in that
    basis. The state update is the same most-negative-eigenvector rule as in
    :func:`oqi`. Starts from ``|s = 0>``.
    """
    _check_prior(prior)
    n = _check_n(n_atoms)
    ph = phase_operator(n)
    basis = spin.DickeBasis(n)
    if initial is None:
        psi0 = ph.eigenvectors[:, n // 2] if n % 2 == 0 else ph.eigenvectors[:, (n + 1) // 2]
        # s = 0 exists for even N; odd N starts from the smallest |s|
    else:
        psi0 = initial.amplitudes
    m = spin._m_values(n)
    phase = np.exp(-1j * np.outer(m, prior.nodes))
    proj = ph.eigenvectors.conj().T

    def step(psi):
        psi = psi / np.linalg.norm(psi)
        amp = proj @ (psi[:, None] * phase)
        probs = amp.real**2 + amp.imag**2
        joint = probs * prior.weights
        p_s = joint.sum(axis=1)
        first = joint @ prior.nodes
        ok = p_s >= OUTCOME_FLOOR
        est = np.zeros(n + 1)
        est[ok] = first[ok] / p_s[ok]
        value = prior.variance - float(np.sum(first[ok] ** 2 / p_s[ok]))
        L = (ph.eigenvectors * est) @ ph.eigenvectors.conj().T
        return L, value

    return _alternate(n, prior, psi0, step, tol, max_iter)


def ctl_oqi(delta_phi: float, mode: str = "main_fringe", k_max: int = 50) -> float:
    """Coherence-time-limit term from phase slips across ``+-pi``.

    ``main_fringe`` counts only the first neighbouring fringes,
    ``4 pi^2 [1 - erf(pi / (sqrt(2) delta_phi))]``. ``full_sum`` adds
    ``(2 pi k)^2 P_k`` for ``|k| <= k_max`` with ``P_k`` the prior mass of
    the interval ``[(2k-1) pi, (2k+1) pi]``.
    """
    if not delta_phi > 0:
        raise InvalidArgumentError("delta_phi must be positive")
    s = math.sqrt(2.0) * delta_phi
    if mode == "main_fringe":
        return 4 * math.pi**2 * (1.0 - math.erf(math.pi / s))
    if mode == "full_sum":
        if k_max < 1:
            raise InvalidArgumentError("k_max must be >= 1")
        k = np.arange(1, k_max + 1)
        p_k = 0.5 * (erf((2 * k + 1) * math.pi / s) - erf((2 * k - 1) * math.pi / s))
        return float(2.0 * np.sum((2 * math.pi * k) ** 2 * p_k))
    raise InvalidArgumentError(f"unknown mode {mode!r}")


def pi_heisenberg_limit(n_atoms: int) -> float:
    """``pi^2 / N^2``."""
    if n_atoms < 1:
        raise InvalidArgumentError("n_atoms must be >= 1")
    return math.pi**2 / n_atoms**2


def oqi_asymptotic(n_atoms: int, delta_phi: float) -> float:
    """Large-N OQI: pi-corrected Heisenberg limit plus the main-fringe CTL term."""
    return pi_heisenberg_limit(n_atoms) + ctl_oqi(delta_phi, "main_fringe")
