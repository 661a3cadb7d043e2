"""Collective spin algebra in the symmetric (Dicke) subspace.

States of ``N`` two-level atoms that are symmetric under permutations live in
a space of dimension ``N + 1`` spanned by the eigenstates ``|M>`` of ``S_z``
with ``M = -N/2, ..., +N/2`` (ascending order throughout the package).

Rotations ``R_n(angle) = exp(-i angle S_n)`` and one-axis twisting gates
``T_k(mu) = exp(-i mu/2 S_k^2)`` are computed exactly from the
eigendecomposition of ``S_n``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from .errors import InvalidArgumentError, NumericalConsistencyError

__all__ = [
    "DickeBasis",
    "SpinOperator",
    "StateVector",
    "DensityOp",
    "SpinOps",
    "dicke_basis",
    "collective_ops",
    "axis_from_angles",
    "angles_from_axis",
    "rotation_matrix",
    "oat_matrix",
    "axis_rotation",
    "rotate",
    "oat",
    "expect",
    "ground_state",
    "density",
]

MAX_ATOMS = 4096
STRUCTURAL_TOL = 1e-12
HARD_TOL = 1e-8
AXIS_TOL = 1e-9

X_AXIS = np.array([1.0, 0.0, 0.0])
Y_AXIS = np.array([0.0, 1.0, 0.0])
Z_AXIS = np.array([0.0, 0.0, 1.0])


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class DickeBasis:
    """Symmetric subspace of ``n_atoms`` spins-1/2."""

    n_atoms: int

    def __post_init__(self):
        n = self.n_atoms
        if isinstance(n, bool) or not isinstance(n, (int, np.integer)):
            raise InvalidArgumentError(f"n_atoms must be an integer, got {n!r}")
        if n < 1 or n > MAX_ATOMS:
            raise InvalidArgumentError(f"n_atoms must lie in [1, {MAX_ATOMS}], got {n}")
        object.__setattr__(self, "n_atoms", int(n))

    @property
    def dim(self) -> int:
        return self.n_atoms + 1

    @property
    def spin(self) -> float:
        return self.n_atoms / 2

    @property
    def m_values(self) -> np.ndarray:
        return _m_values(self.n_atoms)


@lru_cache(maxsize=None)
def _m_values(n: int) -> np.ndarray:
    return _readonly(np.arange(n + 1, dtype=float) - n / 2)


def dicke_basis(n_atoms: int) -> DickeBasis:
    return DickeBasis(n_atoms)


@dataclass(frozen=True, eq=False)
class SpinOperator:
    """A ``dim x dim`` operator on the Dicke subspace."""

    basis: DickeBasis
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.shape != (self.basis.dim, self.basis.dim):
            raise InvalidArgumentError(f"operator shape {m.shape} does not match dim {self.basis.dim}")
        object.__setattr__(self, "matrix", _readonly(m.copy()))


@dataclass(frozen=True, eq=False)
class StateVector:
    """Normalized pure state in the Dicke basis."""

    basis: DickeBasis
    amplitudes: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.amplitudes, dtype=complex).reshape(-1)
        if a.shape != (self.basis.dim,):
            raise InvalidArgumentError(f"state length {a.size} does not match dim {self.basis.dim}")
        norm = np.linalg.norm(a)
        if abs(norm - 1.0) > HARD_TOL:
            raise NumericalConsistencyError(f"state norm {norm!r} deviates from 1")
        object.__setattr__(self, "amplitudes", _readonly(a.copy()))

    @classmethod
    def normalized(cls, basis: DickeBasis, amplitudes) -> "StateVector":
        a = np.asarray(amplitudes, dtype=complex).reshape(-1)
        norm = np.linalg.norm(a)
        if norm == 0:
            raise InvalidArgumentError("cannot normalize the zero vector")
        return cls(basis, a / norm)

    def fidelity(self, other: "StateVector") -> float:
        """Squared overlap ``|<self|other>|^2``."""
        return float(abs(np.vdot(self.amplitudes, other.amplitudes)) ** 2)


@dataclass(frozen=True, eq=False)
class DensityOp:
    """Density operator on the Dicke subspace."""

    basis: DickeBasis
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.shape != (self.basis.dim, self.basis.dim):
            raise InvalidArgumentError(f"density shape {m.shape} does not match dim {self.basis.dim}")
        if np.max(np.abs(m - m.conj().T)) > HARD_TOL:
            raise NumericalConsistencyError("density operator is not Hermitian")
        tr = np.trace(m).real
        if abs(tr - 1.0) > HARD_TOL:
            raise NumericalConsistencyError(f"density trace {tr!r} deviates from 1")
        object.__setattr__(self, "matrix", _readonly(m.copy()))


def density(state: StateVector) -> DensityOp:
    """Projector onto a pure state."""
    a = state.amplitudes
    return DensityOp(state.basis, np.outer(a, a.conj()))


class SpinOps(NamedTuple):
    sx: SpinOperator
    sy: SpinOperator
    sz: SpinOperator


@lru_cache(maxsize=None)
def _ops(n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    s = n / 2
    m = _m_values(n)
    # <M+1|S_+|M> = sqrt(S(S+1) - M(M+1))
    ladder = np.sqrt(np.maximum(s * (s + 1) - m[:-1] * (m[:-1] + 1), 0.0))
    splus = np.diag(ladder, k=-1).astype(complex)
    sminus = splus.conj().T
    sx = (splus + sminus) / 2
    sy = (splus - sminus) / 2j
    sz = np.diag(m).astype(complex)
    return _readonly(sx), _readonly(sy), _readonly(sz)


def collective_ops(n_atoms: int) -> SpinOps:
    """Collective spin operators ``S_x, S_y, S_z`` for ``n_atoms`` atoms.

    Examples
    --------
    >>> ops = collective_ops(1)
    >>> np.diag(ops.sz.matrix).real
    array([-0.5,  0.5])
    """
    basis = DickeBasis(n_atoms)
    sx, sy, sz = _ops(basis.n_atoms)
    return SpinOps(SpinOperator(basis, sx), SpinOperator(basis, sy), SpinOperator(basis, sz))


def _check_axis(axis) -> np.ndarray:
    k = np.asarray(axis, dtype=float).reshape(-1)
    if k.shape != (3,) or not np.all(np.isfinite(k)):
        raise InvalidArgumentError(f"axis must be a finite 3-vector, got {axis!r}")
    if abs(np.linalg.norm(k) - 1.0) > AXIS_TOL:
        raise InvalidArgumentError(f"axis must be normalized to 1e-9, |axis| = {np.linalg.norm(k)!r}")
    return k


def axis_from_angles(polar: float, azimuth: float) -> np.ndarray:
    """Unit vector with the given polar and azimuthal angles (radians)."""
    st = np.sin(polar)
    return np.array([st * np.cos(azimuth), st * np.sin(azimuth), np.cos(polar)])


def angles_from_axis(axis) -> tuple[float, float]:
    """Inverse of :func:`axis_from_angles` with polar in [0, pi]."""
    k = _check_axis(axis)
    polar = float(np.arctan2(np.hypot(k[0], k[1]), k[2]))
    azimuth = float(np.arctan2(k[1], k[0]))
    return polar, azimuth


@lru_cache(maxsize=None)
def _xy_eig(n: int, which: int) -> np.ndarray:
    op = _ops(n)[which]
    lam, vec = np.linalg.eigh(op)
    if np.max(np.abs(lam - _m_values(n))) > 1e-9:
        raise NumericalConsistencyError("spin eigenvalues do not match the M ladder")
    return _readonly(vec)


def _axis_eigvecs(n: int, k: np.ndarray) -> np.ndarray:
    """Eigenvectors of ``k . S`` ordered so that column j has eigenvalue M_j."""
    if k[0] == 0.0 and k[1] == 0.0:
        if k[2] > 0:
            return np.eye(n + 1, dtype=complex)
        return np.eye(n + 1, dtype=complex)[:, ::-1]
    if k[1] == 0.0 and k[2] == 0.0 and k[0] > 0:
        return _xy_eig(n, 0)
    if k[0] == 0.0 and k[2] == 0.0 and k[1] > 0:
        return _xy_eig(n, 1)
    sx, sy, sz = _ops(n)
    op = k[0] * sx + k[1] * sy + k[2] * sz
    lam, vec = np.linalg.eigh(op)
    if np.max(np.abs(lam - _m_values(n))) > 1e-8:
        raise NumericalConsistencyError("spin eigenvalues do not match the M ladder")
    return vec


def _diag_conjugate(vec: np.ndarray, phases: np.ndarray) -> np.ndarray:
    return (vec * phases) @ vec.conj().T


def rotation_matrix(n_atoms: int, axis, angle: float) -> np.ndarray:
    """Matrix of ``exp(-i angle S_axis)``."""
    n = DickeBasis(n_atoms).n_atoms
    k = _check_axis(axis)
    m = _m_values(n)
    vec = _axis_eigvecs(n, k)
    return _diag_conjugate(vec, np.exp(-1j * angle * m))


def oat_matrix(n_atoms: int, axis, mu: float) -> np.ndarray:
    """Matrix of the one-axis twisting gate ``exp(-i mu/2 S_axis^2)``.

    The gate is ``R^dag T_z(mu) R`` with ``R`` mapping ``S_axis`` onto ``S_z``;
    the eigenvector matrix of ``S_axis`` supplies ``R^dag``.
    """
    n = DickeBasis(n_atoms).n_atoms
    k = _check_axis(axis)
    m = _m_values(n)
    vec = _axis_eigvecs(n, k)
    return _diag_conjugate(vec, np.exp(-0.5j * mu * m * m))


def axis_rotation(n_atoms: int, polar: float, azimuth: float) -> np.ndarray:
    """Rotation ``U = R_y(-polar) R_z(-azimuth)`` with ``U^dag S_z U = S_k``.

    ``k`` is the unit vector with the given polar/azimuth angles. The family
    covers every rotation up to a left factor ``R_z(alpha)``, which commutes
    with phase encoding, twisting about z and the final ``S_z`` projection.
    """
    n = DickeBasis(n_atoms).n_atoms
    m = _m_values(n)
    ry = _diag_conjugate(_xy_eig(n, 1), np.exp(1j * polar * m))
    return ry * np.exp(1j * azimuth * m)[None, :]


def _as_state(state: StateVector) -> StateVector:
    if not isinstance(state, StateVector):
        raise InvalidArgumentError(f"expected a StateVector, got {type(state).__name__}")
    return state


def rotate(state: StateVector, axis, angle: float) -> StateVector:
    """Apply ``exp(-i angle S_axis)`` to ``state``."""
    state = _as_state(state)
    u = rotation_matrix(state.basis.n_atoms, axis, angle)
    return StateVector.normalized(state.basis, u @ state.amplitudes)


def oat(state: StateVector, axis, mu: float) -> StateVector:
    """Apply the one-axis twisting gate ``T_axis(mu)`` to ``state``."""
    state = _as_state(state)
    u = oat_matrix(state.basis.n_atoms, axis, mu)
    return StateVector.normalized(state.basis, u @ state.amplitudes)


def expect(obj: StateVector | DensityOp, op: SpinOperator | np.ndarray) -> float:
    """Real expectation value ``<psi|op|psi>`` or ``Tr(rho op)``.

    Raises
    ------
    NumericalConsistencyError
        If the imaginary residue reaches ``1e-8``.
    """
    mat = op.matrix if isinstance(op, SpinOperator) else np.asarray(op)
    if isinstance(op, SpinOperator) and op.basis != obj.basis:
        raise InvalidArgumentError("state and operator bases differ")
    if isinstance(obj, StateVector):
        a = obj.amplitudes
        value = np.vdot(a, mat @ a)
    elif isinstance(obj, DensityOp):
        value = np.trace(obj.matrix @ mat)
    else:
        raise InvalidArgumentError(f"cannot take an expectation over {type(obj).__name__}")
    if abs(value.imag) >= HARD_TOL:
        raise NumericalConsistencyError(f"expectation has imaginary residue {value.imag!r}")
    return float(value.real)


def ground_state(n_atoms: int) -> StateVector:
    """All atoms in the lower level: amplitude 1 at ``M = -N/2``."""
    basis = DickeBasis(n_atoms)
    a = np.zeros(basis.dim, dtype=complex)
    a[0] = 1.0
    return StateVector(basis, a)
