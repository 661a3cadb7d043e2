"""Collective spin algebra checked against explicit 2^N tensor products."""

from functools import reduce
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from clockforge import spin
from clockforge.errors import InvalidArgumentError, NumericalConsistencyError
from clockforge.spin import X_AXIS, Y_AXIS, Z_AXIS

PAULI = {
    "x": np.array([[0, 1], [1, 0]], dtype=complex),
    # basis order (|down>, |up>) so that sigma_z/2 has eigenvalue -1/2 first
    "y": np.array([[0, 1j], [-1j, 0]], dtype=complex),
    "z": np.diag([-1.0, 1.0]).astype(complex),
}


def _full_op(n, which):
    eye = np.eye(2, dtype=complex)
    total = np.zeros((2**n, 2**n), dtype=complex)
    for j in range(n):
        factors = [PAULI[which] / 2 if i == j else eye for i in range(n)]
        total += reduce(np.kron, factors)
    return total


def _dicke_embedding(n):
    """Columns are symmetric states with k = M + N/2 excitations."""
    emb = np.zeros((2**n, n + 1))
    for k in range(n + 1):
        for ups in combinations(range(n), k):
            idx = sum(1 << (n - 1 - i) for i in ups)
            emb[idx, k] = 1.0
        emb[:, k] /= np.linalg.norm(emb[:, k])
    return emb


def _expm_herm(h, t):
    lam, vec = np.linalg.eigh(h)
    return (vec * np.exp(-1j * t * lam)) @ vec.conj().T


@pytest.mark.parametrize("n", [1, 2, 3, 4, 5])
@pytest.mark.parametrize("which", ["x", "y", "z"])
def test_operators_match_tensor_product(n, which):
    emb = _dicke_embedding(n)
    ref = emb.T @ _full_op(n, which) @ emb
    got = getattr(spin.collective_ops(n), "s" + which).matrix
    np.testing.assert_allclose(got, ref, atol=1e-12)


@pytest.mark.parametrize("n", [2, 3, 4])
def test_rotation_and_twist_match_tensor_product(n, rng):
    emb = _dicke_embedding(n)
    k = rng.normal(size=3)
    k /= np.linalg.norm(k)
    h = sum(c * _full_op(n, w) for c, w in zip(k, "xyz"))
    angle, mu = 0.83, 1.27
    np.testing.assert_allclose(spin.rotation_matrix(n, k, angle), emb.T @ _expm_herm(h, angle) @ emb, atol=1e-10)
    np.testing.assert_allclose(spin.oat_matrix(n, k, mu), emb.T @ _expm_herm(h @ h, mu / 2) @ emb, atol=1e-10)


class TestAlgebra:
    @pytest.mark.parametrize("n", [1, 2, 7, 30])
    def test_commutator(self, n):
        sx, sy, sz = (o.matrix for o in spin.collective_ops(n))
        np.testing.assert_allclose(sx @ sy - sy @ sx, 1j * sz, atol=1e-10)

    @pytest.mark.parametrize("n", [1, 6, 41])
    def test_casimir(self, n):
        sx, sy, sz = (o.matrix for o in spin.collective_ops(n))
        s = n / 2
        np.testing.assert_allclose(sx @ sx + sy @ sy + sz @ sz, s * (s + 1) * np.eye(n + 1), atol=1e-9)

    def test_m_values_ascending(self):
        np.testing.assert_array_equal(spin.dicke_basis(3).m_values, [-1.5, -0.5, 0.5, 1.5])


@given(
    n=st.integers(1, 24),
    polar=st.floats(0, np.pi),
    azimuth=st.floats(-np.pi, np.pi),
    angle=st.floats(-7, 7),
)
def test_rotations_are_unitary(n, polar, azimuth, angle):
    k = spin.axis_from_angles(polar, azimuth)
    u = spin.rotation_matrix(n, k, angle)
    np.testing.assert_allclose(u.conj().T @ u, np.eye(n + 1), atol=1e-9)


@given(n=st.integers(1, 20), polar=st.floats(0, np.pi), azimuth=st.floats(-np.pi, np.pi))
def test_axis_rotation_maps_sz_to_sk(n, polar, azimuth):
    u = spin.axis_rotation(n, polar, azimuth)
    sx, sy, sz = (o.matrix for o in spin.collective_ops(n))
    k = spin.axis_from_angles(polar, azimuth)
    np.testing.assert_allclose(u.conj().T @ sz @ u, k[0] * sx + k[1] * sy + k[2] * sz, atol=1e-9)


@given(polar=st.floats(0, np.pi), azimuth=st.floats(-3.1, 3.1))
def test_angles_roundtrip(polar, azimuth):
    p, a = spin.angles_from_axis(spin.axis_from_angles(polar, azimuth))
    np.testing.assert_allclose(spin.axis_from_angles(p, a), spin.axis_from_angles(polar, azimuth), atol=1e-12)


def test_twist_about_z_is_diagonal_phase():
    n = 5
    m = spin.dicke_basis(n).m_values
    np.testing.assert_allclose(np.diag(spin.oat_matrix(n, Z_AXIS, 0.4)), np.exp(-0.2j * m**2))


def test_half_pi_about_y_from_ground_gives_sx_eigenstate():
    psi = spin.rotate(spin.ground_state(6), Y_AXIS, -np.pi / 2)
    ops = spin.collective_ops(6)
    assert spin.expect(psi, ops.sx) == pytest.approx(3.0, abs=1e-12)
    psi2 = spin.rotate(spin.ground_state(6), Y_AXIS, np.pi / 2)
    assert spin.expect(psi2, ops.sx) == pytest.approx(-3.0, abs=1e-12)


def test_density_expectation_matches_state():
    psi = spin.rotate(spin.ground_state(4), X_AXIS, 0.7)
    sz = spin.collective_ops(4).sz
    assert spin.expect(spin.density(psi), sz) == pytest.approx(spin.expect(psi, sz))
    assert spin.expect(psi, sz) == pytest.approx(-2 * np.cos(0.7))


class TestValidation:
    def test_unnormalized_axis(self):
        with pytest.raises(InvalidArgumentError):
            spin.rotation_matrix(2, [1.0, 1.0, 0.0], 0.1)

    @pytest.mark.parametrize("n", [0, -1, 4097, 2.5])
    def test_bad_atom_number(self, n):
        with pytest.raises(InvalidArgumentError):
            spin.dicke_basis(n)

    def test_state_norm_checked(self):
        with pytest.raises(NumericalConsistencyError):
            spin.StateVector(spin.dicke_basis(1), [1.0, 1.0])

    def test_state_length_checked(self):
        with pytest.raises(InvalidArgumentError):
            spin.StateVector(spin.dicke_basis(2), [1.0, 0.0])

    def test_state_is_read_only(self):
        psi = spin.ground_state(2)
        with pytest.raises(ValueError):
            psi.amplitudes[0] = 0.0
