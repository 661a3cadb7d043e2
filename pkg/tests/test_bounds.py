"""Quantum bounds: BQCRB, OQI and the phase-operator interferometer."""

import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from clockforge import bounds, estimation, protocols, spin
from clockforge.errors import InvalidArgumentError
from clockforge.prior import gaussian_prior, prior_for
from clockforge.protocols import ProtocolSpec


def _random_state(n, seed):
    r = np.random.default_rng(seed)
    return spin.StateVector.normalized(spin.DickeBasis(n), r.normal(size=n + 1) + 1j * r.normal(size=n + 1))


def _ghz_closed_form(n, d):
    x = (n * d) ** 2
    return d * d * (1 - x * math.exp(-x))


@pytest.mark.parametrize("n", [1, 3, 8])
def test_averaged_state_matches_gaussian_coherences(n):
    # spectral oracle: averaging exp(-i phi (M - M')) gives exp(-(M - M')^2 d^2 / 2)
    d = 0.35
    psi = _random_state(n, 4)
    avg = bounds.averaged_state(psi, prior_for(d, n))
    m = spin.dicke_basis(n).m_values
    diff = m[:, None] - m[None, :]
    a = psi.amplitudes
    rho = np.outer(a, a.conj())
    np.testing.assert_allclose(avg.rho_bar, rho * np.exp(-0.5 * diff**2 * d * d), atol=1e-12)
    # d/dk of the characteristic function: E[phi exp(-i k phi)] = -i k d^2 exp(-k^2 d^2 / 2)
    np.testing.assert_allclose(avg.rho_bar_prime, rho * (-1j * diff * d * d) * np.exp(-0.5 * diff**2 * d * d), atol=1e-12)


@pytest.mark.parametrize("n", [1, 2, 4, 8, 16])
@pytest.mark.parametrize("d", [0.01, 0.1, 0.3, 1.0])
def test_ghz_bqcrb_closed_form(n, d):
    psi = protocols.prepare_state(ProtocolSpec.ghz(n))
    p = prior_for(d, n)
    assert bounds.bqcrb(psi, p) == pytest.approx(_ghz_closed_form(n, d), rel=1e-8, abs=1e-16)


@given(n=st.integers(1, 10), seed=st.integers(0, 2**31), d=st.sampled_from([0.05, 0.3, 1.0]))
def test_sld_and_qfi_routes_agree(n, seed, d):
    psi = _random_state(n, seed)
    p = prior_for(d, n)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        a = bounds.bqcrb(psi, p)
        b = bounds.bqcrb_qfi(psi, p)
    assert a == pytest.approx(b, rel=1e-7, abs=1e-14)


@given(
    n=st.integers(1, 6),
    d=st.sampled_from([0.1, 0.5, 1.0]),
    params=st.lists(st.floats(-3, 3), min_size=8, max_size=8),
)
def test_quantum_bounds_below_every_measurement(n, d, params):
    spec = ProtocolSpec.variational(n, 1, 1, params)
    p = prior_for(d, n)
    opt = estimation.optimal_bayes_estimate(protocols.statistical_model(spec, p))[1].bmse
    q = bounds.bqcrb(protocols.prepare_state(spec), p)
    o = bounds.oqi(n, p).bound
    tol = 1e-8 + 1e-9 * d * d
    assert o <= q + tol
    assert q <= opt + tol


class TestOqi:
    def test_frozen_small_width(self):
        r = bounds.oqi(4, prior_for(0.01, 4))
        assert r.converged
        assert r.bound == pytest.approx(9.98403e-5, rel=1e-5)

    def test_single_atom_wide_prior(self):
        # wide priors put the optimum above the classical van Trees value of a CSS
        r = bounds.oqi(1, prior_for(1.0, 1))
        assert r.bound == pytest.approx(0.632, abs=1e-3)
        css = estimation.bcrb(protocols.statistical_model(ProtocolSpec.css(1), prior_for(1.0, 1)))
        assert r.bound > css

    @pytest.mark.parametrize("n", [2, 4, 8])
    def test_ghz_saturates_for_narrow_prior(self, n):
        d = 0.2 / n
        p = prior_for(d, n)
        ghz = bounds.bqcrb(protocols.prepare_state(ProtocolSpec.ghz(n)), p)
        assert bounds.oqi(n, p).bound == pytest.approx(ghz, rel=1e-3)

    def test_monotone_trace(self):
        r = bounds.oqi(6, prior_for(0.4, 6))
        assert all(b <= a + 1e-15 for a, b in zip(r.trace, r.trace[1:]))
        assert r.bound == pytest.approx(min(r.trace))

    def test_start_independent(self):
        p = prior_for(0.3, 5)
        a = bounds.oqi(5, p).bound
        b = bounds.oqi(5, p, initial=_random_state(5, 1)).bound
        assert a == pytest.approx(b, rel=1e-6)

    def test_optimal_state_reproduces_bound(self):
        p = prior_for(0.3, 6)
        r = bounds.oqi(6, p)
        assert bounds.bqcrb(r.optimal_state, p) == pytest.approx(r.bound, rel=1e-9)

    def test_bad_tolerance(self):
        with pytest.raises(InvalidArgumentError):
            bounds.oqi(2, gaussian_prior(0.1), tol=0.0)


class TestPoi:
    @pytest.mark.parametrize("n", [2, 5, 8])
    def test_not_below_oqi(self, n):
        p = prior_for(0.5, n)
        assert bounds.poi_optimal(n, p).bound >= bounds.oqi(n, p).bound - 1e-10

    def test_improves_with_n(self):
        vals = [bounds.poi_optimal(n, prior_for(0.4, n)).bound for n in (4, 8, 16)]
        assert vals[0] > vals[1] > vals[2]


class TestCtl:
    def test_frozen(self):
        assert bounds.ctl_oqi(math.pi) == pytest.approx(12.5269, abs=1e-4)

    def test_full_sum_exceeds_main_fringe(self):
        assert bounds.ctl_oqi(2.0, "full_sum") >= bounds.ctl_oqi(2.0)

    def test_negligible_for_narrow_prior(self):
        assert bounds.ctl_oqi(0.2) < 1e-40

    def test_pi_heisenberg(self):
        assert bounds.pi_heisenberg_limit(10) == pytest.approx(math.pi**2 / 100)
        assert bounds.oqi_asymptotic(10, 0.1) == pytest.approx(math.pi**2 / 100)
