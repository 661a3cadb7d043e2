"""Estimators, Bayesian errors and the van Trees bound."""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from clockforge import estimation, protocols
from clockforge.errors import InvalidArgumentError, NumericalConsistencyError, QuadratureResolutionError
from clockforge.prior import gaussian_prior, prior_for
from clockforge.protocols import ConditionalModel, ProtocolSpec


def _model(spec, d, derivative=True):
    return protocols.statistical_model(spec, prior_for(d, spec.n_atoms), derivative)


class TestEfmTransform:
    def test_value(self):
        assert estimation.efm_transform(0.5, 1.0) == pytest.approx(1.0)

    def test_nothing_learned(self):
        assert estimation.efm_transform(1.0, 1.0) == math.inf

    @given(st.floats(1e-6, 0.99), st.floats(1e-4, 4.0))
    def test_inverse(self, ratio, pv):
        bmse = ratio * pv
        efm = estimation.efm_transform(bmse, pv)
        assert 1.0 / (1.0 / efm + 1.0 / pv) == pytest.approx(bmse, rel=1e-10)

    def test_rejects_bmse_above_prior(self):
        with pytest.raises(NumericalConsistencyError):
            estimation.efm_transform(2.0, 1.0)

    def test_deshrink(self):
        assert estimation.deshrink_factor(0.25, 1.0) == pytest.approx(0.75)


@pytest.mark.parametrize("n", [1, 4, 10, 25])
@pytest.mark.parametrize("d", [0.05, 0.3, 0.8])
def test_css_bcrb_closed_form(n, d):
    # binomial readout of sin(phi) has Fisher information N at every phase
    assert estimation.bcrb(_model(ProtocolSpec.css(n), d)) == pytest.approx(1 / (n + 1 / d**2), rel=1e-9)


@pytest.mark.parametrize(
    "spec",
    [ProtocolSpec.css(6), ProtocolSpec.sss(8, 0.2), ProtocolSpec.ghz(4), ProtocolSpec.variational(3, 1, 1, np.linspace(-1, 1, 8))],
    ids=["css", "sss", "ghz", "var11"],
)
def test_fisher_routes_agree(spec):
    # analytic derivative versus fourth-order finite differences on the grid
    d = 0.2
    a = estimation.bcrb(_model(spec, d, derivative=True))
    b = estimation.bcrb(_model(spec, d, derivative=False))
    assert a == pytest.approx(b, rel=1e-5)


def test_coarse_grid_rejected_for_finite_differences():
    p = gaussian_prior(1.0, 31)
    model = protocols.statistical_model(ProtocolSpec.css(2), p, derivative=False)
    with pytest.raises(QuadratureResolutionError):
        estimation.bcrb(model)


@given(
    n=st.integers(1, 8),
    d=st.sampled_from([0.1, 0.4, 1.0]),
    params=st.lists(st.floats(-3, 3), min_size=8, max_size=8),
)
def test_classical_ordering(n, d, params):
    model = _model(ProtocolSpec.variational(n, 1, 1, params), d)
    lin = estimation.linear_estimate(model)[1].bmse
    opt = estimation.optimal_bayes_estimate(model)[1].bmse
    tol = 1e-10 * d * d
    assert estimation.bcrb(model) <= opt + tol
    assert opt <= lin + tol
    assert lin <= d * d * (1 + 1e-9)
    assert opt == pytest.approx(estimation.posterior_variance(model), rel=1e-9, abs=1e-15)


def test_optimal_bayes_is_posterior_mean():
    model = _model(ProtocolSpec.css(3), 0.4)
    table, _ = estimation.optimal_bayes_estimate(model)
    w, phi = model.prior.weights, model.prior.nodes
    ref = (model.probs * w) @ phi / (model.probs @ w)
    np.testing.assert_allclose(table.values, ref, atol=1e-14)
    assert table.scale is None


def test_linear_estimator_is_proportional_and_odd():
    model = _model(ProtocolSpec.css(5), 0.3)
    table, _ = estimation.linear_estimate(model)
    np.testing.assert_allclose(table.values, table.scale * table.outcomes)
    np.testing.assert_allclose(table.values, -table.values[::-1], atol=1e-15)


def test_uninformative_model():
    p = gaussian_prior(0.5)
    flat = ConditionalModel([0.0, 1.0], p, np.full((2, p.n_nodes), 0.5))
    rep = estimation.optimal_bayes_estimate(flat)[1]
    assert rep.bmse == pytest.approx(0.25, rel=1e-8)
    assert rep.efm == math.inf


def test_report_range_checked():
    with pytest.raises(NumericalConsistencyError):
        estimation.ErrorReport(0.3, 0.1)


def test_unknown_estimator():
    with pytest.raises(InvalidArgumentError):
        estimation.estimate(_model(ProtocolSpec.css(2), 0.1), "ml")


def test_random_three_outcome_model_is_not_van_trees_tight():
    # a regular three-outcome model with a smooth signal: posterior-mean error
    # stays strictly above the van Trees value
    p = gaussian_prior(0.3)
    phi = p.nodes
    a = 0.3 * (1 + np.sin(phi))
    b = 0.2 * (1 + np.cos(2 * phi))
    probs = np.vstack([a, b, 1 - a - b])
    model = ConditionalModel([-1.0, 0.0, 1.0], p, probs)
    opt = estimation.optimal_bayes_estimate(model)[1].bmse
    assert opt - estimation.bcrb(model) > 1e-5
