import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import norm

from quantile_otr.core import Dataset, OutcomeKind
from quantile_otr.errors import DataError, EstimatorError, SeparationError
from quantile_otr.nuisance import (GaussianSurvivalModel, NegBinSurvivalModel, NuisanceModels, PropensityModel,
                                   fit_gaussian_survival, fit_negbin_survival, fit_nuisances, fit_propensity,
                                   survival_eval)
from quantile_otr.simulation import SimCaseSpec, generate


def _gauss(mu, sd):
    # constant mean and sd: intercept-only bases
    return GaussianSurvivalModel(mu, np.zeros(1), 2 * np.log(sd), np.zeros(0), "arm", "intercept")


def _bundle(surv, eps=0.01):
    return NuisanceModels(PropensityModel(0.0, np.zeros(1)), surv, eps)


# -- propensity ------------------------------------------------------------------

def test_propensity_no_signal():
    X = np.array([[-1.0], [1.0], [-1.0], [1.0]] * 5)
    A = np.array([0, 0, 1, 1] * 5)
    pm = fit_propensity(Dataset(X, A, np.zeros(20)))
    assert abs(pm.alpha0) < 1e-6 and np.all(np.abs(pm.alpha) < 1e-6)


def test_propensity_saturated_closed_form():
    X = np.array([[0.0], [0.0], [1.0], [1.0], [1.0], [1.0]])
    A = np.array([1, 0, 1, 1, 1, 0])
    pm = fit_propensity(Dataset(X, A, np.zeros(6)))
    assert pm.alpha0 == pytest.approx(0.0, abs=1e-6)
    assert pm.alpha[0] == pytest.approx(np.log(3.0), abs=1e-6)


def test_propensity_recovers_generator():
    data = generate(SimCaseSpec("case1", 10_000, 11)).data
    pm = fit_propensity(data)
    np.testing.assert_allclose([pm.alpha0, *pm.alpha], [-0.5, -0.5, -0.5], atol=0.1)


def test_propensity_separation():
    X = np.linspace(-1, 1, 20)[:, None]
    with pytest.raises(SeparationError, match="separat"):
        fit_propensity(Dataset(X, (X[:, 0] > 0).astype(int), np.zeros(20)))


def test_propensity_needs_both_arms():
    with pytest.raises(DataError):
        fit_propensity(Dataset(np.zeros((5, 1)), np.ones(5, int), np.zeros(5)))


def test_propensity_loglik_monotone():
    pm = fit_propensity(generate(SimCaseSpec("case2", 800, 3)).data)
    assert np.all(np.diff(pm.history) >= -1e-12)


@given(st.floats(0.001, 0.49), st.floats(-50, 50), st.floats(-50, 50))
def test_clipped_propensity_bounds(eps, a0, a1):
    m = NuisanceModels(PropensityModel(a0, np.array([a1])), _gauss(0.0, 1.0), eps)
    X = np.linspace(-10, 10, 41)[:, None]
    for a in (0, 1):
        p = m.propensity_prob(np.full(41, a), X)
        assert np.all(p >= eps - 1e-15) and np.all(p <= 1 - eps + 1e-15)


# -- Gaussian ----------------------------------------------------------------------

def test_gaussian_homoscedastic(rng):
    n = 200_000
    X = rng.normal(size=(n, 2))
    data = Dataset(X, rng.integers(0, 2, n), 1.0 + rng.normal(size=n))
    g = fit_gaussian_survival(data)
    assert g.theta0 == pytest.approx(1.0, abs=0.02)
    np.testing.assert_allclose(g.theta, 0.0, atol=0.02)
    np.testing.assert_allclose(g.xi, 0.0, atol=0.03)
    assert np.exp(g.xi0) == pytest.approx(1.0, abs=0.03)


def test_gaussian_case1_mean_coefficients():
    g = fit_gaussian_survival(generate(SimCaseSpec("case1", 20_000, 5)).data)
    coef = np.concatenate([[g.theta0], g.theta])
    np.testing.assert_allclose(coef, [2, -2, 2, 0, 1, 1], atol=0.1)


def test_gaussian_degenerate_variance():
    X = np.tile([[0.5, 1.0]], (20, 1))
    A = np.array([0, 1] * 10)
    with pytest.raises(EstimatorError):
        fit_gaussian_survival(Dataset(X, A, np.where(A == 1, 2.0, 1.0)))


def test_gaussian_loglik_monotone():
    g = fit_gaussian_survival(generate(SimCaseSpec("case2", 1000, 2)).data)
    assert np.all(np.diff(g.history) >= -1e-9)


def test_gaussian_rejects_discrete():
    data = Dataset(np.zeros((20, 1)), [0, 1] * 10, np.arange(20), OutcomeKind.DISCRETE)
    with pytest.raises(DataError):
        fit_gaussian_survival(data)


# -- negative binomial ---------------------------------------------------------------

@pytest.mark.xfail(strict=True, reason="case3 arm sizes are weakly identified next to the "
                   "arm-by-covariate probability terms; see decision ledger")
def test_negbin_case3_sizes():
    nb = fit_negbin_survival(generate(SimCaseSpec("case3", 20_000, 9)).data)
    np.testing.assert_allclose(nb.size([0, 1]), [2.0, 3.0], atol=0.3)


def test_negbin_geometric(rng):
    n = 20_000
    X = rng.normal(size=(n, 1))
    y = rng.negative_binomial(1, 0.3, size=n)
    nb = fit_negbin_survival(Dataset(X, rng.integers(0, 2, n), y, OutcomeKind.DISCRETE))
    np.testing.assert_allclose(nb.size([0, 1]), 1.0, atol=0.1)


def test_negbin_loglik_monotone():
    nb = fit_negbin_survival(generate(SimCaseSpec("case3", 1500, 4)).data)
    assert np.all(np.diff(nb.history) >= -1e-9)


def test_negbin_negative_outcome():
    data = Dataset(np.zeros((10, 1)), [0, 1] * 5, [-1] + [1] * 9, OutcomeKind.DISCRETE)
    with pytest.raises(DataError):
        fit_negbin_survival(data)


def test_negbin_all_zero():
    data = Dataset(np.random.default_rng(0).normal(size=(10, 1)), [0, 1] * 5, np.zeros(10), OutcomeKind.DISCRETE)
    with pytest.raises((DataError, EstimatorError)):
        fit_negbin_survival(data)


# -- survival evaluation ---------------------------------------------------------------

def test_survival_eval_gaussian_values():
    assert survival_eval(_bundle(_gauss(0.0, 1.0)), 0.0, [0.0], 1) == pytest.approx(0.5)
    assert survival_eval(_bundle(_gauss(2.0, 2.0)), 0.0, [0.0], 1) == pytest.approx(norm.cdf(1.0), abs=1e-12)
    assert norm.cdf(1.0) == pytest.approx(0.8413, abs=1e-4)


def test_survival_eval_negbin_value():
    nb = NegBinSurvivalModel(0.0, np.zeros(3), 2.0, 0.0)  # expit(0) = 0.5
    assert survival_eval(_bundle(nb), 0.0, [0.0], 0) == pytest.approx(0.75, abs=1e-12)


@given(st.floats(-3, 3), st.floats(0.2, 3), st.integers(0, 1))
def test_gaussian_survival_monotone_bounded(mu, sd, a):
    s = _gauss(mu, sd).survival(np.linspace(-20, 20, 201), np.zeros((201, 1)), a)
    assert np.all((s >= 0) & (s <= 1)) and np.all(np.diff(s) <= 0)


@given(st.floats(-2, 2), st.floats(0.3, 5), st.floats(-2, 2))
def test_negbin_survival_is_integer_step(theta0, size0, delta):
    if size0 + delta <= 0:
        delta = 0.0
    nb = NegBinSurvivalModel(theta0, np.zeros(3), size0, delta)
    q = np.linspace(-2, 15, 341)
    for a in (0, 1):
        s = nb.survival(q, np.zeros((q.size, 1)), a)
        assert np.all((s >= 0) & (s <= 1)) and np.all(np.diff(s) <= 1e-15)
        np.testing.assert_array_equal(s, nb.survival(np.floor(q), np.zeros((q.size, 1)), a))


def test_nuisance_json_roundtrip():
    m = fit_nuisances(generate(SimCaseSpec("case3", 600, 1)).data)
    back = NuisanceModels.from_dict(m.to_dict())
    X = np.random.default_rng(0).normal(size=(10, 2))
    np.testing.assert_allclose(back.survival_prob(3.0, X, 1), m.survival_prob(3.0, X, 1), rtol=1e-12)
    np.testing.assert_allclose(back.propensity_prob(1, X), m.propensity_prob(1, X), rtol=1e-12)


def test_fit_nuisances_rejects_unknown_option():
    with pytest.raises(ValueError):
        fit_nuisances(generate(SimCaseSpec("case1", 100, 1)).data, propensity="forest")


def test_negbin_sizes_recovered_when_model_is_correct(rng):
    from scipy.special import expit

    n = 20_000
    X = rng.normal(size=(n, 2))
    A = rng.integers(0, 2, n)
    p = expit(-1.0 - 0.5 * X[:, 0] + 0.3 * X[:, 1] + A * (0.5 + 0.4 * X[:, 0]))
    y = rng.negative_binomial(2.0 + A, p)
    nb = fit_negbin_survival(Dataset(X, A, y, OutcomeKind.DISCRETE))
    np.testing.assert_allclose(nb.size([0, 1]), [2.0, 3.0], atol=0.3)
