import numpy as np
import pytest
from scipy.stats import norm

from quantile_otr.classifier import SolverConfig
from quantile_otr.core import DecisionFunction, KernelSpec, Standardizer
from quantile_otr.dtr import (TwoStageData, default_dtr_search_config, dtr_fit, dtr_ipw_survival,
                              dtr_smoothed_survival, dtr_surrogate_fit, l, phi, read_two_stage_csv,
                              write_two_stage_csv)
from quantile_otr.errors import DataError
from quantile_otr.simulation import generate_dtr_toy


def test_phi_values():
    assert phi(1, 1) == 1.0 and phi(0, 5) == 0.0 and phi(-1, 0) == -1.0


def test_l_values():
    assert l(1, 1) == 1.0 and l(0, 1) == 0.0 and l(1, 0.3) == pytest.approx(0.3)


def test_phi_grid_properties():
    g = np.linspace(-3, 3, 61)
    X, Z = np.meshgrid(g, g, indexing="ij")
    P = phi(X, Z)
    assert np.all(P <= 1.0)
    np.testing.assert_array_equal(P == 1.0, (X >= 1) & (Z >= 1))
    assert np.all(np.diff(P, axis=0) >= 0) and np.all(np.diff(P, axis=1) >= 0)
    # midpoint concavity along random chords
    r = np.random.default_rng(0)
    a, b = r.uniform(-3, 3, (500, 2)), r.uniform(-3, 3, (500, 2))
    mid = phi(*((a + b) / 2).T)
    assert np.all(mid >= 0.5 * (phi(*a.T) + phi(*b.T)) - 1e-12)


def _const(b, d):
    return DecisionFunction(b, np.zeros((0, d)), np.zeros(0), KernelSpec(), Standardizer.identity(d))


def test_smoothed_survival_hand_dataset():
    data = TwoStageData([[0.0], [1.0], [2.0], [3.0]], [1, 0, 1, 1], [[0.5], [0.1], [0.2], [0.3]], [1, 1, 0, 1],
                        [3.0, 2.5, 4.0, 0.5])
    p1 = np.array([0.5, 0.4, 0.8, 0.5])
    p2 = np.array([0.5, 0.5, 0.25, 0.6])
    f1 = _const(0.1, 1)
    f2 = _const(-0.2, 3)
    h = 0.3
    g1, g2 = norm.cdf(0.1 / h), norm.cdf(-0.2 / h)
    # records with y > 2: 0, 1, 2
    terms = [
        1 / (0.5 * 0.5) * g1 * g2,
        1 / (0.6 * 0.5) * (1 - g1) * g2,
        1 / (0.8 * 0.75) * g1 * (1 - g2),
    ]
    assert dtr_smoothed_survival(data, f1, f2, 2.0, p1, p2, h) == pytest.approx(sum(terms) / 4, abs=1e-12)


def test_saturated_regimes_pick_treated_records():
    s = generate_dtr_toy(300, 1)
    d = s.data
    big1, big2 = _const(1e6, 1), _const(1e6, 3)
    want = np.mean((d.Y > 1.0) * (d.A1 == 1) * (d.A2 == 1) / (s.p1 * s.p2))
    assert dtr_smoothed_survival(d, big1, big2, 1.0, s.p1, s.p2, 0.1) == pytest.approx(want, abs=1e-12)


def test_soft_equals_hard_for_small_bandwidth():
    s = generate_dtr_toy(400, 2)
    d = s.data
    r = np.random.default_rng(0)
    f1 = DecisionFunction(0.1, r.normal(size=(3, 1)), r.normal(size=3), KernelSpec("gaussian", 1.0),
                          Standardizer.identity(1))
    f2 = DecisionFunction(-0.2, r.normal(size=(3, 3)), r.normal(size=3), KernelSpec("gaussian", 1.0),
                          Standardizer.identity(3))
    keep = (np.abs(f1(d.H1)) >= 1e-3) & (np.abs(f2(d.H2)) >= 1e-3)
    d = d.subset(np.flatnonzero(keep))
    p1, p2 = s.p1[keep], s.p2[keep]
    soft = dtr_smoothed_survival(d, f1, f2, 1.5, p1, p2, 1e-6)
    hard = dtr_ipw_survival(d, f1.regime(d.H1), f2.regime(d.H2), 1.5, p1, p2)
    assert soft == pytest.approx(hard, abs=1e-9)


def test_ipw_plugin_unbiased():
    q = 1.5
    d1 = lambda H1: (H1[:, 0] > 0).astype(int)
    d2 = lambda H2: (H2[:, 2] > 0).astype(int)
    truth_sample = generate_dtr_toy(1_000_000, 99).latent.outcome(d1, d2)
    truth = np.mean(truth_sample > q)
    s = generate_dtr_toy(200_000, 7)
    d = s.data
    terms = (d.Y > q) * (d1(d.H1) == d.A1) * (d2(d.H2) == d.A2) / (
        np.where(d.A1 == 1, s.p1, 1 - s.p1) * np.where(d.A2 == 1, s.p2, 1 - s.p2))
    assert terms.mean() == pytest.approx(dtr_ipw_survival(d, d1(d.H1), d2(d.H2), q, s.p1, s.p2), abs=1e-12)
    se = np.sqrt(terms.var(ddof=1) / terms.size + truth * (1 - truth) / truth_sample.size)
    assert abs(terms.mean() - truth) < 3 * se


@pytest.mark.parametrize("kernel", ["linear", "gaussian"])
def test_block_ascent_monotone(kernel):
    s = generate_dtr_toy(300, 3)
    fit = dtr_surrogate_fit(s.data, 2.0, s.p1, s.p2, 0.05, kernel=kernel)
    assert np.all(np.diff(fit.history) >= -1e-10)
    assert not fit.warning


def test_all_outcomes_below_q():
    s = generate_dtr_toy(100, 4)
    fit = dtr_surrogate_fit(s.data, s.data.Y.max() + 1, s.p1, s.p2, 0.1)
    assert fit.objective == 0.0
    assert np.all(fit.f1.regime(s.data.H1) == 0) and np.all(fit.f2.regime(s.data.H2) == 0)


def test_intercept_rule_matches_sign_pattern_search():
    r = np.random.default_rng(5)
    n = 200
    A1, A2 = r.integers(0, 2, n), r.integers(0, 2, n)
    Y = 2.0 * A1 * A2 + r.uniform(0, 0.5, n)
    data = TwoStageData(r.normal(size=(n, 1)), A1, r.normal(size=(n, 1)), A2, Y)
    p = np.full(n, 0.5)
    best = max(((b1, b2) for b1 in (0, 1) for b2 in (0, 1)),
               key=lambda b: dtr_ipw_survival(data, np.full(n, b[0]), np.full(n, b[1]), 1.0, p, p))
    fit = dtr_surrogate_fit(data, 1.0, p, p, 0.1)
    assert best == (1, 1)
    assert np.all(fit.f1.regime(data.H1) == best[0]) and np.all(fit.f2.regime(data.H2) == best[1])


def test_degenerate_second_stage():
    r = np.random.default_rng(6)
    n = 150
    A1 = r.integers(0, 2, n)
    data = TwoStageData(r.normal(size=(n, 1)), A1, np.zeros((n, 0)), np.zeros(n, int), A1 + r.normal(size=n))
    fit = dtr_surrogate_fit(data, 0.5, np.full(n, 0.5), np.zeros(n), 0.1)
    assert fit.f2.coefficients.size == 0 and fit.f2.intercept < 0
    assert np.all(fit.f2.regime(data.H2) == 0)


def test_bad_propensities():
    s = generate_dtr_toy(50, 1)
    with pytest.raises(DataError):
        dtr_surrogate_fit(s.data, 1.0, np.where(s.data.A1 == 1, 0.0, 0.5), s.p2, 0.1)


@pytest.mark.slow
def test_dtr_fit_recovers_always_treat():
    s = generate_dtr_toy(2000, 11)
    solver = SolverConfig(lambda_grid=[2.0 ** -4, 1.0])
    cfg = default_dtr_search_config(s.data, 0.5, solver=solver, seed=11)
    res = dtr_fit(s.data, cfg, s.p1, s.p2)
    test = generate_dtr_toy(5000, 12).data
    assert np.mean(res.regime1(test.H1) == 1) >= 0.9
    assert np.mean(res.regime2(test.H2) == 1) >= 0.9
    widths = [t.r - t.l for t in res.trace]
    np.testing.assert_allclose(np.array(widths[1:]) / np.array(widths[:-1]), 0.5)
    assert res.q_hat == res.trace[-1].m


def test_two_stage_csv_roundtrip(tmp_path):
    s = generate_dtr_toy(30, 2)
    p = tmp_path / "two.csv"
    write_two_stage_csv(s.data, p, s.p1, s.p2)
    back, p1, p2 = read_two_stage_csv(p)
    np.testing.assert_array_equal(back.H2, s.data.H2)
    np.testing.assert_array_equal(back.Y, s.data.Y)
    np.testing.assert_array_equal(p1, s.p1)
    assert p.read_text().splitlines()[0] == "x1_1,a1,x2_1,a2,y,p1,p2"
    write_two_stage_csv(s.data, p)
    assert read_two_stage_csv(p)[1] is None


def test_two_stage_csv_bad_header(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("x1_1,a1,z,a2,y\n0,1,0,1,2\n")
    with pytest.raises(DataError, match="header"):
        read_two_stage_csv(p)
