import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import norm

from quantile_otr.classifier import SolverConfig
from quantile_otr.core import Dataset
from quantile_otr.errors import ConfigError
from quantile_otr.evaluation import BandwidthSpec
from quantile_otr.nuisance import fit_nuisances
from quantile_otr.search import SearchConfig, Termination, binary_search, default_search_config, scl_fit
from quantile_otr.simulation import SimCaseSpec, generate


def test_plugin_normal_survival():
    m, trace, term = binary_search(lambda q: norm.sf(q), -3.0, 3.0, 1e-3, 1e-4, 0.5)
    width = trace[-1].r - trace[-1].l
    assert abs(m - 0.0) <= max(1e-3, width)


def test_unit_interval_with_wide_kappa_stops_after_one_step():
    _, trace, term = binary_search(lambda q: 0.9, 0.0, 1.0, 0.5, 1e-6, 0.5)
    assert len(trace) == 1 and term is Termination.INTERVAL_EXHAUSTED


def test_tolerance_hit_branch():
    m, trace, term = binary_search(lambda q: 0.5, 0.0, 4.0, 1e-3, 0.01, 0.5)
    assert term is Termination.TOLERANCE_HIT and m == 2.0 and trace[-1].branch == "tolerance"


def test_invalid_interval():
    with pytest.raises(ConfigError):
        binary_search(lambda q: 0.5, 1.0, 1.0, 0.1, 0.1, 0.5)
    with pytest.raises(ConfigError):
        SearchConfig(2.0, 1.0, 0.1, 0.1, 0.5)


@given(st.floats(-5, 5), st.floats(0.1, 3), st.floats(1e-4, 0.5), st.floats(0.05, 0.95))
def test_strictly_decreasing_evaluator_brackets_root(root, scale, kappa, tau):
    # S(q) = 1 - Phi((q - q0)/s) with S(root) = 1 - tau
    q0 = root - scale * norm.ppf(tau)
    ev = lambda q: norm.sf((q - q0) / scale)
    l1, r1 = root - 7.3, root + 5.1
    m, trace, term = binary_search(ev, l1, r1, kappa, 1e-12, tau)
    assert term is Termination.INTERVAL_EXHAUSTED
    assert len(trace) <= math.ceil(math.log2((r1 - l1) / kappa)) + 1
    assert abs(m - root) <= kappa + 1e-9
    for a, b in zip(trace[:-1], trace[1:]):
        assert a.l <= b.l and b.r <= a.r
        assert (b.r - b.l) == pytest.approx(0.5 * (a.r - a.l), rel=1e-12)
        assert b.m == 0.5 * (b.l + b.r)


def test_default_config_formulas():
    y = np.concatenate([np.full(50, -6.0), np.full(50, 6.0)])
    y = (y - y.mean()) / y.std(ddof=1) * 6.0
    data = Dataset(np.zeros((100, 1)), np.arange(100) % 2, y)
    cfg = default_search_config(data, 0.5)
    assert cfg.kappa == pytest.approx(0.1) and cfg.epsilon == pytest.approx(0.05)
    assert (cfg.l1, cfg.r1) == (y.min(), y.max())
    assert BandwidthSpec().value(math.e ** 2) == pytest.approx(0.1)


def test_default_config_constant_outcome():
    with pytest.raises(ConfigError, match="kappa"):
        default_search_config(Dataset(np.zeros((10, 1)), np.arange(10) % 2, np.ones(10)), 0.5)
    cfg = default_search_config(Dataset(np.zeros((10, 1)), np.arange(10) % 2, np.r_[np.ones(9), 2.0]), 0.5,
                                kappa=0.3)
    assert cfg.kappa == 0.3


def _small_fit(seed, kernel="linear"):
    data = generate(SimCaseSpec("case1", 300, seed, 0.5)).data
    m = fit_nuisances(data)
    solver = SolverConfig(lambda_grid=[2.0 ** -4, 1.0], sigma_grid=[1.0])
    cfg = default_search_config(data, 0.5, kernel_kind=kernel, solver=solver, seed=seed)
    return data, scl_fit(data, cfg, m, refit=fit_nuisances)


def test_scl_fit_deterministic():
    _, a = _small_fit(3)
    _, b = _small_fit(3)
    assert [t.to_dict() for t in a.trace] == [t.to_dict() for t in b.trace]
    assert a.q_hat == b.q_hat


def test_scl_fit_result_structure():
    data, res = _small_fit(5, "gaussian")
    assert res.q_hat == res.trace[-1].m
    assert res.terminated_by in (Termination.TOLERANCE_HIT, Termination.INTERVAL_EXHAUSTED)
    np.testing.assert_array_equal(res.regime(data.X), (res.decision(data.X) > 0).astype(int))
    doc = res.to_dict()
    assert set(doc) >= {"q_hat", "terminated_by", "trace", "decision"}


def test_scl_fit_discrete_outcome_runs_smoothed():
    data = generate(SimCaseSpec("case3", 300, 2, 0.5)).data
    m = fit_nuisances(data)
    cfg = default_search_config(data, 0.5, solver=SolverConfig(lambda_grid=[0.25]))
    res = scl_fit(data, cfg, m)
    assert data.Y.min() <= res.q_hat <= data.Y.max()


def _case1_qhat(seed):
    data = generate(SimCaseSpec("case1", 2000, seed, 0.25)).data
    cfg = default_search_config(data, 0.25, seed=seed)
    return scl_fit(data, cfg, fit_nuisances(data), refit=fit_nuisances).q_hat


@pytest.mark.slow
def test_case1_quarter_quantile_recovery():
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor() as ex:
        q = np.array(list(ex.map(_case1_qhat, range(20))))
    assert np.mean(np.abs(q - 0.485) <= 0.15) >= 0.8
