import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from quantile_otr.errors import ConfigError
from quantile_otr.oracle import (OracleInstance, assignments, enumerate_optima, exact_smoothed_survival,
                                 exact_survival, numeric_qstar, pointwise_rule, random_homoscedastic_instance,
                                 random_instance, regime_expectation, regime_survival,
                                 satisfies_homoscedastic_effect)


def _two_atom():
    S = [[[0.5, 0.0], [0.8, 0.0]],
         [[0.6, 0.0], [0.1, 0.0]]]
    return OracleInstance([[0.0], [1.0]], [0.5, 0.5], [0, 1], S, 0.5)


def test_exact_survival_trivial_cases():
    one = OracleInstance([[0.0]], [1.0], [0, 1], [[[0.3, 0.0], [0.7, 0.0]]], 0.5)
    assert exact_survival(one, [1], 0.0) == pytest.approx(0.7)
    two = OracleInstance([[0.0], [1.0]], [0.5, 0.5], [0, 1], [[[0.2, 0.0], [0.9, 0.0]], [[0.1, 0.0], [0.6, 0.0]]], 0.5)
    assert exact_survival(two, [0, 1], 0.0) == pytest.approx(0.4)


def test_exact_survival_shifted_uniform():
    u = [0.75, 0.5, 0.25, 0.0, 0.0]       # uniform on {1,2,3,4}
    shifted = [1.0, 0.75, 0.5, 0.25, 0.0]  # uniform on {2,...,5}
    inst = OracleInstance([[0.0], [1.0]], [0.25, 0.75], [1, 2, 3, 4, 5], [[u, shifted], [u, shifted]], 0.5)
    assert exact_survival(inst, [1, 0], 2.0) == pytest.approx(0.25 * 0.75 + 0.75 * 0.5)
    assert exact_survival(inst, [1, 1], 0.5) == 1.0
    assert exact_smoothed_survival(inst, [0, 0], 1.5) == pytest.approx(0.625)


def test_identical_arms_make_every_regime_optimal():
    r = np.random.default_rng(1)
    inst = random_instance(r, max_atoms=4)
    S = inst.survival.copy()
    S[:, 1] = S[:, 0]
    inst = OracleInstance(inst.atoms, inst.probs, inst.support, S, inst.tau)
    opt = enumerate_optima(inst)
    total = 1 << inst.n_atoms
    assert opt.hard_set.tolist() == list(range(total))
    assert opt.smoothed_set.tolist() == list(range(total))


def test_two_atom_hand_enumeration():
    opt = enumerate_optima(_two_atom())
    assert opt.q_hard == 1.0
    assert opt.hard_set.tolist() == [0, 1]
    assert opt.q_smoothed == pytest.approx(0.2 / 0.7)
    assert opt.smoothed_set.tolist() == [1]
    assert opt.smoothed_subset_of_hard
    assert opt.best_expectation_smoothed == pytest.approx(0.7)
    assert opt.max_expectation_hard == pytest.approx(0.7)


def test_assignment_codes():
    np.testing.assert_array_equal(assignments(3, 5, 7), [[1, 0, 1], [0, 1, 1]])


def test_too_many_atoms():
    k = 21
    S = np.tile([[[0.5, 0.0], [0.5, 0.0]]], (k, 1, 1))
    inst = OracleInstance(np.zeros((k, 1)), np.full(k, 1 / k), [0, 1], S, 0.5)
    with pytest.raises(ConfigError):
        enumerate_optima(inst)


def test_instance_validation():
    with pytest.raises(ValueError):
        OracleInstance([[0.0]], [0.9], [0, 1], [[[0.5, 0.0], [0.5, 0.0]]], 0.5)
    with pytest.raises(ValueError):
        OracleInstance([[0.0]], [1.0], [0, 1], [[[0.5, 0.1], [0.5, 0.0]]], 0.5)


@given(st.integers(0, 2 ** 31))
def test_pointwise_rule_attains_max(seed):
    inst = random_instance(np.random.default_rng(seed), max_atoms=6)
    all_d = assignments(inst.n_atoms)
    S_all = regime_survival(inst, all_d)
    for j, q in enumerate(inst.support):
        best = S_all[:, j].max()
        assert exact_survival(inst, pointwise_rule(inst, q), q) == pytest.approx(best, abs=1e-14)


def _scan_hard_quantile(support, S, tau):
    for v, s in zip(support, S):
        if s <= 1 - tau:
            return v
    return support[-1]


@given(st.integers(0, 2 ** 31))
def test_hard_quantile_matches_support_scan(seed):
    inst = random_instance(np.random.default_rng(seed), max_atoms=5)
    all_d = assignments(inst.n_atoms)
    S_all = regime_survival(inst, all_d)
    want = np.array([_scan_hard_quantile(inst.support, S, inst.tau) for S in S_all])
    opt = enumerate_optima(inst)
    assert opt.q_hard == want.max()
    assert opt.hard_set.tolist() == np.flatnonzero(want == want.max()).tolist()


@given(st.integers(0, 2 ** 31))
def test_smoothed_optima_subset_of_hard(seed):
    assert enumerate_optima(random_instance(np.random.default_rng(seed), max_atoms=6)).smoothed_subset_of_hard


@given(st.integers(0, 2 ** 31))
def test_homoscedastic_effectiveness(seed):
    inst = random_homoscedastic_instance(np.random.default_rng(seed), max_atoms=6)
    assert satisfies_homoscedastic_effect(inst)
    opt = enumerate_optima(inst)
    assert opt.worst_expectation_smoothed >= opt.max_expectation_hard - 1e-12


def test_regime_expectation_hand_value():
    np.testing.assert_allclose(regime_expectation(_two_atom(), assignments(2)), [0.55, 0.7, 0.3, 0.45])


def test_json_roundtrip():
    inst = random_instance(np.random.default_rng(4))
    back = OracleInstance.from_dict(json.loads(json.dumps(inst.to_dict())))
    np.testing.assert_array_equal(back.survival, inst.survival)
    assert back.tau == inst.tau
    with pytest.raises(ValueError, match="missing"):
        OracleInstance.from_dict({"atoms": [[0.0]]})


def test_numeric_qstar_case1_quarter():
    assert numeric_qstar("case1", 0.25) == pytest.approx(0.485, abs=0.01)


def test_numeric_qstar_case2_quarter():
    assert numeric_qstar("case2", 0.25) == pytest.approx(2.250, abs=0.02)


def test_numeric_qstar_rejects_two_stage():
    with pytest.raises(ConfigError):
        numeric_qstar("dtr_toy", 0.5)
