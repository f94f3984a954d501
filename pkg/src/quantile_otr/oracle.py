"""Brute-force ground truth.

Finite-support instances put probability ``p_k`` on covariate atom ``x_k``;
each atom and arm carries a survival vector on a common integer support.
A regime is an assignment of arms to atoms, so all ``2^k`` regimes can be
enumerated and their hard and smoothed quantiles compared exactly.

:func:`numeric_qstar` computes the optimal quantile of the simulation cases
by tensor Gauss-Hermite quadrature of ``E max_a S_a(X, q)`` and bisection.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigError
from .smoothing import hard_quantile_curve, smoothed_quantile_curve, smoothed_survival_curve

MAX_ATOMS = 20
_BLOCK = 1 << 14

ORACLE_SCHEMA = {
    "type": "object",
    "required": ["atoms", "probs", "support", "survival", "tau"],
    "properties": {
        "atoms": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
        "probs": {"type": "array", "items": {"type": "number", "minimum": 0}},
        "support": {"type": "array", "items": {"type": "integer"}},
        "survival": {
            "description": "survival[k][a][j] = P(Y > support[j] | atom k, arm a)",
            "type": "array",
            "items": {"type": "array", "minItems": 2, "maxItems": 2,
                      "items": {"type": "array", "items": {"type": "number"}}},
        },
        "tau": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
    },
}


@dataclass(frozen=True)
class OracleInstance:
    """``survival[k, a, j] = P(Y(a) > support[j] | X = atoms[k])``."""

    atoms: np.ndarray
    probs: np.ndarray
    support: np.ndarray
    survival: np.ndarray
    tau: float

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=float)
        if atoms.ndim == 1:
            atoms = atoms[:, None]
        p = np.asarray(self.probs, dtype=float)
        v = np.asarray(self.support, dtype=float)
        S = np.asarray(self.survival, dtype=float)
        k = p.shape[0]
        if atoms.shape[0] != k or S.shape != (k, 2, v.shape[0]):
            raise ValueError("atoms, probs and survival disagree in shape")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise ValueError("atom probabilities must be nonnegative and sum to 1")
        if v.size == 0 or np.any(np.diff(v) <= 0) or not np.all(v == np.round(v)):
            raise ValueError("support must be strictly increasing integers")
        if np.any(np.abs(S[..., -1]) > 1e-12):
            raise ValueError("survival at the largest support point must be 0")
        if np.any(S < -1e-12) or np.any(S > 1 + 1e-12) or np.any(np.diff(S, axis=2) > 1e-12):
            raise ValueError("each survival vector must be nonincreasing within [0, 1]")
        if not 0.0 < self.tau < 1.0:
            raise ValueError("tau must lie in (0, 1)")
        S = np.clip(S, 0.0, 1.0)
        S[..., -1] = 0.0
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "probs", p)
        object.__setattr__(self, "support", v)
        object.__setattr__(self, "survival", S)

    @property
    def n_atoms(self) -> int:
        return self.probs.shape[0]

    def arm_means(self) -> np.ndarray:
        """``E[Y(a) | x_k]`` as a ``(k, 2)`` array."""
        pmf = -np.diff(np.concatenate([np.ones(self.survival.shape[:2] + (1,)), self.survival], axis=2), axis=2)
        return pmf @ self.support

    def to_dict(self) -> dict:
        return {"atoms": self.atoms.tolist(), "probs": self.probs.tolist(),
                "support": [int(v) for v in self.support], "survival": self.survival.tolist(),
                "tau": self.tau}

    @classmethod
    def from_dict(cls, doc) -> "OracleInstance":
        missing = [k for k in ORACLE_SCHEMA["required"] if k not in doc]
        if missing:
            raise ValueError(f"oracle instance missing keys {missing}")
        return cls(doc["atoms"], doc["probs"], doc["support"], doc["survival"], float(doc["tau"]))


def _as_assignment(inst: OracleInstance, assignment) -> np.ndarray:
    d = np.asarray(assignment, dtype=np.int64)
    if d.shape[-1] != inst.n_atoms or np.any((d != 0) & (d != 1)):
        raise ValueError("assignment must give arm 0 or 1 for every atom")
    return d


def regime_survival(inst: OracleInstance, assignment) -> np.ndarray:
    """Survival vector(s) on ``inst.support`` of ``Y(d)``; accepts a matrix of assignments."""
    d = _as_assignment(inst, assignment)
    S0 = inst.probs @ inst.survival[:, 0, :]
    D = inst.probs[:, None] * (inst.survival[:, 1, :] - inst.survival[:, 0, :])
    return S0 + d @ D


def exact_survival(inst: OracleInstance, assignment, q: float) -> float:
    """``P{Y(d) > q}``."""
    S = regime_survival(inst, assignment)
    j = np.searchsorted(inst.support, q, side="right") - 1
    return 1.0 if j < 0 else float(S[j])


def exact_smoothed_survival(inst: OracleInstance, assignment, q: float) -> float:
    return float(smoothed_survival_curve(inst.support, regime_survival(inst, assignment), q))


def regime_expectation(inst: OracleInstance, assignment) -> np.ndarray:
    d = _as_assignment(inst, assignment)
    mu = inst.arm_means()
    return inst.probs @ mu[:, 0] + d @ (inst.probs * (mu[:, 1] - mu[:, 0]))


@dataclass(frozen=True)
class OracleOptima:
    q_hard: float
    q_smoothed: float
    hard_set: np.ndarray
    smoothed_set: np.ndarray
    best_expectation_smoothed: float
    worst_expectation_smoothed: float
    max_expectation_hard: float

    @property
    def smoothed_subset_of_hard(self) -> bool:
        return bool(np.isin(self.smoothed_set, self.hard_set).all())


def assignments(k: int, start: int = 0, stop: int | None = None) -> np.ndarray:
    """Rows are the binary expansions (atom 0 = lowest bit) of ``start..stop-1``."""
    stop = (1 << k) if stop is None else stop
    idx = np.arange(start, stop, dtype=np.int64)
    return ((idx[:, None] >> np.arange(k)) & 1).astype(np.int64)


def enumerate_optima(inst: OracleInstance, rtol: float = 1e-12) -> OracleOptima:
    """All quantile-optimal and smoothed-quantile-optimal regimes.

    Regimes are identified by integer codes (see :func:`assignments`).
    """
    k = inst.n_atoms
    if k > MAX_ATOMS:
        raise ConfigError(f"enumeration supports at most {MAX_ATOMS} atoms, got {k}")
    total = 1 << k
    qh = np.empty(total)
    qs = np.empty(total)
    ex = np.empty(total)
    for start in range(0, total, _BLOCK):
        stop = min(start + _BLOCK, total)
        d = assignments(k, start, stop)
        S = regime_survival(inst, d)
        qh[start:stop] = hard_quantile_curve(inst.support, S, inst.tau)
        qs[start:stop] = smoothed_quantile_curve(inst.support, S, inst.tau)
        ex[start:stop] = regime_expectation(inst, d)
    q_hard = qh.max()
    q_sm = qs.max()
    hard = np.flatnonzero(qh == q_hard)
    sm = np.flatnonzero(qs >= q_sm - rtol * max(1.0, abs(q_sm)))
    return OracleOptima(float(q_hard), float(q_sm), hard, sm, float(ex[sm].max()), float(ex[sm].min()),
                        float(ex[hard].max()))


def pointwise_rule(inst: OracleInstance, q: float) -> np.ndarray:
    """``d_q(x_k) = 1{S_1(x_k, q) > S_0(x_k, q)}``."""
    j = np.searchsorted(inst.support, q, side="right") - 1
    if j < 0:
        return np.zeros(inst.n_atoms, dtype=np.int64)
    return (inst.survival[:, 1, j] > inst.survival[:, 0, j]).astype(np.int64)


def satisfies_homoscedastic_effect(inst: OracleInstance, atol: float = 0.0) -> bool:
    """Per atom, the sign of ``S_1 - S_0`` (zero counted as its own sign) is
    the same at every support point below the maximum."""
    diff = inst.survival[:, 1, :-1] - inst.survival[:, 0, :-1]
    sgn = np.where(diff > atol, 1, np.where(diff < -atol, -1, 0))
    return bool(np.all(sgn == sgn[:, :1]))


# -- random instances ---------------------------------------------------------

def _random_survival(rng, l: int) -> np.ndarray:
    pmf = rng.dirichlet(np.full(l, 0.7))
    S = 1.0 - np.cumsum(pmf)
    S[-1] = 0.0
    return np.maximum(S, 0.0)


def random_instance(rng: np.random.Generator, max_atoms: int = 8, max_support: int = 6,
                    tau: float | None = None) -> OracleInstance:
    """Generic instance: independent Dirichlet mass functions per atom and arm."""
    k = int(rng.integers(1, max_atoms + 1))
    l = int(rng.integers(2, max_support + 1))
    start = int(rng.integers(-3, 4))
    support = start + np.sort(rng.choice(np.arange(3 * l), size=l, replace=False))
    S = np.stack([[_random_survival(rng, l) for _ in range(2)] for _ in range(k)])
    probs = rng.dirichlet(np.ones(k))
    tau = float(rng.uniform(0.05, 0.95)) if tau is None else tau
    return OracleInstance(rng.standard_normal((k, 1)), probs, support, S, tau)


def random_homoscedastic_instance(rng: np.random.Generator, max_atoms: int = 8, max_support: int = 6,
                                  tau: float | None = None) -> OracleInstance:
    """Instance where one arm stochastically dominates at every atom.

    The better arm has ``S_1 = u + (1 - u) S_0`` below the top support point,
    which exceeds ``S_0`` everywhere because ``S_0 < 1`` there; arms are
    swapped at random per atom, and some atoms get identical arms.
    """
    inst = random_instance(rng, max_atoms, max_support, tau)
    k, _, l = inst.survival.shape
    S = inst.survival.copy()
    for i in range(k):
        base = S[i, 0]
        if rng.random() < 0.15:
            S[i, 1] = base
            continue
        u = rng.uniform(0.05, 0.9)
        better = base.copy()
        better[:-1] = u + (1.0 - u) * base[:-1]
        if rng.random() < 0.5:
            S[i] = [base, better]
        else:
            S[i] = [better, base]
    return OracleInstance(inst.atoms, inst.probs, inst.support, S, inst.tau)


# -- simulation cases -----------------------------------------------------------

@lru_cache(maxsize=8)
def _gh_grid(nodes: int):
    t, w = np.polynomial.hermite_e.hermegauss(nodes)
    w = w / np.sqrt(2.0 * np.pi)
    x1, x2 = np.meshgrid(t, t, indexing="ij")
    return np.column_stack([x1.ravel(), x2.ravel()]), np.outer(w, w).ravel()


def optimal_survival(case_id, q: float, nodes: int = 60) -> float:
    """``max_d S(q, d) = E max_a S_a(X, q)``; Case 3 uses the smoothed survival."""
    from .simulation import CaseId, arm_smoothed_survival, arm_survival

    case_id = CaseId.parse(case_id)
    X, W = _gh_grid(nodes)
    if case_id is CaseId.CASE3:
        s1, s0 = arm_smoothed_survival(q, X, 1), arm_smoothed_survival(q, X, 0)
    else:
        s1, s0 = arm_survival(case_id, q, X, 1), arm_survival(case_id, q, X, 0)
    return float(W @ np.maximum(s1, s0))


def numeric_qstar(case_id, tau: float, nodes: int = 60, tol: float = 1e-6) -> float:
    """``sup{q : max_d S(q, d) > 1 - tau}`` by bisection."""
    from .simulation import SINGLE_STAGE, CaseId

    case_id = CaseId.parse(case_id)
    if case_id not in SINGLE_STAGE:
        raise ConfigError(f"numeric_qstar supports {[c.value for c in SINGLE_STAGE]}")
    if not 0.0 < tau < 1.0:
        raise ConfigError("tau must lie in (0, 1)")
    target = 1.0 - tau
    lo, hi = -50.0, 50.0
    while optimal_survival(case_id, hi, nodes) > target:
        hi *= 2.0
    while optimal_survival(case_id, lo, nodes) <= target:
        lo *= 2.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if optimal_survival(case_id, mid, nodes) > target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
