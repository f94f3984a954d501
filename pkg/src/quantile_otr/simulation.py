"""Seeded simulation cases, true regimes and counterfactual evaluation.

Covariates ``X1, X2 ~ N(0, 1)`` and ``A ~ Bernoulli(expit(-0.5 - 0.5 (X1 + X2)))``
in every single-stage case.

* ``case1``: ``Y = 2 - 2 X1 + 2 X2 + A (X1 + X2) + (2A + 1) e``.
* ``case2``: ``Y = 2 - 0.5 X1 + 0.5 X2^2 + A (X1 + X2)
  + exp{-2 - 0.5 X1 - 0.5 X2 + A (2 + X1 + X2)} e``.
* ``case3``: ``Y ~ NegBin(size A + 2, prob expit{-2 - 0.5 X1 + 0.25 X2^2
  + A (1 + X1 + X2^2)})`` counting failures.

Both potential outcomes share the noise draw (``e``, or the uniform fed to
the negative binomial quantile function), and are kept in a
:class:`CounterfactualTable` that estimation code never receives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np
from scipy.special import expit, ndtr
from scipy.stats import nbinom

from .core import Dataset, OutcomeKind
from .errors import ConfigError
from .smoothing import DiscreteSurvival, smoothed_quantile


class CaseId(str, Enum):
    CASE1 = "case1"
    CASE2 = "case2"
    CASE3 = "case3"
    DTR_TOY = "dtr_toy"

    @classmethod
    def parse(cls, value) -> "CaseId":
        if isinstance(value, cls):
            return value
        s = str(value).strip().lower()
        if s in ("1", "2", "3"):
            s = "case" + s
        try:
            return cls(s)
        except ValueError:
            raise ConfigError(f"unknown case {value!r}; expected one of {[c.value for c in cls]}") from None


SINGLE_STAGE = (CaseId.CASE1, CaseId.CASE2, CaseId.CASE3)
CASE1_QSTAR = {0.25: 0.485, 0.5: 2.789}


@dataclass(frozen=True)
class SimCaseSpec:
    case_id: CaseId
    n: int
    seed: int
    tau: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "case_id", CaseId.parse(self.case_id))
        if self.n < 1:
            raise ConfigError("n must be at least 1")
        if not 0.0 < self.tau < 1.0:
            raise ConfigError("tau must lie in (0, 1)")


@dataclass(frozen=True)
class CounterfactualTable:
    """Potential outcomes ``Y(0)``, ``Y(1)`` of a simulated sample."""

    y0: np.ndarray
    y1: np.ndarray

    def outcome(self, d) -> np.ndarray:
        return np.where(np.asarray(d) == 1, self.y1, self.y0)


@dataclass(frozen=True)
class SimulatedSample:
    data: Dataset
    counterfactuals: CounterfactualTable


@dataclass(frozen=True)
class EvaluationReport:
    value: float
    mr: float
    n_test: int

    def to_dict(self):
        return {"value": self.value, "mr": self.mr, "n_test": self.n_test}


def propensity_true(X) -> np.ndarray:
    X = np.atleast_2d(X)
    return expit(-0.5 - 0.5 * (X[:, 0] + X[:, 1]))


def gaussian_arm_params(case_id, X, a) -> tuple[np.ndarray, np.ndarray]:
    """Conditional mean and sd of ``Y(a)`` given ``X`` for Cases 1 and 2."""
    case_id = CaseId.parse(case_id)
    X = np.atleast_2d(X)
    x1, x2 = X[:, 0], X[:, 1]
    if case_id is CaseId.CASE1:
        return 2 - 2 * x1 + 2 * x2 + a * (x1 + x2), np.full(x1.shape, 2.0 * a + 1.0)
    if case_id is CaseId.CASE2:
        mu = 2 - 0.5 * x1 + 0.5 * x2 ** 2 + a * (x1 + x2)
        return mu, np.exp(-2 - 0.5 * x1 - 0.5 * x2 + a * (2 + x1 + x2))
    raise ConfigError(f"{case_id.value} has no Gaussian outcome")


def negbin_arm_params(X, a) -> tuple[np.ndarray, np.ndarray]:
    """Size and success probability of ``Y(a)`` given ``X`` for Case 3."""
    X = np.atleast_2d(X)
    x1, x2 = X[:, 0], X[:, 1]
    p = expit(-2 - 0.5 * x1 + 0.25 * x2 ** 2 + a * (1 + x1 + x2 ** 2))
    return np.full(x1.shape, a + 2.0), p


def arm_survival(case_id, q, X, a) -> np.ndarray:
    """``P(Y(a) > q | X)``."""
    case_id = CaseId.parse(case_id)
    if case_id is CaseId.CASE3:
        size, p = negbin_arm_params(X, a)
        return np.where(q < 0, 1.0, nbinom.sf(np.floor(q), size, p))
    mu, sd = gaussian_arm_params(case_id, X, a)
    return ndtr((mu - q) / sd)


def arm_smoothed_survival(q, X, a) -> np.ndarray:
    """Case 3 survival smoothed over the integer lattice ``{-1, 0, 1, ...}``."""
    k = math.floor(q)
    lam = q - k
    s0 = arm_survival(CaseId.CASE3, k, X, a)
    if lam == 0.0:
        return s0
    return (1.0 - lam) * s0 + lam * arm_survival(CaseId.CASE3, k + 1, X, a)


def generate(spec: SimCaseSpec) -> SimulatedSample:
    """Draw a single-stage sample and its counterfactual pair."""
    if spec.case_id not in SINGLE_STAGE:
        raise ConfigError(f"{spec.case_id.value} is two-stage; use generate_dtr_toy")
    rng = np.random.default_rng(spec.seed)
    n = spec.n
    X = rng.standard_normal((n, 2))
    A = (rng.random(n) < propensity_true(X)).astype(np.int64)
    if spec.case_id is CaseId.CASE3:
        u = rng.random(n)
        y0 = nbinom.ppf(u, *negbin_arm_params(X, 0))
        y1 = nbinom.ppf(u, *negbin_arm_params(X, 1))
        kind = OutcomeKind.DISCRETE
    else:
        e = rng.standard_normal(n)
        mu0, sd0 = gaussian_arm_params(spec.case_id, X, 0)
        mu1, sd1 = gaussian_arm_params(spec.case_id, X, 1)
        y0, y1 = mu0 + sd0 * e, mu1 + sd1 * e
        kind = OutcomeKind.CONTINUOUS
    Y = np.where(A == 1, y1, y0)
    return SimulatedSample(Dataset(X, A, Y, kind), CounterfactualTable(y0, y1))


# -- truth --------------------------------------------------------------------

@lru_cache(maxsize=None)
def case_qstar(case_id, tau: float) -> float:
    """Optimal quantile used by :func:`true_regime`.

    Case 1 uses the closed-form values 0.485 and 2.789; the other cases use
    :func:`oracle.numeric_qstar`.
    """
    case_id = CaseId.parse(case_id)
    if case_id is CaseId.CASE1:
        if tau not in CASE1_QSTAR:
            raise ConfigError(f"case1 true regime is tabulated for tau in {sorted(CASE1_QSTAR)}, got {tau}")
        return CASE1_QSTAR[tau]
    if case_id not in SINGLE_STAGE:
        raise ConfigError(f"no true regime for {case_id.value}")
    from .oracle import numeric_qstar

    return numeric_qstar(case_id, tau)


def true_regime(case_id, tau: float, X) -> np.ndarray:
    """Optimal assignment at ``X``; ties go to arm 0."""
    case_id = CaseId.parse(case_id)
    q = case_qstar(case_id, tau)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if case_id is CaseId.CASE1:
        return (2 * q - 4 + 5 * X[:, 0] - 3 * X[:, 1] > 0).astype(np.int64)
    if case_id is CaseId.CASE3:
        s1, s0 = arm_smoothed_survival(q, X, 1), arm_smoothed_survival(q, X, 0)
    else:
        s1, s0 = arm_survival(case_id, q, X, 1), arm_survival(case_id, q, X, 0)
    return (s1 > s0).astype(np.int64)


def empirical_quantile(y, tau: float) -> float:
    """``y_(ceil(n tau))``, the smallest minimiser of the check loss."""
    ys = np.sort(np.asarray(y, dtype=float))
    k = max(int(math.ceil(ys.size * tau - 1e-12)), 1)
    return float(ys[k - 1])


def lattice_smoothed_quantile(y, tau: float) -> float:
    """Smoothed quantile of a nonnegative integer sample on ``{0, ..., max y}``."""
    y = np.asarray(y)
    support = np.arange(0, int(y.max()) + 1)
    return smoothed_quantile(DiscreteSurvival.from_sample(y, support), tau)


def sample_value(case_id, y, tau: float) -> float:
    case_id = CaseId.parse(case_id)
    if case_id is CaseId.CASE3:
        return lattice_smoothed_quantile(y, tau)
    return empirical_quantile(y, tau)


def evaluate_regime(regime, case_id, tau: float, n_test: int = 10_000, seed: int = 0) -> EvaluationReport:
    """Value and misclassification rate of ``regime`` on a fresh test set."""
    case_id = CaseId.parse(case_id)
    test = generate(SimCaseSpec(case_id, n_test, seed, tau))
    X = test.data.X
    d = np.asarray(regime(X))
    value = sample_value(case_id, test.counterfactuals.outcome(d), tau)
    mr = float(np.mean(d != true_regime(case_id, tau, X)))
    return EvaluationReport(value, mr, n_test)


# -- replications -------------------------------------------------------------

TEST_SEED_OFFSET = 2 ** 40


@dataclass(frozen=True)
class ReplicationResult:
    index: int
    seed: int
    value: float
    mr: float
    q_hat: float
    terminated_by: str

    def to_dict(self):
        return {"index": self.index, "seed": self.seed, "value": self.value, "mr": self.mr,
                "q_hat": self.q_hat, "terminated_by": self.terminated_by}


def run_replication(case_id, tau: float, n: int, seed: int, *, kernel: str = "linear", n_test: int = 10_000,
                    propensity: str = "logistic", survival: str = "auto", overrides: dict | None = None,
                    index: int = 0, cv_refit: bool = True) -> ReplicationResult:
    """Simulate, fit nuisances and SCL, then score on an independent test set.

    Cross-validation folds refit the nuisances on their training part when
    ``cv_refit`` is set.  Case 3 smooths over the integer lattice
    ``{0, ..., max Y}``.
    """
    from .nuisance import fit_nuisances
    from .search import default_search_config, scl_fit

    case_id = CaseId.parse(case_id)
    sample = generate(SimCaseSpec(case_id, n, seed, tau))
    data = sample.data

    def fit(d):
        return fit_nuisances(d, propensity=propensity, survival=survival)

    m = fit(data)
    cfg = default_search_config(data, tau, kernel_kind=kernel, seed=seed, **(overrides or {}))
    support = np.arange(0, int(data.Y.max()) + 1) if case_id is CaseId.CASE3 else None
    res = scl_fit(data, cfg, m, refit=fit if cv_refit else None, support=support)
    rep = evaluate_regime(res.regime, case_id, tau, n_test, seed + TEST_SEED_OFFSET)
    return ReplicationResult(index, seed, rep.value, rep.mr, res.q_hat, res.terminated_by.value)


# -- two-stage toy --------------------------------------------------------------

@dataclass(frozen=True)
class TwoStageLatent:
    """Exogenous draws of the two-stage toy, enough to replay any regime."""

    x1: np.ndarray
    e2: np.ndarray
    e: np.ndarray

    def outcome(self, d1, d2) -> np.ndarray:
        """``Y(d)`` for a regime ``d1(H1)``, ``d2(H2)`` given as callables."""
        a1 = np.asarray(d1(self.x1[:, None])).astype(float)
        x2 = 0.5 * self.x1 + 0.5 * a1 + self.e2
        a2 = np.asarray(d2(np.column_stack([self.x1, a1, x2]))).astype(float)
        return self.x1 + 0.5 * x2 + 1.5 * a1 + 1.5 * a2 + self.e


@dataclass(frozen=True)
class TwoStageSample:
    data: object
    p1: np.ndarray
    p2: np.ndarray
    latent: TwoStageLatent


def generate_dtr_toy(n: int, seed: int) -> TwoStageSample:
    """Two-stage toy where treating at both stages is optimal for every quantile.

    ``X1 ~ N(0, 1)``, ``A1 ~ Bernoulli(expit(0.3 X1))``,
    ``X2 = 0.5 X1 + 0.5 A1 + N(0, 1)``,
    ``A2 ~ Bernoulli(expit(-0.2 + 0.4 X2 - 0.3 A1))``,
    ``Y = X1 + 0.5 X2 + 1.5 A1 + 1.5 A2 + N(0, 1)``.
    Outcomes increase pathwise in both actions.  ``p1``, ``p2`` are the
    known probabilities of treatment.
    """
    from .dtr import TwoStageData

    if n < 1:
        raise ConfigError("n must be at least 1")
    rng = np.random.default_rng(seed)
    x1 = rng.standard_normal(n)
    p1 = expit(0.3 * x1)
    a1 = (rng.random(n) < p1).astype(np.int64)
    e2 = rng.standard_normal(n)
    x2 = 0.5 * x1 + 0.5 * a1 + e2
    p2 = expit(-0.2 + 0.4 * x2 - 0.3 * a1)
    a2 = (rng.random(n) < p2).astype(np.int64)
    e = rng.standard_normal(n)
    y = x1 + 0.5 * x2 + 1.5 * a1 + 1.5 * a2 + e
    data = TwoStageData(x1[:, None], a1, x2[:, None], a2, y)
    return TwoStageSample(data, p1, p2, TwoStageLatent(x1, e2, e))
