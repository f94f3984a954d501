"""Binary search over the quantile level with a weighted classifier per step.

At each midpoint ``m`` the regime maximising the survival ``P{Y(d) > m}`` is
estimated by weighted classification, and its smoothed survival estimate
decides which half of the interval keeps the optimal quantile.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np

from .classifier import GramCache, SolverConfig, cross_validate, make_folds, sigma_values, solve_weighted_hinge
from .contrast import smoothing_support, weighted_labels
from .core import Dataset, DecisionFunction, KernelKind, KernelSpec, Regime, Standardizer
from .errors import ConfigError, EstimatorError
from .evaluation import BandwidthSpec, soft_survival
from .nuisance import NuisanceModels


class Termination(str, Enum):
    TOLERANCE_HIT = "tolerance_hit"
    INTERVAL_EXHAUSTED = "interval_exhausted"


@dataclass(frozen=True)
class SearchConfig:
    l1: float
    r1: float
    kappa: float
    epsilon: float
    tau: float
    bandwidth: BandwidthSpec = field(default_factory=BandwidthSpec)
    kernel_kind: KernelKind = KernelKind.LINEAR
    solver: SolverConfig = field(default_factory=SolverConfig)
    retune_each_iteration: bool = True
    seed: int = 0

    def __post_init__(self):
        if not self.l1 < self.r1:
            raise ConfigError(f"need l1 < r1, got l1={self.l1}, r1={self.r1}")
        if not self.kappa > 0:
            raise ConfigError("kappa must be positive")
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be positive")
        if not 0.0 < self.tau < 1.0:
            raise ConfigError("tau must lie in (0, 1)")
        object.__setattr__(self, "kernel_kind", KernelKind(self.kernel_kind))


def default_search_config(data: Dataset, tau: float, **overrides) -> SearchConfig:
    """Data-driven defaults: ``(l1, r1) = (min Y, max Y)``,
    ``kappa = sd(Y) / (6 sqrt n)``, ``epsilon = 0.5 / sqrt n``."""
    y = data.Y
    n = data.n
    sd = float(np.std(y, ddof=1)) if n > 1 else 0.0
    kappa = overrides.pop("kappa", None)
    if kappa is None:
        kappa = sd / (6.0 * math.sqrt(n))
        if not kappa > 0:
            raise ConfigError("outcome is constant so the default kappa is 0; set kappa explicitly")
    params = dict(l1=float(y.min()), r1=float(y.max()), kappa=kappa, epsilon=0.5 / math.sqrt(n), tau=tau)
    params.update(overrides)
    return SearchConfig(**params)


@dataclass(frozen=True)
class TraceEntry:
    iteration: int
    l: float
    r: float
    m: float
    s_hat: float
    branch: str

    def to_dict(self):
        return {"iteration": self.iteration, "l": self.l, "r": self.r, "m": self.m,
                "s_hat": self.s_hat, "branch": self.branch}


def binary_search(evaluate: Callable[[float], float], l1: float, r1: float, kappa: float,
                  epsilon: float, tau: float) -> tuple[float, list[TraceEntry], Termination]:
    """Bisection on a (noisy) decreasing survival curve.

    ``evaluate(m)`` returns the survival estimate at ``m``.  Returns the last
    midpoint, the trace and the stopping reason.
    """
    if not l1 < r1:
        raise ConfigError(f"need l1 < r1, got l1={l1}, r1={r1}")
    target = 1.0 - tau
    l, r = float(l1), float(r1)
    trace: list[TraceEntry] = []
    it = 0
    while True:
        it += 1
        m = 0.5 * (l + r)
        s = float(evaluate(m))
        if abs(s - target) <= epsilon:
            trace.append(TraceEntry(it, l, r, m, s, "tolerance"))
            return m, trace, Termination.TOLERANCE_HIT
        if s >= target:
            trace.append(TraceEntry(it, l, r, m, s, "raise_lower"))
            l = m
        else:
            trace.append(TraceEntry(it, l, r, m, s, "lower_upper"))
            r = m
        if r - l <= kappa:
            return m, trace, Termination.INTERVAL_EXHAUSTED


@dataclass(frozen=True)
class SclResult:
    q_hat: float
    regime: Regime
    decision: DecisionFunction
    trace: tuple
    terminated_by: Termination
    tau: float = float("nan")
    chosen: tuple = ()

    def to_dict(self) -> dict:
        return {
            "q_hat": self.q_hat,
            "tau": self.tau,
            "terminated_by": self.terminated_by.value,
            "trace": [t.to_dict() for t in self.trace],
            "tuning": [{"lambda": lam, "sigma": s} for lam, s in self.chosen],
            "decision": self.decision.to_dict(),
        }


NuisanceRefit = Callable[[Dataset], NuisanceModels]


class _Problem:
    """Per-search state: standardization, Gram cache, folds and fold nuisances."""

    def __init__(self, data, cfg, m, refit, support):
        self.data = data
        self.cfg = cfg
        self.m = m
        self.smoothed = data.is_discrete
        self.support = None
        if self.smoothed:
            self.support = smoothing_support(data, support)
        self.std = Standardizer.fit(data.X)
        self.Xs = self.std.transform(data.X)
        self.h = cfg.bandwidth.value(data.n)
        self.grams = GramCache(self.Xs)
        kind = cfg.kernel_kind
        self.sigmas = sigma_values(cfg.solver, self.Xs) if kind is KernelKind.GAUSSIAN else (None,)
        grid = len(cfg.solver.lambda_grid) * len(self.sigmas)
        self.folds = make_folds(data.n, cfg.solver.cv_folds, cfg.seed) if grid > 1 else None
        self.fold_models = None
        if self.folds is not None and refit is not None:
            self.fold_models = [refit(data.subset(train)) for train, _ in self.folds]

    def labels(self, q, data=None, m=None):
        return weighted_labels(data if data is not None else self.data, q, m or self.m,
                               smoothed=self.smoothed, support=self.support)

    def tune(self, q, labels):
        cfg = self.cfg
        if self.folds is None:
            return cfg.solver.lambda_grid[0], self.sigmas[0]
        if self.fold_models is None:
            return cross_validate(labels, self.Xs, cfg.kernel_kind, cfg.solver, folds=self.folds,
                                  gram_cache=self.grams, sigmas=self.sigmas, h=self.h)
        tr_lab, te_lab = [], []
        for (train, test), mk in zip(self.folds, self.fold_models):
            tr_lab.append(self.labels(q, self.data.subset(train), mk))
            te_lab.append(self.labels(q, self.data.subset(test), mk))
        Xs, h = self.Xs, self.h

        def hook(k, train, test, f):
            return soft_survival(te_lab[k].psi1, te_lab[k].psi0, f(Xs[test]), h)

        return cross_validate(labels, Xs, cfg.kernel_kind, cfg.solver, hook, folds=self.folds,
                              train_labels=lambda k: tr_lab[k], gram_cache=self.grams,
                              sigmas=self.sigmas, h=h)

    def fit(self, q, lam, sigma, labels):
        kern = KernelSpec(self.cfg.kernel_kind, sigma)
        return solve_weighted_hinge(labels, self.Xs, kern, lam, self.cfg.solver,
                                    gram=self.grams.get(kern), standardizer=self.std)


def scl_fit(data: Dataset, cfg: SearchConfig, m: NuisanceModels, *, refit: NuisanceRefit | None = None,
            support=None) -> SclResult:
    """Estimate the quantile-optimal regime.

    Parameters
    ----------
    data : Dataset
    cfg : SearchConfig
    m : NuisanceModels
        Nuisances fitted on ``data``.
    refit : callable, optional
        ``refit(train_data) -> NuisanceModels``.  When given, each
        cross-validation fold uses nuisances refitted on its training part,
        both for training labels and for scoring held-out records.
    support : array_like, optional
        Extra support points for discrete outcomes (united with the
        observed values) used by the smoothed pseudo-outcomes.
    """
    if not isinstance(m, NuisanceModels):
        raise EstimatorError("scl_fit needs fitted NuisanceModels")
    prob = _Problem(data, cfg, m, refit, support)
    state: dict = {"tuned": None, "chosen": []}

    def evaluate(q):
        labels = prob.labels(q)
        if not np.any(labels.weight > 0):
            # every contrast is exactly zero: any regime is optimal at q
            f = DecisionFunction(0.0, np.zeros((0, data.d)), np.zeros(0), KernelSpec(), prob.std)
        else:
            if state["tuned"] is None or cfg.retune_each_iteration:
                state["tuned"] = prob.tune(q, labels)
            lam, sigma = state["tuned"]
            state["chosen"].append((lam, sigma))
            f, _ = prob.fit(q, lam, sigma, labels)
        state["f"] = f
        return soft_survival(labels.psi1, labels.psi0, f(data.X), prob.h)

    q_hat, trace, term = binary_search(evaluate, cfg.l1, cfg.r1, cfg.kappa, cfg.epsilon, cfg.tau)
    f = state["f"]
    return SclResult(q_hat, Regime(f), f, tuple(trace), term, cfg.tau, tuple(state["chosen"]))
