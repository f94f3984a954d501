"""Survival estimation for a fitted decision function, and the IPW
check-loss quantile estimator used to score regimes on held-out data."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .core import Dataset, DecisionFunction
from .errors import EstimatorError
from .nuisance import NuisanceModels, PropensityModel


@dataclass(frozen=True)
class BandwidthSpec:
    """``rule="log_rule"`` gives ``h = 0.2 / log(n)``; ``"fixed"`` uses ``h``."""

    h: float | None = None
    rule: str = "log_rule"

    def __post_init__(self):
        if self.rule not in ("fixed", "log_rule"):
            raise ValueError(f"unknown bandwidth rule {self.rule!r}")
        if self.rule == "fixed" and not (self.h is not None and self.h > 0):
            raise ValueError("fixed bandwidth needs h > 0")

    def value(self, n: int) -> float:
        if self.rule == "fixed":
            return float(self.h)
        if n < 2:
            raise ValueError("log_rule bandwidth needs n >= 2")
        return 0.2 / np.log(n)


def soft_survival(psi1, psi0, fvals, h: float) -> float:
    """Mean of ``psi1 * Phi(f/h) + psi0 * (1 - Phi(f/h))``."""
    w = ndtr(np.asarray(fvals, dtype=float) / h)
    return float(np.mean(psi0 + w * (np.asarray(psi1) - psi0)))


def hard_survival(psi1, psi0, fvals) -> float:
    d = np.asarray(fvals) > 0
    return float(np.mean(np.where(d, psi1, psi0)))


def smoothed_survival_estimate(data: Dataset, f: DecisionFunction, q: float, m: NuisanceModels,
                               h: BandwidthSpec | float | None = None, smoothed_psi: bool = False,
                               support=None) -> float:
    from .contrast import weighted_labels

    if h is None:
        h = BandwidthSpec()
    hv = h.value(data.n) if isinstance(h, BandwidthSpec) else float(h)
    if not hv > 0:
        raise ValueError("bandwidth must be positive")
    wl = weighted_labels(data, q, m, smoothed=smoothed_psi, support=support)
    return soft_survival(wl.psi1, wl.psi0, f(data.X), hv)


def check_loss(u, tau: float) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    return u * (tau - (u < 0))


def weighted_quantile(y, w, tau: float) -> float:
    """Smallest minimiser of ``sum w_i rho_tau(y_i - q)``.

    That is the smallest ``y`` whose cumulative weight reaches ``tau`` of
    the total.
    """
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    order = np.argsort(y, kind="stable")
    ys, cw = y[order], np.cumsum(w[order])
    total = cw[-1]
    # distinct values only: cumulative weight at the last copy of each value
    last = np.r_[ys[1:] != ys[:-1], True]
    ys, cw = ys[last], cw[last]
    k = np.searchsorted(cw, tau * total * (1.0 - 1e-12), side="left")
    return float(ys[min(k, ys.size - 1)])


def ipw_checkloss_quantile(data: Dataset, regime, tau: float,
                           prop: PropensityModel | NuisanceModels, clip_epsilon: float | None = None) -> float:
    """IPW estimate of the ``tau``-quantile of ``Y(d)``.

    ``regime`` maps a covariate matrix to 0/1 assignments.  With a
    :class:`NuisanceModels` bundle its clipped propensities are used; a bare
    :class:`PropensityModel` is clipped to ``[clip_epsilon, 1 - clip_epsilon]``
    when ``clip_epsilon`` is given.
    """
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must lie in (0, 1)")
    d = np.asarray(regime(data.X))
    conc = d == data.A
    if not conc.any():
        raise EstimatorError("no record follows the regime (d(X_i) = A_i for none); quantile undefined")
    if isinstance(prop, NuisanceModels):
        pi = prop.propensity_prob(data.A, data.X)
    else:
        pi = prop.prob(data.A, data.X)
        if clip_epsilon is not None:
            pi = np.clip(pi, clip_epsilon, 1.0 - clip_epsilon)
    return weighted_quantile(data.Y[conc], 1.0 / pi[conc], tau)
