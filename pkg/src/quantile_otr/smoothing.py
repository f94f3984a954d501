"""Smoothed survival and quantile functions for finite-support outcomes.

For support ``v_1 < ... < v_l`` with ``v_0 = v_1 - 1`` the smoothed survival
function is the piecewise-linear interpolant through the knots
``(v_0, 1), (v_1, S(v_1)), ..., (v_l, 0)``, constant 1 to the left and 0 to
the right.  Equivalently the mass at ``v_k`` is spread uniformly over
``[v_{k-1}, v_k]``.

Functions accept a single survival vector or a matrix with one survival
curve per row (the oracle evaluates thousands of regimes at once).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _knots(support, survival):
    support = np.asarray(support, dtype=float)
    S = np.atleast_2d(np.asarray(survival, dtype=float))
    xs = np.concatenate([[support[0] - 1.0], support])
    ys = np.concatenate([np.ones((S.shape[0], 1)), S[:, :-1], np.zeros((S.shape[0], 1))], axis=1)
    return xs, ys


def interpolate_knots(xs, ys, q) -> np.ndarray:
    """Evaluate the knot interpolant (``ys`` rows) at scalar or array ``q``.

    Exact at knots; flat extension beyond the end knots.
    """
    q = np.asarray(q, dtype=float)
    j = np.clip(np.searchsorted(xs, q, side="right") - 1, 0, len(xs) - 2)
    lam = np.clip((q - xs[j]) / (xs[j + 1] - xs[j]), 0.0, 1.0)
    y0 = ys[..., j]
    y1 = ys[..., j + 1]
    return np.where(lam == 0.0, y0, y0 + lam * (y1 - y0))


def smoothed_survival_curve(support, survival, q) -> np.ndarray:
    xs, ys = _knots(support, survival)
    out = interpolate_knots(xs, ys, q)
    return out[0] if np.ndim(survival) == 1 else out


def smoothed_quantile_curve(support, survival, tau: float) -> np.ndarray:
    """``sup{q : S^m(q) > 1 - tau}`` for each survival row.

    The smoothed curve is continuous and nonincreasing, so the supremum is
    the first point where it reaches ``1 - tau``.
    """
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must lie in (0, 1)")
    xs, ys = _knots(support, survival)
    c = 1.0 - tau
    j = np.argmax(ys <= c, axis=1)  # first knot at or below level; j >= 1
    rows = np.arange(ys.shape[0])
    y0, y1 = ys[rows, j - 1], ys[rows, j]
    x0, x1 = xs[j - 1], xs[j]
    out = np.where(y1 == c, x1, x0 + (y0 - c) / (y0 - y1) * (x1 - x0))
    return out[0] if np.ndim(survival) == 1 else out


def hard_quantile_curve(support, survival, tau: float) -> np.ndarray:
    """``sup{q : S(q) > 1 - tau}`` for the step survival function."""
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must lie in (0, 1)")
    support = np.asarray(support, dtype=float)
    S = np.atleast_2d(np.asarray(survival, dtype=float)).copy()
    S[:, -1] = 0.0
    j = np.argmax(S <= 1.0 - tau, axis=1)
    out = support[j]
    return out[0] if np.ndim(survival) == 1 else out


@dataclass(frozen=True)
class DiscreteSurvival:
    """Survival function of an integer-valued variable on ``support``.

    ``survival[k] = P(Y > support[k])``; the last entry must be 0.
    """

    support: np.ndarray
    survival: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.support)
        S = np.asarray(self.survival, dtype=float)
        if v.ndim != 1 or v.size == 0 or S.shape != v.shape:
            raise ValueError("support and survival must be equal-length nonempty vectors")
        if not np.all(v == np.round(v)) or np.any(np.diff(v) <= 0):
            raise ValueError("support must be strictly increasing integers")
        if not np.all(np.isfinite(S)):
            raise ValueError("survival values must be finite")
        if abs(S[-1]) > 1e-12:
            raise ValueError("survival at the largest support point must be 0")
        S = S.copy()
        S[-1] = 0.0
        if np.any(S < -1e-12) or np.any(S > 1 + 1e-12) or np.any(np.diff(S) > 1e-12):
            raise ValueError("survival must be nonincreasing within [0, 1]")
        object.__setattr__(self, "support", v.astype(np.int64))
        object.__setattr__(self, "survival", np.clip(S, 0.0, 1.0))

    @property
    def v0(self) -> int:
        return int(self.support[0]) - 1

    @classmethod
    def from_pmf(cls, support, pmf) -> "DiscreteSurvival":
        pmf = np.asarray(pmf, dtype=float)
        S = 1.0 - np.cumsum(pmf) / pmf.sum()
        S[-1] = 0.0
        return cls(np.asarray(support), np.maximum(S, 0.0))

    @classmethod
    def from_sample(cls, y, support=None) -> "DiscreteSurvival":
        """Empirical survival of integer sample ``y`` on ``support``
        (default: the observed distinct values)."""
        y = np.sort(np.asarray(y, dtype=float))
        v = np.unique(y) if support is None else np.asarray(support, dtype=float)
        if y.size and (y[0] < v[0] or y[-1] > v[-1]):
            raise ValueError("sample falls outside the declared support")
        S = 1.0 - np.searchsorted(y, v, side="right") / y.size
        return cls(v, S)

    def step(self, q) -> np.ndarray:
        """Unsmoothed survival ``P(Y > q)``."""
        q = np.asarray(q, dtype=float)
        j = np.searchsorted(self.support, q, side="right") - 1
        return np.where(j < 0, 1.0, self.survival[np.clip(j, 0, None)])

    def mean(self) -> float:
        pmf = -np.diff(np.concatenate([[1.0], self.survival]))
        return float(pmf @ self.support)


def smoothed_survival(ds: DiscreteSurvival, q):
    out = smoothed_survival_curve(ds.support, ds.survival, q)
    return float(out) if np.ndim(q) == 0 else out


def smoothed_quantile(ds: DiscreteSurvival, tau: float) -> float:
    return float(smoothed_quantile_curve(ds.support, ds.survival, tau))


def hard_quantile(ds: DiscreteSurvival, tau: float) -> int:
    return int(hard_quantile_curve(ds.support, ds.survival, tau))
