"""Doubly robust pseudo-outcomes and the weighted classification problem.

For arm ``a`` and threshold ``q``::

    psi(a, q) = {1(Y > q) - g(q; X, a)} / pi(a | X) * 1(A = a) + g(q; X, a)

The contrast ``C = psi(1, q) - psi(0, q)`` gives each record a label
``Z = 1{C > 0}`` and a weight ``|C|``; maximising the survival at ``q`` over
regimes is then a weighted 0-1 classification problem.

For discrete outcomes the smoothed pseudo-outcome interpolates ``psi``
linearly between adjacent support points, pinned to 1 at ``v_0`` and 0 at
``v_l``.  Interpolation commutes with expectation, so its mean reproduces the
smoothed survival function.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Dataset, ObservationRecord
from .errors import DataError
from .nuisance import NuisanceModels


def psi_values(X, A, Y, a: int, q: float, m: NuisanceModels) -> np.ndarray:
    X = np.atleast_2d(X)
    g = m.survival_prob(q, X, a)
    pi = m.propensity_prob(a, X)
    resid = (np.asarray(Y) > q).astype(float) - g
    return np.where(np.asarray(A) == a, resid / pi, 0.0) + g


def psi(record: ObservationRecord, a: int, q: float, m: NuisanceModels) -> float:
    return float(psi_values(record.covariates[None, :], [record.treatment], [record.outcome], a, q, m)[0])


def smoothing_support(data: Dataset, extra=None) -> np.ndarray:
    """Observed distinct outcomes, united with any declared values."""
    v = data.support()
    if extra is not None:
        v = np.union1d(v, np.asarray(extra, dtype=float))
    if not np.all(v == np.round(v)):
        raise DataError("smoothing support must be integer-valued")
    return v


def psi_smoothed_values(X, A, Y, a: int, q: float, m: NuisanceModels, support) -> np.ndarray:
    v = np.asarray(support, dtype=float)
    n = np.atleast_2d(X).shape[0]
    xs = np.concatenate([[v[0] - 1.0], v])
    if q <= xs[0]:
        return np.ones(n)
    if q >= xs[-1]:
        return np.zeros(n)
    j = int(np.searchsorted(xs, q, side="right") - 1)
    lam = (q - xs[j]) / (xs[j + 1] - xs[j])

    def knot(k):
        if k == 0:
            return np.ones(n)
        if k == len(xs) - 1:
            return np.zeros(n)
        return psi_values(X, A, Y, a, xs[k], m)

    left = knot(j)
    if lam == 0.0:
        return left
    return (1.0 - lam) * left + lam * knot(j + 1)


def psi_smoothed(record: ObservationRecord, a: int, q: float, m: NuisanceModels, support) -> float:
    return float(psi_smoothed_values(record.covariates[None, :], [record.treatment], [record.outcome],
                                     a, q, m, support)[0])


@dataclass(frozen=True)
class WeightedLabel:
    weight: float
    label: int
    psi1: float
    psi0: float


@dataclass(frozen=True)
class WeightedLabels:
    """Column-wise container of :class:`WeightedLabel` entries."""

    weight: np.ndarray
    label: np.ndarray
    psi1: np.ndarray
    psi0: np.ndarray

    @classmethod
    def from_psi(cls, psi1, psi0) -> "WeightedLabels":
        psi1 = np.asarray(psi1, dtype=float)
        psi0 = np.asarray(psi0, dtype=float)
        c = psi1 - psi0
        return cls(np.abs(c), (c > 0).astype(np.int64), psi1, psi0)

    @property
    def contrast(self) -> np.ndarray:
        return self.psi1 - self.psi0

    def __len__(self):
        return self.weight.shape[0]

    def __getitem__(self, i) -> WeightedLabel:
        return WeightedLabel(float(self.weight[i]), int(self.label[i]), float(self.psi1[i]), float(self.psi0[i]))

    def subset(self, idx) -> "WeightedLabels":
        return WeightedLabels(self.weight[idx], self.label[idx], self.psi1[idx], self.psi0[idx])


def weighted_labels(data: Dataset, q: float, m: NuisanceModels, smoothed: bool = False,
                    support=None) -> WeightedLabels:
    if smoothed:
        if not data.is_discrete:
            raise DataError("smoothed pseudo-outcomes need a discrete outcome")
        v = smoothing_support(data) if support is None else np.asarray(support, dtype=float)
        p1 = psi_smoothed_values(data.X, data.A, data.Y, 1, q, m, v)
        p0 = psi_smoothed_values(data.X, data.A, data.Y, 0, q, m, v)
    else:
        p1 = psi_values(data.X, data.A, data.Y, 1, q, m)
        p0 = psi_values(data.X, data.A, data.Y, 0, q, m)
    return WeightedLabels.from_psi(p1, p0)
