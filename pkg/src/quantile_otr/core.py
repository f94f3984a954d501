"""Domain types, kernels and decision functions.

A regime is represented as ``d(x) = 1{f(x) > 0}`` where ``f`` is a kernel
expansion ``f(x) = b + sum_i beta_i k(s_i, x)`` over support points ``s_i``.
Covariates are z-scored with training statistics before any kernel
evaluation; the standardization travels with the :class:`DecisionFunction`
so callers always pass raw covariates.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import DataError


class OutcomeKind(str, Enum):
    CONTINUOUS = "continuous"
    DISCRETE = "discrete"


@dataclass(frozen=True)
class ObservationRecord:
    covariates: np.ndarray
    treatment: int
    outcome: float


@dataclass(frozen=True)
class Dataset:
    """Observational sample ``{(X_i, A_i, Y_i)}``.

    Stored column-wise: ``X`` is ``(n, d)``, ``A`` is an int array in
    ``{0, 1}`` and ``Y`` is float (integer-valued for discrete outcomes).
    """

    X: np.ndarray
    A: np.ndarray
    Y: np.ndarray
    outcome_kind: OutcomeKind = OutcomeKind.CONTINUOUS

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        A = np.asarray(self.A)
        Y = np.asarray(self.Y, dtype=float)
        if X.ndim != 2 or A.ndim != 1 or Y.ndim != 1:
            raise DataError("X must be 2-D, A and Y 1-D")
        n = X.shape[0]
        if n == 0:
            raise DataError("dataset is empty")
        if A.shape[0] != n or Y.shape[0] != n:
            raise DataError(f"length mismatch: X has {n} rows, A {A.shape[0]}, Y {Y.shape[0]}")
        if not np.all((A == 0) | (A == 1)):
            raise DataError("treatment must be 0/1")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise DataError("non-finite covariate or outcome")
        kind = OutcomeKind(self.outcome_kind)
        if kind is OutcomeKind.DISCRETE and not np.all(Y == np.round(Y)):
            raise DataError("discrete outcomes must be integers")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "A", A.astype(np.int64))
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "outcome_kind", kind)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def is_discrete(self) -> bool:
        return self.outcome_kind is OutcomeKind.DISCRETE

    def __len__(self):
        return self.n

    def records(self) -> Iterator[ObservationRecord]:
        for i in range(self.n):
            yield ObservationRecord(self.X[i], int(self.A[i]), float(self.Y[i]))

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.X[idx], self.A[idx], self.Y[idx], self.outcome_kind)

    def support(self) -> np.ndarray:
        """Distinct observed outcome values, ascending."""
        return np.unique(self.Y)


class KernelKind(str, Enum):
    LINEAR = "linear"
    GAUSSIAN = "gaussian"


@dataclass(frozen=True)
class KernelSpec:
    kind: KernelKind = KernelKind.LINEAR
    sigma: float | None = None

    def __post_init__(self):
        kind = KernelKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is KernelKind.GAUSSIAN:
            if self.sigma is None or not self.sigma > 0:
                raise ValueError("gaussian kernel needs sigma > 0")
            object.__setattr__(self, "sigma", float(self.sigma))

    def to_dict(self):
        return {"kind": self.kind.value, "sigma": self.sigma}


def kernel_eval(k: KernelSpec, x, z) -> float:
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    if x.shape != z.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {z.shape}")
    if k.kind is KernelKind.LINEAR:
        return float(x @ z)
    diff = x - z
    return float(np.exp(-(k.sigma ** 2) * (diff @ diff)))


def squared_distances(X: np.ndarray, Z: np.ndarray) -> np.ndarray:
    xx = np.einsum("ij,ij->i", X, X)
    zz = np.einsum("ij,ij->i", Z, Z)
    D = xx[:, None] + zz[None, :] - 2.0 * (X @ Z.T)
    np.maximum(D, 0.0, out=D)
    return D


def kernel_matrix(k: KernelSpec, X: np.ndarray, Z: np.ndarray) -> np.ndarray:
    """Gram matrix ``K[i, j] = k(X[i], Z[j])``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    if X.shape[1] != Z.shape[1]:
        raise ValueError(f"dimension mismatch: {X.shape[1]} vs {Z.shape[1]}")
    if k.kind is KernelKind.LINEAR:
        return X @ Z.T
    return np.exp(-(k.sigma ** 2) * squared_distances(X, Z))


@dataclass(frozen=True)
class Standardizer:
    center: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X) -> "Standardizer":
        X = np.atleast_2d(np.asarray(X, dtype=float))
        scale = X.std(axis=0, ddof=1) if X.shape[0] > 1 else np.ones(X.shape[1])
        scale = np.where(scale > 0, scale, 1.0)
        return cls(X.mean(axis=0), scale)

    @classmethod
    def identity(cls, d: int) -> "Standardizer":
        return cls(np.zeros(d), np.ones(d))

    def transform(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.center) / self.scale


@dataclass(frozen=True)
class DecisionFunction:
    """``f(x) = b + sum_i beta_i k(s_i, z(x))`` with ``z`` the standardization.

    ``support_points`` live in standardized coordinates.
    """

    intercept: float
    support_points: np.ndarray
    coefficients: np.ndarray
    kernel: KernelSpec
    standardizer: Standardizer | None = None

    def __post_init__(self):
        sp = np.asarray(self.support_points, dtype=float)
        coef = np.asarray(self.coefficients, dtype=float).reshape(-1)
        if sp.size == 0:
            d = self.standardizer.center.shape[0] if self.standardizer is not None else 0
            sp = sp.reshape(0, d)
        elif sp.ndim == 1:
            sp = sp[None, :]
        if sp.shape[0] != coef.shape[0]:
            raise ValueError("coefficients and support_points differ in length")
        object.__setattr__(self, "support_points", sp)
        object.__setattr__(self, "coefficients", coef)
        object.__setattr__(self, "intercept", float(self.intercept))

    @classmethod
    def constant(cls, b: float, d: int, kernel: KernelSpec | None = None) -> "DecisionFunction":
        return cls(b, np.zeros((0, d)), np.zeros(0), kernel or KernelSpec(), Standardizer.identity(d))

    def __call__(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if self.standardizer is not None:
            if X.shape[1] != self.standardizer.center.shape[0]:
                raise ValueError(
                    f"dimension mismatch: got {X.shape[1]}, expected {self.standardizer.center.shape[0]}"
                )
            X = self.standardizer.transform(X)
        if self.coefficients.size == 0:
            out = np.full(X.shape[0], self.intercept)
        else:
            out = self.intercept + kernel_matrix(self.kernel, X, self.support_points) @ self.coefficients
        return out[0] if single else out

    def regime(self, X) -> np.ndarray:
        """Treatment assignment; ties ``f(x) = 0`` go to arm 0."""
        return (np.asarray(self(X)) > 0).astype(np.int64)

    def collapsed_linear(self) -> tuple[np.ndarray, float]:
        """``(w, b)`` with ``f(x) = w . z(x) + b`` for linear kernels."""
        if self.kernel.kind is not KernelKind.LINEAR:
            raise ValueError("only linear expansions collapse")
        d = self.support_points.shape[1]
        w = self.coefficients @ self.support_points if self.coefficients.size else np.zeros(d)
        return w, self.intercept

    def to_dict(self) -> dict:
        st = self.standardizer
        return {
            "intercept": self.intercept,
            "kernel": self.kernel.to_dict(),
            "center": None if st is None else st.center.tolist(),
            "scale": None if st is None else st.scale.tolist(),
            "support_points": self.support_points.tolist(),
            "coefficients": self.coefficients.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "DecisionFunction":
        kern = KernelSpec(doc["kernel"]["kind"], doc["kernel"].get("sigma"))
        st = None
        if doc.get("center") is not None:
            st = Standardizer(np.asarray(doc["center"], float), np.asarray(doc["scale"], float))
        sp = np.asarray(doc["support_points"], dtype=float)
        if sp.size == 0 and st is not None:
            sp = sp.reshape(0, st.center.shape[0])
        return cls(doc["intercept"], sp, doc["coefficients"], kern, st)


def decision_eval(f: DecisionFunction, x) -> float:
    return float(f(np.asarray(x, dtype=float)))


@dataclass(frozen=True)
class Regime:
    decision: DecisionFunction

    def __call__(self, X) -> np.ndarray:
        return self.decision.regime(X)


@dataclass(frozen=True)
class ConstantRegime:
    """Assigns the same arm to everyone; handy as a baseline."""

    arm: int

    def __call__(self, X) -> np.ndarray:
        return np.full(np.atleast_2d(X).shape[0], int(self.arm), dtype=np.int64)


# -- I/O ---------------------------------------------------------------------

def read_dataset_csv(path, outcome_kind: OutcomeKind | str = OutcomeKind.CONTINUOUS) -> Dataset:
    """Read ``x1,...,xd,a,y`` CSV. Parse failures name the offending row."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if len(header) < 3 or header[-2:] != ["a", "y"]:
            raise DataError(f"{path}: header must be x1,...,xd,a,y; got {','.join(header)}")
        d = len(header) - 2
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != d + 2:
                raise DataError(f"{path}: row {lineno}: expected {d + 2} fields, got {len(row)}")
            try:
                vals = [float(c) for c in row]
            except ValueError as exc:
                raise DataError(f"{path}: row {lineno}: {exc}") from None
            if vals[d] not in (0.0, 1.0):
                raise DataError(f"{path}: row {lineno}: treatment must be 0 or 1, got {row[d]}")
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no data rows")
    arr = np.asarray(rows)
    try:
        return Dataset(arr[:, :d], arr[:, d].astype(int), arr[:, d + 1], outcome_kind)
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from None


def _fmt(v: float) -> str:
    return repr(float(v)) if not float(v).is_integer() else str(int(v))


def write_dataset_csv(data: Dataset, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{j + 1}" for j in range(data.d)] + ["a", "y"])
        for i in range(data.n):
            w.writerow([_fmt(v) for v in data.X[i]] + [str(int(data.A[i])), _fmt(data.Y[i])])


def save_json(doc, path) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=False) + "\n")


def load_json(path):
    return json.loads(Path(path).read_text())
