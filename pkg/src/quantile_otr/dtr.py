"""Two-stage quantile-optimal dynamic treatment regimes.

Stage histories are ``H1 = X1`` and ``H2 = (X1, A1, X2)``.  With known stage
propensities the survival of ``Y(d)`` is identified by double inverse
probability weighting, and the regime pair ``(f1, f2)`` maximising it at a
fixed ``q`` is estimated through the concave surrogate

    phi(u, v) = min(u - 1, v - 1, 0) + 1 = min(u, v, 1)

by block-coordinate ascent.  With ``f2`` fixed, ``min(u, c)`` with
``c = min(v, 1)`` equals ``c - (c - u)^+``, so the ``f1`` block is a
weighted hinge problem with per-record margin ``c``; the ``f2`` block is
symmetric.  The binary search over ``q`` is shared with the single-stage
estimator.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .classifier import GramCache, SolverConfig, make_folds, median_pairwise_distance, solve_weighted_hinge
from .contrast import WeightedLabels
from .core import DecisionFunction, KernelKind, KernelSpec, Standardizer, _fmt, kernel_matrix
from .errors import ConfigError, DataError, EstimatorError
from .search import SearchConfig, Termination, binary_search

MAX_ALTERNATIONS = 50
GAIN_TOL = 1e-6


@dataclass(frozen=True)
class TwoStageRecord:
    x1: np.ndarray
    a1: int
    x2: np.ndarray
    a2: int
    y: float

    @property
    def h1(self) -> np.ndarray:
        return np.asarray(self.x1, dtype=float)

    @property
    def h2(self) -> np.ndarray:
        return np.concatenate([self.x1, [self.a1], self.x2]).astype(float)


@dataclass(frozen=True)
class TwoStageData:
    X1: np.ndarray
    A1: np.ndarray
    X2: np.ndarray
    A2: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        X1 = np.asarray(self.X1, dtype=float)
        X1 = X1[:, None] if X1.ndim == 1 else X1
        n = X1.shape[0]
        X2 = np.asarray(self.X2, dtype=float)
        X2 = np.zeros((n, 0)) if X2.size == 0 else X2.reshape(n, -1)
        A1 = np.asarray(self.A1)
        A2 = np.asarray(self.A2)
        Y = np.asarray(self.Y, dtype=float).reshape(-1)
        if n == 0:
            raise DataError("two-stage dataset is empty")
        if A1.shape != (n,) or A2.shape != (n,) or Y.shape != (n,) or X2.shape[0] != n:
            raise DataError("two-stage columns differ in length")
        for name, a in (("a1", A1), ("a2", A2)):
            if not np.all((a == 0) | (a == 1)):
                raise DataError(f"{name} must be 0/1")
        if not (np.all(np.isfinite(X1)) and np.all(np.isfinite(X2)) and np.all(np.isfinite(Y))):
            raise DataError("two-stage dataset contains non-finite values")
        object.__setattr__(self, "X1", X1)
        object.__setattr__(self, "X2", X2)
        object.__setattr__(self, "A1", A1.astype(np.int64))
        object.__setattr__(self, "A2", A2.astype(np.int64))
        object.__setattr__(self, "Y", Y)

    @property
    def n(self) -> int:
        return self.Y.shape[0]

    @property
    def H1(self) -> np.ndarray:
        return self.X1

    @property
    def H2(self) -> np.ndarray:
        return np.column_stack([self.X1, self.A1, self.X2])

    def records(self):
        for i in range(self.n):
            yield TwoStageRecord(self.X1[i], int(self.A1[i]), self.X2[i], int(self.A2[i]), float(self.Y[i]))

    def subset(self, idx) -> "TwoStageData":
        return TwoStageData(self.X1[idx], self.A1[idx], self.X2[idx], self.A2[idx], self.Y[idx])


def read_two_stage_csv(path) -> tuple[TwoStageData, np.ndarray | None, np.ndarray | None]:
    """Read ``x1_1..x1_p,a1,x2_1..x2_r,a2,y`` with optional trailing ``p1,p2``
    columns holding ``P(A1 = 1 | H1)`` and ``P(A2 = 1 | H2)``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    try:
        i_a1, i_a2, i_y = header.index("a1"), header.index("a2"), header.index("y")
    except ValueError:
        raise DataError(f"{path}: header must contain a1, a2 and y columns") from None
    c1 = header[:i_a1]
    c2 = header[i_a1 + 1:i_a2]
    if any(not h.startswith("x1_") for h in c1) or any(not h.startswith("x2_") for h in c2) or i_y != i_a2 + 1:
        raise DataError(f"{path}: header must be x1_1..x1_p,a1,x2_1..x2_r,a2,y[,p1,p2]")
    extra = header[i_y + 1:]
    if extra not in ([], ["p1", "p2"]):
        raise DataError(f"{path}: unexpected trailing columns {extra}")
    vals = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise DataError(f"{path}: row {lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            vals.append([float(v) for v in row])
        except ValueError as exc:
            raise DataError(f"{path}: row {lineno}: {exc}") from None
        for j in (i_a1, i_a2):
            if vals[-1][j] not in (0.0, 1.0):
                raise DataError(f"{path}: row {lineno}: treatment must be 0 or 1")
    if not vals:
        raise DataError(f"{path}: no data rows")
    M = np.asarray(vals)
    data = TwoStageData(M[:, :i_a1], M[:, i_a1], M[:, i_a1 + 1:i_a2], M[:, i_a2], M[:, i_y])
    if extra:
        return data, M[:, i_y + 1], M[:, i_y + 2]
    return data, None, None


def write_two_stage_csv(data: TwoStageData, path, p1=None, p2=None) -> None:
    p, r = data.X1.shape[1], data.X2.shape[1]
    header = [f"x1_{j + 1}" for j in range(p)] + ["a1"] + [f"x2_{j + 1}" for j in range(r)] + ["a2", "y"]
    with_p = p1 is not None and p2 is not None
    if with_p:
        header += ["p1", "p2"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(data.n):
            row = [_fmt(v) for v in data.X1[i]] + [str(int(data.A1[i]))] + [_fmt(v) for v in data.X2[i]]
            row += [str(int(data.A2[i])), _fmt(data.Y[i])]
            if with_p:
                row += [_fmt(p1[i]), _fmt(p2[i])]
            w.writerow(row)


# -- surrogate and evaluation ---------------------------------------------------

def phi(x, z):
    """Concave surrogate ``min(x - 1, z - 1, 0) + 1``."""
    return np.minimum(np.minimum(np.asarray(x, dtype=float) - 1.0, np.asarray(z, dtype=float) - 1.0), 0.0) + 1.0


def l(x, z):
    """``x z + (1 - x)(1 - z)``: probability that a 0/1 action ``x`` matches
    a randomised assignment that treats with probability ``z``."""
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    return x * z + (1.0 - x) * (1.0 - z)


def _observed_prob(p1, A) -> np.ndarray:
    p1 = np.asarray(p1, dtype=float)
    pa = np.where(np.asarray(A) == 1, p1, 1.0 - p1)
    if np.any(~np.isfinite(pa)) or np.any(pa <= 0) or np.any(pa > 1):
        raise DataError("stage propensities must give the observed arms probability in (0, 1]")
    return pa


def ipw_weights(data: TwoStageData, q: float, p1, p2) -> np.ndarray:
    """``1(Y > q) / {pi1(A1 | H1) pi2(A2 | H2)}``."""
    return (data.Y > q) / (_observed_prob(p1, data.A1) * _observed_prob(p2, data.A2))


def dtr_smoothed_survival(data: TwoStageData, f1, f2, q: float, p1, p2, h: float) -> float:
    """Double-IPW survival with ``Phi(f / h)`` in place of the hard regimes."""
    if not h > 0:
        raise ValueError("bandwidth must be positive")
    w = ipw_weights(data, q, p1, p2)
    g1 = ndtr(np.asarray(f1(data.H1)) / h)
    g2 = ndtr(np.asarray(f2(data.H2)) / h)
    return float(np.mean(w * l(data.A1, g1) * l(data.A2, g2)))


def dtr_ipw_survival(data: TwoStageData, d1, d2, q: float, p1, p2) -> float:
    """Double-IPW plug-in survival of the hard regime ``(d1, d2)`` (0/1 arrays)."""
    w = ipw_weights(data, q, p1, p2)
    return float(np.mean(w * (np.asarray(d1) == data.A1) * (np.asarray(d2) == data.A2)))


# -- block ascent ---------------------------------------------------------------

@dataclass(frozen=True)
class SurrogateFit:
    f1: DecisionFunction
    f2: DecisionFunction
    objective: float
    history: np.ndarray = field(repr=False)
    alternations: int = 0
    warning: bool = False


class _Stage:
    def __init__(self, H, kernel: KernelSpec, std: Standardizer | None = None, grams: GramCache | None = None):
        self.std = std or Standardizer.fit(H)
        self.Hs = self.std.transform(H)
        self.kernel = kernel
        self.grams = grams or GramCache(self.Hs)
        self.gram = self.grams.get(kernel)

    @staticmethod
    def norm2(f: DecisionFunction) -> float:
        if f.coefficients.size == 0:
            return 0.0
        Kss = kernel_matrix(f.kernel, f.support_points, f.support_points)
        return float(f.coefficients @ Kss @ f.coefficients)


def _solve_block(stage: _Stage, y, w, margins, lam, cfg):
    labels = WeightedLabels(w, (y > 0).astype(np.int64), np.zeros_like(w), np.zeros_like(w))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        f, _ = solve_weighted_hinge(labels, stage.Hs, stage.kernel, lam, cfg, gram=stage.gram, margins=margins,
                                    standardizer=stage.std)
    return f


def _zero(stage: _Stage) -> DecisionFunction:
    d = stage.Hs.shape[1]
    return DecisionFunction(0.0, np.zeros((0, d)), np.zeros(0), stage.kernel, stage.std)


def _surrogate(data, s1, s2, lam, cfg, w, gain_tol=GAIN_TOL, max_alt=MAX_ALTERNATIONS) -> SurrogateFit:
    y1 = 2.0 * data.A1 - 1.0
    y2 = 2.0 * data.A2 - 1.0
    n = data.n
    if not np.any(w > 0):
        return SurrogateFit(_zero(s1), _zero(s2), 0.0, np.zeros(1))

    def objective(f1, f2):
        u = y1 * f1(data.H1)
        v = y2 * f2(data.H2)
        return float(np.sum(w * phi(u, v)) / n - lam * (s1.norm2(f1) + s2.norm2(f2)))

    # f1 first, with stage 2 treated as saturated (margin 1)
    f1 = _solve_block(s1, y1, w, np.ones(n), lam, cfg)
    f2 = _solve_block(s2, y2, w, np.minimum(y1 * f1(data.H1), 1.0), lam, cfg)
    J = objective(f1, f2)
    hist = [J]
    warn = False
    alt = 0
    for alt in range(1, max_alt + 1):
        J_start = J
        c1 = np.minimum(y2 * f2(data.H2), 1.0)
        g1 = _solve_block(s1, y1, w, c1, lam, cfg)
        Jg = objective(g1, f2)
        if Jg > J:
            f1, J = g1, Jg
        elif alt == 1 and Jg < J - gain_tol:
            warn = True
        c2 = np.minimum(y1 * f1(data.H1), 1.0)
        g2 = _solve_block(s2, y2, w, c2, lam, cfg)
        Jg = objective(f1, g2)
        if Jg > J:
            f2, J = g2, Jg
        elif alt == 1 and Jg < J - gain_tol:
            warn = True
        hist.append(J)
        if J - J_start < gain_tol:
            break
    return SurrogateFit(f1, f2, J, np.asarray(hist), alt, warn)


def _stage_kernel(kind, sigma_factor, Hs):
    if KernelKind(kind) is KernelKind.LINEAR:
        return KernelSpec()
    return KernelSpec(KernelKind.GAUSSIAN, sigma_factor / median_pairwise_distance(Hs))


def dtr_surrogate_fit(data: TwoStageData, q: float, p1, p2, lam: float, kernel: KernelKind | str = "linear",
                      sigma_factor: float = 1.0, cfg: SolverConfig | None = None) -> SurrogateFit:
    """Maximise the penalised double-IPW surrogate at threshold ``q``.

    ``p1``, ``p2`` are ``P(A1 = 1 | H1)`` and ``P(A2 = 1 | H2)`` per record.
    For Gaussian kernels each stage uses ``sigma_factor`` over the median
    pairwise distance of its standardized history.
    """
    cfg = cfg or SolverConfig()
    if not lam > 0:
        raise ValueError("lambda must be positive")
    w = ipw_weights(data, q, p1, p2)
    std1, std2 = Standardizer.fit(data.H1), Standardizer.fit(data.H2)
    k1 = _stage_kernel(kernel, sigma_factor, std1.transform(data.H1))
    k2 = _stage_kernel(kernel, sigma_factor, std2.transform(data.H2))
    return _surrogate(data, _Stage(data.H1, k1, std1), _Stage(data.H2, k2, std2), lam, cfg, w)


# -- search -------------------------------------------------------------------

@dataclass(frozen=True)
class DtrResult:
    q_hat: float
    f1: DecisionFunction
    f2: DecisionFunction
    trace: tuple
    terminated_by: Termination
    tau: float = float("nan")

    def regime1(self, H1) -> np.ndarray:
        return self.f1.regime(H1)

    def regime2(self, H2) -> np.ndarray:
        return self.f2.regime(H2)

    def to_dict(self) -> dict:
        return {"q_hat": self.q_hat, "tau": self.tau, "terminated_by": self.terminated_by.value,
                "trace": [t.to_dict() for t in self.trace], "f1": self.f1.to_dict(), "f2": self.f2.to_dict()}


def default_dtr_search_config(data: TwoStageData, tau: float, **overrides) -> SearchConfig:
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


def dtr_fit(data: TwoStageData, cfg: SearchConfig, p1, p2) -> DtrResult:
    """Binary search over ``q`` with the block-ascent surrogate fit per step.

    ``(lambda, sigma factor)`` is chosen by cross-validation on the held-out
    smoothed double-IPW survival when the grids have more than one point.
    """
    p1 = np.asarray(p1, dtype=float)
    p2 = np.asarray(p2, dtype=float)
    if p1.shape != (data.n,) or p2.shape != (data.n,):
        raise DataError("p1 and p2 need one propensity per record")
    _observed_prob(p1, data.A1)
    _observed_prob(p2, data.A2)
    scfg = cfg.solver
    h = cfg.bandwidth.value(data.n)
    std1, std2 = Standardizer.fit(data.H1), Standardizer.fit(data.H2)
    H1s, H2s = std1.transform(data.H1), std2.transform(data.H2)
    g1, g2 = GramCache(H1s), GramCache(H2s)
    factors = scfg.sigma_grid if cfg.kernel_kind is KernelKind.GAUSSIAN else (1.0,)
    grid = [(lam, s) for lam in scfg.lambda_grid for s in factors]
    folds = make_folds(data.n, scfg.cv_folds, cfg.seed) if len(grid) > 1 else None

    def stages(sf):
        k1 = _stage_kernel(cfg.kernel_kind, sf, H1s)
        k2 = _stage_kernel(cfg.kernel_kind, sf, H2s)
        return _Stage(data.H1, k1, std1, g1), _Stage(data.H2, k2, std2, g2)

    def fold_stages(sf, train):
        s1, s2 = stages(sf)
        for s in (s1, s2):
            s.Hs = s.Hs[train]
            s.gram = s.gram[np.ix_(train, train)]
        return s1, s2

    def tune(q):
        if folds is None:
            return grid[0]
        scores = {}
        for lam, sf in grid:
            vals = []
            for train, test in folds:
                dtr_train = data.subset(train)
                w = ipw_weights(dtr_train, q, p1[train], p2[train])
                if not np.any(w > 0):
                    continue
                s1, s2 = fold_stages(sf, train)
                fit = _surrogate(dtr_train, s1, s2, lam, scfg, w)
                vals.append(dtr_smoothed_survival(data.subset(test), fit.f1, fit.f2, q, p1[test], p2[test], h))
            if vals:
                scores[(lam, sf)] = float(np.mean(vals))
        if not scores:
            raise EstimatorError("every cross-validation fold was skipped (no positive weights)")
        return max(scores, key=lambda key: (scores[key], key[0], -key[1]))

    state: dict = {"tuned": None}

    def evaluate(q):
        if state["tuned"] is None or cfg.retune_each_iteration:
            state["tuned"] = tune(q)
        lam, sf = state["tuned"]
        s1, s2 = stages(sf)
        fit = _surrogate(data, s1, s2, lam, scfg, ipw_weights(data, q, p1, p2))
        state["fit"] = fit
        return dtr_smoothed_survival(data, fit.f1, fit.f2, q, p1, p2, h)

    q_hat, trace, term = binary_search(evaluate, cfg.l1, cfg.r1, cfg.kappa, cfg.epsilon, cfg.tau)
    fit = state["fit"]
    return DtrResult(q_hat, fit.f1, fit.f2, tuple(trace), term, cfg.tau)
