"""Weighted hinge-loss classification in a linear or Gaussian RKHS.

Solves::

    min_{b, h}  (1/n) sum_i w_i (m_i - y_i f(x_i))^+  +  lam ||h||_k^2,
    f = b + h,  y_i = 2 Z_i - 1,

with unit margins ``m_i = 1`` for the ordinary hinge.  The intercept is not
penalised, which gives the equality-constrained dual

    max_a  m'a - 0.5 a'Qa,   0 <= a_i <= w_i / (2 lam n),   y'a = 0,

solved by SMO (:mod:`._smo`).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ._smo import _objectives, smo_solve
from .contrast import WeightedLabels
from .core import DecisionFunction, KernelKind, KernelSpec, Standardizer, kernel_matrix, squared_distances
from .errors import EstimatorError

DEFAULT_LAMBDAS = tuple(2.0 ** k for k in range(-8, 3, 2))
DEFAULT_SIGMA_FACTORS = (0.25, 0.5, 1.0, 2.0, 4.0)


@dataclass(frozen=True)
class SolverConfig:
    """Regularisation grids and SMO controls.

    ``sigma_grid`` entries are multiples of ``1 / median pairwise distance``
    of the standardized covariates when ``sigma_relative`` is set.
    ``max_passes=None`` means ``10 n``; a pass is ``n`` SMO pair updates.
    """

    lambda_grid: Sequence[float] = DEFAULT_LAMBDAS
    sigma_grid: Sequence[float] = DEFAULT_SIGMA_FACTORS
    sigma_relative: bool = True
    kkt_tol: float = 1e-3
    max_passes: int | None = None
    cv_folds: int = 5

    def __post_init__(self):
        if not self.lambda_grid or any(v <= 0 for v in self.lambda_grid):
            raise ValueError("lambda_grid must be a nonempty list of positive values")
        if not self.sigma_grid or any(v <= 0 for v in self.sigma_grid):
            raise ValueError("sigma_grid must be a nonempty list of positive values")
        if not self.kkt_tol > 0:
            raise ValueError("kkt_tol must be positive")
        if self.cv_folds < 2:
            raise ValueError("cv_folds must be at least 2")
        object.__setattr__(self, "lambda_grid", tuple(float(v) for v in self.lambda_grid))
        object.__setattr__(self, "sigma_grid", tuple(float(v) for v in self.sigma_grid))


@dataclass(frozen=True)
class FitDiagnostics:
    objective: float
    passes: int
    n_support: int
    chosen_lambda: float
    chosen_sigma: float | None = None
    trivial: bool = False
    converged: bool = True
    kkt_gap: float = 0.0
    dual_objective: float = float("nan")
    equality_residual: float = 0.0
    dual_history: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)
    primal_history: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)
    alpha: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)
    box: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)


def primal_objective(fvals, labels_y, weights, margins, lam: float, h_norm2: float, n: int) -> float:
    loss = np.maximum(0.0, margins - labels_y * fvals)
    return float(np.sum(weights * loss) / n + lam * h_norm2)


def solve_weighted_hinge(labels: WeightedLabels, covariates, kernel: KernelSpec, lam: float,
                         cfg: SolverConfig | None = None, *, gram=None, margins=None,
                         standardizer: Standardizer | None = None) -> tuple[DecisionFunction, FitDiagnostics]:
    """Fit ``f`` minimising the weighted hinge objective.

    ``covariates`` are already standardized; ``standardizer`` is stored on
    the returned function so it can be evaluated on raw covariates.
    ``gram`` optionally supplies the full kernel matrix of ``covariates``.
    """
    cfg = cfg or SolverConfig()
    if not lam > 0:
        raise ValueError("lambda must be positive")
    Xs = np.atleast_2d(np.asarray(covariates, dtype=float))
    n = Xs.shape[0]
    if len(labels) != n:
        raise ValueError("labels and covariates differ in length")
    margins = np.ones(n) if margins is None else np.asarray(margins, dtype=float)
    w = np.asarray(labels.weight, dtype=float)
    keep = np.flatnonzero(w > 0)
    if keep.size == 0:
        raise EstimatorError("no record has positive classification weight")
    y = 2.0 * labels.label[keep] - 1.0
    sigma = kernel.sigma if kernel.kind is KernelKind.GAUSSIAN else None
    d = Xs.shape[1]
    if np.all(y == y[0]):
        b = y[0] * max(float(margins[keep].max()), 1.0)
        f = DecisionFunction(b, np.zeros((0, d)), np.zeros(0), kernel, standardizer)
        obj = primal_objective(np.full(n, b), 2.0 * labels.label - 1.0, w, margins, lam, 0.0, n)
        return f, FitDiagnostics(obj, 0, 0, lam, sigma, trivial=True)

    Xk = Xs[keep]
    K = kernel_matrix(kernel, Xk, Xk) if gram is None else np.asarray(gram)[np.ix_(keep, keep)]
    K = np.ascontiguousarray(K, dtype=float)
    C = w[keep] / (2.0 * lam * n)
    p = np.ascontiguousarray(margins[keep])
    max_passes = cfg.max_passes if cfg.max_passes is not None else 10 * keep.size
    alpha, G, iters, converged, gap, primal_h, dual_h = smo_solve(K, y, C, p, cfg.kkt_tol, int(max_passes))

    scaled_primal, dual, rho = _objectives(alpha, G, y, C, p)
    b = -rho
    sv = alpha > 0
    beta = alpha[sv] * y[sv]
    f = DecisionFunction(b, Xk[sv], beta, kernel, standardizer)
    h_norm2 = float(alpha @ (G + p))  # a'Qa
    fk = y * (G + p) + b  # f at kept points: h = y (G + p)
    obj = float(np.sum(w[keep] * np.maximum(0.0, p - y * fk)) / n + lam * h_norm2)
    if not converged:
        warnings.warn(f"SMO hit max_passes={max_passes} with KKT gap {gap:.2e}; returning best iterate",
                      RuntimeWarning, stacklevel=2)
    diag = FitDiagnostics(
        objective=obj,
        passes=int(iters // max(keep.size, 1)),
        n_support=int(sv.sum()),
        chosen_lambda=lam,
        chosen_sigma=sigma,
        converged=bool(converged),
        kkt_gap=float(gap),
        dual_objective=2.0 * lam * float(dual),
        equality_residual=float(abs(alpha @ y)),
        dual_history=2.0 * lam * dual_h,
        primal_history=2.0 * lam * np.minimum.accumulate(primal_h),
        alpha=alpha,
        box=C,
    )
    return f, diag


# -- cross-validation ---------------------------------------------------------

def median_pairwise_distance(X) -> float:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] > 600:
        X = X[np.random.default_rng(0).choice(X.shape[0], 600, replace=False)]
    D = squared_distances(X, X)
    iu = np.triu_indices(X.shape[0], 1)
    med = float(np.sqrt(np.median(D[iu]))) if iu[0].size else 1.0
    return med if med > 0 else 1.0


def sigma_values(cfg: SolverConfig, covariates) -> tuple[float, ...]:
    if not cfg.sigma_relative:
        return cfg.sigma_grid
    scale = 1.0 / median_pairwise_distance(covariates)
    return tuple(s * scale for s in cfg.sigma_grid)


def make_folds(n: int, k: int, seed: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    if n < k:
        raise ValueError(f"need at least {k} records for {k}-fold cross-validation")
    perm = np.random.default_rng(seed).permutation(n)
    parts = np.array_split(perm, k)
    folds = []
    for i in range(k):
        test = np.sort(parts[i])
        train = np.sort(np.concatenate([parts[j] for j in range(k) if j != i]))
        folds.append((train, test))
    return folds


class GramCache:
    """Kernel matrices of one covariate matrix, keyed by kernel."""

    def __init__(self, X):
        self.X = np.atleast_2d(np.asarray(X, dtype=float))
        self._d2 = None
        self._cache: dict = {}

    def get(self, kernel: KernelSpec) -> np.ndarray:
        key = (kernel.kind, kernel.sigma)
        if key not in self._cache:
            if kernel.kind is KernelKind.LINEAR:
                self._cache[key] = self.X @ self.X.T
            else:
                if self._d2 is None:
                    self._d2 = squared_distances(self.X, self.X)
                self._cache[key] = np.exp(-(kernel.sigma ** 2) * self._d2)
        return self._cache[key]


EvalHook = Callable[[int, np.ndarray, np.ndarray, DecisionFunction], "float | None"]


def default_eval_hook(labels: WeightedLabels, covariates, h: float) -> EvalHook:
    """Held-out soft survival estimate from the supplied pseudo-outcomes."""
    from .evaluation import soft_survival

    Xs = np.atleast_2d(np.asarray(covariates, dtype=float))

    def hook(k, train, test, f):
        return soft_survival(labels.psi1[test], labels.psi0[test], f(Xs[test]), h)

    return hook


def cross_validate(labels: WeightedLabels, covariates, kernel_kind: KernelKind | str,
                   cfg: SolverConfig | None = None, eval_hook: EvalHook | None = None, *,
                   folds=None, train_labels: Callable[[int], WeightedLabels] | None = None,
                   gram_cache: GramCache | None = None, sigmas: Sequence[float] | None = None,
                   h: float | None = None, seed: int = 0) -> tuple[float, float | None]:
    """Pick ``(lambda, sigma)`` maximising the mean held-out score.

    ``train_labels(k)`` returns the training-fold labels for fold ``k``
    (default: the corresponding slice of ``labels``).  A fold whose training
    labels carry no positive weight is skipped.  Ties go to the larger
    lambda, then the smaller sigma.
    """
    cfg = cfg or SolverConfig()
    kind = KernelKind(kernel_kind)
    Xs = np.atleast_2d(np.asarray(covariates, dtype=float))
    n = Xs.shape[0]
    lambdas = cfg.lambda_grid
    if kind is KernelKind.GAUSSIAN:
        sig = tuple(sigmas) if sigmas is not None else sigma_values(cfg, Xs)
    else:
        sig = (None,)
    if len(lambdas) == 1 and len(sig) == 1:
        return lambdas[0], sig[0]
    if folds is None:
        folds = make_folds(n, cfg.cv_folds, seed)
    if eval_hook is None:
        eval_hook = default_eval_hook(labels, Xs, h if h is not None else 0.2 / np.log(max(n, 3)))
    gram_cache = gram_cache or GramCache(Xs)

    scores = {(lam, s): [] for lam in lambdas for s in sig}
    for k, (train, test) in enumerate(folds):
        tl = train_labels(k) if train_labels is not None else labels.subset(train)
        if not np.any(tl.weight > 0):
            continue
        for s in sig:
            kern = KernelSpec(kind, s)
            full = gram_cache.get(kern)
            gram = full[np.ix_(train, train)]
            for lam in lambdas:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", RuntimeWarning)
                    f, _ = solve_weighted_hinge(tl, Xs[train], kern, lam, cfg, gram=gram)
                score = eval_hook(k, train, test, f)
                if score is not None:
                    scores[(lam, s)].append(score)
    means = {key: float(np.mean(v)) for key, v in scores.items() if v}
    if not means:
        raise EstimatorError("every cross-validation fold was skipped (no positive weights)")
    best = max(means, key=lambda key: (means[key], key[0], -(key[1] or 0.0)))
    return best
