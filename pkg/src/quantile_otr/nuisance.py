"""Parametric nuisance models: propensity score and conditional survival.

Propensity: ``pi(1|x) = expit(alpha0 + x'alpha)``.

Conditional survival ``g(q; x, a) = P(Y > q | X=x, A=a)`` under either

* a heteroscedastic Gaussian model with mean ``theta0 + B theta`` and
  variance ``exp(xi0 - B xi)``, ``B = (x', a, x'a)``; or
* a negative binomial model counting failures before ``r0 + r a``
  successes with success probability ``expit(theta0 + B theta)``.

All fitters are maximum likelihood with monotone-ascent safeguards
(step halving); each records its per-iteration log-likelihood in
``history`` so the ascent can be audited.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import digamma, expit, gammaln, polygamma
from scipy.stats import nbinom, norm

from .core import Dataset
from .errors import ConvergenceError, DataError, EstimatorError, SeparationError

PROPENSITY_PARAM_CAP = 30.0


def interaction_design(X, A) -> np.ndarray:
    """Columns ``(1, X, A, X*A)``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    A = np.asarray(A, dtype=float).reshape(-1)
    if A.shape[0] == 1 and X.shape[0] > 1:
        A = np.full(X.shape[0], A[0])
    return np.column_stack([np.ones(X.shape[0]), X, A, X * A[:, None]])


def _mean_design(basis: str, X, A) -> np.ndarray:
    if basis == "interaction":
        return interaction_design(X, A)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    A = np.broadcast_to(np.asarray(A, dtype=float).reshape(-1), (X.shape[0],))
    if basis == "arm":
        return np.column_stack([np.ones(X.shape[0]), A])
    if basis == "intercept":
        return np.ones((X.shape[0], 1))
    raise ValueError(f"unknown design basis {basis!r}")


# -- propensity --------------------------------------------------------------

@dataclass(frozen=True)
class PropensityModel:
    alpha0: float
    alpha: np.ndarray
    history: tuple = field(default=(), compare=False, repr=False)

    def prob1(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return expit(self.alpha0 + X @ np.asarray(self.alpha))

    def prob(self, a, X) -> np.ndarray:
        p1 = self.prob1(X)
        a = np.asarray(a)
        return np.where(a == 1, p1, 1.0 - p1)

    def to_dict(self):
        return {"kind": "logistic", "alpha0": float(self.alpha0), "alpha": np.asarray(self.alpha).tolist()}

    @classmethod
    def from_dict(cls, doc):
        return cls(doc["alpha0"], np.asarray(doc["alpha"], dtype=float))


def _logistic_loglik(Z, A, beta):
    eta = Z @ beta
    return float(np.sum(A * eta - np.logaddexp(0.0, eta)))


def fit_propensity(data: Dataset, intercept_only: bool = False, max_iter: int = 100,
                   tol: float = 1e-8) -> PropensityModel:
    """Newton-Raphson logistic regression of A on X.

    Stops when the largest score component is below ``tol`` or after
    ``max_iter`` iterations.  Raises :class:`SeparationError` if the
    coefficient norm exceeds 30 on the way.
    """
    n, d = data.n, data.d
    A = data.A.astype(float)
    if A.min() == A.max():
        raise DataError("both treatment arms must be present")
    Z = np.ones((n, 1)) if intercept_only else np.column_stack([np.ones(n), data.X])
    if n <= Z.shape[1]:
        raise DataError(f"need n > d + 1 observations, got n={n}")
    beta = np.zeros(Z.shape[1])
    ll = _logistic_loglik(Z, A, beta)
    history = [ll]
    for _ in range(max_iter):
        p = expit(Z @ beta)
        score = Z.T @ (A - p)
        if np.max(np.abs(score)) < tol:
            break
        H = (Z * (p * (1.0 - p))[:, None]).T @ Z
        try:
            step = np.linalg.solve(H, score)
        except np.linalg.LinAlgError:
            raise SeparationError("singular information matrix; data appear separated") from None
        t = 1.0
        while True:
            cand = beta + t * step
            ll_c = _logistic_loglik(Z, A, cand)
            if ll_c >= ll or t < 1e-10:
                break
            t *= 0.5
        if ll_c < ll:
            break
        beta, ll = cand, ll_c
        history.append(ll)
        if np.linalg.norm(beta) > PROPENSITY_PARAM_CAP:
            raise SeparationError(
                f"logistic coefficients diverging (norm {np.linalg.norm(beta):.1f} > "
                f"{PROPENSITY_PARAM_CAP:g}): complete separation of treatment by covariates"
            )
    alpha = np.zeros(d) if intercept_only else beta[1:]
    return PropensityModel(float(beta[0]), alpha, tuple(history))


# -- Gaussian conditional survival ---------------------------------------------

@dataclass(frozen=True)
class GaussianSurvivalModel:
    """Mean ``M theta_full``; variance ``exp(xi0 - V xi)``.

    ``theta0``/``xi0`` are intercepts; ``theta``/``xi`` act on the non-constant
    columns of the chosen bases (``(X, A, XA)`` for the full model).
    """

    theta0: float
    theta: np.ndarray
    xi0: float
    xi: np.ndarray
    mean_basis: str = "interaction"
    variance_basis: str = "interaction"
    history: tuple = field(default=(), compare=False, repr=False)

    def mean(self, X, a) -> np.ndarray:
        M = _mean_design(self.mean_basis, X, a)
        return M @ np.concatenate([[self.theta0], self.theta])

    def sd(self, X, a) -> np.ndarray:
        V = _mean_design(self.variance_basis, X, a)[:, 1:]
        return np.exp(0.5 * (self.xi0 - V @ self.xi))

    def survival(self, q, X, a) -> np.ndarray:
        return norm.sf((np.asarray(q, dtype=float) - self.mean(X, a)) / self.sd(X, a))

    def to_dict(self):
        return {
            "kind": "gaussian",
            "theta0": self.theta0, "theta": np.asarray(self.theta).tolist(),
            "xi0": self.xi0, "xi": np.asarray(self.xi).tolist(),
            "mean_basis": self.mean_basis, "variance_basis": self.variance_basis,
        }

    @classmethod
    def from_dict(cls, doc):
        return cls(doc["theta0"], np.asarray(doc["theta"], float), doc["xi0"],
                   np.asarray(doc["xi"], float), doc.get("mean_basis", "interaction"),
                   doc.get("variance_basis", "interaction"))


def _gauss_loglik(y, mu, eta):
    r = y - mu
    return float(-0.5 * np.sum(np.log(2 * np.pi) + eta + r * r * np.exp(-eta)))


def fit_gaussian_survival(data: Dataset, mean_basis: str = "interaction",
                          variance_basis: str = "interaction", max_iter: int = 500,
                          tol: float = 1e-8) -> GaussianSurvivalModel:
    """Joint MLE of the heteroscedastic Gaussian model.

    Alternates an exact weighted-least-squares update of the mean with
    damped Newton steps on the log-variance regression.  Converged when the
    per-observation log-likelihood improves by less than ``tol``.
    """
    if data.is_discrete:
        raise DataError("Gaussian survival model needs a continuous outcome")
    n, d = data.n, data.d
    if n <= 2 * (2 * d + 1) + 2:
        raise DataError(f"need n > 2(2d+1)+2 = {2 * (2 * d + 1) + 2} observations, got {n}")
    y = data.Y
    M = _mean_design(mean_basis, data.X, data.A)
    D = _mean_design(variance_basis, data.X, data.A)
    theta, *_ = np.linalg.lstsq(M, y, rcond=None)
    r2 = (y - M @ theta) ** 2
    s2 = r2.mean()
    if not s2 > 1e-12 * max(1.0, np.mean(y * y)):
        raise EstimatorError("degenerate zero residual variance; Gaussian model undefined")
    gamma = np.zeros(D.shape[1])
    gamma[0] = np.log(s2)
    eta = D @ gamma
    ll = _gauss_loglik(y, M @ theta, eta)
    history = [ll]
    converged = False
    for _ in range(max_iter):
        ll_start = ll
        # mean: exact maximiser for the current variances
        w = np.exp(-eta)
        sw = np.sqrt(w)
        theta_new, *_ = np.linalg.lstsq(M * sw[:, None], y * sw, rcond=None)
        ll_new = _gauss_loglik(y, M @ theta_new, eta)
        if ll_new >= ll:
            theta, ll = theta_new, ll_new
        r2 = (y - M @ theta) ** 2
        # log-variance: Newton on a concave objective
        for _inner in range(3):
            u = r2 * np.exp(-eta)
            grad = 0.5 * D.T @ (u - 1.0)
            H = 0.5 * (D * u[:, None]).T @ D
            try:
                step = np.linalg.solve(H + 1e-12 * np.eye(H.shape[0]), grad)
            except np.linalg.LinAlgError:
                raise EstimatorError("singular log-variance information; degenerate variance") from None
            t = 1.0
            while t > 1e-10:
                cand = gamma + t * step
                ll_c = _gauss_loglik(y, M @ theta, D @ cand)
                if np.isfinite(ll_c) and ll_c >= ll:
                    gamma, ll = cand, ll_c
                    break
                t *= 0.5
            eta = D @ gamma
        history.append(ll)
        if not np.all(np.isfinite(eta)) or np.min(eta) < -700:
            raise EstimatorError("conditional variance collapsed to zero")
        if (ll - ll_start) / n < tol:
            converged = True
            break
    model = GaussianSurvivalModel(float(theta[0]), theta[1:], float(gamma[0]), -gamma[1:],
                                  mean_basis, variance_basis, tuple(history))
    if not converged:
        raise ConvergenceError(f"Gaussian MLE did not converge in {max_iter} iterations", last=model)
    return model


# -- negative binomial conditional survival ------------------------------------

@dataclass(frozen=True)
class NegBinSurvivalModel:
    """``Y | X, A ~ NB(size = size0 + size_delta*A, prob = expit(theta0 + B theta))``.

    ``Y`` counts failures before the ``size``-th success, so
    ``P(Y = 0) = prob**size``.
    """

    theta0: float
    theta: np.ndarray
    size0: float
    size_delta: float
    history: tuple = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        if not (self.size0 > 0 and self.size0 + self.size_delta > 0):
            raise ValueError("negative binomial sizes must be positive")

    def prob(self, X, a) -> np.ndarray:
        return expit(interaction_design(X, a) @ np.concatenate([[self.theta0], self.theta]))

    def size(self, a) -> np.ndarray:
        return self.size0 + self.size_delta * np.asarray(a, dtype=float)

    def survival(self, q, X, a) -> np.ndarray:
        k = np.floor(np.asarray(q, dtype=float))
        p = self.prob(X, a)
        r = np.broadcast_to(self.size(a), p.shape)
        return np.where(k < 0, 1.0, nbinom.sf(k, r, p))

    def to_dict(self):
        return {"kind": "negbin", "theta0": self.theta0, "theta": np.asarray(self.theta).tolist(),
                "size0": self.size0, "size_delta": self.size_delta}

    @classmethod
    def from_dict(cls, doc):
        return cls(doc["theta0"], np.asarray(doc["theta"], float), doc["size0"], doc["size_delta"])


def _nb_loglik(y, eta, r):
    return float(np.sum(gammaln(y + r) - gammaln(r) - gammaln(y + 1.0)
                        - r * np.logaddexp(0.0, -eta) - y * np.logaddexp(0.0, eta)))


def fit_negbin_survival(data: Dataset, max_iter: int = 500, tol: float = 1e-10) -> NegBinSurvivalModel:
    """Joint Newton MLE of the regression and per-arm sizes.

    Sizes are parametrised on the log scale and treated as positive reals.
    """
    y = data.Y
    if np.any(y < 0):
        raise DataError("negative binomial model requires nonnegative outcomes")
    if not np.all(y == np.round(y)):
        raise DataError("negative binomial model requires integer outcomes")
    if np.all(y == 0):
        raise DataError("all outcomes are zero; size and probability are not identified")
    arm = data.A.astype(bool)
    if arm.all() or (~arm).all():
        raise DataError("both treatment arms must be present")
    n = data.n
    B = interaction_design(data.X, data.A)
    k = B.shape[1]

    # moment-based start
    beta = np.zeros(k)
    rho = np.zeros(2)
    for a, mask in ((0, ~arm), (1, arm)):
        m, v = y[mask].mean(), y[mask].var()
        r = m * m / (v - m) if v > m * 1.01 else 10.0
        r = float(np.clip(r, 0.05, 1e3))
        rho[a] = np.log(r)
        p = r / (r + max(m, 1e-3))
        if a == 0:
            beta[0] = np.log(p / (1 - p))
        else:
            beta[1 + data.d] = np.log(p / (1 - p)) - beta[0]

    def unpack(params):
        b, lr = params[:k], params[k:]
        return B @ b, np.where(arm, np.exp(lr[1]), np.exp(lr[0]))

    params = np.concatenate([beta, rho])
    eta, r = unpack(params)
    ll = _nb_loglik(y, eta, r)
    history = [ll]
    converged = False
    for _ in range(max_iter):
        p = expit(eta)
        g_eta = r * (1.0 - p) - y * p
        g_r = digamma(y + r) - digamma(r) + np.log(p)
        h_ee = -(r + y) * p * (1.0 - p)
        h_er = (1.0 - p) * r
        h_rr = r * r * (polygamma(1, y + r) - polygamma(1, r)) + r * g_r
        g_rho = r * g_r
        grad = np.zeros(k + 2)
        grad[:k] = B.T @ g_eta
        H = np.zeros((k + 2, k + 2))
        H[:k, :k] = (B * h_ee[:, None]).T @ B
        for a, mask in ((0, ~arm), (1, arm)):
            grad[k + a] = g_rho[mask].sum()
            H[:k, k + a] = H[k + a, :k] = B[mask].T @ h_er[mask]
            H[k + a, k + a] = h_rr[mask].sum()
        negH = -H
        mu = 0.0
        while True:
            try:
                np.linalg.cholesky(negH + mu * np.eye(k + 2))
                break
            except np.linalg.LinAlgError:
                mu = max(2 * mu, 1e-8 * max(1.0, np.abs(np.diag(negH)).max()))
        step = np.linalg.solve(negH + mu * np.eye(k + 2), grad)
        t = 1.0
        improved = False
        while t > 1e-12:
            cand = params + t * step
            if np.all(np.abs(cand[k:]) < 30):
                eta_c, r_c = unpack(cand)
                ll_c = _nb_loglik(y, eta_c, r_c)
                if np.isfinite(ll_c) and ll_c >= ll:
                    improved = True
                    break
            t *= 0.5
        if not improved:
            converged = np.max(np.abs(grad)) / n < 1e-6
            break
        gain = ll_c - ll
        params, eta, r, ll = cand, eta_c, r_c, ll_c
        history.append(ll)
        if gain / n < tol and np.max(np.abs(grad)) / n < 1e-6:
            converged = True
            break
    size0, size1 = float(np.exp(params[k])), float(np.exp(params[k + 1]))
    model = NegBinSurvivalModel(float(params[0]), params[1:k], size0, size1 - size0, tuple(history))
    if not converged:
        raise ConvergenceError(f"negative binomial MLE did not converge in {max_iter} iterations", last=model)
    return model


# -- bundle -------------------------------------------------------------------

@dataclass(frozen=True)
class NuisanceModels:
    propensity: PropensityModel
    survival: GaussianSurvivalModel | NegBinSurvivalModel
    clip_epsilon: float = 0.01

    def __post_init__(self):
        if not 0.0 < self.clip_epsilon < 0.5:
            raise ValueError("clip_epsilon must lie in (0, 0.5)")

    def propensity_prob(self, a, X) -> np.ndarray:
        """Clipped ``pi(a | x)``."""
        p1 = np.clip(self.propensity.prob1(X), self.clip_epsilon, 1.0 - self.clip_epsilon)
        return np.where(np.asarray(a) == 1, p1, 1.0 - p1)

    def survival_prob(self, q, X, a) -> np.ndarray:
        return self.survival.survival(q, X, a)

    def to_dict(self):
        return {"propensity": self.propensity.to_dict(), "survival": self.survival.to_dict(),
                "clip_epsilon": self.clip_epsilon}

    @classmethod
    def from_dict(cls, doc):
        s = doc["survival"]
        surv = GaussianSurvivalModel.from_dict(s) if s["kind"] == "gaussian" else NegBinSurvivalModel.from_dict(s)
        return cls(PropensityModel.from_dict(doc["propensity"]), surv, doc.get("clip_epsilon", 0.01))


def survival_eval(m: NuisanceModels, q, x, a) -> float | np.ndarray:
    out = m.survival_prob(q, x, a)
    return float(out[0]) if np.ndim(x) == 1 else out


def fit_nuisances(data: Dataset, propensity: str = "logistic", survival: str = "auto",
                  clip_epsilon: float = 0.01) -> NuisanceModels:
    """Fit both nuisance models.

    ``propensity``: ``"logistic"`` or ``"intercept"`` (covariate-free).
    ``survival``: ``"auto"`` (Gaussian or negative binomial by outcome kind),
    ``"gaussian"``, ``"negbin"``, or ``"misspecified"`` (arm-only mean,
    constant variance Gaussian).
    """
    if propensity not in ("logistic", "intercept"):
        raise ValueError(f"unknown propensity model {propensity!r}")
    prop = fit_propensity(data, intercept_only=(propensity == "intercept"))
    if survival == "auto":
        survival = "negbin" if data.is_discrete else "gaussian"
    if survival == "gaussian":
        surv = fit_gaussian_survival(data)
    elif survival == "negbin":
        surv = fit_negbin_survival(data)
    elif survival == "misspecified":
        surv = fit_gaussian_survival(data, mean_basis="arm", variance_basis="intercept")
    else:
        raise ValueError(f"unknown survival model {survival!r}")
    return NuisanceModels(prop, surv, clip_epsilon)
