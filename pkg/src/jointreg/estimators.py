"""
OLS, probit, bivariate probit and two-stage SUR estimators.

All fitters take plain arrays (``X`` is ``n x k``, ``y`` length ``n``) and
return small result objects. Nothing here reads files or prints.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy import linalg, special

from .datamodel import DataError
from .numerics import (
    PROB_FLOOR,
    OptimizerConfig,
    bvn_logcdf,
    maximize,
    numeric_hessian,
)

__all__ = [
    "OlsFit",
    "ProbitFit",
    "BivariateProbitFit",
    "SureFit",
    "fit_ols",
    "fit_probit",
    "probit_loglik",
    "probit_score",
    "probit_hessian",
    "predict_probit",
    "fit_biprobit",
    "biprobit_loglik",
    "biprobit_score",
    "biprobit_obs_loglik",
    "fit_sure",
]

# |rho| beyond this is reported as a boundary solution
RHO_BOUNDARY = 0.99
_LOG_FLOOR = math.log(PROB_FLOOR)


def _as_design(X, y=None):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise ValueError("X must be a 2-d array")
    if y is None:
        return X
    y = np.asarray(y, dtype=float).ravel()
    if y.shape[0] != X.shape[0]:
        raise ValueError(f"X has {X.shape[0]} rows but y has {y.shape[0]} entries")
    return X, y


def _check_rank(X, label="X"):
    n, k = X.shape
    if n <= k:
        raise DataError(f"{label}: need more observations ({n}) than regressors ({k})")
    if np.linalg.matrix_rank(X) < k:
        raise DataError(f"{label}: design matrix is rank deficient")


def _check_binary(y, label="y"):
    if not np.all((y == 0.0) | (y == 1.0)):
        raise DataError(f"{label} must be 0/1")
    m = y.mean()
    if m == 0.0 or m == 1.0:
        raise DataError(f"{label} has a single class; probit is not identified")


# ---------------------------------------------------------------------------
# OLS


@dataclass
class OlsFit:
    beta: np.ndarray
    residuals: np.ndarray
    rss: float
    sigma2: float
    cov_beta: np.ndarray
    n: int
    k: int


def fit_ols(X, y) -> OlsFit:
    """
    Least squares via a pivoted QR factorisation.

    ``sigma2`` is ``rss / (n - k)`` and ``cov_beta = sigma2 * inv(X'X)``,
    the latter assembled from the triangular factor.
    """
    X, y = _as_design(X, y)
    _check_rank(X)
    n, k = X.shape
    Q, R, piv = linalg.qr(X, mode="economic", pivoting=True)
    coef = linalg.solve_triangular(R, Q.T @ y)
    beta = np.empty(k)
    beta[piv] = coef
    resid = y - X @ beta
    rss = float(resid @ resid)
    sigma2 = rss / (n - k)
    Rinv = linalg.solve_triangular(R, np.eye(k))
    cov_p = Rinv @ Rinv.T
    cov = np.empty((k, k))
    cov[np.ix_(piv, piv)] = cov_p
    return OlsFit(beta, resid, rss, sigma2, sigma2 * cov, n, k)


# ---------------------------------------------------------------------------
# probit


@dataclass
class ProbitFit:
    beta: np.ndarray
    loglik: float
    cov_beta: np.ndarray
    aic: float
    converged: bool
    n: int
    k: int
    iterations: int = 0
    message: str = ""
    names: Optional[List[str]] = None

    @property
    def se(self):
        return np.sqrt(np.diag(self.cov_beta))


def _probit_terms(beta, X, y):
    q = 2.0 * y - 1.0
    z = q * (X @ beta)
    return q, z


def probit_loglik(beta, X, y) -> float:
    """Sum of ``y ln Phi(xb) + (1 - y) ln Phi(-xb)``."""
    _, z = _probit_terms(np.asarray(beta, dtype=float), X, y)
    return float(np.sum(np.maximum(special.log_ndtr(z), _LOG_FLOOR)))


def _probit_lambda(z):
    # phi(z)/Phi(z), finite for very negative z
    return math.sqrt(2.0 / math.pi) / special.erfcx(-z / math.sqrt(2.0))


def probit_score(beta, X, y) -> np.ndarray:
    q, z = _probit_terms(np.asarray(beta, dtype=float), X, y)
    lam = np.where(special.log_ndtr(z) > _LOG_FLOOR, _probit_lambda(z), 0.0)
    return X.T @ (q * lam)


def probit_hessian(beta, X, y) -> np.ndarray:
    q, z = _probit_terms(np.asarray(beta, dtype=float), X, y)
    lam = _probit_lambda(z)
    w = np.where(special.log_ndtr(z) > _LOG_FLOOR, lam * (lam + z), 0.0)
    return -(X * w[:, None]).T @ X


def _probit_start(X, y):
    # scaled linear-probability start; keeps the first line search short
    ols = np.linalg.lstsq(X, y - y.mean(), rcond=None)[0] * 2.5
    if np.all(X[:, -1] == 1.0):
        ols[-1] += special.ndtri(np.clip(y.mean(), 1e-6, 1 - 1e-6))
    return ols


def fit_probit(X, y, config: Optional[OptimizerConfig] = None, start=None, names=None) -> ProbitFit:
    """
    Maximum-likelihood probit with analytic gradient.

    BFGS does the search; the observed information at the optimum supplies
    ``cov_beta``. Complete separation is reported as ``converged=False``
    rather than an error, since the likelihood then has no finite maximiser.
    """
    X, y = _as_design(X, y)
    _check_binary(y)
    _check_rank(X)
    n, k = X.shape
    cfg = config or OptimizerConfig()
    b0 = np.zeros(k) if start is None else np.asarray(start, dtype=float)
    if start is None and np.allclose(X[:, -1], 1.0):
        b0 = _probit_start(X, y)
        if not math.isfinite(probit_loglik(b0, X, y)):
            b0 = np.zeros(k)

    H0 = probit_hessian(b0, X, y)
    try:
        inv0 = np.linalg.inv(-H0)
        np.linalg.cholesky(inv0)
    except np.linalg.LinAlgError:
        inv0 = None

    res = maximize(
        lambda b: probit_loglik(b, X, y),
        b0,
        cfg,
        gradient=lambda b: probit_score(b, X, y),
        inverse_hessian=inv0,
    )
    beta = res.argmax
    converged = res.converged
    message = res.message

    p = special.ndtr(X @ beta)
    if np.all(np.abs(p - y) < 1e-6):
        converged = False
        message = "perfect separation: predicted probabilities reproduce y; coefficients diverge"

    H = probit_hessian(beta, X, y)
    try:
        cov = np.linalg.inv(-H)
    except np.linalg.LinAlgError:
        cov = np.full((k, k), np.nan)
        converged = False
        message = "singular information matrix at the optimum"
    cov = 0.5 * (cov + cov.T)
    ll = probit_loglik(beta, X, y)
    return ProbitFit(
        beta=beta,
        loglik=ll,
        cov_beta=cov,
        aic=2.0 * k - 2.0 * ll,
        converged=bool(converged),
        n=n,
        k=k,
        iterations=res.iterations,
        message=message,
        names=list(names) if names is not None else None,
    )


def predict_probit(fit: ProbitFit, X) -> np.ndarray:
    """Fitted probabilities ``Phi(X beta)``."""
    X = _as_design(X)
    if X.shape[1] != fit.beta.shape[0]:
        raise ValueError(f"X has {X.shape[1]} columns, fit has {fit.beta.shape[0]} coefficients")
    return special.ndtr(X @ fit.beta)


# ---------------------------------------------------------------------------
# bivariate probit


@dataclass
class BivariateProbitFit:
    beta1: np.ndarray
    beta2: np.ndarray
    athrho: float
    rho: float
    loglik: float
    cov_params: np.ndarray
    aic: float
    converged: bool
    n: int
    k1: int
    k2: int
    iterations: int = 0
    message: str = ""
    boundary: bool = False
    athrho_fixed: bool = False
    names1: Optional[List[str]] = None
    names2: Optional[List[str]] = None

    @property
    def params(self):
        return np.concatenate([self.beta1, self.beta2, [self.athrho]])

    @property
    def se(self):
        return np.sqrt(np.diag(self.cov_params))

    @property
    def se_athrho(self) -> float:
        if self.athrho_fixed:
            return 0.0
        return float(math.sqrt(self.cov_params[-1, -1]))

    @property
    def se_rho(self) -> float:
        """Delta-method standard error, ``(1 - rho^2) * se(athrho)``."""
        return (1.0 - self.rho ** 2) * self.se_athrho


def _split(params, k1, k2):
    params = np.asarray(params, dtype=float)
    if params.shape != (k1 + k2 + 1,):
        raise ValueError(f"expected {k1 + k2 + 1} parameters, got {params.shape}")
    return params[:k1], params[k1:k1 + k2], float(params[-1])


def _biprobit_parts(params, X1, y1, X2, y2):
    k1, k2 = X1.shape[1], X2.shape[1]
    b1, b2, ath = _split(params, k1, k2)
    rho = math.tanh(ath)
    if abs(rho) >= 1.0:
        raise FloatingPointError("athrho too large: |tanh(athrho)| rounds to 1")
    q1 = 2.0 * y1 - 1.0
    q2 = 2.0 * y2 - 1.0
    w1 = q1 * (X1 @ b1)
    w2 = q2 * (X2 @ b2)
    r = q1 * q2 * rho
    return b1, b2, ath, rho, q1, q2, w1, w2, r


def biprobit_obs_loglik(params, X1, y1, X2, y2) -> np.ndarray:
    """
    Per-observation log-likelihood.

    Each row contributes exactly one of the four quadrant probabilities::

        (1,1): Phi2( x1b1,  x2b2,  rho)
        (0,1): Phi2(-x1b1,  x2b2, -rho)
        (1,0): Phi2( x1b1, -x2b2, -rho)
        (0,0): Phi2(-x1b1, -x2b2,  rho)

    written compactly with ``q = 2y - 1`` as ``Phi2(q1 x1b1, q2 x2b2, q1 q2 rho)``.
    """
    X1, y1 = _as_design(X1, y1)
    X2, y2 = _as_design(X2, y2)
    *_, w1, w2, r = _biprobit_parts(params, X1, y1, X2, y2)
    return np.maximum(bvn_logcdf(w1, w2, r), _LOG_FLOOR)


def biprobit_loglik(params, X1, y1, X2, y2) -> float:
    """Joint log-likelihood at ``params = [beta1, beta2, athrho]``."""
    return float(np.sum(biprobit_obs_loglik(params, X1, y1, X2, y2)))


def biprobit_score(params, X1, y1, X2, y2) -> np.ndarray:
    """Analytic gradient of :func:`biprobit_loglik`."""
    X1, y1 = _as_design(X1, y1)
    X2, y2 = _as_design(X2, y2)
    b1, b2, ath, rho, q1, q2, w1, w2, r = _biprobit_parts(params, X1, y1, X2, y2)
    logp = bvn_logcdf(w1, w2, r)
    live = logp > _LOG_FLOOR  # floored terms are constant
    s = np.sqrt(1.0 - r * r)
    # dPhi2/dw1 = phi(w1) Phi((w2 - r w1)/s), symmetric in the other argument;
    # ratios to Phi2 are formed on the log scale so tails stay finite
    log_phi = -0.5 * np.log(2.0 * math.pi)
    r1 = np.exp(log_phi - 0.5 * w1 * w1 + special.log_ndtr((w2 - r * w1) / s) - logp)
    r2 = np.exp(log_phi - 0.5 * w2 * w2 + special.log_ndtr((w1 - r * w2) / s) - logp)
    quad = (w1 * w1 - 2.0 * r * w1 * w2 + w2 * w2) / (s * s)
    rr = np.exp(-0.5 * quad - np.log(2.0 * math.pi * s) - logp)
    r1, r2, rr = (np.where(live, v, 0.0) for v in (r1, r2, rr))
    g1 = X1.T @ (q1 * r1)
    g2 = X2.T @ (q2 * r2)
    ga = np.sum(q1 * q2 * rr) * (1.0 - rho * rho)
    return np.concatenate([g1, g2, [ga]])


def fit_biprobit(
    X1,
    y1,
    X2,
    y2,
    config: Optional[OptimizerConfig] = None,
    fix_athrho: Optional[float] = None,
    start=None,
    names1=None,
    names2=None,
) -> BivariateProbitFit:
    """
    Joint maximum likelihood for two probit equations with correlated errors.

    The correlation is searched on the ``athrho = atanh(rho)`` scale. The
    search starts from the two univariate probit fits with ``athrho = 0``.

    Parameters
    ----------
    fix_athrho : float, optional
        Hold ``athrho`` at this value and maximise over the coefficients
        only. With 0 the problem separates into the two univariate probits.
    """
    X1, y1 = _as_design(X1, y1)
    X2, y2 = _as_design(X2, y2)
    if X1.shape[0] != X2.shape[0]:
        raise DataError("both equations need the same observations")
    _check_binary(y1, "y1")
    _check_binary(y2, "y2")
    _check_rank(X1, "X1")
    _check_rank(X2, "X2")
    n, k1 = X1.shape
    k2 = X2.shape[1]
    cfg = config or OptimizerConfig()

    if start is None:
        p1 = fit_probit(X1, y1, cfg)
        p2 = fit_probit(X2, y2, cfg)
        a0 = 0.0 if fix_athrho is None else float(fix_athrho)
        theta0 = np.concatenate([p1.beta, p2.beta, [a0]])
        inv0 = linalg.block_diag(p1.cov_beta, p2.cov_beta, [[1.0 / n]])
        if not (np.all(np.isfinite(inv0)) and p1.converged and p2.converged):
            inv0 = None
    else:
        theta0 = np.asarray(start, dtype=float).ravel().copy()
        if theta0.size != k1 + k2 + 1:
            raise ValueError(f"start needs {k1 + k2 + 1} values (beta1, beta2, athrho), got {theta0.size}")
        if fix_athrho is not None:
            theta0[-1] = float(fix_athrho)
        inv0 = None

    def ll(t):
        return biprobit_loglik(t, X1, y1, X2, y2)

    def sc(t):
        return biprobit_score(t, X1, y1, X2, y2)

    if fix_athrho is None:
        res = maximize(ll, theta0, cfg, gradient=sc, inverse_hessian=inv0)
        theta = res.argmax
    else:
        a_fix = float(fix_athrho)

        def full(b):
            return np.concatenate([b, [a_fix]])

        res = maximize(
            lambda b: ll(full(b)),
            theta0[:-1],
            cfg,
            gradient=lambda b: sc(full(b))[:-1],
            inverse_hessian=None if inv0 is None else inv0[:-1, :-1],
        )
        theta = full(res.argmax)

    converged = res.converged
    message = res.message
    m = k1 + k2 + (1 if fix_athrho is None else 0)
    cov = np.zeros((k1 + k2 + 1, k1 + k2 + 1))
    try:
        H = numeric_hessian(sc, theta)[:m, :m]
        cov[:m, :m] = np.linalg.inv(-H)
    except (np.linalg.LinAlgError, FloatingPointError):
        cov[:m, :m] = np.nan
        converged = False
        message = "information matrix singular or not computable at the returned point"
    cov = 0.5 * (cov + cov.T)
    if np.any(np.diag(cov)[:m] < 0):
        converged = False
        message = "information matrix not negative definite at the returned point"

    b1, b2, ath = _split(theta, k1, k2)
    rho = math.tanh(ath)
    boundary = abs(rho) > RHO_BOUNDARY
    if boundary:
        message = (message + "; " if message else "") + f"rho={rho:.4f} is at the boundary"
    loglik = ll(theta)
    return BivariateProbitFit(
        beta1=b1.copy(),
        beta2=b2.copy(),
        athrho=ath,
        rho=rho,
        loglik=loglik,
        cov_params=cov,
        aic=2.0 * m - 2.0 * loglik,
        converged=bool(converged),
        n=n,
        k1=k1,
        k2=k2,
        iterations=res.iterations,
        message=message,
        boundary=boundary,
        athrho_fixed=fix_athrho is not None,
        names1=list(names1) if names1 is not None else None,
        names2=list(names2) if names2 is not None else None,
    )


# ---------------------------------------------------------------------------
# seemingly unrelated regressions


@dataclass
class SureFit:
    beta1: np.ndarray
    beta2: np.ndarray
    sigma: np.ndarray
    resid_corr: float
    stage1_beta1: OlsFit
    stage1_beta2: OlsFit
    n: int
    cov_beta: np.ndarray = field(repr=False, default=None)
    residuals1: np.ndarray = field(repr=False, default=None)
    residuals2: np.ndarray = field(repr=False, default=None)
    dof_correction: bool = False
    names1: Optional[List[str]] = None
    names2: Optional[List[str]] = None

    @property
    def k1(self):
        return self.beta1.shape[0]

    @property
    def k2(self):
        return self.beta2.shape[0]

    @property
    def se(self):
        return np.sqrt(np.diag(self.cov_beta))

    @property
    def rss(self) -> float:
        """Sum of squared second-stage residuals over both equations."""
        return float(self.residuals1 @ self.residuals1 + self.residuals2 @ self.residuals2)


def fit_sure(
    X1,
    y1,
    X2,
    y2,
    dof_correction: bool = False,
    diagonal: bool = False,
    names1=None,
    names2=None,
) -> SureFit:
    """
    Two-stage feasible GLS for a pair of linear equations.

    Stage one fits each equation by OLS and estimates the residual
    covariance ``sigma_ij = e_i'e_j / N`` (``/ sqrt((N-k_i)(N-k_j))`` when
    ``dof_correction``). Stage two solves the stacked GLS normal equations
    with ``Omega = Sigma kron I_N`` using only ``k x k`` blocks.

    Parameters
    ----------
    diagonal : bool
        Zero the off-diagonal of the estimated covariance before stage two.
        The system then decouples and stage two returns the OLS estimates.
    """
    X1, y1 = _as_design(X1, y1)
    X2, y2 = _as_design(X2, y2)
    if X1.shape[0] != X2.shape[0]:
        raise DataError("both equations need the same observations")
    n = X1.shape[0]
    o1 = fit_ols(X1, y1)
    o2 = fit_ols(X2, y2)
    e1, e2 = o1.residuals, o2.residuals
    if dof_correction:
        d11, d22 = n - o1.k, n - o2.k
        d12 = math.sqrt(d11 * d22)
    else:
        d11 = d22 = d12 = n
    s11 = float(e1 @ e1) / d11
    s22 = float(e2 @ e2) / d22
    s12 = float(e1 @ e2) / d12
    sigma = np.array([[s11, s12], [s12, s22]])
    if s11 > 0 and s22 > 0:
        corr = float(np.clip(s12 / math.sqrt(s11 * s22), -1.0, 1.0))
    else:
        corr = 0.0
    if diagonal:
        sigma[0, 1] = sigma[1, 0] = 0.0

    det = sigma[0, 0] * sigma[1, 1] - sigma[0, 1] ** 2
    if not det > 1e-14 * max(sigma[0, 0] * sigma[1, 1], 1e-300):
        raise DataError("estimated residual covariance is singular (perfectly correlated residuals)")

    k1, k2 = o1.k, o2.k
    if sigma[0, 1] == 0.0:
        # block-diagonal weight: each block's GLS solution is its OLS solution
        b1, b2 = o1.beta.copy(), o2.beta.copy()
        cov = linalg.block_diag(
            o1.cov_beta / o1.sigma2 * sigma[0, 0] if o1.sigma2 > 0 else o1.cov_beta,
            o2.cov_beta / o2.sigma2 * sigma[1, 1] if o2.sigma2 > 0 else o2.cov_beta,
        )
    else:
        i11 = sigma[1, 1] / det
        i22 = sigma[0, 0] / det
        i12 = -sigma[0, 1] / det
        A = np.empty((k1 + k2, k1 + k2))
        A[:k1, :k1] = i11 * (X1.T @ X1)
        A[:k1, k1:] = i12 * (X1.T @ X2)
        A[k1:, :k1] = A[:k1, k1:].T
        A[k1:, k1:] = i22 * (X2.T @ X2)
        rhs = np.concatenate([
            X1.T @ (i11 * y1 + i12 * y2),
            X2.T @ (i12 * y1 + i22 * y2),
        ])
        cf = linalg.cho_factor(A)
        b = linalg.cho_solve(cf, rhs)
        cov = linalg.cho_solve(cf, np.eye(k1 + k2))
        b1, b2 = b[:k1], b[k1:]

    return SureFit(
        beta1=b1,
        beta2=b2,
        sigma=sigma,
        resid_corr=corr if not diagonal else 0.0,
        stage1_beta1=o1,
        stage1_beta2=o2,
        n=n,
        cov_beta=0.5 * (cov + cov.T),
        residuals1=y1 - X1 @ b1,
        residuals2=y2 - X2 @ b2,
        dof_correction=dof_correction,
        names1=list(names1) if names1 is not None else None,
        names2=list(names2) if names2 is not None else None,
    )
