"""
Standard errors, significance tests, AIC comparison and AUC.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Union

import numpy as np
from scipy import stats

from .estimators import BivariateProbitFit, ProbitFit, SureFit

__all__ = [
    "SIGNIFICANCE_LEVELS",
    "TestResult",
    "SpecTestResult",
    "std_errors",
    "significance",
    "marker",
    "t_test",
    "aic",
    "spec_test",
    "spec_test_sure",
    "breusch_pagan",
    "rho_std_error",
    "auc",
]

SIGNIFICANCE_LEVELS = (0.10, 0.05, 0.01)
_MARKERS = {0.10: "†", 0.05: "*", 0.01: "**"}


@dataclass
class TestResult:
    statistic: float
    p_value: float
    df: Union[int, str]
    significant_at: List[float] = field(default_factory=list)

    @property
    def marker(self) -> str:
        return marker(self.p_value)


@dataclass
class SpecTestResult:
    aic_joint: float
    aic_separate: float
    preferred: str
    loglik_difference: float


def std_errors(cov_params) -> np.ndarray:
    """Square roots of the diagonal of a covariance matrix."""
    cov = np.atleast_2d(np.asarray(cov_params, dtype=float))
    if cov.shape[0] != cov.shape[1]:
        raise ValueError("covariance matrix must be square")
    d = np.diag(cov)
    bad = np.flatnonzero(~(d >= 0))
    if bad.size:
        i = int(bad[0])
        raise ValueError(f"negative or undefined variance at index {i}: {d[i]!r}")
    return np.sqrt(d)


def significance(p_value: float) -> List[float]:
    return [a for a in SIGNIFICANCE_LEVELS if p_value < a]


def marker(p_value: float) -> str:
    """``**`` below 1%, ``*`` below 5%, a dagger below 10%, else empty."""
    levels = significance(p_value)
    return _MARKERS[min(levels)] if levels else ""


def t_test(coef: float, se: float, n: Optional[int] = None, k: Optional[int] = None,
           reference: str = "normal") -> TestResult:
    """
    Two-sided test of ``coef = 0``.

    The default reference is the standard normal, appropriate for ML
    estimates. ``reference="t"`` uses Student's t with ``n - k`` degrees of
    freedom, for OLS with small samples.
    """
    if not (se > 0 and math.isfinite(se)):
        raise ValueError(f"standard error must be positive, got {se!r}")
    stat = float(coef) / float(se)
    if reference == "normal":
        p = float(2.0 * stats.norm.sf(abs(stat)))
        df: Union[int, str] = "normal"
    elif reference == "t":
        if n is None or k is None or n - k < 1:
            raise ValueError("t reference needs n > k")
        df = int(n - k)
        p = float(2.0 * stats.t.sf(abs(stat), df))
    else:
        raise ValueError(f"unknown reference distribution {reference!r}")
    p = min(1.0, max(0.0, p))
    return TestResult(stat, p, df, significance(p))


def aic(loglik: float, k: int) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    return 2.0 * k - 2.0 * loglik


def spec_test(joint: BivariateProbitFit, fit1: ProbitFit, fit2: ProbitFit) -> SpecTestResult:
    """
    Compare the joint model against the two separate probits by AIC.

    The joint model carries one extra parameter, so it wins exactly when
    its log-likelihood exceeds the separate sum by more than 1. Ties go to
    the separate model.
    """
    if not (joint.n == fit1.n == fit2.n):
        raise ValueError(f"fits use different samples: {joint.n}, {fit1.n}, {fit2.n}")
    ll_sep = fit1.loglik + fit2.loglik
    k_sep = fit1.k + fit2.k
    a_sep = aic(ll_sep, k_sep)
    a_joint = aic(joint.loglik, k_sep + 1)
    return SpecTestResult(
        aic_joint=a_joint,
        aic_separate=a_sep,
        preferred="joint" if a_joint < a_sep else "separate",
        loglik_difference=joint.loglik - ll_sep,
    )


def spec_test_sure(sure: SureFit) -> SpecTestResult:
    """
    AIC comparison for the linear system, with the Gaussian profile
    log-likelihood ``-N/2 (2 ln 2pi + 2 + ln det Sigma)`` standing in for
    the probit likelihood. The separate model fixes the covariance to be
    diagonal.
    """
    n = sure.n
    e1, e2 = sure.stage1_beta1.residuals, sure.stage1_beta2.residuals
    s11, s22 = e1 @ e1 / n, e2 @ e2 / n
    s12 = e1 @ e2 / n
    ll_sep = -0.5 * n * (2 * math.log(2 * math.pi) + 2 + math.log(s11 * s22))
    ll_joint = -0.5 * n * (2 * math.log(2 * math.pi) + 2 + math.log(s11 * s22 - s12 * s12))
    k = sure.k1 + sure.k2 + 2
    a_sep, a_joint = aic(ll_sep, k), aic(ll_joint, k + 1)
    return SpecTestResult(a_joint, a_sep, "joint" if a_joint < a_sep else "separate", ll_joint - ll_sep)


def breusch_pagan(sure: SureFit) -> TestResult:
    """
    Lagrange-multiplier test of independent equation errors,
    ``lambda = N r^2`` with ``r`` the stage-one residual correlation,
    referred to chi-square with one degree of freedom.
    """
    r = float(sure.resid_corr)
    lam = sure.n * r * r
    p = float(stats.chi2.sf(lam, 1))
    return TestResult(lam, p, 1, significance(p))


def rho_std_error(athrho: float, se_athrho: float) -> float:
    """Delta-method standard error of ``rho = tanh(athrho)``."""
    return (1.0 - math.tanh(athrho) ** 2) * se_athrho


def auc(scores, labels) -> float:
    """
    Area under the ROC curve via the Mann-Whitney rank sum.

    Tied scores receive midranks, so a positive/negative tie counts 1/2.
    """
    s = np.asarray(scores, dtype=float).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0/1")
    pos = y == 1
    n1 = int(pos.sum())
    n0 = y.size - n1
    if n1 == 0 or n0 == 0:
        raise ValueError("AUC needs both classes")
    ranks = stats.rankdata(s, method="average")
    u = ranks[pos].sum() - n1 * (n1 + 1) / 2.0
    return float(u / (n1 * n0))

