"""Maximum-likelihood fitting: plain logistic and joint error-rate models.

``fit_std`` is a damped Newton (equivalently IRLS) solver written out
directly, since the Hessian of the logistic likelihood is cheap and
exact. ``fit_liu`` maximizes the misclassified likelihood over
(beta, error rates) with BFGS on a transformed scale where the rates
are unconstrained; standard errors for both come from the observed
information in the original parameterization.

Convergence is declared when the score's max-abs entry drops below
1e-8 or the step below 1e-10. Boundary pathologies (separation,
error rates pinned at zero, singular information) are reported through
``converged``/``condition_warning`` on the result, never as crashes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy import linalg as sla
from scipy import optimize

from .errors import SingularDesignError
from .likelihoods import ErrorRates, liu_loglik, logistic, std_loglik

log = logging.getLogger(__name__)

SCORE_TOL = 1e-8
STEP_TOL = 1e-10
SEPARATION_BOUND = 30.0


class ModelTag(Enum):
    STD = "STD"
    LIU = "LIU"
    BC = "BC"
    BEC = "BEC"


class LiuVariant(Enum):
    """Which error rates are free in the joint fit."""

    BOTH_FREE = "both_free"
    FALSE_POSITIVE_ONLY = "false_positive_only"
    FALSE_NEGATIVE_ONLY = "false_negative_only"
    ERRORS_EQUAL = "errors_equal"


@dataclass(frozen=True)
class LiuErrorEstimate:
    r0: float
    r1: float
    se_r0: float = None
    se_r1: float = None

    def __post_init__(self):
        object.__setattr__(self, "r0", float(self.r0))
        object.__setattr__(self, "r1", float(self.r1))


@dataclass
class FitResult:
    """Common result record for every estimator in the package.

    For Bayesian fits ``beta_hat``/``beta_se`` hold posterior means and
    standard deviations and ``iterations`` counts retained draws.
    """

    model_tag: ModelTag
    beta_hat: np.ndarray
    beta_se: np.ndarray
    loglik: float
    converged: bool
    iterations: int
    column_names: tuple = ()
    error_rates_hat: LiuErrorEstimate = None
    condition_warning: str = None
    variant: LiuVariant = None
    covariance: np.ndarray = None  # over (beta, free rates) for the joint model

    def __post_init__(self):
        self.beta_hat = np.asarray(self.beta_hat, dtype=float)
        if self.beta_se is not None:
            self.beta_se = np.asarray(self.beta_se, dtype=float)
        if not self.converged and not self.condition_warning:
            raise ValueError("a non-converged result must say why via condition_warning")


@dataclass(frozen=True)
class InformationResult:
    matrix: np.ndarray
    se: np.ndarray  # None when the information is not positive definite
    rcond: float
    warning: str = None


def _resolve_design(X, column_names):
    if hasattr(X, "matrix"):
        names = X.column_names
        X = X.matrix
    else:
        X = np.asarray(X, dtype=float)
        names = column_names
    if names is None:
        names = tuple(f"x{j}" for j in range(X.shape[1]))
    return X, tuple(names)


def _check_rank(X, names):
    """Pivoted QR rank check; names the redundant columns on failure."""
    _, R, piv = sla.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = diag[0] * max(X.shape) * np.finfo(float).eps if diag[0] > 0 else 0.0
    rank = int(np.sum(diag > tol))
    if rank < X.shape[1]:
        collinear = [names[j] for j in piv[rank:]]
        raise SingularDesignError(
            f"design matrix is rank deficient (rank {rank} of {X.shape[1]}); "
            f"redundant columns: {collinear}",
            columns=collinear,
        )


def fit_std(y, X, column_names=None, max_iter=100):
    """Damped Newton / IRLS fit of a plain logistic regression."""
    X, names = _resolve_design(X, column_names)
    y = np.asarray(y, dtype=float)
    _check_rank(X, names)

    p = X.shape[1]
    beta = np.zeros(p)
    ll, score = std_loglik(y, X, beta)
    warning = None
    iterations = 0
    converged = np.max(np.abs(score)) < SCORE_TOL

    for it in range(1, max_iter + 1):
        if converged:
            break
        pi = logistic(X @ beta)
        w = pi * (1.0 - pi)
        H = X.T @ (w[:, None] * X)
        try:
            delta = np.linalg.solve(H, score)
        except np.linalg.LinAlgError:
            warning = "singular Hessian during Newton iteration"
            break
        # Step halving keeps the likelihood monotone when Newton overshoots.
        step = delta
        for _ in range(30):
            ll_new, score_new = std_loglik(y, X, beta + step)
            if ll_new >= ll - 1e-12:
                break
            step = step / 2.0
        beta = beta + step
        ll, score = ll_new, score_new
        iterations = it
        if np.max(np.abs(score)) < SCORE_TOL or np.max(np.abs(step)) < STEP_TOL:
            converged = True

    if not converged and warning is None:
        warning = f"no convergence in {max_iter} Newton iterations"

    # Boundary diagnostics: a runaway coefficient, or every observation
    # fitted (numerically) perfectly, both mean the MLE sits at infinity.
    pi = logistic(X @ beta)
    if np.max(np.abs(beta)) > SEPARATION_BOUND or np.max(np.abs(y - pi)) < 1e-6:
        converged = False
        warning = "separation or boundary: fitted probabilities degenerate"

    beta_se = None
    cov = None
    if converged:
        w = pi * (1.0 - pi)
        H = X.T @ (w[:, None] * X)
        try:
            cho = sla.cho_factor(H)
            cov = sla.cho_solve(cho, np.eye(p))
            beta_se = np.sqrt(np.diag(cov))
        except (sla.LinAlgError, ValueError):
            cov = None
            converged = False
            warning = "observed information not positive definite at the optimum"

    return FitResult(
        model_tag=ModelTag.STD,
        beta_hat=beta,
        beta_se=beta_se,
        loglik=ll,
        converged=converged,
        iterations=iterations,
        column_names=names,
        condition_warning=warning,
        covariance=cov,
    )


def observed_information(score_fn, theta_hat, step=1e-5):
    """Observed information by central differences of an analytic score.

    The Hessian of the log-likelihood is approximated column by column
    as d(score)/d(theta_j) with relative steps, then symmetrized and
    negated. If the result is not positive definite the standard errors
    are withheld and a warning attached; ``rcond`` is the eigenvalue
    ratio of the symmetrized matrix.
    """
    theta_hat = np.asarray(theta_hat, dtype=float)
    k = theta_hat.shape[0]
    H = np.empty((k, k))
    with np.errstate(all="ignore"):
        for j in range(k):
            h = step * max(1.0, abs(theta_hat[j]))
            up = theta_hat.copy()
            dn = theta_hat.copy()
            up[j] += h
            dn[j] -= h
            H[:, j] = (np.asarray(score_fn(up)) - np.asarray(score_fn(dn))) / (2.0 * h)
    info = -0.5 * (H + H.T)
    if not np.all(np.isfinite(info)):
        return InformationResult(
            matrix=info,
            se=None,
            rcond=0.0,
            warning="information matrix has non-finite entries",
        )
    eigvals = np.linalg.eigvalsh(info)
    rcond = float(eigvals[0] / eigvals[-1]) if eigvals[-1] > 0 else 0.0
    if eigvals[0] <= 0:
        return InformationResult(
            matrix=info,
            se=None,
            rcond=rcond,
            warning="observed information is not positive definite",
        )
    try:
        variances = np.diag(np.linalg.inv(info))
    except np.linalg.LinAlgError:
        variances = None
    # inversion can go unstable even past the eigenvalue check
    if variances is None or np.any(variances <= 0) or not np.all(np.isfinite(variances)):
        return InformationResult(
            matrix=info,
            se=None,
            rcond=rcond,
            warning="observed information is numerically singular",
        )
    warning = None
    if rcond < 1e-12:
        warning = f"observed information is ill conditioned (rcond {rcond:.2e})"
    return InformationResult(matrix=info, se=np.sqrt(variances), rcond=rcond, warning=warning)


@dataclass(frozen=True)
class LiuInit:
    beta: np.ndarray
    r0: float = 0.01
    r1: float = 0.01


def default_liu_init(y, X, column_names=None):
    """Plain logistic coefficients plus small symmetric error rates.

    The logistic fit is used even when flagged non-converged (its
    coefficients still point in a useful direction); they are clipped
    well inside the separation bound so the joint fit starts finite.
    """
    start = fit_std(y, X, column_names=column_names)
    beta = np.clip(start.beta_hat, -10.0, 10.0)
    return LiuInit(beta=beta, r0=0.01, r1=0.01)


def _rate_to_unconstrained(r):
    # r in (0, 0.5) maps to the real line via r = 0.5 * sigmoid(u)
    r = min(max(r, 1e-8), 0.5 - 1e-8)
    return float(np.log(2.0 * r / (1.0 - 2.0 * r)))


def _unconstrained_to_rate(u):
    # Clamped strictly inside [0, 0.5): a wild line-search step can push
    # u far enough that 0.5 * sigmoid(u) rounds to exactly 0.5.
    return min(0.5 * logistic(u), 0.5 - 1e-9)


_VARIANT_FREE_RATES = {
    LiuVariant.BOTH_FREE: ("r0", "r1"),
    LiuVariant.FALSE_POSITIVE_ONLY: ("r0",),
    LiuVariant.FALSE_NEGATIVE_ONLY: ("r1",),
    LiuVariant.ERRORS_EQUAL: ("r",),
}


def _rates_from_free(variant, free):
    if variant is LiuVariant.BOTH_FREE:
        return float(free[0]), float(free[1])
    if variant is LiuVariant.FALSE_POSITIVE_ONLY:
        return float(free[0]), 0.0
    if variant is LiuVariant.FALSE_NEGATIVE_ONLY:
        return 0.0, float(free[0])
    return float(free[0]), float(free[0])  # ERRORS_EQUAL


def _free_score(variant, g_r0, g_r1):
    if variant is LiuVariant.BOTH_FREE:
        return [g_r0, g_r1]
    if variant is LiuVariant.FALSE_POSITIVE_ONLY:
        return [g_r0]
    if variant is LiuVariant.FALSE_NEGATIVE_ONLY:
        return [g_r1]
    return [g_r0 + g_r1]  # ERRORS_EQUAL: shared rate


def fit_liu(
    y,
    X,
    variant=LiuVariant.BOTH_FREE,
    init=None,
    column_names=None,
    fixed_error_rates=None,
    max_iter=500,
):
    """Joint MLE of regression coefficients and misclassification rates.

    The rates are optimized on an unconstrained scale (r = 0.5 *
    sigmoid(u)) with BFGS and the analytic gradient; standard errors
    come from the observed information over the original free
    parameters (beta plus whichever rates the variant leaves free).

    ``fixed_error_rates=(r0, r1)`` pins both rates and estimates beta
    alone under the misclassified likelihood; this degenerate form
    exists mainly so tests can compare against the plain logistic fit.
    """
    X, names = _resolve_design(X, column_names)
    y = np.asarray(y, dtype=float)
    _check_rank(X, names)
    p = X.shape[1]

    if init is None:
        init = default_liu_init(y, X, column_names=names)

    if fixed_error_rates is not None:
        fixed = ErrorRates(*fixed_error_rates)
        n_free = 0
    else:
        fixed = None
        n_free = len(_VARIANT_FREE_RATES[variant])

    def unpack(theta):
        beta = theta[:p]
        if fixed is not None:
            return beta, fixed.r0, fixed.r1
        free = [_unconstrained_to_rate(u) for u in theta[p:]]
        return beta, *_rates_from_free(variant, free)

    def neg_obj(theta):
        beta, r0, r1 = unpack(theta)
        ll, grad = liu_loglik(y, X, beta, ErrorRates(r0, r1))
        g_beta, g_r0, g_r1 = grad[:p], grad[p], grad[p + 1]
        if fixed is not None:
            return -ll, -g_beta
        g_free = _free_score(variant, g_r0, g_r1)
        # chain rule through r = 0.5 * sigmoid(u): dr/du = r (1 - 2r) ...
        # with s = sigmoid(u), r = s/2, dr/du = 0.5 s (1 - s) = r (1 - 2r)
        jac = []
        for u, g in zip(theta[p:], g_free):
            r = _unconstrained_to_rate(u)
            jac.append(g * r * (1.0 - 2.0 * r))
        return -ll, -np.concatenate([g_beta, jac])

    theta0 = np.asarray(init.beta, dtype=float)
    if theta0.shape[0] != p:
        raise ValueError(f"init beta has length {theta0.shape[0]}, design has {p} columns")
    if fixed is None:
        if variant is LiuVariant.BOTH_FREE:
            free0 = [init.r0, init.r1]
        elif variant is LiuVariant.FALSE_POSITIVE_ONLY:
            free0 = [init.r0]
        elif variant is LiuVariant.FALSE_NEGATIVE_ONLY:
            free0 = [init.r1]
        else:
            free0 = [0.5 * (init.r0 + init.r1)]
        theta0 = np.concatenate([theta0, [_rate_to_unconstrained(r) for r in free0]])

    res = optimize.minimize(
        neg_obj,
        theta0,
        jac=True,
        method="BFGS",
        options={"gtol": SCORE_TOL, "maxiter": max_iter},
    )
    grad_inf = float(np.max(np.abs(res.jac)))
    # BFGS's "precision loss" stop is the float64 analogue of the step
    # criterion: the line search cannot move anymore. Accept it when the
    # gradient is already small in absolute terms.
    opt_ok = bool(res.success) or grad_inf < 1e-4

    beta_hat, r0_hat, r1_hat = unpack(res.x)
    ll_hat, _ = liu_loglik(y, X, beta_hat, ErrorRates(r0_hat, r1_hat))

    # Observed information in the original parameterization.
    def orig_score(theta):
        beta = theta[:p]
        if fixed is not None:
            r0, r1 = fixed.r0, fixed.r1
        else:
            r0, r1 = _rates_from_free(variant, theta[p:])
        eta = X @ beta
        pi = logistic(np.clip(eta, -700, 700))
        pr = r0 + (1.0 - r0 - r1) * pi
        pc = np.maximum(pr, 1e-300)
        qc = np.maximum(1.0 - pr, 1e-300)
        w = np.where(y > 0.5, 1.0 / pc, -1.0 / qc)
        g_beta = X.T @ (w * (1.0 - r0 - r1) * pi * (1.0 - pi))
        g_r0 = float(np.sum(w * (1.0 - pi)))
        g_r1 = float(-np.sum(w * pi))
        if fixed is not None:
            return g_beta
        return np.concatenate([g_beta, _free_score(variant, g_r0, g_r1)])

    theta_orig = beta_hat
    if fixed is None:
        if variant is LiuVariant.BOTH_FREE:
            rates_free = [r0_hat, r1_hat]
        elif variant is LiuVariant.FALSE_POSITIVE_ONLY:
            rates_free = [r0_hat]
        elif variant is LiuVariant.FALSE_NEGATIVE_ONLY:
            rates_free = [r1_hat]
        else:
            rates_free = [r0_hat]
        theta_orig = np.concatenate([beta_hat, rates_free])

    info = observed_information(orig_score, theta_orig)
    beta_se = info.se[:p] if info.se is not None else None
    cov = np.linalg.inv(info.matrix) if info.se is not None else None

    warning = None
    converged = True
    if not opt_ok:
        converged = False
        warning = f"optimizer did not converge ({res.message}; |grad| {grad_inf:.2e})"
    if info.se is None:
        converged = False
        warning = info.warning
    elif info.warning and warning is None:
        warning = info.warning
    if np.max(np.abs(beta_hat)) > SEPARATION_BOUND:
        converged = False
        warning = "separation or boundary: a coefficient escaped past 30"

    boundary = []
    if fixed is None:
        for name, r in zip(("r0", "r1"), (r0_hat, r1_hat)):
            if r < 1e-5:
                boundary.append(name)
        if boundary and warning is None:
            warning = f"error rate(s) {boundary} pinned at the lower boundary"

    se_r0 = se_r1 = None
    if fixed is None and info.se is not None:
        rate_se = info.se[p:]
        if variant is LiuVariant.BOTH_FREE:
            se_r0, se_r1 = float(rate_se[0]), float(rate_se[1])
        elif variant is LiuVariant.FALSE_POSITIVE_ONLY:
            se_r0 = float(rate_se[0])
        elif variant is LiuVariant.FALSE_NEGATIVE_ONLY:
            se_r1 = float(rate_se[0])
        else:
            se_r0 = se_r1 = float(rate_se[0])

    return FitResult(
        model_tag=ModelTag.LIU,
        beta_hat=beta_hat,
        beta_se=beta_se,
        loglik=ll_hat,
        converged=converged,
        iterations=int(res.nit),
        column_names=names,
        error_rates_hat=LiuErrorEstimate(r0=r0_hat, r1=r1_hat, se_r0=se_r0, se_r1=se_r1),
        condition_warning=warning,
        variant=variant if fixed is None else None,
        covariance=cov,
    )
