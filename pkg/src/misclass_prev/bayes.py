"""Bayesian posteriors for the externally and internally corrected models.

Both models put independent N(0, pi^2 / (3 (p + 1))) priors on every
regression coefficient, intercept included, where p counts the
non-intercept columns. That variance makes the implied prior on each
fitted probability close to uniform when the p + 1 coefficients share
the logistic distribution's variance pi^2 / 3.

The prior is calibrated for standardized inputs, so the fitters center
and scale continuous design columns internally and undo the
transformation on every draw before reporting. Sampling itself runs in
a rotated basis centered at the posterior mode so the random-walk
proposal sees roughly independent unit-scale coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, special

from .data_model import AssayMode, AssayProfile
from .likelihoods import _misclassified_loglik_full, logistic, std_loglik
from .mcmc import PosteriorDraws, SamplerConfig, package_draws, sample
from .mle import (
    FitResult,
    ModelTag,
    _check_rank,
    _resolve_design,
    observed_information,
)

RHAT_LIMIT = 1.05


def newman_prior_variance(n_covariates):
    """Prior variance pi^2 / (3 (p + 1)) shared by all p + 1 coefficients."""
    p = int(n_covariates)
    if p < 0:
        raise ValueError("number of covariates must be non-negative")
    return math.pi**2 / (3.0 * (p + 1))


def _normal_logpdf_sum(beta, var):
    beta = np.asarray(beta, dtype=float)
    k = beta.shape[0]
    return float(-0.5 * (k * np.log(2.0 * math.pi * var) + np.sum(beta**2) / var))


def _beta_logpdf(x, a, b):
    if not (0.0 < x < 1.0):
        return -np.inf
    return float((a - 1.0) * np.log(x) + (b - 1.0) * np.log1p(-x) - special.betaln(a, b))


def _std_loglik_value(y, X, beta):
    eta = X @ beta
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def _misclass_loglik_value(y, X, beta, se, sp):
    pi = logistic(X @ beta)
    p = (1.0 - sp) + (se + sp - 1.0) * pi
    pc = np.maximum(p, 1e-300)
    qc = np.maximum(1.0 - p, 1e-300)
    return float(np.sum(y * np.log(pc) + (1.0 - y) * np.log(qc)))


def bc_log_posterior(y, X, beta):
    """Log posterior of the plain logistic model under the shared prior."""
    Xm = X.matrix if hasattr(X, "matrix") else np.asarray(X, dtype=float)
    beta = np.asarray(beta, dtype=float)
    var = newman_prior_variance(Xm.shape[1] - 1)
    return _std_loglik_value(np.asarray(y, dtype=float), Xm, beta) + _normal_logpdf_sum(
        beta, var
    )


def bc_log_posterior_grad(y, X, beta):
    """Value and gradient of ``bc_log_posterior`` over beta."""
    Xm = X.matrix if hasattr(X, "matrix") else np.asarray(X, dtype=float)
    beta = np.asarray(beta, dtype=float)
    var = newman_prior_variance(Xm.shape[1] - 1)
    ll, grad = std_loglik(y, Xm, beta)
    value = ll + _normal_logpdf_sum(beta, var)
    return value, grad - beta / var


@dataclass(frozen=True)
class BecParameterBlock:
    """Sampled coordinates of the internally corrected model.

    ``se``/``sp`` are present only when the assay is in beta-prior
    mode; in fixed mode the assay's stated values are used directly.
    """

    beta: np.ndarray
    se: float = None
    sp: float = None


def _bec_parts(block, assay):
    if assay.mode is AssayMode.BETA_PRIOR:
        if block.se is None or block.sp is None:
            raise ValueError("beta-prior mode requires sampled se and sp in the block")
        return float(block.se), float(block.sp), True
    if block.se is not None or block.sp is not None:
        raise ValueError("fixed mode does not sample se/sp; leave them unset")
    return assay.sensitivity, assay.specificity, False


def bec_log_posterior(y, X, block, assay):
    """Log posterior of the internally corrected model.

    Support constraints (rates in (0, 1), se + sp > 1) are enforced by
    returning -inf, which the Metropolis kernel treats as an automatic
    rejection; there is no smooth penalty.
    """
    Xm = X.matrix if hasattr(X, "matrix") else np.asarray(X, dtype=float)
    beta = np.asarray(block.beta, dtype=float)
    se, sp, sampled = _bec_parts(block, assay)
    if sampled:
        if not (0.0 < se < 1.0 and 0.0 < sp < 1.0 and se + sp > 1.0):
            return -np.inf
    var = newman_prior_variance(Xm.shape[1] - 1)
    value = _misclass_loglik_value(np.asarray(y, dtype=float), Xm, beta, se, sp)
    value += _normal_logpdf_sum(beta, var)
    if sampled:
        value += _beta_logpdf(se, *assay.se_prior)
        value += _beta_logpdf(sp, *assay.sp_prior)
    return value


def bec_log_posterior_grad(y, X, block, assay):
    """Value and gradient over (beta[, se, sp]) of ``bec_log_posterior``."""
    Xm = X.matrix if hasattr(X, "matrix") else np.asarray(X, dtype=float)
    beta = np.asarray(block.beta, dtype=float)
    se, sp, sampled = _bec_parts(block, assay)
    if sampled and not (0.0 < se < 1.0 and 0.0 < sp < 1.0 and se + sp > 1.0):
        raise ValueError("gradient requested outside the support")
    var = newman_prior_variance(Xm.shape[1] - 1)
    ll, g_beta, g_se, g_sp = _misclassified_loglik_full(
        np.asarray(y, dtype=float), Xm, beta, se, sp
    )
    value = ll + _normal_logpdf_sum(beta, var)
    g_beta = g_beta - beta / var
    if not sampled:
        return value, g_beta
    a_se, b_se = assay.se_prior
    a_sp, b_sp = assay.sp_prior
    value += _beta_logpdf(se, a_se, b_se) + _beta_logpdf(sp, a_sp, b_sp)
    g_se += (a_se - 1.0) / se - (b_se - 1.0) / (1.0 - se)
    g_sp += (a_sp - 1.0) / sp - (b_sp - 1.0) / (1.0 - sp)
    return value, np.concatenate([g_beta, [g_se, g_sp]])


# ---------------------------------------------------------------------------
# Covariate standardization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Standardization:
    """Center/scale record for continuous design columns."""

    indices: tuple
    means: tuple
    sds: tuple

    def apply(self, X):
        Xs = np.array(X, dtype=float)
        for i, m, s in zip(self.indices, self.means, self.sds):
            Xs[:, i] = (Xs[:, i] - m) / s
        return Xs

    def undo_beta(self, beta_std):
        """Map standardized-scale coefficients back to the input scale.

        Works on a single vector or an array whose last axis is the
        coefficient axis.
        """
        b = np.array(beta_std, dtype=float)
        for i, m, s in zip(self.indices, self.means, self.sds):
            b[..., 0] -= b[..., i] * (m / s)
            b[..., i] = b[..., i] / s
        return b


def standardize_design(X, column_names=None):
    """Center continuous columns and scale them to unit variance.

    A column is continuous when it holds any value other than 0 or 1;
    the intercept and dummies pass through untouched. Returns the
    transformed matrix and the Standardization record needed to undo
    the change on coefficients.
    """
    X, names = _resolve_design(X, column_names)
    idx, means, sds = [], [], []
    for j in range(1, X.shape[1]):
        col = X[:, j]
        if np.all((col == 0.0) | (col == 1.0)):
            continue
        sd = float(col.std(ddof=0))
        if sd == 0.0:
            continue
        idx.append(j)
        means.append(float(col.mean()))
        sds.append(sd)
    tr = Standardization(indices=tuple(idx), means=tuple(means), sds=tuple(sds))
    return tr.apply(X), tr, names


def _sampling_basis(score_fn, mode, res):
    """Rotation that makes the posterior roughly N(0, I) around its mode.

    A random-walk proposal with a diagonal shape mixes poorly when the
    posterior is correlated, which a logistic design guarantees (the
    intercept trades off against every covariate). Sampling therefore
    runs in phi with theta = mode + A phi, where A A' approximates the
    posterior covariance from the curvature at the mode; in phi one step
    size serves every coordinate. When the curvature is unusable the
    optimizer's own scale guesses stand in as a diagonal A.
    """
    info = observed_information(score_fn, mode)
    if info.se is not None:
        try:
            return np.linalg.cholesky(np.linalg.inv(info.matrix))
        except np.linalg.LinAlgError:
            pass
    scale = _mode_scale(res, mode.shape[0])
    if scale is None:
        scale = np.full(mode.shape[0], 0.05)
    return np.diag(scale)


# ---------------------------------------------------------------------------
# Posterior fitting
# ---------------------------------------------------------------------------


def _chain_inits(mode, config, scale=None, spread=2.0):
    """Overdispersed chain starts: mode plus a few posterior sds of jitter."""
    rng = np.random.default_rng([int(config.seed), 0xA5])
    s = np.full(mode.shape[0], 0.05) if scale is None else np.asarray(scale, dtype=float)
    return mode[None, :] + spread * s * rng.standard_normal((config.chains, mode.shape[0]))


def _mode_scale(res, dim):
    """Per-coordinate scale guesses from the optimizer's inverse Hessian.

    BFGS carries a dense approximation, L-BFGS-B a linear operator; both
    are rough, which is fine, the sampler only uses them to precondition
    its proposal before warmup adaptation takes over.
    """
    H = getattr(res, "hess_inv", None)
    if H is None:
        return None
    if hasattr(H, "todense"):
        H = H.todense()
    H = np.asarray(H, dtype=float)
    if H.shape != (dim, dim):
        return None
    d = np.diag(H)
    if not np.all(np.isfinite(d)) or np.any(d <= 0):
        return None
    return np.sqrt(d)


def _posterior_fit_result(tag, draws_obj, n_beta, loglik, names):
    flat = draws_obj.flat()[:, :n_beta]
    beta_hat = flat.mean(axis=0)
    beta_se = flat.std(axis=0, ddof=1)
    bad = ~(np.isfinite(draws_obj.rhat) & (draws_obj.rhat < RHAT_LIMIT))
    converged = not bool(np.any(bad))
    warning = None
    if not converged:
        worst = np.nanmax(draws_obj.rhat)
        warning = (
            f"chains not mixed: {int(bad.sum())} parameter(s) with split rhat >= "
            f"{RHAT_LIMIT} (worst {worst:.4f})"
        )
    return FitResult(
        model_tag=tag,
        beta_hat=beta_hat,
        beta_se=beta_se,
        loglik=loglik,
        converged=converged,
        iterations=draws_obj.n_total,
        column_names=names,
        condition_warning=warning,
    )


def fit_bc(y, X, config=None, column_names=None):
    """Posterior of the plain logistic model; external correction later.

    Sampling runs in the mode-centered coordinates of ``_sampling_basis``
    with seed-derived overdispersed starts. Returns the fit summary and
    the back-transformed draws.
    """
    config = config or SamplerConfig()
    X, names = _resolve_design(X, column_names)
    y = np.asarray(y, dtype=float)
    _check_rank(X, names)
    Xs, tr, _ = standardize_design(X, names)
    p = Xs.shape[1]
    var = newman_prior_variance(p - 1)

    def neg(beta):
        ll, grad = std_loglik(y, Xs, beta)
        return (
            -(ll + _normal_logpdf_sum(beta, var)),
            -(grad - beta / var),
        )

    res = optimize.minimize(neg, np.zeros(p), jac=True, method="BFGS")
    mode = res.x
    A = _sampling_basis(lambda t: -neg(t)[1], mode, res)

    def log_post(phi):
        beta = mode + A @ phi
        return _std_loglik_value(y, Xs, beta) + _normal_logpdf_sum(beta, var)

    raw = sample(log_post, p, config, init=_chain_inits(np.zeros(p), config, np.ones(p)))
    beta_std = mode + raw.draws @ A.T
    draws = package_draws(tr.undo_beta(beta_std), names, raw.accept_rate)
    beta_hat = draws.flat().mean(axis=0)
    ll_hat = _std_loglik_value(y, X, beta_hat)
    fit = _posterior_fit_result(ModelTag.BC, draws, p, ll_hat, names)
    return fit, draws


def fit_bec(y, X, assay, config=None, column_names=None):
    """Posterior of the internally corrected model.

    In fixed mode only beta is sampled; in beta-prior mode the
    sensitivity and specificity join the parameter block with their
    Beta priors, starting from the prior means.
    """
    if not isinstance(assay, AssayProfile):
        raise TypeError("assay must be an AssayProfile")
    config = config or SamplerConfig()
    X, names = _resolve_design(X, column_names)
    y = np.asarray(y, dtype=float)
    _check_rank(X, names)
    Xs, tr, _ = standardize_design(X, names)
    p = Xs.shape[1]
    var = newman_prior_variance(p - 1)
    sampled_assay = assay.mode is AssayMode.BETA_PRIOR

    if sampled_assay:
        a_se, b_se = assay.se_prior
        a_sp, b_sp = assay.sp_prior

        def log_post_block(theta):
            se, sp = theta[p], theta[p + 1]
            if not (0.0 < se < 1.0 and 0.0 < sp < 1.0 and se + sp > 1.0):
                return -np.inf
            return (
                _misclass_loglik_value(y, Xs, theta[:p], se, sp)
                + _normal_logpdf_sum(theta[:p], var)
                + _beta_logpdf(se, a_se, b_se)
                + _beta_logpdf(sp, a_sp, b_sp)
            )

        def neg(theta):
            block = BecParameterBlock(beta=theta[:p], se=theta[p], sp=theta[p + 1])
            value, grad = bec_log_posterior_grad(y, Xs, block, assay)
            return -value, -grad

        theta0 = np.concatenate([np.zeros(p), [assay.sensitivity, assay.specificity]])
        bounds = [(None, None)] * p + [(0.501, 1.0 - 1e-9)] * 2
        res = optimize.minimize(neg, theta0, jac=True, method="L-BFGS-B", bounds=bounds)
        dim = p + 2
    else:
        se0, sp0 = assay.sensitivity, assay.specificity

        def log_post_block(theta):
            return _misclass_loglik_value(y, Xs, theta, se0, sp0) + _normal_logpdf_sum(
                theta, var
            )

        def neg(theta):
            block = BecParameterBlock(beta=theta)
            value, grad = bec_log_posterior_grad(y, Xs, block, assay)
            return -value, -grad

        res = optimize.minimize(neg, np.zeros(p), jac=True, method="BFGS")
        dim = p

    mode = res.x

    def post_score(theta):
        try:
            return -neg(theta)[1]
        except ValueError:
            # curvature probe stepped outside the accuracy support
            return np.full(dim, np.nan)

    A = _sampling_basis(post_score, mode, res)

    def log_post(phi):
        return log_post_block(mode + A @ phi)

    init = _chain_inits(np.zeros(dim), config, np.ones(dim))
    # overdispersed starts can land outside the accuracy support; pull
    # each one toward the mode until its density is finite
    for i in range(init.shape[0]):
        for _ in range(60):
            if np.isfinite(log_post(init[i])):
                break
            init[i] *= 0.5

    raw = sample(log_post, dim, config, init=init)
    theta_draws = mode + raw.draws @ A.T

    if sampled_assay:
        beta_part = tr.undo_beta(theta_draws[:, :, :p])
        out = np.concatenate([beta_part, theta_draws[:, :, p:]], axis=2)
        out_names = tuple(names) + ("sensitivity", "specificity")
    else:
        out = tr.undo_beta(theta_draws)
        out_names = tuple(names)
    draws = package_draws(out, out_names, raw.accept_rate)

    flat = draws.flat()
    beta_hat = flat[:, :p].mean(axis=0)
    if sampled_assay:
        se_hat = float(flat[:, p].mean())
        sp_hat = float(flat[:, p + 1].mean())
    else:
        se_hat, sp_hat = assay.sensitivity, assay.specificity
    ll_hat = _misclass_loglik_value(y, X, beta_hat, se_hat, sp_hat)
    fit = _posterior_fit_result(ModelTag.BEC, draws, p, ll_hat, names)
    return fit, draws
