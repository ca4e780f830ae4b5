"""Link function and log-likelihoods for the three model families.

Everything here is a pure function of arrays. The three likelihood
variants share one structural fact that the rest of the package leans
on: a misclassified Bernoulli response has success probability

    P(Y = 1 | x) = r0 + (1 - r0 - r1) * sigmoid(x' beta)

where r0 is the false-positive rate and r1 the false-negative rate.
Substituting r0 = 1 - specificity, r1 = 1 - sensitivity gives the
known-accuracy form

    P(Y = 1 | x) = (1 - sp) + (se + sp - 1) * sigmoid(x' beta)

so the free-error-rate likelihood and the known-accuracy marginal
likelihood are the same function under that substitution. Both are
implemented explicitly below and the equality is enforced by tests.

All gradients are analytic; probability arguments to ``log`` are
clamped at 1e-300 to keep extreme tails finite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data_model import AssayMode, AssayProfile

_LOG_CLAMP = 1e-300


def logistic(eta):
    """Numerically stable inverse logit, elementwise.

    Uses the positive/negative split so neither branch exponentiates a
    large positive number; safe for |eta| well beyond 700. Non-finite
    input is a domain error.
    """
    arr = np.asarray(eta, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("logistic: eta must be finite")
    out = np.empty_like(arr)
    pos = arr >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-arr[pos]))
    expn = np.exp(arr[~pos])
    out[~pos] = expn / (1.0 + expn)
    if np.ndim(eta) == 0:
        return float(out)
    return out


def linear_predictor(X, beta):
    """X @ beta with an explicit dimension check.

    Accepts a plain array or anything exposing a ``matrix`` attribute
    (e.g. DesignMatrix).
    """
    if hasattr(X, "matrix"):
        X = X.matrix
    X = np.asarray(X, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if X.ndim != 2 or beta.ndim != 1 or X.shape[1] != beta.shape[0]:
        raise ValueError(
            f"incompatible shapes for linear predictor: X {X.shape}, beta {beta.shape}"
        )
    return X @ beta


@dataclass(frozen=True)
class ErrorRates:
    """False-positive (r0) and false-negative (r1) rates.

    Each must sit in [0, 0.5) and their sum below 1, which keeps the
    response probability strictly increasing in the linear predictor.
    """

    r0: float
    r1: float

    def __post_init__(self):
        r0, r1 = float(self.r0), float(self.r1)
        for name, v in (("r0", r0), ("r1", r1)):
            if not (0.0 <= v < 0.5):
                raise ValueError(f"{name} must lie in [0, 0.5), got {v}")
        if r0 + r1 >= 1.0:
            raise ValueError(f"r0 + r1 must be below 1, got {r0 + r1}")
        object.__setattr__(self, "r0", r0)
        object.__setattr__(self, "r1", r1)


def _as_response(y):
    y = np.asarray(y, dtype=float)
    if y.ndim != 1:
        raise ValueError("y must be a 1-d 0/1 vector")
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ValueError("y must contain only 0 and 1")
    return y


def std_loglik(y, X, beta):
    """Bernoulli-logistic log-likelihood and its score.

    Returns ``(loglik, gradient)`` where the gradient is
    ``X' (y - pi)``. Uses the softplus identity
    ``log(1 + e^eta) = logaddexp(0, eta)`` so no term overflows.
    """
    y = _as_response(y)
    eta = linear_predictor(X, beta)
    ll = float(np.sum(y * eta - np.logaddexp(0.0, eta)))
    pi = logistic(eta)
    Xm = X.matrix if hasattr(X, "matrix") else np.asarray(X, dtype=float)
    grad = Xm.T @ (y - pi)
    return ll, grad


def liu_response_prob(eta, rates):
    """Misclassification-adjusted response probability.

    r0 + (1 - r0 - r1) * sigmoid(eta); bounded in (r0, 1 - r1).
    """
    if not isinstance(rates, ErrorRates):
        rates = ErrorRates(*rates)
    return rates.r0 + (1.0 - rates.r0 - rates.r1) * logistic(eta)


def _bernoulli_mix_loglik(y, X, eta, pi, slope, offset):
    """Shared core for the two misclassified likelihoods.

    Response probability is ``p = offset + slope * pi``. Returns the
    log-likelihood, the per-row weight ``w = y/p - (1-y)/(1-p)``
    (computed piecewise so saturated probabilities never produce
    0 * inf), and the score with respect to beta.
    """
    p = offset + slope * pi
    pc = np.maximum(p, _LOG_CLAMP)
    qc = np.maximum(1.0 - p, _LOG_CLAMP)
    ll = float(np.sum(y * np.log(pc) + (1.0 - y) * np.log(qc)))
    w = np.where(y > 0.5, 1.0 / pc, -1.0 / qc)
    Xm = X.matrix if hasattr(X, "matrix") else np.asarray(X, dtype=float)
    dpi = pi * (1.0 - pi)
    grad_beta = Xm.T @ (w * slope * dpi)
    return ll, w, grad_beta


def liu_loglik(y, X, beta, rates):
    """Joint log-likelihood for logistic regression with free error rates.

    Returns ``(loglik, gradient)`` with the gradient over the stacked
    parameter (beta, r0, r1), so its length is ``len(beta) + 2``.
    """
    y = _as_response(y)
    if not isinstance(rates, ErrorRates):
        rates = ErrorRates(*rates)
    eta = linear_predictor(X, beta)
    pi = logistic(eta)
    slope = 1.0 - rates.r0 - rates.r1
    ll, w, grad_beta = _bernoulli_mix_loglik(y, X, eta, pi, slope, rates.r0)
    # dp/dr0 = 1 - pi, dp/dr1 = -pi
    g_r0 = float(np.sum(w * (1.0 - pi)))
    g_r1 = float(-np.sum(w * pi))
    return ll, np.concatenate([grad_beta, [g_r0, g_r1]])


def _misclassified_loglik_full(y, X, beta, se, sp):
    """Known-accuracy marginal likelihood, with gradients for all blocks.

    Returns (loglik, grad_beta, dll/dse, dll/dsp). The response
    probability is (1 - sp) + (se + sp - 1) * pi, i.e. the latent true
    status is summed out analytically rather than sampled.
    """
    y = _as_response(y)
    eta = linear_predictor(X, beta)
    pi = logistic(eta)
    slope = se + sp - 1.0
    ll, w, grad_beta = _bernoulli_mix_loglik(y, X, eta, pi, slope, 1.0 - sp)
    # dp/dse = pi ; dp/dsp = -(1 - pi)
    g_se = float(np.sum(w * pi))
    g_sp = float(-np.sum(w * (1.0 - pi)))
    return ll, grad_beta, g_se, g_sp


def bec_marginal_loglik(y, X, beta, assay):
    """Marginal log-likelihood under a fixed assay profile.

    The latent true status never appears as a sampled quantity: it is
    marginalized in closed form, leaving a Bernoulli likelihood with
    success probability (1 - sp) + (se + sp - 1) * pi. Returns
    ``(loglik, gradient)`` with the gradient over beta only.
    """
    if not isinstance(assay, AssayProfile):
        raise TypeError("assay must be an AssayProfile")
    if assay.mode is not AssayMode.FIXED:
        raise ValueError("bec_marginal_loglik expects a fixed-mode assay profile")
    ll, grad_beta, _, _ = _misclassified_loglik_full(
        y, X, beta, assay.sensitivity, assay.specificity
    )
    return ll, grad_beta
