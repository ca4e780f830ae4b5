"""Marginal prevalence per model and the cross-model comparison report.

Marginal standardization is the common estimand: average the fitted
individual probabilities over the cohort's covariate rows. External
accuracy correction, where a model needs one, happens on that averaged
probability; for posterior draws the correction is applied draw by
draw, before averaging, so truncation at zero propagates into the
posterior summaries rather than being applied once at the end.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, replace

import numpy as np

from .errors import DiagnosticsError, NonConvergenceError
from .likelihoods import logistic
from .mle import LiuInit, LiuVariant, ModelTag, fit_liu, fit_std
from .rogan_gladen import IntervalMethod, correct_proportion

log = logging.getLogger(__name__)

_ACCURACY_COORDS = ("sensitivity", "specificity")


@dataclass(frozen=True)
class PrevalenceEstimate:
    model_tag: ModelTag
    point: float
    lower: float
    upper: float
    interval_method: IntervalMethod
    ci_width: float = None
    change_vs_crude_pct: float = None
    change_vs_std_pct: float = None
    n_resample_failures: int = 0

    def __post_init__(self):
        if not (0.0 <= self.lower <= self.point <= self.upper <= 1.0):
            raise ValueError(
                f"prevalence interval out of order: ({self.lower}, {self.point}, {self.upper})"
            )
        object.__setattr__(self, "ci_width", self.upper - self.lower)


def _mean_prob(X, beta):
    Xm = X.matrix if hasattr(X, "matrix") else np.asarray(X, dtype=float)
    return float(np.mean(logistic(Xm @ beta)))


def _require_converged(fit):
    if not fit.converged:
        raise NonConvergenceError(
            f"{fit.model_tag.value} fit did not converge: {fit.condition_warning}"
        )


def marginal_prevalence_std(
    y,
    X,
    fit,
    assay,
    n_boot=1000,
    rng=None,
    conf_level=0.95,
    interval=IntervalMethod.BOOTSTRAP,
):
    """Externally corrected marginal prevalence for the plain logistic fit.

    The nonparametric bootstrap resamples cohort rows, refits, averages
    the fitted probabilities, and corrects each resampled value; refits
    that fail to converge are counted and skipped. The cheaper delta
    interval propagates the coefficient covariance through the mean
    fitted probability and divides by the Youden index.
    """
    _require_converged(fit)
    interval = IntervalMethod(interval)
    Xm = X.matrix if hasattr(X, "matrix") else np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    point, _ = correct_proportion(_mean_prob(Xm, fit.beta_hat), assay)

    failures = 0
    if interval is IntervalMethod.BOOTSTRAP:
        if rng is None or not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        n = Xm.shape[0]
        vals = []
        for _ in range(n_boot):
            idx = rng.integers(0, n, size=n)
            refit = fit_std(y[idx], Xm[idx], column_names=fit.column_names)
            if not refit.converged:
                failures += 1
                continue
            adj, _ = correct_proportion(_mean_prob(Xm[idx], refit.beta_hat), assay)
            vals.append(adj)
        if len(vals) < max(50, n_boot // 2):
            raise NonConvergenceError(
                f"bootstrap collapsed: only {len(vals)} of {n_boot} resamples refit cleanly"
            )
        alpha = 1.0 - conf_level
        lower, upper = np.quantile(vals, [alpha / 2.0, 1.0 - alpha / 2.0])
        if failures:
            log.warning("prevalence bootstrap: %d of %d refits failed", failures, n_boot)
    elif interval is IntervalMethod.DELTA:
        from scipy import stats

        pi = logistic(Xm @ fit.beta_hat)
        w = pi * (1.0 - pi)
        H = Xm.T @ (w[:, None] * Xm)
        cov = np.linalg.inv(H)
        g = (Xm.T @ w) / Xm.shape[0]
        se_mean = float(np.sqrt(g @ cov @ g)) / assay.youden
        z = stats.norm.ppf(0.5 + conf_level / 2.0)
        raw = (_mean_prob(Xm, fit.beta_hat) - (1.0 - assay.specificity)) / assay.youden
        lower = min(1.0, max(0.0, raw - z * se_mean))
        upper = min(1.0, max(0.0, raw + z * se_mean))
    else:
        raise ValueError(f"unsupported interval method for STD prevalence: {interval}")

    lower, upper = min(lower, point), max(upper, point)
    return PrevalenceEstimate(
        model_tag=ModelTag.STD,
        point=point,
        lower=float(lower),
        upper=float(upper),
        interval_method=interval,
        n_resample_failures=failures,
    )


def marginal_prevalence_liu(X, fit, n_boot=500, rng=None, conf_level=0.95):
    """Marginal prevalence from the joint error-rate fit.

    No external correction applies: the coefficients already describe
    the latent true status. The interval is a parametric bootstrap,
    simulating outcomes from the fitted (beta, r0, r1), refitting, and
    taking percentiles of the resampled prevalence; refits start at the
    original estimates, and non-converged refits are counted.
    """
    _require_converged(fit)
    if fit.error_rates_hat is None:
        raise ValueError("fit does not carry error-rate estimates")
    if rng is None or not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    Xm = X.matrix if hasattr(X, "matrix") else np.asarray(X, dtype=float)
    point = _mean_prob(Xm, fit.beta_hat)
    r0, r1 = fit.error_rates_hat.r0, fit.error_rates_hat.r1
    variant = fit.variant or LiuVariant.BOTH_FREE

    pi_hat = logistic(Xm @ fit.beta_hat)
    n = Xm.shape[0]
    init = LiuInit(beta=fit.beta_hat, r0=max(r0, 1e-4), r1=max(r1, 1e-4))
    vals = []
    failures = 0
    for _ in range(n_boot):
        latent = rng.random(n) < pi_hat
        u = rng.random(n)
        y_b = np.where(latent, u >= r1, u < r0).astype(float)
        refit = fit_liu(y_b, Xm, variant=variant, init=init, column_names=fit.column_names)
        if not refit.converged:
            failures += 1
            continue
        vals.append(_mean_prob(Xm, refit.beta_hat))
    if len(vals) < max(50, n_boot // 2):
        raise NonConvergenceError(
            f"parametric bootstrap collapsed: only {len(vals)} of {n_boot} refits converged"
        )
    if failures:
        log.warning("prevalence bootstrap: %d of %d refits failed", failures, n_boot)
    alpha = 1.0 - conf_level
    lower, upper = np.quantile(vals, [alpha / 2.0, 1.0 - alpha / 2.0])
    lower, upper = min(float(lower), point), max(float(upper), point)
    return PrevalenceEstimate(
        model_tag=ModelTag.LIU,
        point=point,
        lower=lower,
        upper=upper,
        interval_method=IntervalMethod.BOOTSTRAP,
        n_resample_failures=failures,
    )


def _beta_coordinates(draws):
    return [i for i, name in enumerate(draws.param_names) if name not in _ACCURACY_COORDS]


def posterior_prevalence_draws(draws, X, assay=None, batch=512):
    """Per-draw marginal prevalence, optionally externally corrected.

    Returns one value per retained draw. When an assay is given the
    correction is applied to each draw's averaged probability and
    truncated into [0, 1] there and then.
    """
    Xm = X.matrix if hasattr(X, "matrix") else np.asarray(X, dtype=float)
    beta_idx = _beta_coordinates(draws)
    if len(beta_idx) != Xm.shape[1]:
        raise ValueError(
            f"draws carry {len(beta_idx)} coefficients but the design has {Xm.shape[1]} columns"
        )
    flat = draws.flat()[:, beta_idx]
    out = np.empty(flat.shape[0])
    for start in range(0, flat.shape[0], batch):
        block = flat[start : start + batch]
        probs = logistic(Xm @ block.T)
        out[start : start + batch] = probs.mean(axis=0)
    if assay is not None:
        out = np.clip((out - (1.0 - assay.specificity)) / assay.youden, 0.0, 1.0)
    return out


def marginal_prevalence_bayes(
    draws, X, model_tag, assay=None, conf_level=0.95, allow_bad_chains=False
):
    """Posterior marginal prevalence with equal-tail quantile interval.

    ``assay`` switches on external correction (the BC pipeline); leave
    it None when the likelihood already handled misclassification.
    Refuses to summarize chains whose coefficient rhat is 1.05 or
    worse unless ``allow_bad_chains`` explicitly waives that.
    """
    beta_idx = _beta_coordinates(draws)
    bad = [
        (draws.param_names[i], draws.rhat[i])
        for i in beta_idx
        if not (np.isfinite(draws.rhat[i]) and draws.rhat[i] < 1.05)
    ]
    if bad:
        detail = ", ".join(f"{n}={v:.4f}" for n, v in bad)
        if not allow_bad_chains:
            raise DiagnosticsError(f"coefficient chains failed split rhat < 1.05: {detail}")
        log.warning("summarizing despite failed rhat checks: %s", detail)
    vals = posterior_prevalence_draws(draws, X, assay=assay)
    alpha = 1.0 - conf_level
    lower, upper = np.quantile(vals, [alpha / 2.0, 1.0 - alpha / 2.0])
    point = float(np.mean(vals))
    lower, upper = min(float(lower), point), max(float(upper), point)
    return PrevalenceEstimate(
        model_tag=ModelTag(model_tag),
        point=point,
        lower=lower,
        upper=upper,
        interval_method=IntervalMethod.POSTERIOR_QUANTILE,
    )


# ---------------------------------------------------------------------------
# Comparison report
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CoefficientRow:
    name: str
    std: float = None
    std_se: float = None
    liu: float = None
    liu_se: float = None
    liu_change_vs_std_pct: float = None
    bc: float = None
    bc_se: float = None
    bec: float = None
    bec_se: float = None
    bec_change_vs_std_pct: float = None
    bec_change_vs_bc_pct: float = None


@dataclass(frozen=True)
class SeComparisonRow:
    name: str
    se_liu: float = None
    se_bec: float = None
    relative_change: float = None  # se_liu / se_bec - 1


@dataclass(frozen=True)
class ComparisonReport:
    prevalence: tuple  # PrevalenceEstimate rows, crude first
    crude: CrudeEstimate
    coefficients: tuple
    se_comparison: tuple
    gaps: tuple = ()


def _pct_change(value, reference):
    if value is None or reference is None or reference == 0.0:
        return None
    return 100.0 * (value - reference) / abs(reference)


def build_comparison_report(crude, fits=None, prevalences=None):
    """Assemble the three comparison blocks from whatever models ran.

    ``fits`` and ``prevalences`` are mappings keyed by ModelTag. Models
    that are absent leave gaps, which are listed in ``gaps`` instead of
    failing the whole report.
    """
    fits = dict(fits or {})
    prevalences = dict(prevalences or {})
    gaps = [tag.value for tag in ModelTag if tag not in fits]

    prev_rows = []
    std_prev = prevalences.get(ModelTag.STD)
    for tag in (ModelTag.STD, ModelTag.LIU, ModelTag.BC, ModelTag.BEC):
        est = prevalences.get(tag)
        if est is None:
            continue
        est = replace(
            est,
            change_vs_crude_pct=_pct_change(est.point, crude.p_obs),
            change_vs_std_pct=(
                None if tag is ModelTag.STD else _pct_change(est.point, std_prev.point)
            )
            if std_prev is not None
            else None,
        )
        prev_rows.append(est)

    def fit_of(tag):
        return fits.get(tag)

    names = ()
    for tag in (ModelTag.STD, ModelTag.LIU, ModelTag.BC, ModelTag.BEC):
        if fit_of(tag) is not None:
            names = fit_of(tag).column_names
            break

    def coef(tag, j):
        f = fit_of(tag)
        if f is None or j >= len(f.beta_hat):
            return None, None
        se = None if f.beta_se is None else float(f.beta_se[j])
        return float(f.beta_hat[j]), se

    coef_rows = []
    se_rows = []
    for j, name in enumerate(names):
        std_v, std_se = coef(ModelTag.STD, j)
        liu_v, liu_se = coef(ModelTag.LIU, j)
        bc_v, bc_se = coef(ModelTag.BC, j)
        bec_v, bec_se = coef(ModelTag.BEC, j)
        coef_rows.append(
            CoefficientRow(
                name=name,
                std=std_v,
                std_se=std_se,
                liu=liu_v,
                liu_se=liu_se,
                liu_change_vs_std_pct=_pct_change(liu_v, std_v),
                bc=bc_v,
                bc_se=bc_se,
                bec=bec_v,
                bec_se=bec_se,
                bec_change_vs_std_pct=_pct_change(bec_v, std_v),
                bec_change_vs_bc_pct=_pct_change(bec_v, bc_v),
            )
        )
        rel = None
        if liu_se is not None and bec_se is not None and bec_se > 0:
            rel = liu_se / bec_se - 1.0
        se_rows.append(SeComparisonRow(name=name, se_liu=liu_se, se_bec=bec_se, relative_change=rel))

    return ComparisonReport(
        prevalence=tuple(prev_rows),
        crude=crude,
        coefficients=tuple(coef_rows),
        se_comparison=tuple(se_rows),
        gaps=tuple(gaps),
    )


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


PREVALENCE_HEADER = (
    "model",
    "point",
    "lower",
    "upper",
    "ci_width",
    "change_vs_crude_pct",
    "change_vs_std_pct",
    "interval_method",
)


def prevalence_csv_rows(report):
    rows = [list(PREVALENCE_HEADER)]
    c = report.crude
    rows.append(["CRUDE", _fmt(c.p_obs), "", "", "", "", "", ""])
    rows.append(
        [
            "CRUDE_CORRECTED",
            _fmt(c.p_adj),
            _fmt(c.lower),
            _fmt(c.upper),
            _fmt(c.width),
            "",
            "",
            c.interval_method.value if c.interval_method else "",
        ]
    )
    for est in report.prevalence:
        rows.append(
            [
                est.model_tag.value,
                _fmt(est.point),
                _fmt(est.lower),
                _fmt(est.upper),
                _fmt(est.ci_width),
                _fmt(est.change_vs_crude_pct),
                _fmt(est.change_vs_std_pct),
                est.interval_method.value,
            ]
        )
    return rows


COEFFICIENT_HEADER = (
    "coefficient",
    "std",
    "std_se",
    "liu",
    "liu_se",
    "liu_change_vs_std_pct",
    "bc",
    "bc_se",
    "bec",
    "bec_se",
    "bec_change_vs_std_pct",
    "bec_change_vs_bc_pct",
)


def coefficient_csv_rows(report):
    rows = [list(COEFFICIENT_HEADER)]
    for r in report.coefficients:
        rows.append(
            [
                r.name,
                _fmt(r.std),
                _fmt(r.std_se),
                _fmt(r.liu),
                _fmt(r.liu_se),
                _fmt(r.liu_change_vs_std_pct),
                _fmt(r.bc),
                _fmt(r.bc_se),
                _fmt(r.bec),
                _fmt(r.bec_se),
                _fmt(r.bec_change_vs_std_pct),
                _fmt(r.bec_change_vs_bc_pct),
            ]
        )
    return rows


SE_HEADER = ("coefficient", "se_liu", "se_bec", "relative_change")


def se_csv_rows(report):
    rows = [list(SE_HEADER)]
    for r in report.se_comparison:
        rows.append([r.name, _fmt(r.se_liu), _fmt(r.se_bec), _fmt(r.relative_change)])
    return rows


def write_csv(rows, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)


def read_prevalence_csv(path):
    """Parse a prevalence block back into estimate rows (crude, estimates)."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != PREVALENCE_HEADER:
            raise ValueError(f"unexpected prevalence header: {header}")
        crude = {}
        out = []
        for row in reader:
            rec = dict(zip(header, row))
            if rec["model"] in ("CRUDE", "CRUDE_CORRECTED"):
                crude[rec["model"]] = rec
                continue
            out.append(
                PrevalenceEstimate(
                    model_tag=ModelTag(rec["model"]),
                    point=float(rec["point"]),
                    lower=float(rec["lower"]),
                    upper=float(rec["upper"]),
                    interval_method=IntervalMethod(rec["interval_method"]),
                    change_vs_crude_pct=float(rec["change_vs_crude_pct"])
                    if rec["change_vs_crude_pct"]
                    else None,
                    change_vs_std_pct=float(rec["change_vs_std_pct"])
                    if rec["change_vs_std_pct"]
                    else None,
                )
            )
    return crude, out


def _text_table(rows, sigfigs=6):
    def show(v):
        if v is None or v == "":
            return "."
        if isinstance(v, float):
            return f"{v:.{sigfigs}g}"
        return str(v)

    cells = [[show(v) for v in row] for row in rows]
    widths = [max(len(r[j]) for r in cells) for j in range(len(cells[0]))]
    lines = []
    for i, row in enumerate(cells):
        lines.append("  ".join(cell.rjust(w) for cell, w in zip(row, widths)))
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)


def _reparse(rows):
    """Turn repr'd floats back into floats so the text table can round them."""

    def cell(v):
        if isinstance(v, str) and v:
            try:
                return float(v)
            except ValueError:
                return v
        return v

    return [rows[0]] + [[cell(v) for v in row] for row in rows[1:]]


def render_csv_text(path):
    """Re-render any saved comparison csv as an aligned text table."""
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path} is empty")
    return _text_table(_reparse(rows)) + "\n"


def render_text(report):
    """Aligned plain-text rendering of all three blocks."""
    parts = []
    parts.append("Marginal prevalence")
    parts.append(_text_table(_reparse(prevalence_csv_rows(report))))
    parts.append("")
    parts.append("Coefficients")
    parts.append(_text_table(_reparse(coefficient_csv_rows(report))))
    parts.append("")
    parts.append("Standard errors (joint error-rate model vs internal correction)")
    parts.append(_text_table(_reparse(se_csv_rows(report))))
    if report.gaps:
        parts.append("")
        parts.append(f"missing models: {', '.join(report.gaps)}")
    return "\n".join(parts) + "\n"
