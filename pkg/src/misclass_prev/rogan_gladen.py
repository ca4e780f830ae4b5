"""External correction of an observed proportion for known test accuracy.

The corrected prevalence is

    p_adj = (p_obs - (1 - sp)) / (se + sp - 1)

truncated into [0, 1]. Truncation fires exactly when the observed
proportion falls outside [1 - sp, se], the range a test with that
accuracy can actually produce. The numerator is written as a shift by
the false-positive rate rather than the algebraically equal
p_obs + sp - 1 so that a perfect test returns p_obs bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import stats


class IntervalMethod(Enum):
    WALD = "wald"
    BOOTSTRAP = "bootstrap"
    DELTA = "delta"
    POSTERIOR_QUANTILE = "posterior_quantile"


@dataclass(frozen=True)
class CrudeEstimate:
    """Observed proportion plus its accuracy-corrected counterpart."""

    p_obs: float
    p_adj: float
    truncated: bool
    n: int = 0
    lower: float = None
    upper: float = None
    interval_method: IntervalMethod = None

    def __post_init__(self):
        if (self.lower is None) != (self.upper is None):
            raise ValueError("interval bounds must be given together")
        if self.lower is not None:
            if not (0.0 <= self.lower <= self.p_adj <= self.upper <= 1.0):
                raise ValueError(
                    f"interval must satisfy 0 <= lower <= point <= upper <= 1, got "
                    f"({self.lower}, {self.p_adj}, {self.upper})"
                )

    @property
    def width(self):
        if self.lower is None:
            return None
        return self.upper - self.lower


def correct_proportion(p_obs, assay):
    """Raw (unclamped) corrected value and whether clamping is needed."""
    raw = (p_obs - (1.0 - assay.specificity)) / assay.youden
    clamped = min(1.0, max(0.0, raw))
    return clamped, clamped != raw


def rogan_gladen(p_obs, assay):
    """Point correction of an observed proportion; no interval."""
    p_obs = float(p_obs)
    if not (0.0 <= p_obs <= 1.0):
        raise ValueError(f"p_obs must lie in [0, 1], got {p_obs}")
    p_adj, truncated = correct_proportion(p_obs, assay)
    return CrudeEstimate(p_obs=p_obs, p_adj=p_adj, truncated=truncated)


def rogan_gladen_interval(
    count_pos,
    n,
    assay,
    method=IntervalMethod.WALD,
    conf_level=0.95,
    n_boot=2000,
    rng=None,
):
    """Corrected prevalence with a confidence interval.

    WALD propagates the binomial standard error through the correction:
    se(p_adj) = sqrt(p_obs (1 - p_obs) / n) / (se + sp - 1).

    BOOTSTRAP resamples the positive count from Binomial(n, p_obs),
    corrects each resample, and takes percentile bounds; the caller
    supplies the generator (or a seed) so resampling stays reproducible.

    Bounds are truncated into [0, 1] after construction, and forced to
    bracket the point estimate so truncation cannot invert the interval.
    """
    count_pos = int(count_pos)
    n = int(n)
    if n <= 0 or not (0 <= count_pos <= n):
        raise ValueError(f"need 0 <= count_pos <= n with n > 0, got {count_pos}/{n}")
    if not (0.0 < conf_level < 1.0):
        raise ValueError(f"conf_level must lie in (0, 1), got {conf_level}")
    method = IntervalMethod(method)

    p_obs = count_pos / n
    p_adj, truncated = correct_proportion(p_obs, assay)

    if method is IntervalMethod.WALD:
        z = stats.norm.ppf(0.5 + conf_level / 2.0)
        se_adj = np.sqrt(p_obs * (1.0 - p_obs) / n) / assay.youden
        raw = (p_obs - (1.0 - assay.specificity)) / assay.youden
        lower = min(1.0, max(0.0, raw - z * se_adj))
        upper = min(1.0, max(0.0, raw + z * se_adj))
    elif method is IntervalMethod.BOOTSTRAP:
        if n_boot < 2000:
            raise ValueError(f"bootstrap interval needs at least 2000 resamples, got {n_boot}")
        if rng is None:
            rng = np.random.default_rng(0)
        elif not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        counts = rng.binomial(n, p_obs, size=n_boot)
        adj = (counts / n - (1.0 - assay.specificity)) / assay.youden
        adj = np.clip(adj, 0.0, 1.0)
        alpha = 1.0 - conf_level
        lower, upper = np.quantile(adj, [alpha / 2.0, 1.0 - alpha / 2.0])
    else:
        raise ValueError(f"unsupported interval method for crude correction: {method}")

    lower = min(lower, p_adj)
    upper = max(upper, p_adj)
    return CrudeEstimate(
        p_obs=p_obs,
        p_adj=p_adj,
        truncated=truncated,
        n=n,
        lower=float(lower),
        upper=float(upper),
        interval_method=method,
    )
