"""Numerical primitives: normal distribution, sample moments, box summaries,
Welch's test and bootstrap resampling.

Every stochastic helper takes an explicit ``numpy.random.Generator``; nothing
here touches global random state.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats as _sps

from .errors import InsufficientDataError

__all__ = [
    "BoxSummary",
    "TestDecision",
    "normal_cdf",
    "normal_quantile",
    "sample_stats",
    "box_summary",
    "welch_t_test",
    "bootstrap_indices",
    "bootstrap_resample",
]

_SQRT2 = math.sqrt(2.0)
_SQRT2PI = math.sqrt(2.0 * math.pi)

# Acklam's rational approximation, relative error < 1.15e-9 before refinement.
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


@dataclass(frozen=True)
class BoxSummary:
    """Tukey box-plot summary with 1.5 IQR whiskers."""

    median: float
    q1: float
    q3: float
    whisker_low: float
    whisker_high: float
    n_outliers: int

    def to_dict(self) -> dict:
        return {
            "median": self.median,
            "q1": self.q1,
            "q3": self.q3,
            "whisker_low": self.whisker_low,
            "whisker_high": self.whisker_high,
            "n_outliers": self.n_outliers,
        }


@dataclass(frozen=True)
class TestDecision:
    """Two-sided test outcome: ``reject`` iff ``|statistic| > critical_value``."""

    __test__ = False  # not a pytest class

    reject: bool
    statistic: float
    critical_value: float

    def to_dict(self) -> dict:
        return {
            "reject": self.reject,
            "statistic": self.statistic,
            "critical_value": self.critical_value,
        }


def normal_cdf(x: float) -> float:
    """Standard normal CDF."""
    return 0.5 * math.erfc(-x / _SQRT2)


def _acklam_lower(p: float) -> float:
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        num = ((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]
        den = (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0
        return num / den
    q = p - 0.5
    r = q * q
    num = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q
    den = ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0
    return num / den


def normal_quantile(p: float) -> float:
    """Inverse of :func:`normal_cdf` for ``0 < p < 1``.

    Rational approximation followed by one Newton step on the lower tail;
    upper-tail probabilities are reflected so the CDF residual never loses
    digits to ``1 - small``.
    """
    p = float(p)
    if not 0.0 < p < 1.0:
        raise ValueError(f"normal_quantile requires 0 < p < 1, got {p!r}")
    if p == 0.5:
        return 0.0
    if p > 0.5:
        return -normal_quantile(1.0 - p)
    x = _acklam_lower(p)
    resid = 0.5 * math.erfc(-x / _SQRT2) - p
    return x - resid * _SQRT2PI * math.exp(0.5 * x * x)


def sample_stats(values: Sequence[float]) -> tuple[float, float]:
    """Mean and unbiased (n - 1) variance."""
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1 or arr.size < 2:
        raise InsufficientDataError("sample_stats needs at least two values")
    mean = float(arr.mean())
    var = float(np.sum((arr - mean) ** 2) / (arr.size - 1))
    return mean, var


def box_summary(values: Sequence[float]) -> BoxSummary:
    """Quartiles by linear interpolation; whiskers at the most extreme data
    points inside ``[q1 - 1.5 IQR, q3 + 1.5 IQR]``."""
    arr = np.sort(np.asarray(values, dtype=float).ravel())
    if arr.size == 0:
        raise InsufficientDataError("box_summary needs at least one value")
    q1, median, q3 = (float(v) for v in np.percentile(arr, [25, 50, 75]))
    iqr = q3 - q1
    lo_fence, hi_fence = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    inside = arr[(arr >= lo_fence) & (arr <= hi_fence)]
    return BoxSummary(
        median=median,
        q1=q1,
        q3=q3,
        whisker_low=float(inside[0]),
        whisker_high=float(inside[-1]),
        n_outliers=int(arr.size - inside.size),
    )


def welch_t_test(a: Sequence[float], b: Sequence[float], alpha: float) -> TestDecision:
    """Two-sided Welch test of ``mean(b) == mean(a)``.

    The statistic is ``(mean(b) - mean(a)) / sqrt(var_a/n_a + var_b/n_b)``;
    the Welch-Satterthwaite degrees of freedom are floored only for the
    critical-value lookup.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha!r}")
    mean_a, var_a = sample_stats(a)
    mean_b, var_b = sample_stats(b)
    n_a, n_b = len(a), len(b)
    delta = mean_b - mean_a
    se2_a, se2_b = var_a / n_a, var_b / n_b
    se2 = se2_a + se2_b
    if se2 == 0.0:
        df = n_a + n_b - 2
        stat = 0.0 if delta == 0.0 else math.copysign(math.inf, delta)
    else:
        df = se2 * se2 / (se2_a * se2_a / (n_a - 1) + se2_b * se2_b / (n_b - 1))
        stat = delta / math.sqrt(se2)
    crit = float(_sps.t.ppf(1.0 - alpha / 2.0, max(1, math.floor(df))))
    return TestDecision(reject=bool(abs(stat) > crit), statistic=float(stat), critical_value=crit)


def bootstrap_indices(n_rows: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` uniform row indices in ``[0, n_rows)``, drawn with replacement.

    Built from one double per index so that drawing ``n`` then ``m`` indices
    consumes the stream exactly like drawing ``n + m`` at once.
    """
    if n_rows < 1:
        raise InsufficientDataError("cannot resample from zero rows")
    idx = np.floor(rng.random(n) * n_rows).astype(np.int64)
    np.minimum(idx, n_rows - 1, out=idx)
    return idx


def bootstrap_resample(rows, n: int, rng: np.random.Generator):
    """Draw ``n`` rows uniformly with replacement.

    Arrays come back as arrays (fancy-indexed copies); other sequences come
    back as lists.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    idx = bootstrap_indices(len(rows), n, rng)
    if isinstance(rows, np.ndarray):
        return rows[idx]
    return [rows[i] for i in idx]
