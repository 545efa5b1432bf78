"""Moment estimates that drive sample-size planning.

``secrets`` moments estimate the ATE as the mean pooled ITE and the outcome
variance from a bootstrap variance of that mean, scaled back to a per-subject
variance with ``sigma^2 = var(ATE) * 2 n``. This keeps planning honest when
the ITEs are dependent (they share donors), where the plain ITE variance
would understate the spread of the ATE.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import kernels
from .cohort import ChangeScore
from .errors import ConfigError, InsufficientDataError
from .secrets import _arm, _pre_end, estimate_ites, pooled_ites
from .si import SiParams, split_permutation, train_size, tune_si_hyperparams
from .stats import bootstrap_indices

METHODS = ("secrets", "naive", "two_sample")


@dataclass(frozen=True)
class Moments:
    """ATE and per-subject outcome variance of the pooled ITEs."""

    ate: float
    variance: float
    variance_of_ate: float
    method: str

    def to_dict(self) -> dict:
        return {"ate": self.ate, "variance": self.variance,
                "variance_of_ate": self.variance_of_ate, "method": self.method}


@dataclass(frozen=True)
class TwoSampleMoments:
    """Raw-outcome difference in means and per-arm variances."""

    ate: float
    var_control: float
    var_treatment: float
    method: str = "two_sample"

    def to_dict(self) -> dict:
        return {"ate": self.ate, "var_control": self.var_control,
                "var_treatment": self.var_treatment, "method": self.method}


def estimate_ate(x_ctrl, x_treat, si: SiParams, outcome, rng: np.random.Generator) -> float:
    """Mean of the pooled ITEs from both estimation directions."""
    return float(np.mean(pooled_ites(x_ctrl, x_treat, si, outcome, rng)))


def variance_of_outcome(variance_of_ate: float, n_curr: int) -> float:
    """Per-subject variance implied by the variance of a mean over ``2 n`` ITEs."""
    if variance_of_ate < 0 or n_curr < 0:
        raise ValueError("inputs must be non-negative")
    return float(variance_of_ate) * 2.0 * n_curr


def bootstrap_variance(ite_fn: Callable[[np.ndarray, np.ndarray], np.ndarray], x_ctrl, x_treat,
                       B: int, rng: np.random.Generator) -> float:
    """Sample variance of ``mean(ite_fn(ctrl_b, treat_b))`` over ``B`` replicates.

    Each replicate resamples every arm from itself at its own size. This is
    the generic path; :func:`variance_of_ate` uses the compiled kernel for
    change-score outcomes.
    """
    if B < 2:
        raise ValueError("B must be at least 2")
    ctrl, treat = _arm(x_ctrl), _arm(x_treat)
    nc, nt = ctrl.shape[0], treat.shape[0]
    ates = np.empty(B)
    for b in range(B):
        c = ctrl[bootstrap_indices(nc, nc, rng)]
        t = treat[bootstrap_indices(nt, nt, rng)]
        ates[b] = np.mean(ite_fn(c, t))
    return float(ates.var(ddof=1))


def variance_of_ate(x_ctrl, x_treat, B: int, si: SiParams, outcome, rng: np.random.Generator,
                    retune_per_replicate: bool = False) -> float:
    """Bootstrap variance of the pooled-ITE ATE.

    By default the regularization for each direction is tuned once on the
    full arms and reused by every replicate; ``retune_per_replicate`` tunes
    again inside each replicate.
    """
    if B < 2:
        raise ValueError("B must be at least 2")
    ctrl, treat = _arm(x_ctrl), _arm(x_treat)
    nc, nt = ctrl.shape[0], treat.shape[0]
    if nc < 2 or nt < 2:
        raise InsufficientDataError("each arm needs at least two subjects")
    base = getattr(outcome, "baseline_index", None)
    if not isinstance(outcome, ChangeScore):
        if retune_per_replicate:
            fn = lambda c, t: pooled_ites(c, t, si, outcome, rng)  # noqa: E731
        else:
            lt = tune_si_hyperparams(treat, si, rng, baseline_index=base)
            lc = tune_si_hyperparams(ctrl, si, rng, baseline_index=base)

            def fn(c, t):
                return np.concatenate([estimate_ites(c, t, si, outcome, rng, lt),
                                       -estimate_ites(t, c, si, outcome, rng, lc)])
        return bootstrap_variance(fn, ctrl, treat, B, rng)

    lam_t = tune_si_hyperparams(treat, si, rng, baseline_index=base)
    lam_c = tune_si_hyperparams(ctrl, si, rng, baseline_index=base)
    idx_c = np.stack([bootstrap_indices(nc, nc, rng) for _ in range(B)])
    idx_t = np.stack([bootstrap_indices(nt, nt, rng) for _ in range(B)])
    if retune_per_replicate:
        perm_c = np.stack([split_permutation(nc, rng) for _ in range(B)])
        perm_t = np.stack([split_permutation(nt, rng) for _ in range(B)])
    else:
        perm_c = perm_t = np.zeros((B, 1), dtype=np.int64)
    mom = kernels.resampled_ite_moments(
        ctrl, treat, idx_c, idx_t, _pre_end(si, outcome, ctrl.shape[1]),
        outcome.baseline_index, outcome.endpoint_index, lam_t, lam_c,
        np.asarray(si.ridge_grid), perm_c, perm_t,
        train_size(nc, si.r_train_val), train_size(nt, si.r_train_val), retune_per_replicate,
    )
    return float(mom[:, 0].var(ddof=1))


def two_sample_moments(x_ctrl, x_treat, outcome) -> TwoSampleMoments:
    """Difference of mean outcomes and the per-arm sample variances."""
    yc = np.asarray(outcome(_arm(x_ctrl)), dtype=float)
    yt = np.asarray(outcome(_arm(x_treat)), dtype=float)
    if yc.size < 2 or yt.size < 2:
        raise InsufficientDataError("each arm needs at least two subjects")
    return TwoSampleMoments(float(yt.mean() - yc.mean()), float(yc.var(ddof=1)), float(yt.var(ddof=1)))


def estimate_moments(x_ctrl, x_treat, method: str, B: int, si: SiParams, outcome,
                     rng: np.random.Generator, retune_per_replicate: bool = False):
    """Dispatch on ``method``.

    Returns:
        :class:`Moments` for ``secrets`` and ``naive``, or
        :class:`TwoSampleMoments` for ``two_sample``.
    """
    if method == "two_sample":
        return two_sample_moments(x_ctrl, x_treat, outcome)
    if method not in METHODS:
        raise ConfigError(f"unknown moment method {method!r}; expected one of {METHODS}")
    ctrl, treat = _arm(x_ctrl), _arm(x_treat)
    ites = pooled_ites(ctrl, treat, si, outcome, rng)
    if method == "naive":
        return naive_moments(ites)
    v_ate = variance_of_ate(ctrl, treat, B, si, outcome, rng, retune_per_replicate)
    return secrets_moments(ites, v_ate, min(ctrl.shape[0], treat.shape[0]))


def naive_moments(ites) -> Moments:
    """Treat pooled ITEs as i.i.d.: variance is their sample variance."""
    y = np.asarray(ites, dtype=float)
    var = float(y.var(ddof=1))
    return Moments(float(y.mean()), var, var / y.size, "naive")


def secrets_moments(ites, var_of_ate: float, n_curr: int) -> Moments:
    return Moments(float(np.mean(ites)), variance_of_outcome(var_of_ate, n_curr), float(var_of_ate), "secrets")
