"""Hypothesis testing with synthetic-intervention ITEs.

Each subject's individual treatment effect is estimated by predicting its
outcome under the other arm's intervention from donors in that arm, which
simulates a crossover design. The pooled ITEs are tested with a one-sample
t statistic whose critical value is calibrated against a bootstrap null built
from the control arm alone.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from . import kernels
from .cohort import ChangeScore
from .errors import ConfigError, DegenerateStatisticError, InsufficientDataError
from .si import MIN_TUNING_DONORS, SiParams, counterfactuals, train_size, tune_si_hyperparams
from .stats import TestDecision, bootstrap_indices


@dataclass(frozen=True)
class TestingParams:
    """Critical-value tuner settings.

    Attributes:
        alpha_target: Desired two-sided significance level.
        t_lower: Initial lower end of the candidate range.
        t_upper: Initial upper end of the candidate range.
        t_limit_exp: Factor by which the range is pushed outwards when the
            target is not bracketed.
        n_s: Candidates evaluated per round.
        delta_alpha: Accepted gap between empirical and target significance.
        max_rounds: Round budget before giving up.
    """

    __test__ = False

    alpha_target: float = 0.05
    t_lower: float = 3.0
    t_upper: float = 5.0
    t_limit_exp: float = 2.0
    n_s: int = 10
    delta_alpha: float = 1e-3
    max_rounds: int = 20

    def __post_init__(self):
        if not 0 < self.alpha_target < 1:
            raise ConfigError("alpha_target must lie in (0, 1)")
        if not 0 < self.t_lower < self.t_upper:
            raise ConfigError("need 0 < t_lower < t_upper")
        if not self.t_limit_exp > 1:
            raise ConfigError("t_limit_exp must exceed 1")
        if self.n_s < 2:
            raise ConfigError("n_s must be at least 2")
        if not self.delta_alpha > 0:
            raise ConfigError("delta_alpha must be positive")
        if self.max_rounds < 1:
            raise ConfigError("max_rounds must be at least 1")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, data: dict) -> "TestingParams":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown testing keys: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class IteSet:
    """ITEs for both arms, signed as treatment minus control."""

    control_ites: np.ndarray
    treatment_ites: np.ndarray

    def pooled(self) -> np.ndarray:
        return np.concatenate([self.control_ites, self.treatment_ites])


@dataclass(frozen=True)
class CriticalValue:
    """Tuner output. ``converged`` is False when the round budget ran out."""

    value: float
    alpha_hat: float
    converged: bool
    rounds: int


def _arm(x) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    if a.ndim != 2:
        raise ValueError("arm data must be a (subjects x visits) matrix")
    return np.ascontiguousarray(a)


def _pre_end(si: SiParams, outcome: ChangeScore, visits: int) -> int:
    return si.resolve_pre_end(visits, outcome.baseline_index)


def estimate_ites(x_unexposed, x_exposed, si: SiParams, outcome, rng: np.random.Generator,
                  regularization: float | None = None) -> np.ndarray:
    """Counterfactual-minus-observed outcome for every unexposed subject.

    Counterfactuals are predicted from the exposed subjects. With control
    subjects as ``x_unexposed`` the values estimate treatment minus control;
    the caller flips the sign for treatment subjects.

    Args:
        x_unexposed: Targets, ``(n, visits)``.
        x_exposed: Donors, ``(m, visits)``.
        si: Counterfactual settings.
        outcome: A :class:`~tadsie.cohort.ChangeScore`; other callables mapping
            trajectories to outcomes work through a slower generic path.
        rng: Drives the tuning split when ``regularization`` is not given.
        regularization: Skip tuning and use this strength.
    """
    targets, donors = _arm(x_unexposed), _arm(x_exposed)
    if targets.shape[0] == 0:
        raise InsufficientDataError("no subjects to estimate ITEs for")
    base = getattr(outcome, "baseline_index", None)
    lam = regularization
    if lam is None:
        lam = tune_si_hyperparams(donors, si, rng, baseline_index=base)
    pre = si.resolve_pre_end(donors.shape[1], base)
    if isinstance(outcome, ChangeScore):
        return kernels.change_ites(targets, donors, pre, outcome.baseline_index,
                                   outcome.endpoint_index, float(lam))
    cf = counterfactuals(donors, targets, lam, si, baseline_index=base)
    return np.asarray(outcome(cf), dtype=float) - np.asarray(outcome(targets), dtype=float)


def estimate_ite_set(x_ctrl, x_treat, si: SiParams, outcome, rng: np.random.Generator) -> IteSet:
    ctrl, treat = _arm(x_ctrl), _arm(x_treat)
    return IteSet(
        control_ites=estimate_ites(ctrl, treat, si, outcome, rng),
        treatment_ites=-estimate_ites(treat, ctrl, si, outcome, rng),
    )


def pooled_ites(x_ctrl, x_treat, si: SiParams, outcome, rng: np.random.Generator) -> np.ndarray:
    return estimate_ite_set(x_ctrl, x_treat, si, outcome, rng).pooled()


def test_statistic(ites) -> float:
    """One-sample t statistic ``mean / sqrt(var / n)`` (``n - 1`` variance).

    Raises:
        InsufficientDataError: Fewer than two values.
        DegenerateStatisticError: Zero sample variance.
    """
    y = np.asarray(ites, dtype=float)
    if y.size < 2:
        raise InsufficientDataError("test statistic needs at least two ITEs")
    var = float(y.var(ddof=1))
    if not var > 0:
        raise DegenerateStatisticError("ITEs have zero sample variance")
    return float(y.mean() / math.sqrt(var / y.size))


test_statistic.__test__ = False


def _statistic_from_moments(mean: float, var: float, n: int) -> float:
    if not (np.isfinite(var) and var > 0):
        return math.nan
    return mean / math.sqrt(var / n)


def _null_batch(ctrl: np.ndarray, size: int, si: SiParams, outcome: ChangeScore,
                rng: np.random.Generator) -> np.ndarray:
    n = ctrl.shape[0]
    pre = _pre_end(si, outcome, ctrl.shape[1])
    idx_a = np.stack([bootstrap_indices(n, n, rng) for _ in range(size)])
    idx_b = np.stack([bootstrap_indices(n, n, rng) for _ in range(size)])
    perm_a = np.stack([rng.permutation(n) for _ in range(size)]).astype(np.int64)
    perm_b = np.stack([rng.permutation(n) for _ in range(size)]).astype(np.int64)
    n_train = train_size(n, si.r_train_val)
    mom = kernels.resampled_ite_moments(
        ctrl, ctrl, idx_a, idx_b, pre, outcome.baseline_index, outcome.endpoint_index,
        0.0, 0.0, np.asarray(si.ridge_grid), perm_a, perm_b, n_train, n_train, True,
    )
    return np.array([_statistic_from_moments(m, v, 2 * n) for m, v in mom])


def _null_one_generic(ctrl, si, outcome, rng) -> float:
    n = ctrl.shape[0]
    a = ctrl[bootstrap_indices(n, n, rng)]
    b = ctrl[bootstrap_indices(n, n, rng)]
    try:
        return test_statistic(pooled_ites(a, b, si, outcome, rng))
    except DegenerateStatisticError:
        return math.nan


def sample_null(x_ctrl, T: int, si: SiParams, outcome, rng: np.random.Generator) -> np.ndarray:
    """Bootstrap draws of the test statistic when both arms share one law.

    Each draw resamples two pseudo-arms of the control arm's size from the
    control arm, tunes and estimates ITEs in both directions, and records the
    pooled statistic. A degenerate draw is redrawn once.

    Raises:
        DegenerateStatisticError: A draw stays degenerate after its retry.
    """
    ctrl = _arm(x_ctrl)
    if T < 2:
        raise ValueError("T must be at least 2")
    if ctrl.shape[0] < MIN_TUNING_DONORS:
        raise InsufficientDataError(f"null sampling needs at least {MIN_TUNING_DONORS} control subjects")
    if isinstance(outcome, ChangeScore):
        stats = _null_batch(ctrl, T, si, outcome, rng)
        for i in np.flatnonzero(~np.isfinite(stats)):
            stats[i] = _null_batch(ctrl, 1, si, outcome, rng)[0]
    else:
        stats = np.array([_null_one_generic(ctrl, si, outcome, rng) for _ in range(T)])
        for i in np.flatnonzero(~np.isfinite(stats)):
            stats[i] = _null_one_generic(ctrl, si, outcome, rng)
    if not np.all(np.isfinite(stats)):
        raise DegenerateStatisticError("null statistic degenerate after resampling")
    return stats


def empirical_alpha(null_samples, c) -> np.ndarray | float:
    """Fraction of ``|null_samples|`` strictly above each candidate ``c``."""
    s = np.sort(np.abs(np.asarray(null_samples, dtype=float)))
    above = s.size - np.searchsorted(s, c, side="right")
    return above / s.size


def tune_critical_value(null_samples, params: TestingParams) -> CriticalValue:
    """Bracketing search for ``c`` with empirical significance near the target.

    Each round scores ``n_s`` evenly spaced candidates in ``[lo, hi]``. When
    every candidate rejects too often the range moves up
    (``[hi, hi * t_limit_exp]``); when every candidate rejects too rarely it
    moves down (``[lo / t_limit_exp, lo]``); otherwise it narrows to the two
    adjacent candidates straddling the target. The closest candidate seen is
    returned, preferring the smaller ``c`` on ties.
    """
    s = np.asarray(null_samples, dtype=float)
    if s.size < 10:
        raise InsufficientDataError("need at least 10 null samples")
    target = params.alpha_target
    lo, hi = params.t_lower, params.t_upper
    best_c, best_a, best_err = math.nan, math.nan, math.inf
    rounds = 0
    converged = False
    for rounds in range(1, params.max_rounds + 1):
        cands = np.linspace(lo, hi, params.n_s)
        ahat = empirical_alpha(s, cands)
        err = np.abs(ahat - target)
        for c, a, e in zip(cands, ahat, err):
            if e < best_err or (e == best_err and c < best_c):
                best_c, best_a, best_err = float(c), float(a), float(e)
        if best_err <= params.delta_alpha:
            converged = True
            break
        if ahat.min() > target:
            lo, hi = hi, hi * params.t_limit_exp
        elif ahat.max() < target:
            lo, hi = lo / params.t_limit_exp, lo
        else:
            # ahat is non-increasing in c; find the crossing.
            i = int(np.flatnonzero(ahat >= target).max())
            i = min(i, cands.size - 2)
            lo, hi = float(cands[i]), float(cands[i + 1])
            if not hi > lo:
                break
    return CriticalValue(best_c, best_a, converged, rounds)


def run_secrets(x_ctrl, x_treat, si: SiParams, testing: TestingParams, T: int, outcome,
                rng: np.random.Generator) -> TestDecision:
    """Reject iff the pooled-ITE statistic exceeds the tuned critical value in magnitude."""
    ctrl, treat = _arm(x_ctrl), _arm(x_treat)
    if ctrl.shape[0] < 2 or treat.shape[0] < 2:
        raise InsufficientDataError("each arm needs at least two subjects")
    stat = test_statistic(pooled_ites(ctrl, treat, si, outcome, rng))
    crit = tune_critical_value(sample_null(ctrl, T, si, outcome, rng), testing).value
    return TestDecision(reject=abs(stat) > crit, statistic=stat, critical_value=crit)
