"""Trend-adaptive sample-size search with SI-based testing (TAD-SIE).

A trial starts with an internal pilot, then repeatedly grows both arms by a
fraction of the gap to the currently estimated target size. After every
increase the moments are re-estimated on all accumulated data and the trial
may stop for futility when conditional power is too low. A trial that
survives the search ends with the SECRETS test.

The search loop is shared with the two-sample ablation through the small
``Planner`` interface, which supplies moment estimation, target sizing, the
interim statistic and the final test.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import Protocol

import numpy as np

from .cohort import ChangeScore, RctDataset, empty_dataset, recruit
from .errors import ConfigError
from .moments import (Moments, TwoSampleMoments, naive_moments, secrets_moments,
                      two_sample_moments, variance_of_ate)
from .secrets import TestingParams, pooled_ites, run_secrets
from .si import SiParams
from .stats import TestDecision, normal_cdf, normal_quantile, welch_t_test

# Rounding slack so that e.g. a step of 5.000000000001 subjects stays 5.
_CEIL_SLACK = 1e-9


def sizing_constant(alpha: float, power: float) -> float:
    """``(z_{1-alpha/2} + z_{power})^2``."""
    if not (0 < alpha < 1 and 0 < power < 1):
        raise ValueError("alpha and power must lie in (0, 1)")
    return (normal_quantile(1 - alpha / 2) + normal_quantile(power)) ** 2


def one_sample_arm_size(ate: float, variance: float, alpha: float, power: float) -> float:
    """Arm size from the one-sample formula, halved across two arms.

    Returns ``inf`` when ``ate == 0`` and ``variance > 0``; callers map that to
    the maximum arm size.
    """
    k = sizing_constant(alpha, power)
    if variance < 0:
        raise ValueError("variance must be non-negative")
    if variance == 0:
        return 0.0
    if ate == 0:
        return math.inf
    return variance * k / (2.0 * ate * ate)


def step_from_target(n_target: float, n_curr: int, n_max: int, scale_factor: float) -> tuple[int, float]:
    """Step size and information fraction for a given target arm size."""
    if not 0 < scale_factor <= 1:
        raise ValueError("scale_factor must lie in (0, 1]")
    if n_curr < 1:
        raise ValueError("n_curr must be at least 1")
    if not math.isfinite(n_target):
        n_target = float(n_max)
    room = max(n_max - n_curr, 0)
    gap = n_target - n_curr
    raw = min(max(gap * scale_factor, 0.0), room)
    n_step = min(max(math.ceil(raw - _CEIL_SLACK), 0), room)
    n_step_max = min(max(gap, 0.0), room)
    if n_step_max <= 0:
        return 0, 1.0
    t = min((n_curr + n_step) / (n_curr + n_step_max), 1.0)
    return int(n_step), float(t)


def get_step_size(ate: float, variance: float, n_curr: int, alpha: float, power: float,
                  n_max: int, scale_factor: float) -> tuple[int, float]:
    """Next increment per arm and the information fraction after taking it.

    ``n_step`` is the scaled gap to the target, rounded up and limited by
    ``n_max``; ``t`` compares the post-step size with the size the full
    (unscaled) step would reach.
    """
    n_target = one_sample_arm_size(ate, variance, alpha, power)
    return step_from_target(n_target, n_curr, n_max, scale_factor)


# ---------------------------------------------------------------------------
# Conditional power
# ---------------------------------------------------------------------------


def _check_t(t: float) -> None:
    if not 0 < t < 1:
        raise ValueError(f"conditional power needs 0 < t < 1, got t={t}")


def conditional_power_two_sided(z: float, t: float, alpha: float) -> float:
    """Two-sided conditional power under the current trend."""
    _check_t(t)
    zc = normal_quantile(1 - alpha / 2)
    a = z / math.sqrt(t * (1 - t))
    b = zc / math.sqrt(1 - t)
    return normal_cdf(a - b) + normal_cdf(-a - b)


def conditional_power_drift(z: float, t: float, alpha: float, drift: float) -> float:
    """One-sided conditional power when the remaining data have ``drift``."""
    _check_t(t)
    zc = normal_quantile(1 - alpha)
    return 1.0 - normal_cdf((zc - z * math.sqrt(t) - drift * (1 - t)) / math.sqrt(1 - t))


def conditional_power_trend(z: float, t: float, alpha: float) -> float:
    """One-sided conditional power with the drift estimated from ``z``."""
    _check_t(t)
    zc = normal_quantile(1 - alpha)
    return normal_cdf((z / math.sqrt(t) - zc) / math.sqrt(1 - t))


def interim_z(moments, n_curr: int) -> float:
    """Interim statistic for either moment type.

    Pooled-ITE moments use ``ate / sqrt(variance / (2 n))``; two-sample
    moments use ``ate / sqrt((var_c + var_t) / n)``. Zero variance gives
    ``+-inf`` (or ``nan`` when the ATE is also zero).
    """
    if isinstance(moments, TwoSampleMoments):
        denom = (moments.var_control + moments.var_treatment) / n_curr
    else:
        denom = moments.variance / (2.0 * n_curr)
    if denom > 0:
        return moments.ate / math.sqrt(denom)
    if moments.ate == 0:
        return math.nan
    return math.copysign(math.inf, moments.ate)


def futility_from_z(z: float, t: float, alpha: float, boundary: float) -> tuple[bool, float]:
    """``(futile, cp)``; ``t >= 1`` skips the check."""
    if not 0 <= boundary <= 1:
        raise ValueError("futility boundary must lie in [0, 1]")
    if t >= 1:
        return False, math.nan
    if math.isnan(z):
        # Zero ATE measured without noise: conditional power is nil.
        return boundary > 0, 0.0
    cp = conditional_power_two_sided(z, t, alpha)
    # A zero boundary means "never stop", even if cp underflows to 0.
    return boundary > 0 and cp <= boundary, cp


def check_for_futility(moments, n_curr: int, t: float, alpha: float, futility_power_boundary: float) -> bool:
    """True when conditional power at ``t`` is at most the boundary.

    A boundary of 0 disables futility stopping.
    """
    return futility_from_z(interim_z(moments, n_curr), t, alpha, futility_power_boundary)[0]


# ---------------------------------------------------------------------------
# Configuration and results
# ---------------------------------------------------------------------------

MOMENT_METHODS = ("secrets", "naive", "two_sample")
CP_MOMENT_METHODS = ("secrets", "naive")


@dataclass(frozen=True)
class TadConfig:
    """TAD-SIE hyperparameters.

    ``testing.alpha_target`` is kept equal to ``alpha_target``.
    """

    n_pilot: int = 30
    alpha_target: float = 0.05
    power_target: float = 0.8
    n_max: int = 1500
    step_size_scale_factor: float = 0.1
    futility_power_boundary: float = 0.11
    B: int = 100
    T: int = 100
    si: SiParams = field(default_factory=SiParams)
    testing: TestingParams = field(default_factory=TestingParams)
    moment_method: str = "secrets"
    cp_moment_method: str = "secrets"
    retune_per_replicate: bool = False

    def __post_init__(self):
        if not 2 <= self.n_pilot <= self.n_max:
            raise ConfigError("need 2 <= n_pilot <= n_max")
        if not 0 < self.alpha_target < 1 or not 0 < self.power_target < 1:
            raise ConfigError("alpha_target and power_target must lie in (0, 1)")
        if not 0 < self.step_size_scale_factor <= 1:
            raise ConfigError("step_size_scale_factor must lie in (0, 1]")
        if not 0 <= self.futility_power_boundary <= 1:
            raise ConfigError("futility_power_boundary must lie in [0, 1]")
        if self.B < 2 or self.T < 2:
            raise ConfigError("B and T must be at least 2")
        if self.moment_method not in MOMENT_METHODS:
            raise ConfigError(f"moment_method must be one of {MOMENT_METHODS}")
        if self.cp_moment_method not in CP_MOMENT_METHODS:
            raise ConfigError(f"cp_moment_method must be one of {CP_MOMENT_METHODS}")
        if self.testing.alpha_target != self.alpha_target:
            object.__setattr__(self, "testing", replace(self.testing, alpha_target=self.alpha_target))

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["si"] = self.si.to_dict()
        out["testing"] = self.testing.to_dict()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "TadConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown tad keys: {sorted(unknown)}")
        data = dict(data)
        if isinstance(data.get("si"), dict):
            data["si"] = SiParams.from_dict(data["si"])
        if isinstance(data.get("testing"), dict):
            data["testing"] = TestingParams.from_dict(data["testing"])
        return cls(**data)


@dataclass(frozen=True)
class IterationTrace:
    """One search iteration, recorded after recruitment and re-estimation."""

    iteration: int
    n_step: int
    n_curr: int
    t: float
    ate: float
    variance: float
    cp: float
    futility: bool

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class TrialResult:
    """Outcome of one simulated trial.

    Attributes:
        decision: ``"reject"`` or ``"accept"``.
        futility_stopped: Stopped for futility (and so accepted).
        final_arm_size: Subjects per arm at the end.
        iterations: Number of search iterations (sample-size increases for
            the adaptive designs; 1 for the fixed design).
        trace: Per-iteration details.
        increases: Whether the planned size was ever increased.
        test: Final test details, absent when stopped for futility.
    """

    decision: str
    futility_stopped: bool
    final_arm_size: int
    iterations: int
    trace: tuple = ()
    increases: bool = False
    test: TestDecision | None = None

    def __post_init__(self):
        if self.decision not in ("reject", "accept"):
            raise ValueError("decision must be 'reject' or 'accept'")
        if self.futility_stopped and self.decision != "accept":
            raise ValueError("a futility stop must accept")

    @property
    def rejected(self) -> bool:
        return self.decision == "reject"

    def to_dict(self) -> dict:
        return {
            "decision": self.decision,
            "futility_stopped": self.futility_stopped,
            "final_arm_size": self.final_arm_size,
            "iterations": self.iterations,
            "increases": self.increases,
            "trace": [t.to_dict() for t in self.trace],
            "test": None if self.test is None else self.test.to_dict(),
        }


# ---------------------------------------------------------------------------
# Planners
# ---------------------------------------------------------------------------


class Planner(Protocol):
    """Pieces of the search loop that differ between designs."""

    def estimate(self, ctrl: np.ndarray, treat: np.ndarray, rng: np.random.Generator):
        """Return ``(sizing_moments, cp_moments)``."""

    def target_size(self, moments) -> float:
        ...

    def final_test(self, ctrl: np.ndarray, treat: np.ndarray, rng: np.random.Generator) -> TestDecision:
        ...


def planning_variance(moments) -> float:
    if isinstance(moments, TwoSampleMoments):
        return moments.var_control + moments.var_treatment
    return moments.variance


@dataclass
class SiePlanner:
    """Pooled-ITE moments, halved one-sample sizing and the SECRETS test."""

    config: TadConfig
    outcome: ChangeScore

    def estimate(self, ctrl, treat, rng):
        cfg = self.config
        ites = pooled_ites(ctrl, treat, cfg.si, self.outcome, rng)
        out: dict[str, Moments] = {}
        for method in dict.fromkeys((cfg.moment_method, cfg.cp_moment_method)):
            if method == "naive":
                out[method] = naive_moments(ites)
            else:
                v = variance_of_ate(ctrl, treat, cfg.B, cfg.si, self.outcome, rng, cfg.retune_per_replicate)
                out[method] = secrets_moments(ites, v, min(ctrl.shape[0], treat.shape[0]))
        return out[cfg.moment_method], out[cfg.cp_moment_method]

    def target_size(self, moments) -> float:
        cfg = self.config
        return one_sample_arm_size(moments.ate, moments.variance, cfg.alpha_target, cfg.power_target)

    def final_test(self, ctrl, treat, rng):
        cfg = self.config
        return run_secrets(ctrl, treat, cfg.si, cfg.testing, cfg.T, self.outcome, rng)


@dataclass
class TwoSamplePlanner:
    """Raw-outcome moments, two-sample sizing without halving, Welch test."""

    config: TadConfig
    outcome: ChangeScore

    def estimate(self, ctrl, treat, rng):
        m = two_sample_moments(ctrl, treat, self.outcome)
        return m, m

    def target_size(self, moments) -> float:
        cfg = self.config
        return two_sample_size(moments, cfg.alpha_target, cfg.power_target)

    def final_test(self, ctrl, treat, rng):
        return welch_t_test(self.outcome(ctrl), self.outcome(treat), self.config.alpha_target)


def two_sample_size(moments: TwoSampleMoments, alpha: float, power: float) -> float:
    """Real-valued per-arm size ``(var_c + var_t) K / ate^2``; ``inf`` when the ATE is 0."""
    var = moments.var_control + moments.var_treatment
    if var < 0:
        raise ValueError("variances must be non-negative")
    k = sizing_constant(alpha, power)
    if var == 0:
        return 0.0
    if moments.ate == 0:
        return math.inf
    return var * k / moments.ate ** 2


def outcome_for(source) -> ChangeScore:
    return ChangeScore(source.baseline_index, source.endpoint_index)


def default_planner(config: TadConfig, source) -> Planner:
    if config.moment_method == "two_sample":
        return TwoSamplePlanner(config, outcome_for(source))
    return SiePlanner(config, outcome_for(source))


# ---------------------------------------------------------------------------
# Trial flow
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SearchOutcome:
    dataset: RctDataset
    futility: bool
    trace: tuple


def conduct_pilot_study(config: TadConfig, source, rng: np.random.Generator,
                        planner: Planner | None = None) -> tuple[RctDataset, object]:
    """Recruit ``n_pilot`` subjects per arm and estimate the sizing moments."""
    planner = planner or default_planner(config, source)
    data = empty_dataset(source).append(*recruit(source, config.n_pilot))
    moments, _ = planner.estimate(data.control, data.treatment, rng)
    return data, moments


def run_sample_size_search(pilot: tuple[RctDataset, object], config: TadConfig, source,
                           rng: np.random.Generator, planner: Planner | None = None) -> SearchOutcome:
    """Grow the arms until the step rounds to zero or the trial looks futile."""
    planner = planner or default_planner(config, source)
    data, moments = pilot
    trace = []
    while True:
        n_curr = data.arm_size
        n_step, t = step_from_target(planner.target_size(moments), n_curr, config.n_max,
                                     config.step_size_scale_factor)
        if n_step == 0:
            return SearchOutcome(data, False, tuple(trace))
        data = data.append(*recruit(source, n_step))
        moments, cp_moments = planner.estimate(data.control, data.treatment, rng)
        futile, cp = futility_from_z(interim_z(cp_moments, data.arm_size), t,
                                     config.alpha_target, config.futility_power_boundary)
        trace.append(IterationTrace(len(trace) + 1, n_step, data.arm_size, t,
                                    float(moments.ate), float(planning_variance(moments)), cp, futile))
        if futile:
            return SearchOutcome(data, True, tuple(trace))


def run_adaptive_trial(config: TadConfig, source, rng: np.random.Generator, planner: Planner) -> TrialResult:
    pilot = conduct_pilot_study(config, source, rng, planner)
    found = run_sample_size_search(pilot, config, source, rng, planner)
    common = dict(final_arm_size=found.dataset.arm_size, iterations=len(found.trace),
                  trace=found.trace, increases=bool(found.trace))
    if found.futility:
        return TrialResult("accept", True, **common)
    test = planner.final_test(found.dataset.control, found.dataset.treatment, rng)
    return TrialResult("reject" if test.reject else "accept", False, test=test, **common)


def run_tad_sie(config: TadConfig, source, rng: np.random.Generator) -> TrialResult:
    """Pilot, sample-size search, then the SECRETS test unless futile."""
    return run_adaptive_trial(config, source, rng, default_planner(config, source))
