"""Comparison designs.

* Fixed sample design: size the trial once from an internal pilot.
* Standard-TAD: one interim look near the end of the planned trial; the size
  is increased only when the trend looks promising.
* Standard-TAD+SIE: the same single-interim rule driven by pooled-ITE moments
  and ending with the SECRETS test.
* TAD-SIE with standard testing: the TAD-SIE search loop with raw-outcome
  moments, unhalved two-sample sizing and a Welch test.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .cohort import empty_dataset, recruit
from .errors import ConfigError
from .moments import TwoSampleMoments
from .secrets import TestingParams
from .si import SiParams
from .tad import (IterationTrace, Planner, SiePlanner, TadConfig, TrialResult, TwoSamplePlanner,
                  _CEIL_SLACK, conditional_power_trend, interim_z, outcome_for, planning_variance,
                  run_adaptive_trial, two_sample_size)


@dataclass(frozen=True)
class BaselineConfig:
    """Settings shared by the non-searching designs.

    ``B``, ``T``, ``si`` and ``testing`` only matter for Standard-TAD+SIE.
    """

    n_pilot: int = 30
    alpha_target: float = 0.05
    power_target: float = 0.8
    n_max: int = 1500
    interim_information_fraction: float = 0.99
    cp_promising_threshold: float = 0.5
    B: int = 100
    T: int = 100
    si: SiParams = field(default_factory=SiParams)
    testing: TestingParams = field(default_factory=TestingParams)
    retune_per_replicate: bool = False

    def __post_init__(self):
        if not 2 <= self.n_pilot <= self.n_max:
            raise ConfigError("need 2 <= n_pilot <= n_max")
        if not 0 < self.alpha_target < 1 or not 0 < self.power_target < 1:
            raise ConfigError("alpha_target and power_target must lie in (0, 1)")
        if not 0 < self.interim_information_fraction < 1:
            raise ConfigError("interim_information_fraction must lie in (0, 1)")
        if not 0 <= self.cp_promising_threshold < 1:
            raise ConfigError("cp_promising_threshold must lie in [0, 1)")
        if self.testing.alpha_target != self.alpha_target:
            object.__setattr__(self, "testing", replace(self.testing, alpha_target=self.alpha_target))

    def to_tad_config(self, moment_method: str = "secrets") -> TadConfig:
        return TadConfig(
            n_pilot=self.n_pilot, alpha_target=self.alpha_target, power_target=self.power_target,
            n_max=self.n_max, B=self.B, T=self.T, si=self.si, testing=self.testing,
            moment_method=moment_method, retune_per_replicate=self.retune_per_replicate,
        )

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["si"] = self.si.to_dict()
        out["testing"] = self.testing.to_dict()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "BaselineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown baseline keys: {sorted(unknown)}")
        data = dict(data)
        if isinstance(data.get("si"), dict):
            data["si"] = SiParams.from_dict(data["si"])
        if isinstance(data.get("testing"), dict):
            data["testing"] = TestingParams.from_dict(data["testing"])
        return cls(**data)


def _ceil(x: float) -> float:
    return math.ceil(x - _CEIL_SLACK) if math.isfinite(x) else math.inf


def two_sample_arm_size(moments: TwoSampleMoments, alpha: float, power: float,
                        n_max: int | None = None) -> float:
    """Per-arm size ``ceil((var_c + var_t)(z_{1-alpha/2} + z_{power})^2 / ate^2)``.

    The result is at least 2. A zero ATE gives ``inf`` unless ``n_max`` is
    supplied, which also caps the result.
    """
    n = max(_ceil(two_sample_size(moments, alpha, power)), 2)
    if n_max is not None:
        n = min(n, n_max)
    return int(n) if math.isfinite(n) else n


def _clamped(target: float, lo: int, hi: int) -> int:
    return int(min(max(_ceil(target), lo), hi))


def _grow(data, source, to_size: int):
    if to_size > data.arm_size:
        data = data.append(*recruit(source, to_size - data.arm_size))
    return data


def run_fixed_sample_design(config: BaselineConfig, source, rng: np.random.Generator) -> TrialResult:
    """Size from pilot outcome moments, recruit the rest and run a Welch test."""
    planner = TwoSamplePlanner(config.to_tad_config("two_sample"), outcome_for(source))
    data = empty_dataset(source).append(*recruit(source, config.n_pilot))
    moments, _ = planner.estimate(data.control, data.treatment, rng)
    planned = _clamped(planner.target_size(moments), max(2, config.n_pilot), config.n_max)
    n_step = planned - data.arm_size
    data = _grow(data, source, planned)
    test = planner.final_test(data.control, data.treatment, rng)
    trace = (IterationTrace(1, n_step, data.arm_size, 1.0, moments.ate, planning_variance(moments),
                            math.nan, False),)
    return TrialResult("reject" if test.reject else "accept", False, data.arm_size, 1, trace, False, test)


def _run_promising_zone(config: BaselineConfig, source, rng: np.random.Generator,
                        planner: Planner) -> TrialResult:
    data = empty_dataset(source).append(*recruit(source, config.n_pilot))
    moments, _ = planner.estimate(data.control, data.treatment, rng)
    planned = _clamped(planner.target_size(moments), max(2, config.n_pilot), config.n_max)
    n_int = max(config.n_pilot, math.floor(config.interim_information_fraction * planned))
    data = _grow(data, source, n_int)
    moments, cp_moments = planner.estimate(data.control, data.treatment, rng)
    t = data.arm_size / planned
    cp = math.nan
    final = planned
    if t < 1:
        z = abs(interim_z(cp_moments, data.arm_size))
        if math.isnan(z):
            z = 0.0
        # One-sided trend form at the two-sided critical value.
        cp = conditional_power_trend(z, t, config.alpha_target / 2)
        if cp >= config.cp_promising_threshold:
            final = max(planned, _clamped(planner.target_size(moments), 2, config.n_max))
    n_step = final - data.arm_size
    data = _grow(data, source, final)
    test = planner.final_test(data.control, data.treatment, rng)
    trace = (IterationTrace(1, n_step, data.arm_size, min(t, 1.0), float(moments.ate),
                            float(planning_variance(moments)), cp, False),)
    return TrialResult("reject" if test.reject else "accept", False, data.arm_size, 1, trace,
                       final > planned, test)


def run_standard_tad(config: BaselineConfig, source, rng: np.random.Generator) -> TrialResult:
    """Promising-zone design on raw outcomes with a Welch final test."""
    planner = TwoSamplePlanner(config.to_tad_config("two_sample"), outcome_for(source))
    return _run_promising_zone(config, source, rng, planner)


def run_standard_tad_sie(config: BaselineConfig, source, rng: np.random.Generator) -> TrialResult:
    """Promising-zone design on pooled-ITE moments with the SECRETS final test."""
    planner = SiePlanner(config.to_tad_config("secrets"), outcome_for(source))
    return _run_promising_zone(config, source, rng, planner)


def run_tad_standard_test(config: TadConfig, source, rng: np.random.Generator) -> TrialResult:
    """The TAD-SIE search loop on raw outcomes, ending with a Welch test."""
    return run_adaptive_trial(config, source, rng, TwoSamplePlanner(config, outcome_for(source)))
