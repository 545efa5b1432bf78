import math

import numpy as np
import pytest

from tadsie.baselines import (BaselineConfig, run_fixed_sample_design, run_standard_tad,
                              run_standard_tad_sie, run_tad_standard_test, two_sample_arm_size)
from tadsie.cohort import GeneratorSource, desk_cohort
from tadsie.errors import ConfigError
from tadsie.moments import TwoSampleMoments
from tadsie.tad import TadConfig


def test_two_sample_arm_size_oracle():
    # (1 + 1) * 7.8488797... / 0.04 = 392.44..., rounded up.
    assert two_sample_arm_size(TwoSampleMoments(0.2, 1.0, 1.0), 0.05, 0.8) == 393


def test_two_sample_arm_size_edges():
    assert two_sample_arm_size(TwoSampleMoments(0.0, 1.0, 1.0), 0.05, 0.8) == math.inf
    assert two_sample_arm_size(TwoSampleMoments(0.0, 1.0, 1.0), 0.05, 0.8, n_max=500) == 500
    assert two_sample_arm_size(TwoSampleMoments(100.0, 1.0, 1.0), 0.05, 0.8) == 2
    assert two_sample_arm_size(TwoSampleMoments(0.2, 1.0, 1.0), 0.05, 0.8, n_max=300) == 300


def test_config_validation_and_round_trip():
    for bad in ({"n_pilot": 1}, {"alpha_target": 1.0}, {"interim_information_fraction": 1.0},
                {"cp_promising_threshold": 1.0}):
        with pytest.raises(ConfigError):
            BaselineConfig(**bad)
    cfg = BaselineConfig(alpha_target=0.1, B=10)
    assert cfg.testing.alpha_target == 0.1
    assert BaselineConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError):
        BaselineConfig.from_dict({"bogus": 0})
    tad = cfg.to_tad_config("two_sample")
    assert isinstance(tad, TadConfig) and tad.moment_method == "two_sample" and tad.B == 10


def _src(effect=0.25, hyp="H1", seed=0):
    return GeneratorSource(desk_cohort(effect), hyp, seed)


def test_fixed_design_single_look():
    r = run_fixed_sample_design(BaselineConfig(), _src(), np.random.default_rng(0))
    assert r.iterations == 1 and not r.futility_stopped and not r.increases
    assert 30 <= r.final_arm_size <= 1500
    assert r.trace[0].n_curr == r.final_arm_size
    assert r.test.reject == (r.decision == "reject")


def test_fixed_design_is_deterministic():
    a = run_fixed_sample_design(BaselineConfig(), _src(seed=3), np.random.default_rng(3))
    b = run_fixed_sample_design(BaselineConfig(), _src(seed=3), np.random.default_rng(3))
    assert a == b


def test_standard_tad_interim_sits_near_the_plan():
    for seed in range(5):
        r = run_standard_tad(BaselineConfig(), _src(seed=seed), np.random.default_rng(seed))
        tr = r.trace[0]
        assert r.iterations == 1 and not r.futility_stopped
        assert tr.t <= 1.0
        if r.increases:
            assert tr.cp >= 0.5
            assert r.final_arm_size > tr.n_curr - tr.n_step


def test_standard_tad_never_increases_when_threshold_unreachable():
    cfg = BaselineConfig(cp_promising_threshold=0.999999)
    for seed in range(4):
        r = run_standard_tad(cfg, _src(effect=0.0, hyp="H0", seed=seed), np.random.default_rng(seed))
        assert not r.increases


def test_standard_tad_sie_uses_secrets():
    cfg = BaselineConfig(B=20, T=20)
    r = run_standard_tad_sie(cfg, _src(effect=0.5, seed=1), np.random.default_rng(1))
    assert r.test is not None and r.iterations == 1
    assert r.test.critical_value > 0


def test_tad_standard_test_runs_search_with_welch():
    cfg = TadConfig(B=20, T=20, moment_method="two_sample")
    r = run_tad_standard_test(cfg, _src(effect=0.5, seed=2), np.random.default_rng(2))
    assert r.final_arm_size >= 30
    assert r.futility_stopped or r.test is not None


def test_zero_threshold_increases_whenever_the_default_does():
    lo, default = BaselineConfig(cp_promising_threshold=0.0), BaselineConfig()
    n_lo = n_default = 0
    for seed in range(10):
        a = run_standard_tad(lo, _src(seed=seed), np.random.default_rng(seed))
        b = run_standard_tad(default, _src(seed=seed), np.random.default_rng(seed))
        assert a.increases or not b.increases
        n_lo, n_default = n_lo + a.increases, n_default + b.increases
    assert n_lo > n_default
