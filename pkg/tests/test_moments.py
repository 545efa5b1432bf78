import numpy as np
import pytest

from tadsie.cohort import ChangeScore, CohortGenConfig, GeneratorSource, desk_cohort, recruit
from tadsie.errors import ConfigError, InsufficientDataError
from tadsie.moments import (Moments, TwoSampleMoments, bootstrap_variance, estimate_ate,
                            estimate_moments, naive_moments, secrets_moments, two_sample_moments,
                            variance_of_ate, variance_of_outcome)
from tadsie.repro import THEOREM1_SIZES, dependent_ites, independent_ites, linear_fit, scaling_points
from tadsie.secrets import pooled_ites
from tadsie.si import SiParams

OUT = ChangeScore(3, 7)


def _arms(n=40, seed=0):
    return recruit(GeneratorSource(desk_cohort(0.25), "H1", seed), n)


def test_variance_of_outcome_scales_by_total_count():
    assert variance_of_outcome(0.01, 50) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        variance_of_outcome(-1.0, 10)


def test_naive_moments():
    m = naive_moments([1.0, 2.0, 3.0, 4.0])
    assert isinstance(m, Moments) and m.method == "naive"
    assert m.ate == 2.5
    assert m.variance == pytest.approx(5 / 3)
    assert m.variance_of_ate == pytest.approx(5 / 12)


def test_secrets_moments():
    m = secrets_moments([1.0, 3.0], 0.02, 25)
    assert (m.ate, m.variance, m.variance_of_ate, m.method) == (2.0, pytest.approx(1.0), 0.02, "secrets")


def test_two_sample_moments():
    ctrl = np.array([[0.0, 1.0], [0.0, 3.0]])
    treat = np.array([[0.0, 4.0], [0.0, 8.0], [0.0, 6.0]])
    m = two_sample_moments(ctrl, treat, ChangeScore(0, 1))
    assert isinstance(m, TwoSampleMoments)
    assert (m.ate, m.var_control, m.var_treatment) == (4.0, 2.0, 4.0)
    with pytest.raises(InsufficientDataError):
        two_sample_moments(ctrl[:1], treat, ChangeScore(0, 1))


def test_estimate_ate_is_mean_of_pooled_ites():
    ctrl, treat = _arms()
    a = estimate_ate(ctrl, treat, SiParams(), OUT, np.random.default_rng(1))
    b = pooled_ites(ctrl, treat, SiParams(), OUT, np.random.default_rng(1)).mean()
    assert a == pytest.approx(b)


def test_estimate_moments_dispatch():
    ctrl, treat = _arms()
    rng = lambda: np.random.default_rng(2)  # noqa: E731
    assert estimate_moments(ctrl, treat, "two_sample", 20, SiParams(), OUT, rng()).method == "two_sample"
    assert estimate_moments(ctrl, treat, "naive", 20, SiParams(), OUT, rng()).method == "naive"
    m = estimate_moments(ctrl, treat, "secrets", 20, SiParams(), OUT, rng())
    assert m.method == "secrets"
    assert m.variance == pytest.approx(m.variance_of_ate * 2 * 40)
    with pytest.raises(ConfigError):
        estimate_moments(ctrl, treat, "bogus", 20, SiParams(), OUT, rng())


@pytest.mark.parametrize("retune", [False, True])
def test_variance_of_ate_is_deterministic_and_positive(retune):
    ctrl, treat = _arms()
    a = variance_of_ate(ctrl, treat, 30, SiParams(), OUT, np.random.default_rng(3), retune)
    b = variance_of_ate(ctrl, treat, 30, SiParams(), OUT, np.random.default_rng(3), retune)
    assert a == b and a > 0


def test_variance_of_ate_generic_path():
    ctrl, treat = _arms()
    generic = lambda x: np.asarray(x)[..., 7] - np.asarray(x)[..., 3]  # noqa: E731
    si = SiParams(pre_period_end=4)
    v_generic = variance_of_ate(ctrl, treat, 40, si, generic, np.random.default_rng(0))
    v_kernel = variance_of_ate(ctrl, treat, 40, si, OUT, np.random.default_rng(0))
    # Different random streams, same estimand: agree to bootstrap precision.
    assert v_generic == pytest.approx(v_kernel, rel=0.6)


def test_variance_of_ate_validates():
    ctrl, treat = _arms()
    with pytest.raises(ValueError):
        variance_of_ate(ctrl, treat, 1, SiParams(), OUT, np.random.default_rng(0))
    with pytest.raises(InsufficientDataError):
        variance_of_ate(ctrl[:1], treat, 10, SiParams(), OUT, np.random.default_rng(0))


def test_bootstrap_variance_of_iid_mean():
    rng = np.random.default_rng(0)
    ctrl, treat = rng.standard_normal((100, 2)), rng.standard_normal((100, 2))
    v = bootstrap_variance(lambda c, t: independent_ites(c, t, rng), ctrl, treat, 800, rng)
    assert v == pytest.approx(1 / 200, rel=0.2)


def test_dependent_ites_inflate_secrets_variance_but_not_naive():
    fit = linear_fit(scaling_points(dependent_ites(), THEOREM1_SIZES, 100, seed=0))
    assert fit["slope"] > 0 and fit["r_squared"] > 0.9
    rng = np.random.default_rng(0)
    naive = []
    for n in THEOREM1_SIZES:
        c, t = rng.standard_normal((n, 2)), rng.standard_normal((n, 2))
        naive.append((n, naive_moments(dependent_ites()(c, t, rng)).variance))
    assert abs(linear_fit(naive)["slope"]) < 1e-6


def test_independent_ites_keep_secrets_variance_flat():
    points = []
    for seed in range(20):
        points += scaling_points(independent_ites, THEOREM1_SIZES, 100, seed=1000 + seed)
    fit = linear_fit(points)
    assert abs(fit["slope_t"]) < 2
    assert np.mean([s for _, s in points]) == pytest.approx(1.0, rel=0.1)


def test_noiseless_constant_effect_is_recovered_exactly():
    cfg = CohortGenConfig(treatment_effect_mean=5.0, treatment_effect_sd=0.0, noise_sd=0.0)
    ctrl, treat = recruit(GeneratorSource(cfg, "H1", 0), 40)
    assert estimate_ate(ctrl, treat, SiParams(), OUT, np.random.default_rng(0)) == pytest.approx(5.0, abs=1e-6)


def test_null_ate_is_centered():
    ates = [estimate_ate(*recruit(GeneratorSource(desk_cohort(1.0), "H0", s), 60), SiParams(), OUT,
                         np.random.default_rng(s)) for s in range(20)]
    assert abs(np.mean(ates)) < 3 * np.std(ates, ddof=1) / np.sqrt(20)


def test_doubling_arm_size_roughly_halves_the_variance_of_the_ate():
    ratios = []
    for seed in range(8):
        v = [variance_of_ate(*recruit(GeneratorSource(desk_cohort(0.25), "H1", seed), n), 100,
                             SiParams(), OUT, np.random.default_rng(seed)) for n in (50, 100)]
        ratios.append(v[1] / v[0])
    assert 0.35 <= np.mean(ratios) <= 0.65


def test_secrets_and_naive_share_the_ate():
    ctrl, treat = _arms()
    a = estimate_moments(ctrl, treat, "secrets", 20, SiParams(), OUT, np.random.default_rng(4))
    b = estimate_moments(ctrl, treat, "naive", 20, SiParams(), OUT, np.random.default_rng(4))
    assert a.ate == b.ate
