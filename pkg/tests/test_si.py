import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tadsie import _kernels_py
from tadsie.cohort import ChangeScore, CohortGenConfig, generate_cohort
from tadsie.errors import ConfigError, InsufficientDataError
from tadsie.si import (DEFAULT_RIDGE_GRID, NormalizationState, SiParams, counterfactuals,
                       predict_counterfactual, split_permutation, train_size,
                       tune_si_hyperparams, validation_errors)

try:
    from tadsie import _kernels as _compiled
except ImportError:  # pragma: no cover - build without a compiler
    _compiled = None

needs_compiled = pytest.mark.skipif(_compiled is None, reason="compiled kernels not built")


def _donors(n=12, visits=8, seed=0):
    return generate_cohort(CohortGenConfig(visits=visits), n, 2, np.random.default_rng(seed)).control


def test_params_validation_and_round_trip():
    with pytest.raises(ConfigError):
        SiParams(r_train_val=0)
    with pytest.raises(ConfigError):
        SiParams(ridge_grid=())
    with pytest.raises(ConfigError):
        SiParams(ridge_grid=(-1.0,))
    with pytest.raises(ConfigError):
        SiParams.from_dict({"bogus": 1})
    p = SiParams(pre_period_end=3)
    assert SiParams.from_dict(p.to_dict()) == p
    assert SiParams().ridge_grid == DEFAULT_RIDGE_GRID


def test_resolve_pre_end():
    assert SiParams().resolve_pre_end(8, baseline_index=3) == 4
    assert SiParams(pre_period_end=2).resolve_pre_end(8, baseline_index=3) == 2
    with pytest.raises(ConfigError):
        SiParams().resolve_pre_end(8)
    with pytest.raises(ConfigError):
        SiParams(pre_period_end=8).resolve_pre_end(8)


@pytest.mark.parametrize("n, expected", [(2, 1), (3, 2), (10, 7), (30, 21), (31, 22), (100, 70)])
def test_train_size(n, expected):
    assert train_size(n, 7 / 3) == expected


@given(arrays(np.float64, (6, 4), elements=st.floats(-1e3, 1e3)))
def test_normalization_round_trip(x):
    state = NormalizationState.from_donors(x)
    assert np.allclose(state.unnormalize(state.normalize(x)), x, rtol=1e-9, atol=1e-6)
    assert np.all(state.scale > 0)


def test_flat_columns_get_unit_scale():
    d = np.column_stack([np.full(5, 3.0), np.arange(5.0)])
    state = NormalizationState.from_donors(d)
    assert state.scale[0] == 1.0
    assert np.allclose(state.normalize(d)[:, 0], 0.0)


def test_exact_recovery_of_a_donor_combination():
    # Three donors with linearly independent fitting segments (four visits)
    # and a target that is an affine combination of them.
    donors = _donors(n=3)
    w = np.array([0.5, 0.3, 0.2])
    target = w @ donors
    params = SiParams()
    cf, weights = predict_counterfactual(donors, target, 0.0, params, baseline_index=3)
    assert np.allclose(cf, target, atol=1e-8)
    # Normalized donors sum to zero at each visit, so weights are determined
    # only up to a common shift; the minimum-norm choice removes it.
    assert np.allclose(weights - weights.mean(), w - w.mean(), atol=1e-8)
    assert abs(weights.sum()) < 1e-8


def test_constant_donors_give_their_mean():
    donors = np.tile(np.arange(6.0), (4, 1))
    target = np.arange(6.0) + 5.0
    out = counterfactuals(donors, target, 0.0, SiParams(pre_period_end=2))
    assert np.allclose(out[0, :2], target[:2])
    assert np.allclose(out[0, 2:], donors[0, 2:])


def test_counterfactuals_keep_the_observed_fitting_segment():
    donors = _donors()
    targets = _donors(n=4, seed=1)
    out = counterfactuals(donors, targets, 0.1, SiParams(), baseline_index=3)
    assert np.array_equal(out[:, :4], targets[:, :4])
    full, _ = predict_counterfactual(donors, targets[0], 0.1, SiParams(), baseline_index=3)
    assert np.allclose(out[0, 4:], full[4:])


def test_shrinkage_reduces_weight_norm():
    donors = _donors(n=15)
    target = _donors(n=1, seed=9)[0]
    norms = [np.linalg.norm(predict_counterfactual(donors, target, lam, SiParams(), 3)[1])
             for lam in (0.0, 0.01, 0.1, 1.0, 10.0, 100.0)]
    assert all(a >= b - 1e-12 for a, b in zip(norms, norms[1:]))
    assert norms[-1] < norms[0]


def test_large_regularization_tends_to_donor_mean():
    donors = _donors(n=15)
    target = _donors(n=1, seed=9)[0]
    cf, _ = predict_counterfactual(donors, target, 1e12, SiParams(), 3)
    assert np.allclose(cf, donors.mean(axis=0), atol=1e-6)


def test_predict_validates_inputs():
    donors = _donors()
    with pytest.raises(ValueError):
        predict_counterfactual(donors, np.zeros(5), 0.0, SiParams(), 3)
    with pytest.raises(ValueError):
        predict_counterfactual(donors, donors[0], -1.0, SiParams(), 3)


def test_tuning_needs_three_donors():
    with pytest.raises(InsufficientDataError):
        tune_si_hyperparams(_donors(n=2), SiParams(), np.random.default_rng(0), 3)


def test_tuning_is_seed_deterministic_and_on_grid():
    donors = _donors(n=20)
    a = tune_si_hyperparams(donors, SiParams(), np.random.default_rng(4), 3)
    b = tune_si_hyperparams(donors, SiParams(), np.random.default_rng(4), 3)
    assert a == b and a in DEFAULT_RIDGE_GRID


@pytest.mark.parametrize("seed", range(5))
def test_tuning_picks_validation_argmin(seed):
    donors = _donors(n=20, seed=seed)
    params = SiParams()
    perm = split_permutation(20, np.random.default_rng(seed))
    errs = validation_errors(donors, params, perm, 3)
    lam = tune_si_hyperparams(donors, params, np.random.default_rng(seed), 3)
    ok = errs <= errs.min() * (1 + 1e-9) + 1e-14
    assert lam == max(g for g, good in zip(params.ridge_grid, ok) if good)


def test_ties_go_to_the_largest_strength():
    assert _kernels_py.select_lambda(np.array([0.0, 1.0, 10.0]), np.array([1.0, 1.0, 2.0])) == 1.0


def test_change_ites_match_generic_counterfactuals():
    donors, targets = _donors(n=15), _donors(n=6, seed=2)
    params = SiParams()
    out = ChangeScore(3, 7)
    cf = counterfactuals(donors, targets, 0.1, params, baseline_index=3)
    expected = out(cf) - out(targets)
    got = _kernels_py.change_ites(targets, donors, 4, 3, 7, 0.1)
    assert np.allclose(got, expected, atol=1e-10)


def test_change_ites_with_baseline_in_predicted_segment():
    donors, targets = _donors(n=15), _donors(n=6, seed=2)
    params = SiParams(pre_period_end=2)
    out = ChangeScore(3, 7)
    cf = counterfactuals(donors, targets, 0.1, params)
    got = _kernels_py.change_ites(targets, donors, 2, 3, 7, 0.1)
    assert np.allclose(got, out(cf) - out(targets), atol=1e-10)


# ---------------------------------------------------------------------------
# Compiled and numpy backends agree
# ---------------------------------------------------------------------------


@needs_compiled
@settings(max_examples=25, deadline=None)
@given(st.integers(3, 25), st.integers(0, 10_000), st.sampled_from([1, 2, 4, 6]),
       st.sampled_from(DEFAULT_RIDGE_GRID))
def test_backends_agree_on_change_ites(n, seed, pre, lam):
    donors = _donors(n=n, seed=seed)
    targets = _donors(n=5, seed=seed + 1)
    base = 3
    a = _kernels_py.change_ites(targets, donors, pre, base, 7, lam)
    b = _compiled.change_ites(targets, donors, pre, base, 7, lam)
    assert np.allclose(a, b, rtol=1e-8, atol=1e-8)


@needs_compiled
@settings(max_examples=25, deadline=None)
@given(st.integers(3, 25), st.integers(0, 10_000))
def test_backends_agree_on_tuning(n, seed):
    donors = _donors(n=n, seed=seed)
    grid = np.asarray(DEFAULT_RIDGE_GRID)
    perm = np.random.default_rng(seed).permutation(n).astype(np.int64)
    n_train = train_size(n, 7 / 3)
    assert _kernels_py.tune_lambda(donors, 4, grid, perm, n_train) == \
        _compiled.tune_lambda(donors, 4, grid, perm, n_train)


@needs_compiled
@pytest.mark.parametrize("retune", [False, True])
def test_backends_agree_on_resampled_moments(retune):
    rng = np.random.default_rng(3)
    ctrl, treat = _donors(n=20, seed=1), _donors(n=20, seed=2) + 0.5
    reps = 8
    idx_c = rng.integers(0, 20, (reps, 20)).astype(np.int64)
    idx_t = rng.integers(0, 20, (reps, 20)).astype(np.int64)
    perm_c = np.stack([rng.permutation(20) for _ in range(reps)]).astype(np.int64)
    perm_t = np.stack([rng.permutation(20) for _ in range(reps)]).astype(np.int64)
    args = (ctrl, treat, idx_c, idx_t, 4, 3, 7, 0.1, 1.0, np.asarray(DEFAULT_RIDGE_GRID),
            perm_c, perm_t, 14, 14, retune)
    a = _kernels_py.resampled_ite_moments(*args)
    b = _compiled.resampled_ite_moments(*args)
    assert np.allclose(a, b, rtol=1e-8, atol=1e-10)
