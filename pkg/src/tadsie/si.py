"""Synthetic-intervention counterfactuals.

A target subject's trajectory under an intervention it did not receive is
predicted from donors that did receive it. Every visit is z-scored with donor
statistics, the target's fitting segment (visits ``[0, pre_period_end)``) is
written as a ridge-regularized combination of the donors' fitting segments,
and the same donor weights are applied to the full donor trajectories.

The ridge problem is solved in its dual form through the ``p x p`` Gram matrix
of the donors' fitting segments (``p = pre_period_end``), using a pseudo-inverse
so that ``regularization = 0`` gives the minimum-norm interpolating weights.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from ._kernels_py import norm_stats, ridge_inverse
from .errors import ConfigError, InsufficientDataError

DEFAULT_RIDGE_GRID = (0.0, 1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0)
MIN_TUNING_DONORS = 3


@dataclass(frozen=True)
class SiParams:
    """Hyperparameters for counterfactual estimation.

    Attributes:
        r_train_val: Train-to-validation donor ratio used when tuning.
        ridge_grid: Candidate regularization strengths.
        pre_period_end: First visit of the predicted segment. ``None`` means
            one past the outcome's baseline visit.
    """

    r_train_val: float = 7.0 / 3.0
    ridge_grid: tuple = DEFAULT_RIDGE_GRID
    pre_period_end: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "ridge_grid", tuple(float(x) for x in self.ridge_grid))
        if not self.r_train_val > 0:
            raise ConfigError("r_train_val must be positive")
        if not self.ridge_grid:
            raise ConfigError("ridge_grid must not be empty")
        if any(not (x >= 0 and np.isfinite(x)) for x in self.ridge_grid):
            raise ConfigError("ridge_grid values must be finite and non-negative")
        if self.pre_period_end is not None and self.pre_period_end < 1:
            raise ConfigError("pre_period_end must be at least 1")

    def resolve_pre_end(self, visits: int, baseline_index: int | None = None) -> int:
        """Concrete fitting-segment length for trajectories with ``visits`` visits."""
        pre = self.pre_period_end
        if pre is None:
            if baseline_index is None:
                raise ConfigError("pre_period_end is unset and no baseline_index was given")
            pre = baseline_index + 1
        if not 1 <= pre < visits:
            raise ConfigError(f"pre_period_end={pre} must lie in [1, {visits})")
        return int(pre)

    def to_dict(self) -> dict:
        return {
            "r_train_val": self.r_train_val,
            "ridge_grid": list(self.ridge_grid),
            "pre_period_end": self.pre_period_end,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SiParams":
        unknown = set(data) - {"r_train_val", "ridge_grid", "pre_period_end"}
        if unknown:
            raise ConfigError(f"unknown si keys: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class NormalizationState:
    """Per-visit donor mean and population standard deviation.

    Flat visit columns get scale 1 so normalization never divides by zero.
    """

    mean: np.ndarray
    scale: np.ndarray = field(repr=False)

    @classmethod
    def from_donors(cls, donors) -> "NormalizationState":
        mean, scale = norm_stats(np.asarray(donors, dtype=float))
        return cls(mean, scale)

    def normalize(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.mean) / self.scale

    def unnormalize(self, z) -> np.ndarray:
        return np.asarray(z, dtype=float) * self.scale + self.mean


def _donor_matrix(donors) -> np.ndarray:
    d = np.asarray(donors, dtype=float)
    if d.ndim != 2 or d.shape[0] == 0:
        raise InsufficientDataError("donors must be a non-empty (subjects x visits) matrix")
    return np.ascontiguousarray(d)


def train_size(n_donors: int, r_train_val: float) -> int:
    """Donors assigned to training when splitting ``n_donors`` at ratio ``r``."""
    n_train = int(np.floor(n_donors * r_train_val / (1.0 + r_train_val) + 0.5))
    return min(max(n_train, 1), n_donors - 1)


def split_permutation(n_donors: int, rng: np.random.Generator) -> np.ndarray:
    return rng.permutation(n_donors).astype(np.int64)


def tune_si_hyperparams(donors, params: SiParams, rng: np.random.Generator,
                        baseline_index: int | None = None) -> float:
    """Pick a regularization strength by donor-level hold-out.

    Donors are shuffled and split ``r_train_val : 1``. For each grid value
    the training donors' fitting segments are regressed onto their
    predicted segments; the score is the mean squared error when those
    weights reconstruct the held-out donors' predicted segment from their
    fitting segment. Ties go to the larger regularization.

    Raises:
        InsufficientDataError: With fewer than three donors.
    """
    d = _donor_matrix(donors)
    n = d.shape[0]
    if n < MIN_TUNING_DONORS:
        raise InsufficientDataError(f"tuning needs at least {MIN_TUNING_DONORS} donors, got {n}")
    pre = params.resolve_pre_end(d.shape[1], baseline_index)
    perm = split_permutation(n, rng)
    return kernels.tune_lambda(d, pre, np.asarray(params.ridge_grid), perm,
                               train_size(n, params.r_train_val))


def validation_errors(donors, params: SiParams, perm, baseline_index: int | None = None) -> np.ndarray:
    """Hold-out error for every grid value under a given donor permutation.

    Exposed for inspection; ``tune_si_hyperparams`` picks the arg-min.
    """
    d = _donor_matrix(donors)
    pre = params.resolve_pre_end(d.shape[1], baseline_index)
    state = NormalizationState.from_donors(d)
    z = state.normalize(d)
    n_train = train_size(d.shape[0], params.r_train_val)
    perm = np.asarray(perm)
    train, val = z[perm[:n_train]], z[perm[n_train:]]
    gram = train[:, :pre].T @ train[:, :pre]
    cross = train[:, :pre].T @ train[:, pre:]
    errs = []
    for lam in params.ridge_grid:
        k = ridge_inverse(gram, lam) @ cross
        errs.append(np.mean((val[:, :pre] @ k - val[:, pre:]) ** 2))
    return np.asarray(errs)


def predict_counterfactual(donors, target, regularization: float, params: SiParams,
                           baseline_index: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Fitted trajectory of ``target`` as a weighted combination of donors.

    Returns:
        ``(counterfactual, weights)``. The counterfactual covers every visit
        (the fitting segment is the in-sample reconstruction); ``weights``
        has one entry per donor and acts on normalized trajectories.
    """
    d = _donor_matrix(donors)
    x = np.asarray(target, dtype=float)
    if x.shape != (d.shape[1],):
        raise ValueError(f"target must have {d.shape[1]} visits")
    if regularization < 0:
        raise ValueError("regularization must be non-negative")
    pre = params.resolve_pre_end(d.shape[1], baseline_index)
    state = NormalizationState.from_donors(d)
    z = state.normalize(d)
    zp = z[:, :pre]
    weights = zp @ (ridge_inverse(zp.T @ zp, regularization) @ state.normalize(x)[:pre])
    return state.unnormalize(weights @ z), weights


def counterfactuals(donors, targets, regularization: float, params: SiParams,
                    baseline_index: int | None = None) -> np.ndarray:
    """Counterfactual trajectories for many targets against one donor set.

    The observed fitting segment is kept and only the predicted segment is
    replaced, since both interventions share the visits before it.
    """
    d = _donor_matrix(donors)
    t = np.atleast_2d(np.asarray(targets, dtype=float))
    pre = params.resolve_pre_end(d.shape[1], baseline_index)
    state = NormalizationState.from_donors(d)
    z = state.normalize(d)
    zp = z[:, :pre]
    k = ridge_inverse(zp.T @ zp, regularization) @ (zp.T @ z[:, pre:])
    out = t.copy()
    out[:, pre:] = state.mean[pre:] + state.scale[pre:] * (state.normalize(t)[:, :pre] @ k)
    return out
