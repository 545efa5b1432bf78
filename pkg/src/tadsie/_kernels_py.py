"""Pure numpy implementation of the hot kernels.

Mirrors ``_kernels.pyx`` function-for-function; ``tadsie.kernels`` picks one
at import time. All routines work on z-scored data (per-visit donor mean and
population standard deviation) and fit ridge weights in the dual, so the
only linear algebra is an eigendecomposition of the ``p x p`` pre-period Gram
matrix, ``p = pre_end``.
"""
from __future__ import annotations

import numpy as np

BACKEND = "python"

SCALE_RTOL = 1e-12
EIG_RTOL = 1e-10
TIE_RTOL = 1e-9
TIE_ATOL = 1e-14


def norm_stats(donors: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = donors.mean(axis=0)
    scale = np.sqrt(((donors - mean) ** 2).mean(axis=0))
    flat = scale <= SCALE_RTOL * np.maximum(1.0, np.abs(mean))
    scale[flat] = 1.0
    return mean, scale


def ridge_inverse(gram: np.ndarray, lam: float) -> np.ndarray:
    """``(G + lam I)^+`` with eigen-components below ``EIG_RTOL * max_eig`` dropped."""
    evals, vecs = np.linalg.eigh(gram)
    return _spectral_inverse(evals, vecs, lam)


def _spectral_inverse(evals, vecs, lam):
    e = np.maximum(evals, 0.0)
    tol = EIG_RTOL * (e.max() if e.size else 0.0)
    s = e + lam
    h = np.zeros_like(s)
    keep = s > tol
    h[keep] = 1.0 / s[keep]
    return (vecs * h) @ vecs.T


def select_lambda(grid: np.ndarray, errors: np.ndarray) -> float:
    """Largest grid value whose error ties the minimum."""
    best = errors.min()
    ok = errors <= best * (1.0 + TIE_RTOL) + TIE_ATOL
    return float(np.max(grid[ok]))


def tune_lambda(donors, pre_end: int, grid, perm, n_train: int) -> float:
    donors = np.asarray(donors, dtype=float)
    grid = np.asarray(grid, dtype=float)
    p = pre_end
    mean, scale = norm_stats(donors)
    z = (donors - mean) / scale
    train = z[perm[:n_train]]
    val = z[perm[n_train:]]
    gram = train[:, :p].T @ train[:, :p]
    cross = train[:, :p].T @ train[:, p:]
    evals, vecs = np.linalg.eigh(gram)
    errors = np.empty(grid.size)
    for g, lam in enumerate(grid):
        k = _spectral_inverse(evals, vecs, lam) @ cross
        resid = val[:, :p] @ k - val[:, p:]
        errors[g] = np.mean(resid ** 2)
    return select_lambda(grid, errors)


def change_ites(targets, donors, pre_end: int, base: int, end: int, lam: float) -> np.ndarray:
    """Counterfactual-minus-observed change scores for each target row.

    Visits before ``pre_end`` are shared by both interventions, so a baseline
    inside that window is taken from the target's own observation.
    """
    targets = np.asarray(targets, dtype=float)
    donors = np.asarray(donors, dtype=float)
    p = pre_end
    mean, scale = norm_stats(donors)
    zd = (donors - mean) / scale
    zp = zd[:, :p]
    cols = [end] if base < p else [end, base]
    k = ridge_inverse(zp.T @ zp, lam) @ (zp.T @ zd[:, cols])
    x = (targets[:, :p] - mean[:p]) / scale[:p]
    pred = mean[cols] + scale[cols] * (x @ k)
    cf_base = targets[:, base] if base < p else pred[:, 1]
    return (pred[:, 0] - cf_base) - (targets[:, end] - targets[:, base])


def resampled_ite_moments(ctrl, treat, idx_c, idx_t, pre_end, base, end,
                          lam_tdon, lam_cdon, grid, perm_c, perm_t,
                          n_train_c, n_train_t, retune) -> np.ndarray:
    """Mean and (n - 1) variance of pooled ITEs for each resampled arm pair.

    Row ``r`` uses ``ctrl[idx_c[r]]`` and ``treat[idx_t[r]]``. With
    ``retune`` the regularization for each direction is re-selected on the
    resampled donors using the split permutations ``perm_*[r]``.
    """
    ctrl = np.asarray(ctrl, dtype=float)
    treat = np.asarray(treat, dtype=float)
    n_rep = idx_c.shape[0]
    out = np.empty((n_rep, 2))
    for r in range(n_rep):
        c = ctrl[idx_c[r]]
        t = treat[idx_t[r]]
        if retune:
            lt = tune_lambda(t, pre_end, grid, perm_t[r], n_train_t)
            lc = tune_lambda(c, pre_end, grid, perm_c[r], n_train_c)
        else:
            lt, lc = lam_tdon, lam_cdon
        pooled = np.concatenate([
            change_ites(c, t, pre_end, base, end, lt),
            -change_ites(t, c, pre_end, base, end, lc),
        ])
        out[r, 0] = pooled.mean()
        out[r, 1] = pooled.var(ddof=1) if pooled.size > 1 else np.nan
    return out
