"""Compare the compiled kernels with the numpy fallback.

Times the three hot kernels on a pilot-sized cohort and, optionally, one full
TAD-SIE trial under each backend (run in a subprocess so the import-time
backend switch takes effect).

    python3 benchmarks/bench_kernels.py [--repeat 5] [--arm-size 100] [--trial]
"""
from __future__ import annotations

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from tadsie import _kernels_py
from tadsie.cohort import GeneratorSource, desk_cohort, recruit
from tadsie.si import DEFAULT_RIDGE_GRID, train_size

try:
    from tadsie import _kernels as _compiled
except ImportError:  # pragma: no cover - build without a compiler
    _compiled = None

TRIAL_SNIPPET = """
import time, numpy as np
from tadsie import BACKEND
from tadsie.harness import make_design
from tadsie.cohort import GeneratorSource, desk_cohort
d = make_design("tad_sie_se", {"B": 50, "T": 50})
t0 = time.perf_counter()
d.run(GeneratorSource(desk_cohort(0.25), "H1", 0), np.random.default_rng(0))
print(BACKEND, time.perf_counter() - t0)
"""


def _workload(n: int, reps: int, seed: int = 0):
    ctrl, treat = recruit(GeneratorSource(desk_cohort(0.25), "H1", seed), n)
    rng = np.random.default_rng(seed)
    grid = np.asarray(DEFAULT_RIDGE_GRID)
    n_train = train_size(n, 7 / 3)
    idx_c = rng.integers(0, n, (reps, n)).astype(np.int64)
    idx_t = rng.integers(0, n, (reps, n)).astype(np.int64)
    perm_c = np.stack([rng.permutation(n) for _ in range(reps)]).astype(np.int64)
    perm_t = np.stack([rng.permutation(n) for _ in range(reps)]).astype(np.int64)
    return {
        "tune_lambda": (ctrl, 4, grid, perm_c[0], n_train),
        "change_ites": (treat, ctrl, 4, 3, 7, 0.1),
        "resampled_ite_moments": (ctrl, treat, idx_c, idx_t, 4, 3, 7, 0.1, 0.1, grid,
                                  perm_c, perm_t, n_train, n_train, False),
    }


def _best(fn, args, repeat: int) -> float:
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))


def main(argv=None) -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5, help="timing repeats, best is kept")
    p.add_argument("--arm-size", type=int, default=100, help="subjects per arm")
    p.add_argument("--replicates", type=int, default=100, help="bootstrap replicates")
    p.add_argument("--trial", action="store_true", help="also time one full trial per backend")
    args = p.parse_args(argv)

    work = _workload(args.arm_size, args.replicates)
    print(f"arm size {args.arm_size}, {args.replicates} bootstrap replicates, best of {args.repeat}")
    print(f"{'kernel':<24}{'numpy (ms)':>12}{'compiled (ms)':>15}{'speedup':>10}")
    for name, call_args in work.items():
        t_py = 1e3 * _best(getattr(_kernels_py, name), call_args, args.repeat)
        if _compiled is None:
            print(f"{name:<24}{t_py:>12.3f}{'n/a':>15}{'':>10}")
            continue
        t_c = 1e3 * _best(getattr(_compiled, name), call_args, args.repeat)
        print(f"{name:<24}{t_py:>12.3f}{t_c:>15.3f}{t_py / t_c:>9.1f}x")

    if args.trial:
        for pure in ("1", "0"):
            env = dict(os.environ, TADSIE_PURE_PYTHON=pure)
            out = subprocess.run([sys.executable, "-c", TRIAL_SNIPPET], env=env, check=True,
                                 capture_output=True, text=True).stdout.split()
            print(f"full TAD-SIE-SE trial, {out[0]} backend: {1e3 * float(out[1]):.1f} ms")


if __name__ == "__main__":
    main()
