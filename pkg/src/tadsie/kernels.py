"""Backend selection for the hot kernels.

The compiled extension is used when it imports cleanly. Setting
``TADSIE_PURE_PYTHON=1`` forces the numpy fallback, which is handy for
debugging and for comparing the two in the benchmark.
"""
from __future__ import annotations

import os

from . import _kernels_py

_impl = _kernels_py
if os.environ.get("TADSIE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]
    except ImportError:  # pragma: no cover - depends on the build
        _impl = _kernels_py

BACKEND: str = _impl.BACKEND
tune_lambda = _impl.tune_lambda
change_ites = _impl.change_ites
resampled_ite_moments = _impl.resampled_ite_moments

__all__ = ["BACKEND", "tune_lambda", "change_ites", "resampled_ite_moments"]
