"""Backend selection for the hot kernels.

The compiled extension is preferred; setting ``PREFERMAB_PURE_PYTHON=1`` or a
missing build falls back to the numpy versions. Both expose the same four
functions and agree to floating-point round-off.
"""
import os

from . import _pykernels

if os.environ.get("PREFERMAB_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
else:
    try:
        from . import _kernels as _impl
    except ImportError:  # extension not built
        _impl = _pykernels

BACKEND = "cython" if _impl is not _pykernels else "python"

mlp_forward = _impl.mlp_forward
mlp_backward = _impl.mlp_backward
greedy_proba = _impl.greedy_proba
pav = _impl.pav

__all__ = ["BACKEND", "mlp_forward", "mlp_backward", "greedy_proba", "pav"]
