"""Backend selection for the Gaussian-kernel reductions.

The compiled extension is used when it imports; ``DIFFSIM_BACKEND=python``
forces the NumPy fallback and ``DIFFSIM_BACKEND=cython`` makes a missing
extension an error instead of a silent fallback.
"""
import os

from . import _pykernels

_choice = os.environ.get("DIFFSIM_BACKEND", "").strip().lower()

if _choice == "python":
    _impl = _pykernels
else:
    try:
        from . import _ckernels as _impl
    except ImportError:
        if _choice == "cython":
            raise
        _impl = _pykernels

BACKEND = "cython" if _impl is not _pykernels else "python"

kernel_weights = _impl.kernel_weights
kernel_stats = _impl.kernel_stats
