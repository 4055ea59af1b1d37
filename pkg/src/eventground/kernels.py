"""Kernel dispatch: compiled Cython core when importable, numpy/Python otherwise.

Set ``EVENTGROUND_PURE=1`` to force the fallback (used by the benchmark and
the equivalence tests).
"""

import os

from . import _fallback

BACKEND = "python"
if os.environ.get("EVENTGROUND_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl
    except ImportError:  # extension not built
        _impl = _fallback
    else:
        BACKEND = "cython"
else:
    _impl = _fallback

voxelize_counts = _impl.voxelize_counts
hungarian = _impl.hungarian
levenshtein = _impl.levenshtein

__all__ = ["BACKEND", "voxelize_counts", "hungarian", "levenshtein"]
