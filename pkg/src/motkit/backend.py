"""Kernel backend selection: compiled extension when available, numpy otherwise.

Set MOTKIT_FORCE_NUMPY=1 to skip the compiled extension (used by the
benchmark and the cross-implementation tests).
"""

from __future__ import annotations

import os

import numpy as np

from . import _numpy_kernels

if os.environ.get("MOTKIT_FORCE_NUMPY") == "1":
    _impl = _numpy_kernels
    _native = False
else:
    try:
        from . import _native as _impl  # type: ignore[no-redef]

        _native = True
    except ImportError:
        _impl = _numpy_kernels
        _native = False


def using_native() -> bool:
    """True when the compiled extension is the active backend."""
    return _native


def correlate_valid(search, template) -> np.ndarray:
    search = np.ascontiguousarray(search, dtype=np.float64)
    template = np.ascontiguousarray(template, dtype=np.float64)
    return _impl.correlate_valid(search, template)


def ncc_at(image, template, tops, lefts) -> np.ndarray:
    image = np.ascontiguousarray(image, dtype=np.float64)
    template = np.ascontiguousarray(template, dtype=np.float64)
    tops = np.ascontiguousarray(tops, dtype=np.int64)
    lefts = np.ascontiguousarray(lefts, dtype=np.int64)
    return _impl.ncc_at(image, template, tops, lefts)
