"""Pure-numpy implementations of the hot kernels.

Import-time fallback for :mod:`motkit._native`. ``correlate_valid`` matches
the compiled kernel bit for bit (same per-element accumulation order);
``ncc_at`` agrees to floating-point roundoff.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def correlate_valid(search: np.ndarray, template: np.ndarray) -> np.ndarray:
    """Channel-wise valid-mode sliding dot product of template over search."""
    c, hs, ws = search.shape
    _, ht, wt = template.shape
    out = np.zeros((c, hs - ht + 1, ws - wt + 1), dtype=np.float64)
    # Accumulate one template tap at a time so each output element sums in
    # (ty, tx) order, identical to the compiled kernel's inner loop.
    for ty in range(ht):
        for tx in range(wt):
            out += search[:, ty : ty + out.shape[1], tx : tx + out.shape[2]] * template[:, ty, tx][:, None, None]
    return out


def ncc_at(image: np.ndarray, template: np.ndarray, tops: np.ndarray, lefts: np.ndarray) -> np.ndarray:
    """Normalized cross-correlation of template vs image patches at given corners."""
    th, tw = template.shape
    size = th * tw
    tnorm = template - template.mean()
    tvar = float(np.sum(tnorm * tnorm))
    n = len(tops)
    if tvar < 1e-12 or n == 0:
        return np.zeros(n, dtype=np.float64)
    windows = sliding_window_view(image, (th, tw))[tops, lefts]
    psum = windows.sum(axis=(1, 2))
    psq = np.einsum("kij,kij->k", windows, windows)
    num = np.einsum("ij,kij->k", tnorm, windows)
    pvar = psq - psum * psum / size
    out = np.zeros(n, dtype=np.float64)
    ok = pvar >= 1e-12
    out[ok] = num[ok] / np.sqrt(tvar * pvar[ok])
    return out
