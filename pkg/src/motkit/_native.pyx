# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot kernels: valid-mode correlation and batched patch NCC.

Semantics must match motkit._numpy_kernels exactly; the pure-python module
is the import-time fallback when this extension is unavailable.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def correlate_valid(double[:, :, ::1] search, double[:, :, ::1] template):
    """Channel-wise valid-mode sliding dot product of template over search.

    search: (C, Hs, Ws), template: (C, Ht, Wt) with Ht <= Hs, Wt <= Ws.
    Returns (C, Hs-Ht+1, Ws-Wt+1). Accumulation is sequential over
    (ty, tx) per output element, matching the reference implementation
    bit for bit.
    """
    cdef Py_ssize_t C = search.shape[0]
    cdef Py_ssize_t Hs = search.shape[1]
    cdef Py_ssize_t Ws = search.shape[2]
    cdef Py_ssize_t Ht = template.shape[1]
    cdef Py_ssize_t Wt = template.shape[2]
    cdef Py_ssize_t H = Hs - Ht + 1
    cdef Py_ssize_t W = Ws - Wt + 1
    out_arr = np.zeros((C, H, W), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t c, i, j, ty, tx
    cdef double acc
    for c in range(C):
        for i in range(H):
            for j in range(W):
                acc = 0.0
                for ty in range(Ht):
                    for tx in range(Wt):
                        acc += search[c, i + ty, j + tx] * template[c, ty, tx]
                out[c, i, j] = acc
    return out_arr


def ncc_at(double[:, ::1] image, double[:, ::1] template,
           cnp.int64_t[::1] tops, cnp.int64_t[::1] lefts):
    """Normalized cross-correlation of template vs image patches.

    Patch k is image[tops[k]:tops[k]+th, lefts[k]:lefts[k]+tw]; all patches
    must be in bounds (callers pad). Constant template or patch gives 0.
    Returns an array of NCC values in [-1, 1].
    """
    cdef Py_ssize_t th = template.shape[0]
    cdef Py_ssize_t tw = template.shape[1]
    cdef Py_ssize_t n = tops.shape[0]
    cdef Py_ssize_t size = th * tw
    cdef double tmean = 0.0
    cdef double tvar = 0.0
    cdef Py_ssize_t i, j, k
    cdef double tv

    for i in range(th):
        for j in range(tw):
            tmean += template[i, j]
    tmean /= size
    for i in range(th):
        for j in range(tw):
            tv = template[i, j] - tmean
            tvar += tv * tv

    out_arr = np.zeros(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t top, left
    cdef double psum, psq, num, pv, pvar, denom
    if tvar < 1e-12:
        return out_arr
    for k in range(n):
        top = tops[k]
        left = lefts[k]
        psum = 0.0
        psq = 0.0
        num = 0.0
        for i in range(th):
            for j in range(tw):
                pv = image[top + i, left + j]
                psum += pv
                psq += pv * pv
                num += (template[i, j] - tmean) * pv
        pvar = psq - psum * psum / size
        if pvar < 1e-12:
            out[k] = 0.0
        else:
            denom = (tvar * pvar) ** 0.5
            out[k] = num / denom
    return out_arr
