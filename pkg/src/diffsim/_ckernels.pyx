# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled Gaussian-kernel reductions.

Same contract as :mod:`diffsim._pykernels`. Samples are reduced in blocks of
``BLOCK`` rows; block partials are then combined pairwise, so the rounding
error of a sum over N samples grows like log(N / BLOCK) rather than N.
"""
import numpy as np

from libc.math cimport exp, sqrt
from scipy.linalg.cython_blas cimport dsyrk

cdef enum:
    BLOCK = 128


def kernel_weights(const double[:, ::1] samples, const double[::1] x, double beta):
    cdef Py_ssize_t N = samples.shape[0], n = samples.shape[1], k, j
    cdef double acc, d
    out = np.empty(N, dtype=np.float64)
    cdef double[::1] w = out
    if x.shape[0] != n:
        raise ValueError("dimension mismatch")
    with nogil:
        for k in range(N):
            acc = 0.0
            for j in range(n):
                d = samples[k, j] - x[j]
                acc = acc + d * d
            w[k] = exp(-beta * acc)
    return out


cdef void _pairwise_rows(double[:, ::1] parts) noexcept nogil:
    cdef Py_ssize_t nb = parts.shape[0], width = parts.shape[1]
    cdef Py_ssize_t step = 1, b, c
    while step < nb:
        b = 0
        while b + step < nb:
            for c in range(width):
                parts[b, c] = parts[b, c] + parts[b + step, c]
            b = b + 2 * step
        step = step * 2


def kernel_stats(const double[:, ::1] samples, const double[::1] x, double beta, bint second):
    """Return (sum_k w_k, sum_k w_k s_k, sum_k w_k (x-s_k)(x-s_k)^T or None)."""
    cdef Py_ssize_t N = samples.shape[0], n = samples.shape[1]
    cdef Py_ssize_t nb, width, b, lo, hi, k, j, r, c
    cdef double acc, d, wk, sw
    cdef double one = 1.0, zero = 0.0
    cdef int fn, fm
    if x.shape[0] != n:
        raise ValueError("dimension mismatch")
    if N == 0:
        raise ValueError("empty sample")
    nb = (N + BLOCK - 1) // BLOCK
    width = 1 + n + (n * n if second else 0)
    parts_arr = np.zeros((nb, width), dtype=np.float64)
    scratch_arr = np.empty((BLOCK, n), dtype=np.float64)
    cdef double[:, ::1] parts = parts_arr
    cdef double[:, ::1] diff = scratch_arr
    fn = <int>n
    with nogil:
        for b in range(nb):
            lo = b * BLOCK
            hi = lo + BLOCK
            if hi > N:
                hi = N
            for k in range(lo, hi):
                acc = 0.0
                for j in range(n):
                    d = x[j] - samples[k, j]
                    diff[k - lo, j] = d
                    acc = acc + d * d
                wk = exp(-beta * acc)
                parts[b, 0] = parts[b, 0] + wk
                for j in range(n):
                    parts[b, 1 + j] = parts[b, 1 + j] + wk * samples[k, j]
                if second:
                    sw = sqrt(wk)
                    for j in range(n):
                        diff[k - lo, j] = diff[k - lo, j] * sw
            if second:
                fm = <int>(hi - lo)
                # column-major view of diff[:m] is the n x m matrix D^T, so this is D^T D
                dsyrk(b"U", b"N", &fn, &fm, &one, &diff[0, 0], &fn, &zero, &parts[b, 1 + n], &fn)
        _pairwise_rows(parts)

    ksum = parts_arr[0, 0]
    first = parts_arr[0, 1:1 + n].copy()
    if not second:
        return ksum, first, None
    m2 = parts_arr[0, 1 + n:].reshape(n, n).copy()
    cdef double[:, ::1] mv = m2
    # dsyrk filled the column-major upper triangle, i.e. the row-major lower one
    for r in range(n):
        for c in range(r + 1, n):
            mv[r, c] = mv[c, r]
    return ksum, first, m2
