# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled twins of the numpy kernels in `_pure`.

Inputs arrive pre-validated and C-contiguous float64 from the package
wrappers; these loops only do the arithmetic.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, sqrt, INFINITY

cnp.import_array()


def nn_dist(const double[:, ::1] query, const double[:, ::1] ref):
    cdef Py_ssize_t n = query.shape[0]
    cdef Py_ssize_t m = ref.shape[0]
    cdef Py_ssize_t k = query.shape[1]
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, j, c
    cdef double best, d2, diff
    for i in range(n):
        best = INFINITY
        for j in range(m):
            d2 = 0.0
            for c in range(k):
                diff = query[i, c] - ref[j, c]
                d2 += diff * diff
            if d2 < best:
                best = d2
        out[i] = sqrt(best)
    return out_arr


def point_seg_dist(const double[:, ::1] points, const double[:, ::1] seg_a, const double[:, ::1] seg_b):
    cdef Py_ssize_t n = points.shape[0]
    cdef Py_ssize_t m = seg_a.shape[0]
    cdef Py_ssize_t k = points.shape[1]
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, j, c
    cdef double best, l2, t, d2, dc, pc
    for i in range(n):
        best = INFINITY
        for j in range(m):
            l2 = 0.0
            t = 0.0
            for c in range(k):
                dc = seg_b[j, c] - seg_a[j, c]
                l2 += dc * dc
                t += (points[i, c] - seg_a[j, c]) * dc
            if l2 > 0.0:
                t = t / l2
                if t < 0.0:
                    t = 0.0
                elif t > 1.0:
                    t = 1.0
            else:
                t = 0.0
            d2 = 0.0
            for c in range(k):
                pc = seg_a[j, c] + t * (seg_b[j, c] - seg_a[j, c])
                dc = points[i, c] - pc
                d2 += dc * dc
            if d2 < best:
                best = d2
        out[i] = sqrt(best)
    return out_arr


def masked_softmax(const double[:, ::1] scores, const unsigned char[:, ::1] mask):
    cdef Py_ssize_t r = scores.shape[0]
    cdef Py_ssize_t n = scores.shape[1]
    out_arr = np.zeros((r, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef double mx, denom, e
    cdef bint any_live
    for i in range(r):
        any_live = False
        mx = -INFINITY
        for j in range(n):
            if mask[i, j]:
                any_live = True
                if scores[i, j] > mx:
                    mx = scores[i, j]
        if not any_live:
            continue
        denom = 0.0
        for j in range(n):
            if mask[i, j]:
                e = exp(scores[i, j] - mx)
                out[i, j] = e
                denom += e
        for j in range(n):
            if mask[i, j]:
                out[i, j] = out[i, j] / denom
    return out_arr
