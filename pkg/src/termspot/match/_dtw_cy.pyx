# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled subsequence-DTW kernel; see _dtw_py for the recurrence contract.

Both kernels perform the identical per-cell arithmetic and tie-breaking
(diagonal over vertical over horizontal, strict-less comparisons), so their
outputs are bit-identical.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def dtw_scan(cost, double lam=0.0):
    """One relaxation pass; returns (shifted cost, cost sum, path length,
    start column) per end column."""
    cdef double[:, ::1] c = np.ascontiguousarray(cost, dtype=np.float64)
    cdef Py_ssize_t m = c.shape[0]
    cdef Py_ssize_t n = c.shape[1]

    d_out_arr = np.empty(n, dtype=np.float64)
    c_out_arr = np.empty(n, dtype=np.float64)
    l_out_arr = np.empty(n, dtype=np.int64)
    s_out_arr = np.empty(n, dtype=np.int64)
    cdef double[::1] d_out = d_out_arr
    cdef double[::1] c_out = c_out_arr
    cdef long long[::1] l_out = l_out_arr
    cdef long long[::1] s_out = s_out_arr

    d_prev_arr = np.empty(n, dtype=np.float64)
    d_cur_arr = np.empty(n, dtype=np.float64)
    c_prev_arr = np.empty(n, dtype=np.float64)
    c_cur_arr = np.empty(n, dtype=np.float64)
    l_prev_arr = np.empty(n, dtype=np.int64)
    l_cur_arr = np.empty(n, dtype=np.int64)
    s_prev_arr = np.empty(n, dtype=np.int64)
    s_cur_arr = np.empty(n, dtype=np.int64)
    cdef double[::1] d_prev = d_prev_arr
    cdef double[::1] d_cur = d_cur_arr
    cdef double[::1] c_prev = c_prev_arr
    cdef double[::1] c_cur = c_cur_arr
    cdef long long[::1] l_prev = l_prev_arr
    cdef long long[::1] l_cur = l_cur_arr
    cdef long long[::1] s_prev = s_prev_arr
    cdef long long[::1] s_cur = s_cur_arr

    cdef Py_ssize_t i, j
    cdef double best, vert, horiz, local, csum
    cdef long long length, spath

    with nogil:
        for j in range(n):
            d_prev[j] = c[0, j] - lam
            c_prev[j] = c[0, j]
            l_prev[j] = 1
            s_prev[j] = j
        for i in range(1, m):
            local = c[i, 0]
            d_cur[0] = (local - lam) + d_prev[0]
            c_cur[0] = local + c_prev[0]
            l_cur[0] = l_prev[0] + 1
            s_cur[0] = s_prev[0]
            for j in range(1, n):
                best = d_prev[j - 1]
                csum = c_prev[j - 1]
                length = l_prev[j - 1]
                spath = s_prev[j - 1]
                vert = d_prev[j]
                if vert < best:
                    best = vert
                    csum = c_prev[j]
                    length = l_prev[j]
                    spath = s_prev[j]
                horiz = d_cur[j - 1]
                if horiz < best:
                    best = horiz
                    csum = c_cur[j - 1]
                    length = l_cur[j - 1]
                    spath = s_cur[j - 1]
                local = c[i, j]
                d_cur[j] = (local - lam) + best
                c_cur[j] = local + csum
                l_cur[j] = length + 1
                s_cur[j] = spath
            d_prev, d_cur = d_cur, d_prev
            c_prev, c_cur = c_cur, c_prev
            l_prev, l_cur = l_cur, l_prev
            s_prev, s_cur = s_cur, s_prev
        for j in range(n):
            d_out[j] = d_prev[j]
            c_out[j] = c_prev[j]
            l_out[j] = l_prev[j]
            s_out[j] = s_prev[j]

    return d_out_arr, c_out_arr, l_out_arr, s_out_arr
