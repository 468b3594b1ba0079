# cython: boundscheck=False, wraparound=False, cdivision=True
"""Fused shrinkage kernels. Must stay value-identical to _kernels_py."""

import numpy as np

from libc.math cimport fabs


def soft_threshold_1d(double[::1] u, double[::1] theta):
    cdef Py_ssize_t m = u.shape[0], i
    cdef bint scalar = theta.shape[0] == 1
    cdef double th = theta[0], v, a
    out_arr = np.empty(m, dtype=np.float64)
    cdef double[::1] out = out_arr
    for i in range(m):
        if not scalar:
            th = theta[i]
        v = u[i]
        a = fabs(v) - th
        if a > 0.0:
            out[i] = a if v > 0.0 else -a
        else:
            out[i] = 0.0
    return out_arr


def soft_threshold_2d(double[:, ::1] w, double[::1] theta):
    cdef Py_ssize_t m = w.shape[0], n = w.shape[1], i, j
    cdef bint scalar = theta.shape[0] == 1
    cdef double th = theta[0], v, a
    out_arr = np.empty((m, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    for i in range(m):
        if not scalar:
            th = theta[i]
        for j in range(n):
            v = w[i, j]
            a = fabs(v) - th
            if a > 0.0:
                out[i, j] = a if v > 0.0 else -a
            else:
                out[i, j] = 0.0
    return out_arr


def shrink_mask_2d(double[:, ::1] w, double[::1] theta):
    cdef Py_ssize_t m = w.shape[0], n = w.shape[1], i, j
    cdef bint scalar = theta.shape[0] == 1
    cdef double th = theta[0], v, a
    h_arr = np.empty((m, n), dtype=np.float64)
    mask_arr = np.empty((m, n), dtype=np.float64)
    cdef double[:, ::1] h = h_arr
    cdef double[:, ::1] mask = mask_arr
    for i in range(m):
        if not scalar:
            th = theta[i]
        for j in range(n):
            v = w[i, j]
            a = fabs(v) - th
            if a > 0.0:
                h[i, j] = a if v > 0.0 else -a
                mask[i, j] = 1.0
            else:
                h[i, j] = 0.0
                mask[i, j] = 0.0
    return h_arr, mask_arr
