# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled grid interpolation kernel (same contract as ``_interp_py.interpolate``)."""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor, fmod

cnp.import_array()

DEF MAXDIM = 3
DEF MAXORD = 4


cdef inline void _lagrange(double u, int order, double* w) noexcept nogil:
    if order == 2:
        w[0] = 1.0 - u
        w[1] = u
    else:
        w[0] = -(u - 1.0) * (u - 2.0) * (u - 3.0) / 6.0
        w[1] = u * (u - 2.0) * (u - 3.0) / 2.0
        w[2] = -u * (u - 1.0) * (u - 3.0) / 2.0
        w[3] = u * (u - 1.0) * (u - 2.0) / 6.0


cdef inline void _stencil(double s, long N, int policy, int order,
                          long* idx, double* w) noexcept nogil:
    cdef long base, j, b2
    cdef double u
    if policy == 2:
        s = fmod(s, <double>N)
        if s < 0:
            s += N
        base = <long>floor(s) - (order // 2 - 1)
        _lagrange(s - base, order, w)
        for j in range(order):
            idx[j] = ((base + j) % N + N) % N
        return
    if policy == 0:
        if s < 0.0:
            s = 0.0
        elif s > N - 1.0:
            s = N - 1.0
    if s >= 0.0 and s <= N - 1.0:
        base = <long>floor(s) - (order // 2 - 1)
        if base < 0:
            base = 0
        if base > N - order:
            base = N - order
        _lagrange(s - base, order, w)
        for j in range(order):
            idx[j] = base + j
        return
    b2 = 0 if s < 0.0 else N - 2
    u = s - b2
    for j in range(order):
        w[j] = 0.0
        idx[j] = b2 + j if b2 + j < N else N - 1
    w[0] = 1.0 - u
    w[1] = u


def interpolate(double[:, ::1] values, double[::1] lo, double[::1] h,
                long[::1] nodes, int policy, int order, double[:, ::1] points):
    cdef Py_ssize_t M = points.shape[0]
    cdef int n = points.shape[1]
    cdef Py_ssize_t C = values.shape[1]
    if n > MAXDIM or order > MAXORD:
        raise ValueError("unsupported dimension or order")
    out_arr = np.zeros((M, C))
    cdef double[:, ::1] out = out_arr
    cdef long idx[MAXDIM][MAXORD]
    cdef double w[MAXDIM][MAXORD]
    cdef long strides[MAXDIM]
    cdef long ctr[MAXDIM]
    cdef Py_ssize_t i, c, total, j
    cdef int a
    cdef long flat, stride = 1
    cdef double wt
    for a in range(n - 1, -1, -1):
        strides[a] = stride
        stride *= nodes[a]
    total = 1
    for a in range(n):
        total *= order
    with nogil:
        for i in range(M):
            for a in range(n):
                _stencil((points[i, a] - lo[a]) / h[a], nodes[a], policy, order,
                         &idx[a][0], &w[a][0])
            for a in range(n):
                ctr[a] = 0
            for j in range(total):
                flat = 0
                wt = 1.0
                for a in range(n):
                    flat = flat + strides[a] * idx[a][ctr[a]]
                    wt = wt * w[a][ctr[a]]
                for c in range(C):
                    out[i, c] += wt * values[flat, c]
                # odometer increment, last axis fastest
                a = n - 1
                while a >= 0:
                    ctr[a] += 1
                    if ctr[a] < order:
                        break
                    ctr[a] = 0
                    a -= 1
    return out_arr
