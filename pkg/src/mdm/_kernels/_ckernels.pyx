# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops; see ``_pykernels`` for the reference semantics."""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor, fabs

cnp.import_array()


def cbc_criteria(Py_ssize_t n, base):
    cdef const double[::1] b = np.ascontiguousarray(base, dtype=np.float64)
    if b.shape[0] != n:
        raise ValueError(f"base must have shape ({n},), got ({b.shape[0]},)")
    cdef double[::1] table = np.empty(n, dtype=np.float64)
    cdef Py_ssize_t k, z, r
    cdef double t, acc
    for k in range(n):
        t = <double>k / n
        table[k] = 1.0 + 6.0 * (t * t - t + 1.0 / 6.0)
    out = np.empty(n - 1, dtype=np.float64)
    cdef double[::1] o = out
    for z in range(1, n):
        acc = 0.0
        r = 0
        for k in range(n):
            acc += table[r] * b[k]
            r += z
            if r >= n:
                r -= n
        o[z - 1] = acc / n
    return out


def compensated_add(double[::1] s, double[::1] c, x):
    cdef const double[::1] xx = np.ascontiguousarray(x, dtype=np.float64)
    if s.shape[0] != xx.shape[0] or c.shape[0] != xx.shape[0]:
        raise ValueError("s, c and x must share one shape")
    cdef Py_ssize_t j
    cdef double t, a, b
    for j in range(xx.shape[0]):
        a = s[j]
        b = xx[j]
        t = a + b
        if fabs(a) >= fabs(b):
            c[j] += (a - t) + b
        else:
            c[j] += (b - t) + a
        s[j] = t


def lattice_points(Py_ssize_t n, z, shift):
    cdef const long long[::1] zz = np.ascontiguousarray(np.asarray(z, dtype=np.int64) % n)
    cdef const double[::1] sh = np.ascontiguousarray(shift, dtype=np.float64)
    cdef Py_ssize_t d = zz.shape[0], i, j
    if n >= 2**31:
        raise ValueError("lattice size must be below 2**31")
    if sh.shape[0] != d:
        raise ValueError("shift and z must have the same length")
    out = np.empty((n, d), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef long long r
    cdef double x
    for j in range(d):
        r = 0
        for i in range(n):
            # row i holds index i + 1; the running residue avoids i * z products
            r += zz[j]
            if r >= n:
                r -= n
            x = <double>r / n + sh[j]
            x -= floor(x)
            o[i, j] = x - 0.5
    return out
