# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled covariance assembly kernels.

Drop-in replacement for :mod:`dgpemu._pykernels`; rows are distributed over
OpenMP threads.
"""
import numpy as np

from cython.parallel cimport prange
from libc.math cimport exp, sqrt, pow

DEF SQRT3 = 1.7320508075688772
DEF SQRT5 = 2.23606797749979


cdef inline double _matern(double q, int nu) noexcept nogil:
    cdef double s
    if nu == 0:
        return exp(-q)
    elif nu == 1:
        s = SQRT3 * q
        return (1.0 + s) * exp(-s)
    s = SQRT5 * q
    return (1.0 + s + s * s / 3.0) * exp(-s)


def matern(q, int nu_code):
    cdef double[::1] qv = np.ascontiguousarray(q, dtype=np.float64).ravel()
    out = np.empty(qv.shape[0])
    cdef double[::1] ov = out
    cdef Py_ssize_t i
    for i in range(qv.shape[0]):
        ov[i] = _matern(qv[i], nu_code)
    return out.reshape(np.shape(q))


def stat_cross(Xa, Xb, inv_lam, double sigma2, int nu_code):
    cdef const double[:, ::1] A = np.ascontiguousarray(Xa, dtype=np.float64)
    cdef const double[:, ::1] B = np.ascontiguousarray(Xb, dtype=np.float64)
    cdef const double[::1] il = np.ascontiguousarray(inv_lam, dtype=np.float64)
    cdef Py_ssize_t n = A.shape[0], p = B.shape[0], d = A.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double r2, diff
    out = np.empty((n, p))
    cdef double[:, ::1] K = out
    for i in prange(n, nogil=True, schedule="static"):
        for j in range(p):
            r2 = 0.0
            for k in range(d):
                diff = (A[i, k] - B[j, k]) * il[k]
                r2 = r2 + diff * diff
            K[i, j] = sigma2 * _matern(sqrt(r2), nu_code)
    return out


def nonstat_cross(Xa, Xb, la, lb, double inv_lam, double sigma2, int nu_code):
    cdef const double[:, ::1] A = np.ascontiguousarray(Xa, dtype=np.float64)
    cdef const double[:, ::1] B = np.ascontiguousarray(Xb, dtype=np.float64)
    cdef double[::1] ea = np.exp(0.5 * np.ascontiguousarray(la, dtype=np.float64))
    cdef double[::1] eb = np.exp(0.5 * np.ascontiguousarray(lb, dtype=np.float64))
    cdef Py_ssize_t n = A.shape[0], p = B.shape[0], d = A.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double r2, diff, havg, pref, half_d = 0.5 * d
    out = np.empty((n, p))
    cdef double[:, ::1] K = out
    for i in prange(n, nogil=True, schedule="static"):
        for j in range(p):
            r2 = 0.0
            for k in range(d):
                diff = A[i, k] - B[j, k]
                r2 = r2 + diff * diff
            havg = 0.5 * (ea[i] * ea[i] + eb[j] * eb[j])
            pref = ea[i] * eb[j] / havg
            if d == 1:
                pref = sqrt(pref)
            elif d != 2:
                pref = pow(pref, half_d)
            K[i, j] = sigma2 * pref * _matern(sqrt(r2 / havg) * inv_lam, nu_code)
    return out
