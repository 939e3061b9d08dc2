# cython: boundscheck=False, wraparound=False, initializedcheck=False
"""Compiled level-sweep kernels; drop-in for ``_kernels_py``.

Same contracts as the numpy fallback: NaN at infeasible entries, exact
maxima, compensated (Kahan) masked sums.
"""

from libc.math cimport NAN, fabs

import numpy as np

BACKEND = "cython"


cdef inline unsigned char[::1] _mask(object feas):
    return np.ascontiguousarray(feas).view(np.uint8)


def sweep_values(double[::1] prev, feas_prev, double[::1] r0, double[::1] r1, feas_k):
    cdef unsigned char[::1] fp = _mask(feas_prev)
    cdef unsigned char[::1] fk = _mask(feas_k)
    cdef Py_ssize_t m = fk.shape[0]
    out_arr = np.empty(m, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t s
    cdef double c0, c1
    cdef bint has0, has1
    for s in range(m):
        if not fk[s]:
            out[s] = NAN
            continue
        has0 = fp[2 * s]
        has1 = fp[2 * s + 1]
        c0 = r0[s] + prev[2 * s] if has0 else 0.0
        c1 = r1[s] + prev[2 * s + 1] if has1 else 0.0
        if has0 and has1:
            out[s] = c0 if c0 >= c1 else c1
        elif has0:
            out[s] = c0
        else:
            out[s] = c1
    return out_arr


def sweep_delta_abs(double[::1] vals_k, double[::1] prev, feas_prev,
                    double[::1] r0, double[::1] r1, feas_k):
    cdef unsigned char[::1] fp = _mask(feas_prev)
    cdef unsigned char[::1] fk = _mask(feas_k)
    cdef Py_ssize_t m = fk.shape[0]
    out_arr = np.empty(m, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t s
    cdef double c0, c1, best
    cdef bint has0, has1
    for s in range(m):
        if not fk[s]:
            out[s] = NAN
            continue
        has0 = fp[2 * s]
        has1 = fp[2 * s + 1]
        c0 = r0[s] + prev[2 * s] if has0 else 0.0
        c1 = r1[s] + prev[2 * s + 1] if has1 else 0.0
        if has0 and has1:
            best = c0 if c0 >= c1 else c1
        elif has0:
            best = c0
        else:
            best = c1
        out[s] = fabs(best - vals_k[s])
    return out_arr


def sweep_rhs(double[::1] rhs_prev, double[::1] dabs_k, feas_prev, feas_k):
    cdef unsigned char[::1] fp = _mask(feas_prev)
    cdef unsigned char[::1] fk = _mask(feas_k)
    cdef Py_ssize_t m = fk.shape[0]
    out_arr = np.empty(m, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t s
    cdef double acc
    for s in range(m):
        if not fk[s]:
            out[s] = NAN
            continue
        acc = dabs_k[s]
        if fp[2 * s]:
            acc += rhs_prev[2 * s]
        if fp[2 * s + 1]:
            acc += rhs_prev[2 * s + 1]
        out[s] = acc
    return out_arr


def masked_sum(double[::1] x, mask) -> float:
    cdef unsigned char[::1] mk = _mask(mask)
    cdef Py_ssize_t m = mk.shape[0]
    cdef Py_ssize_t s
    cdef double total = 0.0, comp = 0.0, y, t
    for s in range(m):
        if mk[s]:
            y = x[s] - comp
            t = total + y
            comp = (t - total) - y
            total = t
    return total
