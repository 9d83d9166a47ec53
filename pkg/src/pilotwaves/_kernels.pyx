# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled band-limited evaluation kernels.

Same contract as ``_kernels_py``. Phasors come from a complex recurrence
instead of one ``exp`` per term.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sin

cnp.import_array()


cdef inline void _fill_phasors(double complex* ph, Py_ssize_t n, double dk,
                               double theta) noexcept nogil:
    cdef Py_ssize_t half = n // 2
    cdef Py_ssize_t m
    cdef double complex base = cos(dk * theta) + 1j * sin(dk * theta)
    cdef double complex cbase = base.conjugate()
    cdef double complex p = 1.0
    for m in range(half):
        ph[m] = p
        p = p * base
    p = cbase
    for m in range(1, half):
        ph[n - m] = p
        p = p * cbase
    ph[half] = cos(half * dk * theta)


def phasor_matrix(theta, Py_ssize_t n, double dk):
    """Rows of band-limited basis values at each point: (P, n)."""
    cdef double[::1] th = np.ascontiguousarray(theta, dtype=np.float64)
    cdef Py_ssize_t P = th.shape[0]
    out = np.empty((P, n), dtype=np.complex128)
    cdef double complex[:, ::1] o = out
    cdef Py_ssize_t p
    with nogil:
        for p in range(P):
            _fill_phasors(&o[p, 0], n, dk, th[p])
    return out


def trig_eval_shared(coeffs, theta, double dk):
    """Evaluate S series at P points: returns (S, P)."""
    coeffs = np.ascontiguousarray(coeffs, dtype=np.complex128)
    return coeffs @ phasor_matrix(theta, coeffs.shape[1], dk).T


def trig_eval_paired(coeffs, theta, double dk):
    """Evaluate series p at point p: returns (P,)."""
    cdef double complex[:, ::1] c = np.ascontiguousarray(coeffs, dtype=np.complex128)
    cdef double[::1] th = np.ascontiguousarray(theta, dtype=np.float64)
    cdef Py_ssize_t n = c.shape[1]
    cdef Py_ssize_t P = th.shape[0]
    out = np.empty(P, dtype=np.complex128)
    cdef double complex[::1] o = out
    cdef double complex[::1] ph = np.empty(n, dtype=np.complex128)
    cdef Py_ssize_t p, m
    cdef double complex acc
    with nogil:
        for p in range(P):
            _fill_phasors(&ph[0], n, dk, th[p])
            acc = 0.0
            for m in range(n):
                acc = acc + c[p, m] * ph[m]
            o[p] = acc
    return out


def trig_eval_paired2(coeffs, theta, mult, double dk):
    """Series p and its multiplied twin ``coeffs*mult`` at point p: two (P,) arrays."""
    cdef double complex[:, ::1] c = np.ascontiguousarray(coeffs, dtype=np.complex128)
    cdef double complex[::1] mu = np.ascontiguousarray(mult, dtype=np.complex128)
    cdef double[::1] th = np.ascontiguousarray(theta, dtype=np.float64)
    cdef Py_ssize_t n = c.shape[1]
    cdef Py_ssize_t P = th.shape[0]
    out1 = np.empty(P, dtype=np.complex128)
    out2 = np.empty(P, dtype=np.complex128)
    cdef double complex[::1] o1 = out1
    cdef double complex[::1] o2 = out2
    cdef double complex[::1] ph = np.empty(n, dtype=np.complex128)
    cdef Py_ssize_t p, m
    cdef double complex a1, a2, t
    with nogil:
        for p in range(P):
            _fill_phasors(&ph[0], n, dk, th[p])
            a1 = 0.0
            a2 = 0.0
            for m in range(n):
                t = c[p, m] * ph[m]
                a1 = a1 + t
                a2 = a2 + t * mu[m]
            o1[p] = a1
            o2[p] = a2
    return out1, out2


def expi(a):
    """``exp(1j*a)`` for real ``a`` of any shape."""
    arr = np.ascontiguousarray(a, dtype=np.float64)
    out = np.empty(arr.shape, dtype=np.complex128)
    cdef double[::1] x = arr.reshape(-1)
    cdef double complex[::1] o = out.reshape(-1)
    cdef Py_ssize_t i, N = x.shape[0]
    with nogil:
        for i in range(N):
            o[i] = cos(x[i]) + 1j * sin(x[i])
    return out
