"""Pure-numpy band-limited evaluation kernels.

Both kernels take Fourier coefficients in numpy FFT ordering, already
divided by ``n``, and offsets ``theta = x - x_min`` from the left grid edge.
The Nyquist term is evaluated as a cosine so that real samples give a real
interpolant and grid nodes are reproduced.
"""

import numpy as np


def phasor_matrix(theta, n, dk):
    """Rows of band-limited basis values at each point: (P, n)."""
    theta = np.ascontiguousarray(theta, dtype=np.float64)
    m = np.fft.fftfreq(n, d=1.0 / n)
    ph = np.exp(1j * dk * np.multiply.outer(theta, m))
    ph[..., n // 2] = np.cos(0.5 * n * dk * theta)
    return ph


def trig_eval_shared(coeffs, theta, dk):
    """Evaluate S series at P points: returns (S, P)."""
    coeffs = np.ascontiguousarray(coeffs, dtype=np.complex128)
    theta = np.ascontiguousarray(theta, dtype=np.float64)
    ph = phasor_matrix(theta, coeffs.shape[1], dk)
    return coeffs @ ph.T


def trig_eval_paired(coeffs, theta, dk):
    """Evaluate series p at point p: returns (P,)."""
    coeffs = np.ascontiguousarray(coeffs, dtype=np.complex128)
    theta = np.ascontiguousarray(theta, dtype=np.float64)
    ph = phasor_matrix(theta, coeffs.shape[1], dk)
    return np.einsum("pm,pm->p", coeffs, ph)


def trig_eval_paired2(coeffs, theta, mult, dk):
    """Series p and its multiplied twin ``coeffs*mult`` at point p: two (P,) arrays."""
    coeffs = np.ascontiguousarray(coeffs, dtype=np.complex128)
    ph = phasor_matrix(theta, coeffs.shape[1], dk) * coeffs
    return ph.sum(axis=1), ph @ np.asarray(mult, dtype=np.complex128)


def expi(a):
    """``exp(1j*a)`` for real ``a`` of any shape."""
    a = np.asarray(a, dtype=np.float64)
    out = np.empty(a.shape, dtype=np.complex128)
    np.cos(a, out=out.real)
    np.sin(a, out=out.imag)
    return out
