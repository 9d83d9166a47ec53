"""Uniform periodic grid, FFT derivatives, band-limited interpolation and
Strang split-operator propagation.

Array-level routines live on :class:`Grid1D` and act along the last axis, so
a stack of wavefunctions of shape ``(..., n)`` is handled in one call.
:class:`ComplexField` and the module-level functions are the single-field
surface used by tests and the CLI.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from . import kernels


class OutOfDomainError(ValueError):
    """A query point lies outside ``[x_min, x_max)``."""


@dataclass(frozen=True)
class Grid1D:
    """Periodic grid ``x_j = x_min + j*dx`` with ``x_max`` identified with ``x_min``."""

    x_min: float = -16.0
    x_max: float = 16.0
    n: int = 256

    def __post_init__(self):
        if self.n < 8 or self.n & (self.n - 1):
            raise ValueError(f"n must be a power of two >= 8, got {self.n}")
        if not self.x_max > self.x_min:
            raise ValueError("x_max must exceed x_min")

    @property
    def length(self) -> float:
        return self.x_max - self.x_min

    @property
    def dx(self) -> float:
        return self.length / self.n

    @cached_property
    def x(self) -> np.ndarray:
        return self.x_min + self.dx * np.arange(self.n)

    @cached_property
    def k(self) -> np.ndarray:
        return 2.0 * np.pi * np.fft.fftfreq(self.n, d=self.dx)

    @property
    def dk(self) -> float:
        return 2.0 * np.pi / self.length

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x)
        return (x >= self.x_min) & (x < self.x_max)

    def norm2(self, values, axis=-1):
        return self.dx * np.sum(np.abs(values) ** 2, axis=axis)

    def derivative_multiplier(self, order: int) -> np.ndarray:
        if order < 1:
            raise ValueError(f"derivative order must be >= 1, got {order}")
        mult = (1j * self.k) ** order
        if order % 2:
            mult[self.n // 2] = 0.0
        return mult

    def derivative(self, values, order: int = 1, axis: int = -1) -> np.ndarray:
        mult = self.derivative_multiplier(order)
        shape = [1] * np.ndim(values)
        shape[axis] = self.n
        spec = np.fft.fft(values, axis=axis)
        return np.fft.ifft(spec * mult.reshape(shape), axis=axis)

    def coefficients(self, values) -> np.ndarray:
        """Fourier coefficients in the normalization the kernels expect."""
        return np.fft.fft(values, axis=-1) / self.n

    def _theta(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if not np.all(self.contains(x)):
            bad = x[~self.contains(x)]
            raise OutOfDomainError(
                f"point(s) {bad[:3]} outside [{self.x_min}, {self.x_max})")
        return x - self.x_min

    def interpolate(self, values, x) -> np.ndarray:
        """Band-limited interpolant of every row of ``values`` at points ``x``.

        Returns shape ``values.shape[:-1] + (len(x),)``.
        """
        values = np.asarray(values)
        theta = self._theta(x)
        flat = values.reshape(-1, self.n)
        out = kernels.trig_eval_shared(self.coefficients(flat), theta, self.dk)
        return out.reshape(values.shape[:-1] + (theta.size,))

    def value_and_derivative_paired(self, values, x):
        """Row ``p`` of ``values`` and its first derivative, both at ``x[p]``."""
        theta = self._theta(x)
        coeffs = self.coefficients(np.asarray(values).reshape(-1, self.n))
        return kernels.trig_eval_paired2(coeffs, theta, self.derivative_multiplier(1), self.dk)

    def interpolate_paired(self, values, x, coeffs=None) -> np.ndarray:
        """Row ``p`` of ``values`` evaluated at ``x[p]``."""
        theta = self._theta(x)
        if coeffs is None:
            coeffs = self.coefficients(np.asarray(values).reshape(-1, self.n))
        return kernels.trig_eval_paired(coeffs.reshape(-1, self.n), theta, self.dk)

    def kinetic_phase(self, dt, mass: float = 1.0) -> np.ndarray:
        return np.exp(-1j * dt * self.k ** 2 / (2.0 * mass))

    def strang(self, values, potential, dt, mass=1.0, kin_phase=None, half_phase=None) -> np.ndarray:
        """``e^{-iV dt/2} e^{-iT dt} e^{-iV dt/2}`` along the last axis.

        ``potential`` broadcasts against ``values``; ``mass`` may be an
        array broadcasting against ``values[..., :1]``. A precomputed
        ``half_phase`` replaces ``potential`` when several fields share it.
        """
        if half_phase is None:
            if np.iscomplexobj(dt):
                half_phase = np.exp(-0.5j * dt * np.asarray(potential))
            else:
                half_phase = kernels.expi(-0.5 * dt * np.asarray(potential))
        half = half_phase
        if kin_phase is None:
            kin_phase = np.exp(-1j * dt * self.k ** 2 / (2.0 * np.asarray(mass)))
        spec = np.fft.fft(half * values, axis=-1)
        return half * np.fft.ifft(kin_phase * spec, axis=-1)


@dataclass
class ComplexField:
    grid: Grid1D
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.complex128)
        if self.values.shape != (self.grid.n,):
            raise ValueError(
                f"field has shape {self.values.shape}, grid expects ({self.grid.n},)")

    def norm2(self) -> float:
        return float(self.grid.norm2(self.values))

    def __add__(self, other):
        return ComplexField(self.grid, self.values + other.values)

    def __mul__(self, scalar):
        return ComplexField(self.grid, self.values * scalar)

    __rmul__ = __mul__


def spectral_derivative(f: ComplexField, order: int = 1) -> ComplexField:
    """``order``-th derivative via ``(ik)^order`` in Fourier space (odd orders drop Nyquist)."""
    return ComplexField(f.grid, f.grid.derivative(f.values, order))


def interpolate_at(f: ComplexField, x: float) -> complex:
    """Trigonometric interpolant of ``f`` at ``x``; nodal values are returned as stored."""
    g = f.grid
    theta = g._theta(x)[0]
    j = theta / g.dx
    jr = round(j)
    if abs(j - jr) < 1e-12 and jr < g.n:
        return complex(f.values[jr])
    return complex(g.interpolate(f.values, theta + g.x_min)[0])


def split_operator_step(f: ComplexField, V, dt, mass: float = 1.0) -> ComplexField:
    """One Strang step. Imaginary ``dt = -i*tau`` relaxes; the caller renormalizes."""
    V = np.asarray(V)
    if V.shape != f.values.shape:
        raise ValueError("potential and field shapes differ")
    return ComplexField(f.grid, f.grid.strang(f.values, V, dt, mass))


def write_field_csv(f: ComplexField, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "re", "im"])
        for x, v in zip(f.grid.x, f.values):
            w.writerow([f"{x:.17g}", f"{v.real:.17g}", f"{v.imag:.17g}"])


def read_field_csv(path, grid: Grid1D) -> ComplexField:
    data = np.loadtxt(Path(path), delimiter=",", skiprows=1)
    if data.shape[0] != grid.n or not np.allclose(data[:, 0], grid.x, atol=1e-12):
        raise ValueError(f"{path} does not match the supplied grid")
    return ComplexField(grid, data[:, 1] + 1j * data[:, 2])
