"""Physical system description: trap, pair interaction, switch-on schedule,
effective one-body potential and the fixed orbital basis.

Atomic units throughout (hbar = 1).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.polynomial.hermite import hermval
from scipy import linalg

from .grid import ComplexField, Grid1D

log = logging.getLogger(__name__)

HBAR = 1.0


class ResolutionError(ValueError):
    """Requested orbitals are not resolved on the grid."""


@dataclass(frozen=True)
class TrapSpec:
    k_t: float = 1.0
    mass: float = 1.0

    def __post_init__(self):
        if self.k_t < 0 or self.mass <= 0:
            raise ValueError("need k_t >= 0 and mass > 0")

    def potential(self, x):
        return 0.5 * self.k_t * np.asarray(x) ** 2


@dataclass(frozen=True)
class PairInteractionSpec:
    """``kind`` is ``"harmonic"``, ``"gaussian"`` or ``"none"``."""

    kind: str = "none"
    k_i: float = 0.0
    sigma: float = 1.0

    def __post_init__(self):
        if self.kind not in ("harmonic", "gaussian", "none"):
            raise ValueError(f"unknown interaction kind {self.kind!r}")
        if self.kind == "gaussian" and self.sigma <= 0:
            raise ValueError("gaussian interaction needs sigma > 0")

    def with_strength(self, k_i: float) -> "PairInteractionSpec":
        return replace(self, k_i=k_i)

    def partner_derivative(self, x, y, order: int):
        """``d^order/dy^order V(x, y)``, analytic for each variant."""
        u = np.asarray(x) - np.asarray(y)
        if self.kind == "none" or self.k_i == 0.0:
            return np.zeros(np.broadcast(u, u).shape)
        if self.kind == "harmonic":
            if order == 0:
                return 0.5 * self.k_i * u ** 2
            if order == 1:
                return -self.k_i * u
            if order == 2:
                return np.full(u.shape, float(self.k_i))
            return np.zeros(u.shape)
        # d^n/dy^n g(x - y) = (-1)^n g^(n)(u); g^(n) via physicists' Hermite.
        s2 = self.sigma * math.sqrt(2.0)
        amp = self.k_i / math.sqrt(2.0 * math.pi * self.sigma ** 2)
        coef = np.zeros(order + 1)
        coef[order] = 1.0
        gn = amp * (-1.0 / s2) ** order * hermval(u / s2, coef) * np.exp(-(u / s2) ** 2)
        return (-1.0) ** order * gn


def pair_potential(spec: PairInteractionSpec, x, y):
    return spec.partner_derivative(x, y, 0)


@dataclass(frozen=True)
class Schedule:
    """Interaction switch-on. ``adiabatic``: ``k(t) = k_max*(1 - exp(-rate*t^2))``."""

    kind: str = "sudden"
    rate: float = 0.02

    def __post_init__(self):
        if self.kind not in ("sudden", "adiabatic"):
            raise ValueError(f"unknown schedule {self.kind!r}")
        if self.kind == "adiabatic" and self.rate <= 0:
            raise ValueError("adiabatic rate must be positive")

    def strength(self, k_max: float, t: float) -> float:
        if self.kind == "sudden":
            return k_max
        return k_max * -math.expm1(-self.rate * t * t)


def schedule_strength(schedule: Schedule, k_max: float, t: float) -> float:
    return schedule.strength(k_max, t)


@dataclass(frozen=True)
class SystemSpec:
    n_bosons: int = 2
    trap: TrapSpec = field(default_factory=TrapSpec)
    interaction: PairInteractionSpec = field(default_factory=PairInteractionSpec)
    schedule: Schedule = field(default_factory=Schedule)

    def __post_init__(self):
        if self.n_bosons < 2:
            raise ValueError("need at least two bosons")

    @property
    def mass(self) -> float:
        return self.trap.mass

    def interaction_at(self, t: float) -> PairInteractionSpec:
        return self.interaction.with_strength(self.schedule.strength(self.interaction.k_i, t))

    def potential(self) -> "ConditionedPotential":
        n = self.n_bosons
        return ConditionedPotential(
            springs=(self.trap.k_t,) * n, masses=(self.trap.mass,) * n,
            pair=self.interaction, schedule=self.schedule)


@dataclass(frozen=True)
class ConditionedPotential:
    """Total potential ``sum_i k_i x_i^2/2 + sum_{i<j} V(x_i, x_j)``, sliced
    along one coordinate with the others held at Bohmian positions.

    Per-particle springs and masses allow the unequal-mass two-particle
    benchmark; boson systems use equal values.
    """

    springs: tuple
    masses: tuple
    pair: PairInteractionSpec = field(default_factory=PairInteractionSpec)
    schedule: Schedule = field(default_factory=Schedule)

    @property
    def n_particles(self) -> int:
        return len(self.springs)

    def pair_at(self, t: float) -> PairInteractionSpec:
        return self.pair.with_strength(self.schedule.strength(self.pair.k_i, t))

    def sliced(self, x, positions, t: float) -> np.ndarray:
        """``V(x; others)`` for every particle of every configuration.

        ``positions`` has shape ``(W, N)``; returns ``(W, N, len(x))``.
        Constant terms from the partners are kept: they set the relative
        phase between configurations.
        """
        positions = np.asarray(positions, dtype=float)
        springs = np.asarray(self.springs, dtype=float)
        x = np.asarray(x, dtype=float)
        pair = self.pair_at(t)
        n = self.n_particles
        trap_pts = 0.5 * springs * positions ** 2
        const = trap_pts.sum(axis=1, keepdims=True) - trap_pts
        interacting = pair.kind != "none" and pair.k_i != 0.0
        if interacting and n > 2:
            vij = pair.partner_derivative(positions[:, :, None], positions[:, None, :], 0)
            upper = np.triu(np.ones((n, n), dtype=bool), 1)
            total = np.where(upper, vij, 0.0).sum(axis=(1, 2))
            touching = vij.sum(axis=2) - np.diagonal(vij, axis1=1, axis2=2)
            const = const + (total[:, None] - touching)
        out = 0.5 * springs[None, :, None] * x ** 2 + const[:, :, None]
        if interacting:
            sx = pair.partner_derivative(x, positions[:, :, None], 0)
            for i in range(n):
                others = [j for j in range(n) if j != i]
                out[:, i, :] += sx[:, others, :].sum(axis=1)
        return out

    def partner_derivative(self, x, i: int, positions, order: int, t: float):
        """``d^order V / dx_j^order`` with ``x_i = x`` and ``x_j = X_j`` (two particles)."""
        j = 1 - i
        xj = np.asarray(positions, dtype=float)[..., j]
        pair = self.pair_at(t)
        out = pair.partner_derivative(np.asarray(x)[None, :], np.atleast_1d(xj)[:, None], order)
        k = self.springs[j]
        if order == 1:
            out = out + k * np.atleast_1d(xj)[:, None]
        elif order == 2:
            out = out + k
        return out


def effective_potential(trap: TrapSpec, spec: PairInteractionSpec, rho, grid: Grid1D) -> np.ndarray:
    """Trap plus the density-weighted pair interaction, midpoint quadrature."""
    rho = np.asarray(rho, dtype=float)
    norm = grid.dx * rho.sum()
    if abs(norm - 1.0) > 1e-6:
        log.warning("effective_potential: density norm %.8g, renormalizing", norm)
        rho = rho / norm
    v = trap.potential(grid.x)
    if spec.kind == "none" or spec.k_i == 0.0:
        return v
    pair = spec.partner_derivative(grid.x[:, None], grid.x[None, :], 0)
    return v + grid.dx * pair @ rho


def kinetic_matrix(grid: Grid1D, mass: float = 1.0) -> np.ndarray:
    """Dense ``-(1/2m) d^2/dx^2`` in the spectral (Fourier) discretization."""
    t_k = grid.k ** 2 / (2.0 * mass)
    # circulant: first column is ifft of the symbol
    col = np.fft.ifft(t_k).real
    idx = (np.arange(grid.n)[:, None] - np.arange(grid.n)[None, :]) % grid.n
    return col[idx]


@dataclass(frozen=True)
class OrbitalBasis:
    grid: Grid1D
    orbitals: np.ndarray
    d_orbitals: np.ndarray
    dd_orbitals: np.ndarray
    eigenvalues: np.ndarray

    @property
    def m_orbitals(self) -> int:
        return self.orbitals.shape[0]

    def field(self, i: int) -> ComplexField:
        return ComplexField(self.grid, self.orbitals[i])

    @property
    def is_real(self) -> bool:
        return not (self.orbitals.imag.any() or self.d_orbitals.imag.any()
                    or self.dd_orbitals.imag.any())

    def overlap(self) -> np.ndarray:
        return self.grid.dx * self.orbitals.conj() @ self.orbitals.T


def build_orbitals(v_eff, m: int, grid: Grid1D, mass: float = 1.0) -> OrbitalBasis:
    """Lowest ``m`` eigenfunctions of ``-(1/2m)d^2 + v_eff`` by dense diagonalization."""
    if m < 1:
        raise ValueError("need at least one orbital")
    if m > grid.n // 4:
        raise ResolutionError(f"{m} orbitals cannot be resolved on {grid.n} points")
    h = kinetic_matrix(grid, mass) + np.diag(np.asarray(v_eff, dtype=float))
    evals, evecs = linalg.eigh(h, subset_by_index=[0, m - 1])
    phi = evecs.T / math.sqrt(grid.dx)
    for row in phi:
        j = np.argmax(np.abs(row))
        row *= np.sign(row[j])
    spec = np.abs(np.fft.fft(phi, axis=1)) ** 2
    q = grid.n // 4
    tail = spec[:, q:grid.n - q].sum(axis=1) / spec.sum(axis=1)
    edge = np.abs(phi[:, [0, -1]]).max(axis=1) / np.abs(phi).max(axis=1)
    if np.any(tail > 1e-10) or np.any(edge > 1e-6):
        raise ResolutionError(
            f"orbitals not resolved: max spectral tail {tail.max():.2e}, edge {edge.max():.2e}")
    d1 = grid.derivative(phi, 1).real.astype(np.complex128)
    d2 = grid.derivative(phi, 2).real.astype(np.complex128)
    return OrbitalBasis(grid, phi.astype(np.complex128), d1, d2, evals)


def trap_ground_state(trap: TrapSpec, grid: Grid1D) -> np.ndarray:
    """Numerical ground state of the bare trap on ``grid`` (normalized, real-positive)."""
    return build_orbitals(trap.potential(grid.x), 1, grid, trap.mass).orbitals[0]


def make_basis(system: SystemSpec, m: int, grid: Grid1D) -> OrbitalBasis:
    """Orbitals of the effective potential from the noninteracting density and
    the full-strength interaction."""
    phi0 = trap_ground_state(system.trap, grid)
    rho = np.abs(phi0) ** 2
    v_eff = effective_potential(system.trap, system.interaction, rho, grid)
    return build_orbitals(v_eff, m, grid, system.mass)
