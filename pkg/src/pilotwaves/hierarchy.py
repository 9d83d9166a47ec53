"""Truncated tower of generalized conditional wavefunctions for two particles.

``psi_i^n(x) = d^n Psi / dx_j^n`` at ``x_j = X_j(t)``. Order ``n`` couples to
orders ``n+1`` and ``n+2`` through the partner's kinetic energy and motion,
so the tower is closed by setting everything above ``depth`` to zero. Depth 0
is the Hermitian limit: each particle's pilot wave evolves unitarily in the
potential sliced at its partner's position.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exactref import Field2D, partner_derivative_slices
from .grid import Grid1D, OutOfDomainError
from .ipw import VELOCITY_THRESHOLD, batch_velocities, heun_step
from .model import ConditionedPotential


@dataclass
class HierarchyState:
    """``cw[i, n]`` holds ``psi_i^n`` on the shared grid; shape ``(2, depth+1, n_grid)``."""

    grid: Grid1D
    depth: int
    cw: np.ndarray
    positions: np.ndarray
    masses: tuple
    time: float = 0.0

    def __post_init__(self):
        self.cw = np.asarray(self.cw, dtype=np.complex128)
        self.positions = np.asarray(self.positions, dtype=float)
        if self.depth < 0:
            raise ValueError("depth must be non-negative")
        if self.cw.shape != (2, self.depth + 1, self.grid.n):
            raise ValueError(f"cw shape {self.cw.shape} does not match depth {self.depth}")
        if self.positions.shape != (2,):
            raise ValueError("need two positions")

    def velocities(self) -> np.ndarray:
        return batch_velocities(self.grid, self.cw[:, 0], self.positions,
                                np.asarray(self.masses, dtype=float))

    def copy(self) -> "HierarchyState":
        return HierarchyState(self.grid, self.depth, self.cw.copy(), self.positions.copy(),
                              self.masses, self.time)


def init_from_2body(psi: Field2D, depth: int, positions, masses=(1.0, 1.0)) -> HierarchyState:
    """Slice ``Psi`` and its partner derivatives up to ``depth`` at the given positions.

    Both axes of ``psi`` must use the same grid.
    """
    if psi.grid_x != psi.grid_y:
        raise ValueError("hierarchy needs the same grid on both axes")
    g = psi.grid_x
    pos = np.asarray(positions, dtype=float)
    if not np.all(g.contains(pos)):
        raise OutOfDomainError(f"positions {pos} outside [{g.x_min}, {g.x_max})")
    cw = np.stack([partner_derivative_slices(psi, i, pos[1 - i], depth) for i in range(2)])
    return HierarchyState(g, depth, cw, pos, tuple(float(m) for m in masses))


def hierarchy_source(state: HierarchyState, psi, X, v, potential: ConditionedPotential,
                     t: float) -> np.ndarray:
    """Non-Hermitian part of the tower equations for every particle and order.

    ``psi`` has shape ``(2, D+1, n)``; orders above ``D`` are taken as zero.
    """
    g = state.grid
    d = state.depth
    out = np.zeros_like(psi)
    for i in range(2):
        j = 1 - i
        dv = [potential.partner_derivative(g.x, i, X, k, t)[0] for k in range(1, d + 1)]
        for n in range(d + 1):
            w = out[i, n]
            for k in range(1, n + 1):
                w += math.comb(n, k) * psi[i, n - k] * dv[k - 1]
            if n + 2 <= d:
                w -= psi[i, n + 2] / (2.0 * state.masses[j])
            if n + 1 <= d:
                w += 1j * v[j] * psi[i, n + 1]
    return out


def hierarchy_step(state: HierarchyState, potential: ConditionedPotential, dt: float) -> HierarchyState:
    """Advance the truncated tower and both positions by ``dt`` in place.

    Uses the same predictor-corrector and Strang splitting as the ensemble
    solver, so depth 0 reproduces its Hermitian-limit step exactly.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    g = state.grid
    masses = np.asarray(state.masses, dtype=float).reshape(2, 1, 1)
    pos_now = state.positions

    def velocity(psi, X):
        return batch_velocities(g, psi[:, 0], X, masses[:, 0, 0], VELOCITY_THRESHOLD)

    def sliced(Xm, tm):
        Xm = Xm if np.all(g.contains(Xm)) else pos_now
        return potential.sliced(g.x, Xm[None, :], tm).reshape(2, 1, g.n)

    def source(psi, X, v, tt):
        X = X if np.all(g.contains(X)) else pos_now
        return hierarchy_source(state, psi, X, v, potential, tt)

    new, xn, _ = heun_step(g, state.cw, state.positions, state.time, dt, masses,
                           velocity, sliced, source if state.depth > 0 else None)
    if not np.all(g.contains(xn)):
        raise OutOfDomainError(f"trajectory left the grid at t={state.time + dt:.4f}: {xn}")
    if not np.all(np.isfinite(new)):
        raise FloatingPointError(f"non-finite hierarchy fields at t={state.time + dt:.4f}")
    state.cw = new
    state.positions = xn
    state.time += dt
    return state


def run_hierarchy(state: HierarchyState, potential: ConditionedPotential, dt: float,
                  t_max: float, record_every: int = 1):
    """Step to ``t_max``; returns times ``(T,)`` and positions ``(T, 2)``."""
    steps = int(round((t_max - state.time) / dt))
    times = [state.time]
    xs = [state.positions.copy()]
    for s in range(1, steps + 1):
        hierarchy_step(state, potential, dt)
        if s % record_every == 0 or s == steps:
            times.append(state.time)
            xs.append(state.positions.copy())
    return np.array(times), np.array(xs)
