"""Exact two-particle references on a 2D grid and closed-form harmonic oracles."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.sparse.linalg import LinearOperator, eigsh

from . import kernels
from .grid import ComplexField, Grid1D
from .model import OrbitalBasis, PairInteractionSpec

log = logging.getLogger(__name__)


class ConvergenceError(RuntimeError):
    pass


@dataclass
class Field2D:
    """``values[jx, jy]`` = Psi(x_jx, y_jy)."""

    grid_x: Grid1D
    grid_y: Grid1D
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.complex128)
        if self.values.shape != (self.grid_x.n, self.grid_y.n):
            raise ValueError("Field2D shape does not match its grids")

    @property
    def cell(self) -> float:
        return self.grid_x.dx * self.grid_y.dx

    def norm2(self) -> float:
        return float(self.cell * np.sum(np.abs(self.values) ** 2))

    def normalized(self) -> "Field2D":
        return Field2D(self.grid_x, self.grid_y, self.values / math.sqrt(self.norm2()))

    def mesh(self):
        return np.meshgrid(self.grid_x.x, self.grid_y.x, indexing="ij")


@dataclass
class OrbitalExpansion2D:
    """``Psi(x, y) = sum_ij c_ij phi_i(x) phi_j(y)`` (validation only)."""

    basis: OrbitalBasis
    coeffs: np.ndarray

    def to_field(self) -> Field2D:
        phi = self.basis.orbitals
        return Field2D(self.basis.grid, self.basis.grid, phi.T @ self.coeffs @ phi)

    def cw(self, y: float, order: int = 0) -> np.ndarray:
        """``d^order/dy^order Psi(x, y)`` at ``y``, on the grid in ``x``."""
        g = self.basis.grid
        table = (self.basis.orbitals, self.basis.d_orbitals, self.basis.dd_orbitals)[order]
        at_y = g.interpolate(table, [y])[:, 0]
        return (self.coeffs @ at_y) @ self.basis.orbitals


def two_body_potential(grid_x: Grid1D, grid_y: Grid1D, springs=(1.0, 1.0),
                       pair: PairInteractionSpec | None = None) -> np.ndarray:
    """``k1 x^2/2 + k2 y^2/2 + V_pair(x, y)`` on the product grid."""
    x, y = np.meshgrid(grid_x.x, grid_y.x, indexing="ij")
    v = 0.5 * springs[0] * x ** 2 + 0.5 * springs[1] * y ** 2
    if pair is not None:
        v = v + pair.partner_derivative(x, y, 0)
    return v


def _kinetic_symbol(gx: Grid1D, gy: Grid1D, masses) -> np.ndarray:
    return gx.k[:, None] ** 2 / (2.0 * masses[0]) + gy.k[None, :] ** 2 / (2.0 * masses[1])


class TwoBodyPropagator:
    """Strang stepper with cached phase factors for a fixed potential and step."""

    def __init__(self, gx: Grid1D, gy: Grid1D, V2, dt, masses=(1.0, 1.0)):
        self.gx, self.gy = gx, gy
        self.half = np.exp(-0.5j * dt * np.asarray(V2))
        self.kin = np.exp(-1j * dt * _kinetic_symbol(gx, gy, masses))

    def step(self, values: np.ndarray) -> np.ndarray:
        return self.half * np.fft.ifft2(self.kin * np.fft.fft2(self.half * values))


def evolve_2body(psi: Field2D, V2, dt, masses=(1.0, 1.0)) -> Field2D:
    prop = TwoBodyPropagator(psi.grid_x, psi.grid_y, V2, dt, masses)
    return Field2D(psi.grid_x, psi.grid_y, prop.step(psi.values))


def apply_hamiltonian(values, V2, gx: Grid1D, gy: Grid1D, masses=(1.0, 1.0)):
    t = np.fft.ifft2(_kinetic_symbol(gx, gy, masses) * np.fft.fft2(values))
    return t + V2 * values


def energy_2body(psi: Field2D, V2, masses=(1.0, 1.0)) -> float:
    hpsi = apply_hamiltonian(psi.values, V2, psi.grid_x, psi.grid_y, masses)
    e = psi.cell * np.vdot(psi.values, hpsi) / psi.norm2()
    return float(e.real)


def ground_state_2body(V2, masses, gx: Grid1D, gy: Grid1D, dtaus=(0.05, 0.01),
                       tol: float = 1e-12, max_steps: int = 200_000,
                       polish: bool = True) -> tuple[Field2D, float]:
    """Normalized ground state and its energy.

    Imaginary-time relaxation with per-step renormalization, stage by stage
    through ``dtaus``, each stage stopping once the energy change per step is
    below ``tol``. The relaxed state then seeds a Lanczos refinement that
    removes the O(dtau^2) splitting bias.
    """
    V2 = np.asarray(V2, dtype=float)
    x, y = np.meshgrid(gx.x, gy.x, indexing="ij")
    psi = np.exp(-0.5 * (x ** 2 + y ** 2)).astype(np.complex128)
    psi /= math.sqrt(gx.dx * gy.dx * np.sum(np.abs(psi) ** 2))
    field = Field2D(gx, gy, psi)
    steps = 0
    energy = energy_2body(field, V2, masses)
    for dtau in dtaus:
        prop = TwoBodyPropagator(gx, gy, V2, -1j * dtau, masses)
        while True:
            field.values = prop.step(field.values)
            field.values /= math.sqrt(field.norm2())
            steps += 1
            e_new = energy_2body(field, V2, masses)
            if abs(e_new - energy) < tol:
                energy = e_new
                break
            energy = e_new
            if steps >= max_steps:
                raise ConvergenceError(
                    f"imaginary-time relaxation did not converge in {max_steps} steps")
    if polish:
        shape = field.values.shape
        op = LinearOperator(
            (field.values.size,) * 2,
            matvec=lambda v: apply_hamiltonian(v.reshape(shape), V2, gx, gy, masses).ravel(),
            dtype=np.complex128)
        vals, vecs = eigsh(op, k=1, which="SA", v0=field.values.ravel(), tol=1e-14)
        vec = vecs[:, 0].reshape(shape)
        j = np.unravel_index(np.argmax(np.abs(vec)), shape)
        vec = vec * (abs(vec[j]) / vec[j])
        field = Field2D(gx, gy, vec).normalized()
        energy = energy_2body(field, V2, masses)
    return field, energy


def extract_cw(psi: Field2D, which: int, pos: float) -> ComplexField:
    """Conditional wavefunction of particle ``which`` with the partner at ``pos``."""
    if which == 0:
        g, other, vals = psi.grid_x, psi.grid_y, psi.values
    elif which == 1:
        g, other, vals = psi.grid_y, psi.grid_x, psi.values.T
    else:
        raise ValueError("which must be 0 or 1")
    theta = other._theta(pos)[0]
    j = theta / other.dx
    jr = round(j)
    if abs(j - jr) < 1e-12 and jr < other.n:
        return ComplexField(g, vals[:, jr].copy())
    return ComplexField(g, other.interpolate(vals, [pos])[:, 0])


def partner_derivative_slices(psi: Field2D, which: int, pos: float, depth: int) -> np.ndarray:
    """``d^n Psi / d x_partner^n`` sliced at the partner position, n = 0..depth."""
    vals = psi.values if which == 0 else psi.values.T
    other = psi.grid_y if which == 0 else psi.grid_x
    own = psi.grid_x if which == 0 else psi.grid_y
    out = np.empty((depth + 1, own.n), dtype=np.complex128)
    for n in range(depth + 1):
        d = vals if n == 0 else other.derivative(vals, n, axis=1)
        out[n] = extract_cw(Field2D(own, other, d), 0, pos).values
    return out


class PointEvaluator2D:
    """Band-limited values and gradient of a 2D field at many points."""

    def __init__(self, psi: Field2D):
        gx, gy = psi.grid_x, psi.grid_y
        f = np.fft.fft2(psi.values) / (gx.n * gy.n)
        self.gx, self.gy = gx, gy
        self.stack = np.concatenate(
            [f, f * gx.derivative_multiplier(1)[:, None], f * gy.derivative_multiplier(1)[None, :]],
            axis=1)

    def __call__(self, x1, x2):
        e1 = kernels.phasor_matrix(np.asarray(x1) - self.gx.x_min, self.gx.n, self.gx.dk)
        e2 = kernels.phasor_matrix(np.asarray(x2) - self.gy.x_min, self.gy.n, self.gy.dk)
        g = e1 @ self.stack
        ny = self.gy.n
        val = np.einsum("pm,pm->p", g[:, :ny], e2)
        d1 = np.einsum("pm,pm->p", g[:, ny:2 * ny], e2)
        d2 = np.einsum("pm,pm->p", g[:, 2 * ny:], e2)
        return val, d1, d2


def velocities_2body(psi: Field2D, x1, x2, masses, threshold: float = 1e-6):
    """Bohmian velocities ``Im(grad Psi / Psi)/m`` at each point pair.

    Velocity is zeroed where ``|Psi| < threshold * max|Psi|``.
    """
    val, d1, d2 = PointEvaluator2D(psi)(np.atleast_1d(x1), np.atleast_1d(x2))
    amax = np.abs(psi.values).max()
    ok = np.abs(val) >= threshold * amax
    safe = np.where(ok, val, 1.0)
    v1 = np.where(ok, (d1 / safe).imag / masses[0], 0.0)
    v2 = np.where(ok, (d2 / safe).imag / masses[1], 0.0)
    return v1, v2


@dataclass
class TrajectoryResult:
    times: np.ndarray
    x1: np.ndarray
    x2: np.ndarray
    escaped: np.ndarray

    def as_rows(self, k: int = 0):
        return np.column_stack([self.times, self.x1[:, k], self.x2[:, k]])


def exact_bohmian_trajectories(psi0: Field2D, V2, masses, x0, dt: float = 0.002,
                               t_max: float = 10.0, record_every: int = 1,
                               callback=None) -> TrajectoryResult:
    """Co-evolve Psi and Bohmian positions (explicit midpoint, Psi at the half step).

    ``x0`` is ``(X1, X2)`` with scalar or array entries; arrays run a batch of
    trajectories against the same Psi. Escaped trajectories are frozen at
    their last in-domain point and flagged.
    ``callback(t, psi)`` is called at every recorded time.
    """
    gx, gy = psi0.grid_x, psi0.grid_y
    x1 = np.atleast_1d(np.asarray(x0[0], dtype=float)).copy()
    x2 = np.atleast_1d(np.asarray(x0[1], dtype=float)).copy()
    escaped = ~(gx.contains(x1) & gy.contains(x2))
    half = TwoBodyPropagator(gx, gy, V2, 0.5 * dt, masses)
    psi = Field2D(gx, gy, psi0.values.copy())
    n_steps = int(round(t_max / dt))
    times, r1, r2 = [0.0], [x1.copy()], [x2.copy()]
    if callback is not None:
        callback(0.0, psi)

    def vel(field, a, b):
        v1 = np.zeros_like(a)
        v2 = np.zeros_like(b)
        live = ~escaped & gx.contains(a) & gy.contains(b)
        if live.any():
            v1[live], v2[live] = velocities_2body(field, a[live], b[live], masses)
        return v1, v2, live

    for step in range(1, n_steps + 1):
        v1, v2, _ = vel(psi, x1, x2)
        m1 = x1 + 0.5 * dt * v1
        m2 = x2 + 0.5 * dt * v2
        psi.values = half.step(psi.values)
        w1, w2, live = vel(psi, m1, m2)
        new1 = x1 + dt * w1
        new2 = x2 + dt * w2
        psi.values = half.step(psi.values)
        out = ~(gx.contains(new1) & gy.contains(new2)) | ~live
        newly = out & ~escaped
        if newly.any():
            log.warning("%d exact trajectories left the domain at t=%.4f",
                        int(newly.sum()), step * dt)
        escaped |= out
        x1 = np.where(escaped, x1, new1)
        x2 = np.where(escaped, x2, new2)
        if step % record_every == 0:
            times.append(step * dt)
            r1.append(x1.copy())
            r2.append(x2.copy())
            if callback is not None:
                callback(step * dt, psi)
    return TrajectoryResult(np.array(times), np.array(r1), np.array(r2), escaped)


def sample_2body(psi: Field2D, count: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``count`` position pairs from |Psi|^2 (cell choice plus uniform jitter)."""
    rng = np.random.default_rng(seed)
    p = np.abs(psi.values).ravel() ** 2
    idx = rng.choice(p.size, size=count, p=p / p.sum())
    jx, jy = np.unravel_index(idx, psi.values.shape)
    x1 = psi.grid_x.x[jx] + psi.grid_x.dx * (rng.random(count) - 0.5)
    x2 = psi.grid_y.x[jy] + psi.grid_y.dx * (rng.random(count) - 0.5)
    return x1, x2


# observables of the exact state -------------------------------------------------

def marginal_density(psi: Field2D, which: int = 0) -> np.ndarray:
    p = np.abs(psi.values) ** 2
    if which == 0:
        return psi.grid_y.dx * p.sum(axis=1)
    return psi.grid_x.dx * p.sum(axis=0)


def xsq_2body(psi: Field2D) -> float:
    """``<x^2>`` per particle, averaged over both particles."""
    a = psi.grid_x.dx * np.sum(marginal_density(psi, 0) * psi.grid_x.x ** 2)
    b = psi.grid_y.dx * np.sum(marginal_density(psi, 1) * psi.grid_y.x ** 2)
    return float(0.5 * (a + b) / psi.norm2())


def rho_at_2body(psi: Field2D, x: float = 0.0) -> float:
    """One-body density of particle 1 at ``x`` (band-limited in x)."""
    cw = extract_cw(psi, 1, x)
    return float(cw.norm2() / psi.norm2())


def rdm_2body(psi: Field2D) -> np.ndarray:
    """One-body reduced density matrix of particle 1, ``rho(x', x)`` on the x grid."""
    v = psi.values / math.sqrt(psi.norm2())
    return psi.grid_y.dx * v @ v.conj().T


def occupations_2body(psi: Field2D) -> np.ndarray:
    rho = rdm_2body(psi) * psi.grid_x.dx
    return np.sort(linalg.eigvalsh(0.5 * (rho + rho.conj().T)))[::-1]


# closed-form oracles ---------------------------------------------------------------

def analytic_quench_xsq(n: int, k_i: float, t):
    """``<x^2>`` per particle after a sudden harmonic-interaction quench.

    Unit trap and mass, starting from the noninteracting ground state. The
    centre-of-mass mode stays at unit frequency; the ``n - 1`` relative modes
    jump to ``w = sqrt(1 + n*k_i)``.
    """
    t = np.asarray(t, dtype=float)
    w = math.sqrt(1.0 + n * k_i)
    rel = 0.5 * (np.cos(w * t) ** 2 + np.sin(w * t) ** 2 / w ** 2)
    return (0.5 + (n - 1) * rel) / n


def exact_gs_energy_harmonic(n: int, k_i: float) -> float:
    return 0.5 * (n - 1) * math.sqrt(1.0 + k_i * n) + 0.5


def coupled_oscillator_modes(springs, masses):
    """Normal-mode frequencies and the Gaussian ground-state matrix ``A``.

    ``springs = (k1, k2, k3)`` for ``k1 x1^2/2 + k2 x2^2/2 + k3 (x1-x2)^2/2``.
    The ground state is ``exp(-x^T A x / 2)``; position covariance is
    ``A^{-1}/2`` and momentum covariance ``A/2``.
    """
    k1, k2, k3 = springs
    K = np.array([[k1 + k3, -k3], [-k3, k2 + k3]])
    s = np.diag(1.0 / np.sqrt(masses))
    lam, u = linalg.eigh(s @ K @ s)
    omega = np.sqrt(lam)
    root = u @ np.diag(omega) @ u.T
    msq = np.diag(np.sqrt(masses))
    return omega, msq @ root @ msq


def coupled_oscillator_ground_state(springs, masses, gx: Grid1D, gy: Grid1D) -> Field2D:
    _, A = coupled_oscillator_modes(springs, masses)
    x, y = np.meshgrid(gx.x, gy.x, indexing="ij")
    q = A[0, 0] * x ** 2 + 2 * A[0, 1] * x * y + A[1, 1] * y ** 2
    norm = (linalg.det(A) / math.pi ** 2) ** 0.25
    return Field2D(gx, gy, norm * np.exp(-0.5 * q))
