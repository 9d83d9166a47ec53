"""Interacting pilot waves: an ensemble of Bohmian configurations whose
conditional wavefunctions (CWs) evolve non-unitarily, with the partner
derivative CWs reconstructed by least squares across the ensemble.

Array layout: ``positions`` is ``(W, N)`` and ``cws`` is ``(W, N, n)`` for W
configurations of N bosons on an n-point grid. ``cws[w, i]`` is the full
wavefunction sliced at every coordinate of configuration ``w`` except
particle ``i``'s.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .grid import ComplexField, Grid1D
from .model import ConditionedPotential, OrbitalBasis, SystemSpec

log = logging.getLogger(__name__)

VELOCITY_THRESHOLD = 1e-6
SVD_RCOND = 1e-10
RESIDUAL_TOL = 1e-6

FULL = "full"
HERMITIAN_LIMIT = "hermitian"


class IllConditionedEnsembleWarning(RuntimeWarning):
    """Reconstruction residual exceeded tolerance; propagation continues."""


@dataclass
class ConditionalWavefunction:
    values: ComplexField
    owner_particle: int
    config_id: int


@dataclass
class Configuration:
    id: int
    positions: np.ndarray
    cws: list


@dataclass
class ReconstructionSolution:
    coeffs: np.ndarray
    residual: float


@dataclass
class Ensemble:
    system: SystemSpec
    grid: Grid1D
    positions: np.ndarray
    cws: np.ndarray
    basis: OrbitalBasis | None = None
    time: float = 0.0
    seed: int = 0
    frozen: np.ndarray | None = None
    diagnostics: list = field(default_factory=list)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        w, nb = self.positions.shape
        if nb != self.system.n_bosons:
            raise ValueError("positions do not match the boson count")
        if self.cws is None:
            self.cws = np.zeros((w, nb, self.grid.n), dtype=np.complex128)
        if self.cws.shape != (w, nb, self.grid.n):
            raise ValueError(f"cws shape {self.cws.shape} != {(w, nb, self.grid.n)}")
        if self.frozen is None:
            self.frozen = np.zeros(w, dtype=bool)
        if self.basis is not None and self.basis.grid != self.grid:
            raise ValueError("basis and ensemble grids differ")

    @property
    def n_configs(self) -> int:
        return self.positions.shape[0]

    @property
    def n_bosons(self) -> int:
        return self.positions.shape[1]

    @property
    def active(self) -> np.ndarray:
        return ~self.frozen

    def is_complete(self) -> bool:
        if self.basis is None:
            return False
        return int(self.active.sum()) >= self.basis.m_orbitals ** (self.n_bosons - 1)

    def configuration(self, w: int) -> Configuration:
        cws = [ConditionalWavefunction(ComplexField(self.grid, self.cws[w, i]), i, w)
               for i in range(self.n_bosons)]
        return Configuration(w, self.positions[w].copy(), cws)

    def copy(self) -> "Ensemble":
        return Ensemble(self.system, self.grid, self.positions.copy(), self.cws.copy(),
                        self.basis, self.time, self.seed, self.frozen.copy(),
                        list(self.diagnostics))


# sampling and initial state -------------------------------------------------------

def sample_configurations(rho, grid: Grid1D, n_configs: int, n_bosons: int, seed: int) -> np.ndarray:
    """``(n_configs, n_bosons)`` positions drawn i.i.d. from ``rho``.

    Inverse CDF over cells centred on the grid nodes, linear within a cell.
    """
    rho = np.clip(np.asarray(rho, dtype=float), 0.0, None)
    mass = rho * grid.dx
    cdf = np.concatenate([[0.0], np.cumsum(mass)])
    cdf /= cdf[-1]
    edges = grid.x_min - 0.5 * grid.dx + grid.dx * np.arange(grid.n + 1)
    u = np.random.default_rng(seed).random((n_configs, n_bosons))
    x = np.interp(u, cdf, edges)
    # interp returns the left edge of a plateau; keep inside the periodic box
    return np.clip(x, grid.x_min, grid.x_max - 1e-9 * grid.dx)


def initialize_cws(ensemble: Ensemble, phi0) -> Ensemble:
    """Slices of the product state ``prod phi0``: ``phi0(x) * prod_{j!=i} phi0(X_j)``."""
    phi0 = np.asarray(phi0, dtype=np.complex128)
    at = ensemble.grid.interpolate(phi0, ensemble.positions.ravel())
    at = at.reshape(ensemble.positions.shape)
    nb = ensemble.n_bosons
    for i in range(nb):
        others = np.prod(np.delete(at, i, axis=1), axis=1)
        ensemble.cws[:, i, :] = others[:, None] * phi0[None, :]
    return ensemble


def make_ensemble(system: SystemSpec, grid: Grid1D, basis: OrbitalBasis | None,
                  phi0, n_configs: int, seed: int, allow_underdetermined: bool = False) -> Ensemble:
    if basis is not None and not allow_underdetermined:
        need = basis.m_orbitals ** (system.n_bosons - 1)
        if n_configs < need:
            raise ValueError(f"need at least M^(N_B-1) = {need} configurations, got {n_configs}")
    pos = sample_configurations(np.abs(phi0) ** 2, grid, n_configs, system.n_bosons, seed)
    ens = Ensemble(system, grid, pos, None, basis, 0.0, seed)
    return initialize_cws(ens, phi0)


# Bohmian velocity ---------------------------------------------------------------

def bohmian_velocity(cw: ConditionalWavefunction | ComplexField, X: float, mass: float = 1.0) -> float:
    f = cw.values if isinstance(cw, ConditionalWavefunction) else cw
    v = batch_velocities(f.grid, f.values[None, :], np.array([X]), np.array([mass]))
    return float(v[0])


def batch_velocities(grid: Grid1D, psi, X, masses, threshold: float = VELOCITY_THRESHOLD) -> np.ndarray:
    """``Im(psi'(X)/psi(X))/m`` for each row of ``psi`` at its own point.

    Velocity is zero where ``|psi(X)| < threshold * max|psi|`` or ``X`` lies
    outside the grid.
    """
    psi = np.asarray(psi).reshape(-1, grid.n)
    X = np.asarray(X, dtype=float).ravel()
    masses = np.broadcast_to(np.asarray(masses, dtype=float), X.shape)
    inside = grid.contains(X)
    Xs = np.where(inside, X, grid.x_min)
    val, der = grid.value_and_derivative_paired(psi, Xs)
    amax = np.abs(psi).max(axis=1)
    ok = inside & (np.abs(val) >= threshold * amax)
    safe = np.where(ok, val, 1.0)
    return np.where(ok, (der / safe).imag / masses, 0.0)


# tensor rows and reconstruction ---------------------------------------------------

def orbital_tables(basis: OrbitalBasis, positions) -> np.ndarray:
    """``phi_m^(d)(X)`` for d = 0, 1, 2: shape ``(3, *positions.shape, M)``."""
    positions = np.asarray(positions, dtype=float)
    g = basis.grid
    stack = np.concatenate([basis.orbitals, basis.d_orbitals, basis.dd_orbitals])
    vals = g.interpolate(stack, positions.ravel())
    if basis.is_real:
        vals = vals.real
    m = basis.m_orbitals
    return vals.reshape(3, m, *positions.shape).transpose(0, *range(2, positions.ndim + 2), 1)


def _outer_rows(factors) -> np.ndarray:
    rows = factors[0]
    for f in factors[1:]:
        rows = (rows[:, :, None] * f[:, None, :]).reshape(rows.shape[0], -1)
    return rows


def tensor_rows(tables, target: int, partner: int | None = None, order: int = 0) -> np.ndarray:
    """Flattened outer products over the partners of ``target`` (ascending
    particle then orbital index), with the ``partner`` factor differentiated
    ``order`` times. ``tables`` from :func:`orbital_tables`; returns ``(W, M^(N-1))``.
    """
    nb = tables.shape[2]
    factors = []
    for j in range(nb):
        if j == target:
            continue
        d = order if j == partner else 0
        factors.append(tables[d, :, j, :])
    return _outer_rows(factors)


def tensor_row(config: Configuration, basis: OrbitalBasis, target: int,
               derivative_spec: tuple[int, int] | None = None) -> np.ndarray:
    partner, order = derivative_spec if derivative_spec else (None, 0)
    if order not in (0, 1, 2):
        raise ValueError("derivative order must be 0, 1 or 2")
    tables = orbital_tables(basis, config.positions[None, :])
    return tensor_rows(tables, target, partner, order)[0]


@dataclass
class MinNormSolver:
    """Minimum-norm least squares for ``A w = b`` with ``A = rows.T``.

    Singular values below ``rcond * s_max`` are discarded.
    """

    rows: np.ndarray
    rcond: float = SVD_RCOND

    def __post_init__(self):
        a = np.asarray(self.rows).T
        u, s, vh = np.linalg.svd(a, full_matrices=False)
        keep = s > self.rcond * s[0] if s.size else np.zeros(0, bool)
        self.u = u[:, keep]
        self.pinv = (vh[keep].conj().T / s[keep]) @ u[:, keep].conj().T
        self.rank = int(keep.sum())

    def solve(self, b) -> np.ndarray:
        return self.pinv @ b

    def residual(self, b) -> np.ndarray:
        """``||A w - b||`` for each row of ``b`` (or for a single vector)."""
        b = np.atleast_2d(b)
        proj = (b @ self.u.conj()) @ self.u.T
        return np.linalg.norm(b - proj, axis=1)

    def field_map(self, fields) -> np.ndarray:
        """``K`` such that ``sum_w w_w fields[w] = b @ K``."""
        fields = np.ascontiguousarray(fields, dtype=np.complex128)
        if np.isrealobj(self.pinv):
            # real weights act on interleaved re/im pairs
            flat = fields.view(np.float64).reshape(fields.shape[0], -1)
            return np.ascontiguousarray(self.pinv.T @ flat).view(np.complex128)
        return self.pinv.T @ fields


def solve_reconstruction(ensemble: Ensemble, target_config: int, target_particle: int,
                         partner: int, order: int, tol: float = RESIDUAL_TOL) -> ReconstructionSolution:
    """Weights expressing the target's derivative tensor row through the
    order-0 rows of every active configuration."""
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    if partner == target_particle:
        raise ValueError("partner must differ from the target particle")
    tables = orbital_tables(ensemble.basis, ensemble.positions)
    act = np.flatnonzero(ensemble.active)
    rows0 = tensor_rows(tables[:, act], target_particle)
    b = tensor_rows(tables[:, [target_config]], target_particle, partner, order)[0]
    solver = MinNormSolver(rows0)
    w = solver.solve(b)
    res = float(solver.residual(b)[0])
    _check_residual(ensemble, res, np.linalg.norm(b), tol,
                    f"config {target_config} particle {target_particle}")
    coeffs = np.zeros(ensemble.n_configs, dtype=np.complex128)
    coeffs[act] = w
    return ReconstructionSolution(coeffs, res)


def reconstruct_cw(ensemble: Ensemble, solution: ReconstructionSolution, target_particle: int) -> np.ndarray:
    return solution.coeffs @ ensemble.cws[:, target_particle, :]


def _check_residual(ensemble, res, bnorm, tol, where):
    if res > tol * max(bnorm, 1e-300):
        msg = (f"ill-conditioned ensemble at t={ensemble.time:.4f} ({where}): "
               f"residual {res:.3e} vs |b| {bnorm:.3e}")
        ensemble.diagnostics.append(msg)
        warnings.warn(msg, IllConditionedEnsembleWarning, stacklevel=3)
        return True
    return False


def coupling_source(ensemble: Ensemble, psi, positions, velocities, tol: float = RESIDUAL_TOL) -> np.ndarray:
    """Non-Hermitian term ``sum_j [i dX_j/dt psi^1_j - psi^2_j/(2m)]`` for every CW.

    All rows for particle ``i`` share one SVD; the per-partner sums are
    folded into one effective row before touching the grid fields.
    """
    basis = ensemble.basis
    nb = ensemble.n_bosons
    mass = ensemble.system.mass
    act = np.flatnonzero(ensemble.active)
    tables = orbital_tables(basis, positions)
    out = np.zeros_like(psi)
    worst = 0.0
    for i in range(nb):
        solver = MinNormSolver(tensor_rows(tables[:, act], i))
        eff = 0.0
        for j in range(nb):
            if j == i:
                continue
            r1 = tensor_rows(tables, i, j, 1)
            r2 = tensor_rows(tables, i, j, 2)
            eff = eff + 1j * velocities[:, j, None] * r1 - r2 / (2.0 * mass)
            if solver.rank == r1.shape[1]:
                continue  # rows span the whole tensor space
            res = solver.residual(np.concatenate([r1[act], r2[act]]))
            bn = np.linalg.norm(np.concatenate([r1[act], r2[act]]), axis=1)
            worst = max(worst, float(np.max(res / np.maximum(bn, 1e-300))))
        out[:, i, :] = eff @ solver.field_map(psi[act, i, :])
    if worst > tol:
        _check_residual(ensemble, worst, 1.0, tol, "coupling source")
    return out


# propagation -------------------------------------------------------------------

def propagate_nonunitary(cw: ComplexField, mass: float, V, W0, dt, W1=None) -> ComplexField:
    """One step of ``i psi' = H psi + W`` with ``H = T + V``.

    ``e^{-iH dt}`` is a Strang split step; the source integral uses the
    trapezoid rule with ``W0`` at step start and ``W1`` at step end
    (``W1`` defaults to ``W0``).
    """
    g = cw.grid
    W0 = np.zeros(g.n, complex) if W0 is None else np.asarray(W0)
    W1 = W0 if W1 is None else np.asarray(W1)
    out = g.strang(cw.values - 0.5j * dt * W0, V, dt, mass) - 0.5j * dt * W1
    return ComplexField(g, out)


def heun_step(grid: Grid1D, psi, X, t: float, dt: float, masses, velocity, potential, source=None):
    """Predictor-corrector step for CWs coupled to their Bohmian positions.

    ``velocity(psi, X)`` gives dX/dt; ``potential(X_mid, t_mid)`` gives the
    sliced potential broadcastable to ``psi``; ``source(psi, X, v, t)`` gives
    the non-Hermitian term or ``None`` for the Hermitian limit. ``masses``
    broadcasts against ``psi[..., :1]``.

    Returns ``(psi_new, X_new, X_pred)``.
    """
    v0 = velocity(psi, X)
    xp = X + dt * v0
    vmid = potential(0.5 * (X + xp), t + 0.5 * dt)
    kin = np.exp(-1j * dt * grid.k ** 2 / (2.0 * np.asarray(masses)))
    half = kernels.expi(-0.5 * dt * np.asarray(vmid))
    u_psi = grid.strang(psi, None, dt, kin_phase=kin, half_phase=half)
    w0 = source(psi, X, v0, t) if source is not None else None
    if w0 is None:
        pred = u_psi
    else:
        u_w = grid.strang(w0, None, dt, kin_phase=kin, half_phase=half)
        pred = u_psi - 1j * dt * u_w
    vp = velocity(pred, xp)
    if w0 is None:
        new = u_psi
    else:
        wp = source(pred, xp, vp, t + dt)
        new = u_psi - 0.5j * dt * u_w - 0.5j * dt * wp
    return new, X + 0.5 * dt * (v0 + vp), xp


def ipw_step(ensemble: Ensemble, dt: float, mode: str = FULL) -> Ensemble:
    """Advance every configuration by ``dt`` in place and return the ensemble.

    Configurations whose predicted or corrected positions leave the grid are
    frozen and excluded from reconstruction and observables.
    """
    if mode not in (FULL, HERMITIAN_LIMIT):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == FULL and ensemble.basis is None:
        raise ValueError("full mode needs an orbital basis")
    g = ensemble.grid
    system = ensemble.system
    pot = system.potential()
    masses = np.full((1, ensemble.n_bosons, 1), system.mass)
    escaped = np.zeros(ensemble.n_configs, dtype=bool)

    def velocity(psi, X):
        inside = g.contains(X).all(axis=1)
        escaped[:] |= ~inside
        Xs = np.where(inside[:, None], X, ensemble.positions)
        return batch_velocities(g, psi, Xs, system.mass).reshape(X.shape)

    def potential(Xm, tm):
        Xm = np.where(g.contains(Xm).all(axis=1)[:, None], Xm, ensemble.positions)
        return pot.sliced(g.x, Xm, tm)

    def source(psi, X, v, tt):
        X = np.where(g.contains(X).all(axis=1)[:, None], X, ensemble.positions)
        return coupling_source(ensemble, psi, X, v)

    new, xn, _ = heun_step(g, ensemble.cws, ensemble.positions, ensemble.time, dt, masses,
                           velocity, potential, source if mode == FULL else None)
    escaped |= ~g.contains(xn).all(axis=1)
    keep = ensemble.frozen | escaped
    newly = escaped & ~ensemble.frozen
    if newly.any():
        msg = f"t={ensemble.time + dt:.4f}: froze {int(newly.sum())} escaped configuration(s)"
        ensemble.diagnostics.append(msg)
        log.warning(msg)
    ensemble.cws = np.where(keep[:, None, None], ensemble.cws, new)
    ensemble.positions = np.where(keep[:, None], ensemble.positions, xn)
    ensemble.frozen = keep
    ensemble.time += dt
    if not np.all(np.isfinite(ensemble.cws[~keep])):
        raise FloatingPointError(f"non-finite CW values at t={ensemble.time:.4f}")
    return ensemble


# checkpoints -------------------------------------------------------------------

def spec_hash(system: SystemSpec, grid: Grid1D, m_orbitals: int | None) -> str:
    blob = json.dumps({"system": asdict(system), "grid": asdict(grid), "m": m_orbitals},
                      sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def save_checkpoint(ensemble: Ensemble, path, extra: dict | None = None) -> None:
    m = ensemble.basis.m_orbitals if ensemble.basis is not None else None
    meta = {
        "system": asdict(ensemble.system), "grid": asdict(ensemble.grid), "m_orbitals": m,
        "time": ensemble.time, "seed": ensemble.seed,
        "spec_hash": spec_hash(ensemble.system, ensemble.grid, m),
        "extra": extra or {},
    }
    with open(path, "wb") as fh:
        np.savez(fh, positions=ensemble.positions, cws=ensemble.cws, frozen=ensemble.frozen,
                 meta=np.array(json.dumps(meta)))


def load_checkpoint(path) -> tuple[Ensemble, dict]:
    from .model import PairInteractionSpec, Schedule, TrapSpec, make_basis

    with np.load(path) as data:
        meta = json.loads(str(data["meta"]))
        positions = data["positions"]
        cws = data["cws"]
        frozen = data["frozen"]
    s = meta["system"]
    system = SystemSpec(s["n_bosons"], TrapSpec(**s["trap"]),
                        PairInteractionSpec(**s["interaction"]), Schedule(**s["schedule"]))
    grid = Grid1D(**meta["grid"])
    m = meta["m_orbitals"]
    if spec_hash(system, grid, m) != meta["spec_hash"]:
        raise ValueError("checkpoint spec hash mismatch")
    basis = make_basis(system, m, grid) if m else None
    ens = Ensemble(system, grid, positions, cws, basis, meta["time"], meta["seed"], frozen)
    return ens, meta


# two-particle coefficient-space variant ----------------------------------------

class CoefficientIPW:
    """Two-boson IPW with every CW expanded in the fixed orbitals and the
    expansion coefficients advanced by classical RK4 together with the
    Bohmian positions. Harmonic or no pair interaction only.
    """

    def __init__(self, ensemble: Ensemble, mode: str = FULL):
        sysm = ensemble.system
        if sysm.n_bosons != 2:
            raise ValueError("coefficient-space variant is two-particle only")
        if sysm.interaction.kind == "gaussian":
            raise ValueError("coefficient-space variant supports harmonic interactions only")
        self.ens = ensemble
        self.mode = mode
        b = ensemble.basis
        g = b.grid
        dx = g.dx
        phi = b.orbitals
        self.kin = -0.5 / sysm.mass * dx * phi.conj() @ b.dd_orbitals.T
        self.x1 = dx * (phi.conj() * g.x) @ phi.T
        self.x2 = dx * (phi.conj() * g.x ** 2) @ phi.T
        self.coef = dx * ensemble.cws @ phi.conj().T
        self.pos = ensemble.positions.copy()
        self.t = ensemble.time

    def _rhs(self, a, X, t):
        sysm = self.ens.system
        b = self.ens.basis
        tab = orbital_tables(b, X)  # (3, W, 2, M)
        val = np.einsum("wim,wim->wi", a, tab[0])
        der = np.einsum("wim,wim->wi", a, tab[1])
        amax = np.abs(a @ b.orbitals).max(axis=2)
        ok = np.abs(val) >= VELOCITY_THRESHOLD * amax
        v = np.where(ok, (der / np.where(ok, val, 1.0)).imag / sysm.mass, 0.0)
        k_t = sysm.trap.k_t
        k = sysm.interaction_at(t).k_i if sysm.interaction.kind == "harmonic" else 0.0
        Y = X[:, ::-1]
        const = 0.5 * k_t * Y ** 2 + 0.5 * k * Y ** 2
        ha = (a @ self.kin.T + 0.5 * (k_t + k) * a @ self.x2.T
              - k * Y[:, :, None] * (a @ self.x1.T) + const[:, :, None] * a)
        if self.mode == FULL:
            for i in range(2):
                j = 1 - i
                solver = MinNormSolver(tab[0, :, j, :])
                kmap = solver.field_map(a[:, i, :])
                eff = 1j * v[:, j, None] * tab[1, :, j, :] - tab[2, :, j, :] / (2.0 * sysm.mass)
                ha[:, i, :] += eff @ kmap
        return -1j * ha, v

    def step(self, dt: float):
        a, X, t = self.coef, self.pos, self.t
        k1, v1 = self._rhs(a, X, t)
        k2, v2 = self._rhs(a + 0.5 * dt * k1, X + 0.5 * dt * v1, t + 0.5 * dt)
        k3, v3 = self._rhs(a + 0.5 * dt * k2, X + 0.5 * dt * v2, t + 0.5 * dt)
        k4, v4 = self._rhs(a + dt * k3, X + dt * v3, t + dt)
        self.coef = a + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        self.pos = X + dt / 6.0 * (v1 + 2 * v2 + 2 * v3 + v4)
        self.t = t + dt

    def cw_values_at(self, x: float) -> np.ndarray:
        phi_x = self.ens.grid.interpolate(self.ens.basis.orbitals, [x])[:, 0]
        return self.coef @ phi_x

    def to_ensemble(self) -> Ensemble:
        e = self.ens.copy()
        e.cws = self.coef @ self.ens.basis.orbitals
        e.positions = self.pos.copy()
        e.time = self.t
        return e
