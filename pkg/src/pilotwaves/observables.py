"""Estimators over a stepped ensemble: trajectory averages, Riemann sums over
partner coordinates, averages of normalized CWs, mean-field potentials,
the one-body reduced density matrix and the instantaneous energy.

Frozen configurations are excluded everywhere.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg

from .grid import Grid1D
from .ipw import Ensemble
from .model import PairInteractionSpec, SystemSpec

log = logging.getLogger(__name__)

IMAG_TOL = 1e-8
MEAN_FIELD = "mean_field"
CONDITIONAL = "conditional"


class EstimatorUnavailableError(RuntimeError):
    """No active configuration left to average over."""


def _real(z, what: str) -> float:
    z = complex(z)
    scale = max(1.0, abs(z.real))
    if abs(z.imag) > IMAG_TOL * scale:
        raise ArithmeticError(f"{what}: imaginary residue {z.imag:.3e}")
    return z.real


@dataclass
class ObservableSeries:
    name: str
    times: list = field(default_factory=list)
    values: list = field(default_factory=list)

    def append(self, t: float, value: float) -> None:
        if self.times and t <= self.times[-1]:
            raise ValueError(f"{self.name}: time {t} not after {self.times[-1]}")
        self.times.append(float(t))
        self.values.append(float(value))

    def __len__(self):
        return len(self.times)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "value"])
            for t, v in zip(self.times, self.values):
                w.writerow([repr(float(t)), repr(float(v))])

    @classmethod
    def from_csv(cls, path, name: str | None = None) -> "ObservableSeries":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(name or Path(path).stem, data[:, 0].tolist(), data[:, 1].tolist())


@dataclass
class ReducedDensityMatrix:
    """``rho[a, b] = rho(x_a, x_b)``, trace ``dx * sum(diag)``."""

    grid: Grid1D
    rho: np.ndarray

    def trace(self) -> float:
        return _real(self.grid.dx * np.trace(self.rho), "rdm trace")

    def hermiticity_error(self) -> float:
        return float(np.abs(self.rho - self.rho.conj().T).max())

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x'\\x"] + [repr(float(x)) for x in self.grid.x])
            for xa, row in zip(self.grid.x, self.rho):
                w.writerow([repr(float(xa))] + [repr(complex(v)) for v in row])

    @classmethod
    def from_csv(cls, path, grid: Grid1D) -> "ReducedDensityMatrix":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))[1:]
        rho = np.array([[complex(v) for v in r[1:]] for r in rows])
        return cls(grid, rho)


# helpers ---------------------------------------------------------------------------

def _active_rows(ensemble: Ensemble) -> np.ndarray:
    """Active CWs flattened over configurations and particles: ``(R, n)``."""
    act = ensemble.active
    if not act.any():
        raise EstimatorUnavailableError("every configuration is frozen")
    return ensemble.cws[act].reshape(-1, ensemble.grid.n)


def _normalized_rows(ensemble: Ensemble):
    rows = _active_rows(ensemble)
    norms = ensemble.grid.norm2(rows)
    ok = norms > 0
    if not ok.all():
        msg = f"t={ensemble.time:.4f}: excluded {int((~ok).sum())} zero-norm CW(s)"
        ensemble.diagnostics.append(msg)
        log.warning(msg)
    if not ok.any():
        raise EstimatorUnavailableError("every CW has zero norm")
    return rows[ok] / np.sqrt(norms[ok])[:, None], ok


def kinetic_density(grid: Grid1D, rows, mass: float) -> np.ndarray:
    """Per-row ``<psi| -d^2/2m |psi>`` in the spectral discretization."""
    spec = np.abs(np.fft.fft(rows, axis=-1)) ** 2
    return grid.dx / grid.n * spec @ (grid.k ** 2 / (2.0 * mass))


def riemann_weights(y) -> np.ndarray:
    """Midpoint spacings of ``y`` in input order; duplicates share one spacing."""
    y = np.asarray(y, dtype=float)
    if y.size < 2:
        raise ValueError("Riemann sum needs at least two configurations")
    u, inv, counts = np.unique(y, return_inverse=True, return_counts=True)
    if u.size < 2:
        raise ValueError("all partner coordinates coincide")
    d = np.empty_like(u)
    d[1:-1] = 0.5 * (u[2:] - u[:-2])
    d[0] = u[1] - u[0]
    d[-1] = u[-1] - u[-2]
    return d[inv] / counts[inv]


# operators: callables (grid, psi (R, n), partner (R,)) -> A psi ---------------------

def identity_op(grid, psi, partner):
    return psi


def position_power(p: int):
    def op(grid, psi, partner):
        return grid.x ** p * psi
    return op


def kinetic_op(mass: float = 1.0):
    def op(grid, psi, partner):
        return -grid.derivative(psi, 2) / (2.0 * mass)
    return op


def pair_op(spec: PairInteractionSpec):
    """Two-body potential conditioned on the partner position."""
    def op(grid, psi, partner):
        return spec.partner_derivative(grid.x[None, :], np.asarray(partner)[:, None], 0) * psi
    return op


# estimators -------------------------------------------------------------------------

def expectation_riemann(ensemble: Ensemble, operator=identity_op, target: int = 0) -> float:
    """Sum over configurations of ``Delta_w <psi_w|A_w|psi_w>`` with unnormalized CWs,
    ``Delta_w`` the spacing of the partner coordinates. Two particles only."""
    if ensemble.n_bosons != 2:
        raise ValueError("Riemann-sum estimator is defined for two particles")
    g = ensemble.grid
    act = ensemble.active
    if act.sum() < 2:
        raise EstimatorUnavailableError("need at least two active configurations")
    psi = ensemble.cws[act, target]
    y = ensemble.positions[act, 1 - target]
    a_psi = operator(g, psi, y)
    vals = g.dx * np.sum(psi.conj() * a_psi, axis=1)
    return _real(np.dot(riemann_weights(y), vals), "expectation_riemann")


def density_riemann(ensemble: Ensemble, x, target: int = 0) -> np.ndarray:
    """``rho(x) = sum_w Delta_w |psi_w(x)|^2`` (two particles)."""
    if ensemble.n_bosons != 2:
        raise ValueError("Riemann-sum estimator is defined for two particles")
    act = ensemble.active
    if act.sum() < 2:
        raise EstimatorUnavailableError("need at least two active configurations")
    vals = ensemble.grid.interpolate(ensemble.cws[act, target], np.atleast_1d(x))
    w = riemann_weights(ensemble.positions[act, 1 - target])
    return w @ np.abs(vals) ** 2


def expectation_normalized(ensemble: Ensemble, operator=identity_op) -> float:
    """Mean of ``<psi~|A|psi~>`` over normalized CWs of all particles.

    ``operator`` sees ``partner=None``: one-body operators only.
    """
    g = ensemble.grid
    rows, _ = _normalized_rows(ensemble)
    vals = g.dx * np.sum(rows.conj() * operator(g, rows, None), axis=1)
    return _real(vals.mean(), "expectation_normalized")


def density_normalized(ensemble: Ensemble, x=None) -> np.ndarray:
    """Mean normalized CW density, on the grid or at points ``x``."""
    rows, _ = _normalized_rows(ensemble)
    if x is None:
        return np.mean(np.abs(rows) ** 2, axis=0)
    return np.mean(np.abs(ensemble.grid.interpolate(rows, np.atleast_1d(x))) ** 2, axis=0)


def mean_field_potential(ensemble: Ensemble, spec: PairInteractionSpec | None) -> np.ndarray:
    """``V~(x) = mean_w int |psi~_w(y)|^2 V(x, y) dy``, midpoint quadrature."""
    g = ensemble.grid
    if spec is None or spec.kind == "none" or spec.k_i == 0.0:
        return np.zeros(g.n)
    rho = density_normalized(ensemble)
    return g.dx * spec.partner_derivative(g.x[:, None], g.x[None, :], 0) @ rho


def xsq_from_trajectories(ensemble: Ensemble) -> float:
    act = ensemble.active
    if not act.any():
        raise EstimatorUnavailableError("every configuration is frozen")
    return float(np.mean(ensemble.positions[act] ** 2))


def reduced_density_matrix(ensemble: Ensemble) -> ReducedDensityMatrix:
    """``rho(x', x) = mean psi~(x') psi~*(x)`` over normalized CWs."""
    rows, _ = _normalized_rows(ensemble)
    rho = rows.T @ rows.conj() / rows.shape[0]
    return ReducedDensityMatrix(ensemble.grid, rho)


def natural_orbitals(rdm: ReducedDensityMatrix):
    """Occupations (descending) and orbitals normalized on the grid, one per row."""
    dx = rdm.grid.dx
    h = 0.5 * (rdm.rho + rdm.rho.conj().T) * dx
    evals, evecs = linalg.eigh(h)
    order = np.argsort(evals)[::-1]
    return evals[order], evecs[:, order].T / np.sqrt(dx)


def instantaneous_energy(ensemble: Ensemble, system: SystemSpec | None = None,
                         t: float | None = None, pair_estimator: str = MEAN_FIELD) -> float:
    """Total energy with the interaction at its scheduled strength at ``t``.

    One-body terms average normalized CWs. The pair term is either the
    mean-field assembly ``N(N-1)/2 * int rho~ V~`` or, with
    ``pair_estimator="conditional"``, each CW weighted against its partners'
    Bohmian positions, which keeps pair correlations.
    """
    system = system or ensemble.system
    t = ensemble.time if t is None else t
    g = ensemble.grid
    n = ensemble.n_bosons
    rows, ok = _normalized_rows(ensemble)
    dens = np.abs(rows) ** 2
    one_body = kinetic_density(g, rows, system.mass) + g.dx * dens @ system.trap.potential(g.x)
    energy = n * one_body.mean()
    pair = system.interaction_at(t)
    if pair.kind == "none" or pair.k_i == 0.0:
        return float(energy)
    if pair_estimator == MEAN_FIELD:
        v_mf = mean_field_potential(ensemble, pair)
        return float(energy + 0.5 * n * (n - 1) * g.dx * dens.mean(axis=0) @ v_mf)
    if pair_estimator != CONDITIONAL:
        raise ValueError(f"unknown pair estimator {pair_estimator!r}")
    pos = ensemble.positions[ensemble.active]
    partners = np.stack([np.delete(pos, i, axis=1) for i in range(n)], axis=1).reshape(-1, n - 1)
    partners = partners[ok]
    v = pair.partner_derivative(g.x[None, None, :], partners[:, :, None], 0).sum(axis=1)
    per_row = g.dx * np.sum(dens * v, axis=1)
    return float(energy + 0.5 * n * per_row.mean())
