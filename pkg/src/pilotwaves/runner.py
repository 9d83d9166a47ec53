"""Execute a :class:`RunConfig`: drive the chosen solver, record observables,
write CSVs, a manifest and an optional plot script."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path

import numpy as np

from . import exactref as ex
from . import kernels
from .config import RunConfig, parse_config
from .hierarchy import init_from_2body, run_hierarchy
from .ipw import FULL, HERMITIAN_LIMIT, load_checkpoint, ipw_step, make_ensemble, save_checkpoint
from .model import ConditionedPotential, make_basis, trap_ground_state
from .observables import (EstimatorUnavailableError, ObservableSeries, density_normalized,
                          density_riemann, expectation_normalized, instantaneous_energy,
                          natural_orbitals, position_power, reduced_density_matrix,
                          xsq_from_trajectories)

log = logging.getLogger(__name__)

N_OCCUPATIONS = 4
RDM_HERMITIAN_TOL = 1e-10
RDM_TRACE_TOL = 1e-6
RDM_PSD_TOL = 1e-8


class DivergenceError(RuntimeError):
    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint


@dataclass
class RunReport:
    output_dir: Path
    outputs: list = field(default_factory=list)
    wall_time: float = 0.0
    diagnostics: list = field(default_factory=list)

    @property
    def n_diagnostics(self) -> int:
        return len(self.diagnostics)


def code_version() -> str:
    try:
        return metadata.version("pilotwaves")
    except metadata.PackageNotFoundError:
        return "unknown"


# recording ----------------------------------------------------------------------------

class Recorder:
    """Named series plus occupation rows, written as CSV at the end."""

    def __init__(self):
        self.series: dict[str, ObservableSeries] = {}
        self.occupations: dict[str, list] = {}

    def add(self, name: str, t: float, value: float) -> None:
        self.series.setdefault(name, ObservableSeries(name)).append(t, value)

    def add_occupations(self, name: str, t: float, occ) -> None:
        occ = list(np.asarray(occ, dtype=float)[:N_OCCUPATIONS])
        self.occupations.setdefault(name, []).append([t] + occ)

    def write(self, out: Path) -> list:
        paths = []
        for name, s in self.series.items():
            p = out / f"{name}.csv"
            s.to_csv(p)
            paths.append(p)
        for name, rows in self.occupations.items():
            p = out / f"{name}.csv"
            header = ",".join(["t"] + [f"n{i}" for i in range(len(rows[0]) - 1)])
            np.savetxt(p, np.array(rows), delimiter=",", header=header, comments="", fmt="%.17g")
            paths.append(p)
        return paths


def check_rdm(rdm, diagnostics: list, t: float) -> np.ndarray:
    occ, _ = natural_orbitals(rdm)
    herm = rdm.hermiticity_error()
    tr = rdm.trace()
    if herm > RDM_HERMITIAN_TOL or abs(tr - 1.0) > RDM_TRACE_TOL or occ.min() < -RDM_PSD_TOL:
        diagnostics.append(f"t={t:.4f}: RDM invariant violated (herm {herm:.2e}, "
                           f"trace {tr:.8f}, min eig {occ.min():.2e})")
    return occ


def record_ensemble(rec: Recorder, tag: str, ens, cfg: RunConfig, diagnostics: list) -> None:
    t = ens.time
    for obs in cfg.observables:
        try:
            if obs == "xsq_traj":
                rec.add(f"xsq_traj_{tag}", t, xsq_from_trajectories(ens))
            elif obs == "xsq_cw":
                rec.add(f"xsq_cw_{tag}", t, expectation_normalized(ens, position_power(2)))
            elif obs == "rho0":
                v = density_riemann(ens, 0.0)[0] if ens.n_bosons == 2 else density_normalized(ens, 0.0)[0]
                rec.add(f"rho0_{tag}", t, float(v))
            elif obs == "energy":
                rec.add(f"energy_{tag}", t, instantaneous_energy(
                    ens, pair_estimator=cfg.energy_estimator))
            elif obs == "rdm":
                rec.add_occupations(f"occupations_{tag}", t,
                                    check_rdm(reduced_density_matrix(ens), diagnostics, t))
        except EstimatorUnavailableError as e:
            diagnostics.append(f"t={t:.4f}: {obs} unavailable ({e})")


def record_exact(rec: Recorder, psi, V2, masses, t: float, cfg: RunConfig) -> None:
    for obs in cfg.observables:
        if obs in ("xsq_traj", "xsq_cw"):
            name = f"{obs}_exact"
            rec.add(name, t, ex.xsq_2body(psi))
        elif obs == "rho0":
            rec.add("rho0_exact", t, ex.rho_at_2body(psi, 0.0))
        elif obs == "energy":
            rec.add("energy_exact", t, ex.energy_2body(psi, V2, masses))
        elif obs == "rdm":
            rec.add_occupations("occupations_exact", t, ex.occupations_2body(psi))


def record_analytic(rec: Recorder, cfg: RunConfig, t: float) -> None:
    s = cfg.system
    if "analytic_quench" in cfg.references:
        rec.add("xsq_analytic", t, float(ex.analytic_quench_xsq(s.n_bosons, s.interaction.k_i, t)))
    if "analytic_gs" in cfg.references:
        rec.add("energy_analytic", t, ex.exact_gs_energy_harmonic(s.n_bosons, s.interaction.k_i))


# solvers ------------------------------------------------------------------------------

def _exact_setup(cfg: RunConfig):
    s = cfg.system
    eg = cfg.exact_grid
    phi = trap_ground_state(s.trap, eg)
    psi = ex.Field2D(eg, eg, np.outer(phi, phi)).normalized()
    V2 = ex.two_body_potential(eg, eg, (s.trap.k_t, s.trap.k_t), s.interaction)
    masses = (s.mass, s.mass)
    return psi, V2, masses, ex.TwoBodyPropagator(eg, eg, V2, cfg.dt, masses)


def _steps(cfg: RunConfig, t0: float = 0.0) -> int:
    return int(round((cfg.t_max - t0) / cfg.dt))


def run_ipw(cfg: RunConfig, out: Path, report: RunReport, ensemble=None, rec=None) -> None:
    s = cfg.system
    mode = FULL if cfg.solver.mode == "full" else HERMITIAN_LIMIT
    tag = f"ipw_{cfg.solver.mode}"
    rec = rec or Recorder()
    fresh = ensemble is None
    if fresh:
        basis = make_basis(s, cfg.m_orbitals, cfg.grid)
        phi0 = trap_ground_state(s.trap, cfg.grid)
        ensemble = make_ensemble(s, cfg.grid, basis, phi0, cfg.n_configs, cfg.seed)
    companions = []
    if fresh and "hermitian" in cfg.references and mode == FULL:
        companions.append(("ipw_hermitian", HERMITIAN_LIMIT, ensemble.copy()))
    exact = _exact_setup(cfg) if fresh and "exact" in cfg.references else None

    ckpt = out / "checkpoint.npz"
    extra = {"config": cfg.to_dict()}
    step0 = int(round(ensemble.time / cfg.dt))
    n_steps = _steps(cfg)

    def record(step):
        record_ensemble(rec, tag, ensemble, cfg, report.diagnostics)
        for ctag, _, cens in companions:
            record_ensemble(rec, ctag, cens, cfg, report.diagnostics)
        if exact is not None:
            record_exact(rec, exact[0], exact[1], exact[2], ensemble.time, cfg)
        if fresh:
            record_analytic(rec, cfg, ensemble.time)

    if fresh:
        record(0)
    t_wall = time.time()
    for step in range(step0 + 1, n_steps + 1):
        try:
            ipw_step(ensemble, cfg.dt, mode)
            for _, cmode, cens in companions:
                ipw_step(cens, cfg.dt, cmode)
        except FloatingPointError as e:
            report.diagnostics.extend(ensemble.diagnostics)
            path = ckpt if ckpt.exists() else None
            rec.write(out)
            raise DivergenceError(str(e), path) from None
        if exact is not None:
            exact[0].values = exact[3].step(exact[0].values)
        if step % cfg.record_every == 0 or step == n_steps:
            record(step)
            save_checkpoint(ensemble, ckpt, extra)
            log.info("t=%.3f (%d/%d) %.1fs", ensemble.time, step, n_steps, time.time() - t_wall)
    report.diagnostics.extend(ensemble.diagnostics)
    for ctag, _, cens in companions:
        report.diagnostics.extend(f"{ctag}: {m}" for m in cens.diagnostics)
    report.outputs.extend(rec.write(out))
    report.outputs.append(ckpt)


def run_exact(cfg: RunConfig, out: Path, report: RunReport) -> None:
    psi, V2, masses, prop = _exact_setup(cfg)
    rec = Recorder()
    n_steps = _steps(cfg)
    record_exact(rec, psi, V2, masses, 0.0, cfg)
    record_analytic(rec, cfg, 0.0)
    for step in range(1, n_steps + 1):
        psi.values = prop.step(psi.values)
        if step % cfg.record_every == 0 or step == n_steps:
            t = step * cfg.dt
            record_exact(rec, psi, V2, masses, t, cfg)
            record_analytic(rec, cfg, t)
    report.outputs.extend(rec.write(out))


def hierarchy_inputs(cfg: RunConfig):
    sv = cfg.solver
    g = cfg.grid
    if sv.initial_springs is not None:
        m0 = sv.initial_masses or sv.masses
        psi0 = ex.coupled_oscillator_ground_state(tuple(sv.initial_springs), tuple(m0), g, g)
    else:
        psi0 = ex.coupled_oscillator_ground_state((sv.springs[0], sv.springs[1], 0.0),
                                                  tuple(sv.masses), g, g)
    pot = ConditionedPotential(tuple(sv.springs), tuple(sv.masses))
    V2 = ex.two_body_potential(g, g, tuple(sv.springs))
    return psi0, pot, V2


def run_hierarchy_solver(cfg: RunConfig, out: Path, report: RunReport) -> None:
    sv = cfg.solver
    psi0, pot, V2 = hierarchy_inputs(cfg)
    edt = sv.exact_dt or cfg.dt
    every = max(1, int(round(cfg.record_every * cfg.dt / edt)))
    tr = ex.exact_bohmian_trajectories(psi0, V2, tuple(sv.masses), tuple(sv.positions),
                                       dt=edt, t_max=cfg.t_max, record_every=every)
    if tr.escaped.any():
        report.diagnostics.append("exact trajectory left the grid")
    for depth in sv.depths:
        st = init_from_2body(psi0, int(depth), sv.positions, sv.masses)
        try:
            ts, xs = run_hierarchy(st, pot, cfg.dt, cfg.t_max, cfg.record_every)
        except (FloatingPointError, ValueError) as e:
            raise DivergenceError(f"depth {depth}: {e}") from None
        x_exact = np.interp(ts, tr.times, tr.x1[:, 0])
        p = out / f"hierarchy_depth{int(depth)}.csv"
        rows = np.column_stack([ts, xs[:, 0], x_exact, np.full(ts.size, int(depth))])
        np.savetxt(p, rows, delimiter=",", header="t,X1,X1_exact,depth", comments="",
                   fmt=["%.17g", "%.17g", "%.17g", "%d"])
        report.outputs.append(p)


# entry points -------------------------------------------------------------------------

PLOT_SCRIPT = '''"""Plot every series CSV in this directory (needs matplotlib)."""
import csv
import glob
import os
from collections import defaultdict

import matplotlib.pyplot as plt

here = os.path.dirname(os.path.abspath(__file__))
groups = defaultdict(list)
for path in sorted(glob.glob(os.path.join(here, "*.csv"))):
    stem = os.path.splitext(os.path.basename(path))[0]
    groups[stem.split("_")[0]].append(path)

for key, paths in groups.items():
    fig, ax = plt.subplots()
    for path in paths:
        with open(path) as fh:
            rows = list(csv.reader(fh))
        head, body = rows[0], [list(map(float, r)) for r in rows[1:]]
        for j in range(1, len(head)):
            if head[j] == "depth":
                continue
            label = os.path.basename(path)[:-4] + ("" if len(head) == 2 else ":" + head[j])
            ax.plot([r[0] for r in body], [r[j] for r in body], label=label)
    ax.set_xlabel("t")
    ax.set_title(key)
    ax.legend()
    fig.savefig(os.path.join(here, key + ".png"), dpi=120)
'''


def write_manifest(cfg: RunConfig, report: RunReport, status: str, out: Path) -> Path:
    man = {
        "config": cfg.to_dict(), "version": code_version(), "kernel_backend": kernels.BACKEND,
        "seed": cfg.seed, "status": status, "wall_time_s": report.wall_time,
        "diagnostics": report.diagnostics,
        "outputs": sorted(str(Path(p).name) for p in report.outputs),
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(man, indent=2))
    return path


def run(cfg: RunConfig) -> RunReport:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = RunReport(out)
    t0 = time.time()
    status = "ok"
    try:
        if cfg.solver.kind == "ipw":
            run_ipw(cfg, out, report)
        elif cfg.solver.kind == "exact2body":
            run_exact(cfg, out, report)
        else:
            run_hierarchy_solver(cfg, out, report)
    except DivergenceError:
        status = "diverged"
        raise
    finally:
        report.wall_time = time.time() - t0
        if cfg.plot_script:
            (out / "plot.py").write_text(PLOT_SCRIPT)
        write_manifest(cfg, report, status, out)
    return report


def _truncate_series(path: Path, t_stop: float) -> ObservableSeries:
    s = ObservableSeries.from_csv(path)
    keep = [i for i, t in enumerate(s.times) if t <= t_stop + 1e-12]
    return ObservableSeries(s.name, [s.times[i] for i in keep], [s.values[i] for i in keep])


def resume(checkpoint, t_max: float | None = None) -> RunReport:
    """Continue the main IPW run stored in ``checkpoint`` up to ``t_max``.

    Series of the main solver are extended in place; companion series are
    left as they were at the checkpoint.
    """
    ens, meta = load_checkpoint(checkpoint)
    raw = meta["extra"].get("config")
    if raw is None:
        raise ValueError("checkpoint carries no run configuration")
    if t_max is not None:
        raw = dict(raw, t_max=t_max)
    cfg = parse_config(raw)
    out = Path(checkpoint).parent
    rec = Recorder()
    tag = f"ipw_{cfg.solver.mode}"
    for obs in cfg.observables:
        if obs == "rdm":
            p = out / f"occupations_{tag}.csv"
            if p.exists():
                rows = np.loadtxt(p, delimiter=",", skiprows=1, ndmin=2)
                rec.occupations[f"occupations_{tag}"] = [list(r) for r in rows
                                                         if r[0] <= ens.time + 1e-12]
            continue
        p = out / f"{obs}_{tag}.csv"
        if p.exists():
            rec.series[p.stem] = _truncate_series(p, ens.time)
    report = RunReport(out)
    t0 = time.time()
    status = "ok"
    try:
        run_ipw(cfg, out, report, ensemble=ens, rec=rec)
    except DivergenceError:
        status = "diverged"
        raise
    finally:
        report.wall_time = time.time() - t0
        write_manifest(cfg, report, status, out)
    return report


# comparison ---------------------------------------------------------------------------

def load_series(path):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 0], data[:, 1]


def compare(a, b, metric: str = "max_abs", at: float | None = None) -> float:
    """Compare two ``t,value`` series on their common time range (linear interpolation)."""
    ta, va = a
    tb, vb = b
    lo, hi = max(ta[0], tb[0]), min(ta[-1], tb[-1])
    if lo > hi:
        raise ValueError("series have disjoint time ranges")
    t = np.union1d(ta[(ta >= lo) & (ta <= hi)], tb[(tb >= lo) & (tb <= hi)])
    fa, fb = np.interp(t, ta, va), np.interp(t, tb, vb)
    if metric == "max_abs":
        return float(np.max(np.abs(fa - fb)))
    if metric == "time_integrated_abs":
        if t.size < 2:
            return 0.0
        d = np.abs(fa - fb)
        return float(np.sum(0.5 * (d[1:] + d[:-1]) * np.diff(t)))
    if metric == "rel_at":
        if at is None or not lo <= at <= hi:
            raise ValueError("rel_at needs a time inside the common range")
        ra, rb = np.interp(at, ta, va), np.interp(at, tb, vb)
        return float(abs(ra - rb) / abs(rb)) if rb != 0 else math.inf
    raise ValueError(f"unknown metric {metric!r}")
