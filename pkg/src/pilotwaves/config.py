"""Run configuration: JSON documents parsed into validated dataclasses.

Schema (all keys optional unless noted; defaults in brackets)::

    {
      "system": {
        "n_bosons": 2,
        "trap": {"k_t": 1.0, "mass": 1.0},
        "interaction": {"kind": "none|harmonic|gaussian", "k_i": 0.0, "sigma": 1.0},
        "schedule": {"kind": "sudden|adiabatic", "rate": 0.02}
      },
      "grid": {"x_min": -16, "x_max": 16, "n": 256},
      "solver": {"kind": "ipw", "mode": "full|hermitian"}
              | {"kind": "exact2body"}
              | {"kind": "hierarchy", "depths": [0, 7], "masses": [1, 100],
                 "springs": [0.1, 0.1], "initial_springs": [0.1, 0.1, 1.0],
                 "initial_masses": [1, 2], "positions": [1, 2],
                 "exact_dt": null},
      "m_orbitals": 6,              (ipw only, required)
      "n_configs": 1500,            (ipw only, required)
      "dt": 0.005,                  (required)
      "t_max": 15.0,                (required)
      "seed": 0,
      "record_every": 10,
      "observables": ["xsq_traj", "xsq_cw", "rho0", "energy", "rdm"],
      "energy_estimator": "mean_field|conditional",
      "references": ["exact", "hermitian", "analytic_quench", "analytic_gs"],
      "exact_grid": {"x_min": -8, "x_max": 8, "n": 128},
      "output_dir": "runs/out",
      "plot_script": true
    }

``references`` adds companion series computed alongside the main run: the
exact two-body solver (two particles, sudden switch-on), a Hermitian-limit
ensemble with the same seed, the closed-form quench width, or the exact
ground-state energy.
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .grid import Grid1D
from .model import PairInteractionSpec, Schedule, SystemSpec, TrapSpec

OBSERVABLES = ("xsq_traj", "xsq_cw", "rho0", "energy", "rdm")
REFERENCES = ("exact", "hermitian", "analytic_quench", "analytic_gs")
SOLVERS = ("ipw", "exact2body", "hierarchy")


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending field path."""


def _sub(d: dict, key: str, path: str) -> dict:
    v = d.get(key, {})
    if not isinstance(v, dict):
        raise ConfigError(f"{path}{key}: expected an object")
    return v


def _build(cls, d: dict, path: str):
    try:
        return cls(**d)
    except TypeError as e:
        raise ConfigError(f"{path.rstrip('.')}: {e}") from None
    except ValueError as e:
        raise ConfigError(f"{path.rstrip('.')}: {e}") from None


def _num(d: dict, key: str, path: str, default=None, kind=float, positive=False):
    if key not in d or d[key] is None:
        if default is None:
            raise ConfigError(f"{path}{key}: required")
        return default
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{path}{key}: expected a number, got {v!r}")
    if kind is int and int(v) != v:
        raise ConfigError(f"{path}{key}: expected an integer, got {v!r}")
    v = kind(v)
    if positive and v <= 0:
        raise ConfigError(f"{path}{key}: must be positive")
    return v


@dataclass
class SolverConfig:
    kind: str = "ipw"
    mode: str = "full"
    depths: tuple = (0,)
    masses: tuple = (1.0, 1.0)
    springs: tuple = (1.0, 1.0)
    initial_springs: tuple | None = None
    initial_masses: tuple | None = None
    positions: tuple = (1.0, 2.0)
    exact_dt: float | None = None


@dataclass
class RunConfig:
    system: SystemSpec
    solver: SolverConfig
    dt: float
    t_max: float
    grid: Grid1D = field(default_factory=Grid1D)
    m_orbitals: int | None = None
    n_configs: int | None = None
    seed: int = 0
    record_every: int = 10
    observables: tuple = ()
    energy_estimator: str = "mean_field"
    references: tuple = ()
    exact_grid: Grid1D = field(default_factory=lambda: Grid1D(-8.0, 8.0, 128))
    output_dir: str = "runs/out"
    plot_script: bool = True

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("observables", "references"):
            d[k] = list(d[k])
        s = d["solver"]
        for k, v in s.items():
            if isinstance(v, tuple):
                s[k] = list(v)
        return d


def parse_config(d: dict) -> RunConfig:
    """Validate a plain dict. A run manifest (with a ``config`` key) is accepted too."""
    if not isinstance(d, dict):
        raise ConfigError("config: expected an object")
    if "config" in d and isinstance(d["config"], dict):
        d = d["config"]
    known = {"system", "grid", "solver", "m_orbitals", "n_configs", "dt", "t_max", "seed",
             "record_every", "observables", "energy_estimator", "references", "exact_grid",
             "output_dir", "plot_script"}
    extra = set(d) - known
    if extra:
        raise ConfigError(f"{sorted(extra)[0]}: unknown key")

    s = _sub(d, "system", "")
    trap = _build(TrapSpec, _sub(s, "trap", "system."), "system.trap.")
    inter = _build(PairInteractionSpec, _sub(s, "interaction", "system."), "system.interaction.")
    sched = _build(Schedule, _sub(s, "schedule", "system."), "system.schedule.")
    nb = _num(s, "n_bosons", "system.", 2, int)
    system = _build(SystemSpec, {"n_bosons": nb, "trap": trap, "interaction": inter,
                                 "schedule": sched}, "system.")
    grid = _build(Grid1D, _sub(d, "grid", ""), "grid.")
    exact_grid = _build(Grid1D, d.get("exact_grid") or {"x_min": -8.0, "x_max": 8.0, "n": 128},
                        "exact_grid.")

    sd = dict(_sub(d, "solver", ""))
    kind = sd.pop("kind", "ipw")
    if kind not in SOLVERS:
        raise ConfigError(f"solver.kind: unknown solver {kind!r}")
    for k in ("depths", "masses", "springs", "initial_springs", "initial_masses", "positions"):
        if k in sd and sd[k] is not None:
            sd[k] = tuple(sd[k])
    solver = _build(SolverConfig, {"kind": kind, **sd}, "solver.")
    if solver.mode not in ("full", "hermitian"):
        raise ConfigError(f"solver.mode: unknown mode {solver.mode!r}")

    dt = _num(d, "dt", "", positive=True)
    t_max = _num(d, "t_max", "", positive=True)
    m = n_w = None
    if kind == "ipw":
        m = _num(d, "m_orbitals", "", kind=int, positive=True)
        n_w = _num(d, "n_configs", "", kind=int, positive=True)
    if kind == "hierarchy":
        if any(int(x) != x or x < 0 for x in solver.depths) or not solver.depths:
            raise ConfigError("solver.depths: need non-negative integers")
        if len(solver.masses) != 2 or len(solver.springs) != 2 or len(solver.positions) != 2:
            raise ConfigError("solver: masses, springs and positions need two entries")
    if kind == "exact2body" and nb != 2:
        raise ConfigError("system.n_bosons: exact solver handles two particles")

    obs = tuple(d.get("observables", ()))
    for i, o in enumerate(obs):
        if o not in OBSERVABLES:
            raise ConfigError(f"observables[{i}]: unknown observable {o!r}")
    refs = tuple(d.get("references", ()))
    for i, r in enumerate(refs):
        if r not in REFERENCES:
            raise ConfigError(f"references[{i}]: unknown reference {r!r}")
    if "exact" in refs and (nb != 2 or sched.kind != "sudden"):
        raise ConfigError("references: exact reference needs two particles and a sudden switch-on")
    if "hermitian" in refs and kind != "ipw":
        raise ConfigError("references: hermitian reference needs the ipw solver")
    est = d.get("energy_estimator", "mean_field")
    if est not in ("mean_field", "conditional"):
        raise ConfigError(f"energy_estimator: unknown estimator {est!r}")

    return RunConfig(
        system=system, solver=solver, dt=dt, t_max=t_max, grid=grid, m_orbitals=m,
        n_configs=n_w, seed=_num(d, "seed", "", 0, int),
        record_every=_num(d, "record_every", "", 10, int, positive=True),
        observables=obs, energy_estimator=est, references=refs, exact_grid=exact_grid,
        output_dir=str(d.get("output_dir", "runs/out")),
        plot_script=bool(d.get("plot_script", True)))


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from None
    return parse_config(raw)


RECIPE_DIR = Path(__file__).with_name("recipes")


def recipe_names() -> list:
    return sorted(p.stem for p in RECIPE_DIR.glob("*.json"))


def recipe_dict(name: str) -> dict:
    path = RECIPE_DIR / f"{name}.json"
    if not path.exists():
        raise ConfigError(f"recipe: unknown recipe {name!r} (have {', '.join(recipe_names())})")
    with open(path) as fh:
        return json.load(fh)


def apply_overrides(d: dict, overrides) -> dict:
    """``key.sub=value`` assignments; values are parsed as JSON, else kept as strings."""
    d = copy.deepcopy(d)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r}: expected key=value")
        key, raw = item.split("=", 1)
        try:
            val = json.loads(raw)
        except json.JSONDecodeError:
            val = raw
        parts = key.split(".")
        cur = d
        for p in parts[:-1]:
            nxt = cur.setdefault(p, {})
            if not isinstance(nxt, dict):
                raise ConfigError(f"{key}: {p} is not an object")
            cur = nxt
        cur[parts[-1]] = val
    return d
