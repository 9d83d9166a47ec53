import json

import numpy as np
import pytest

from pilotwaves import runner
from pilotwaves.cli import main
from pilotwaves.config import (ConfigError, apply_overrides, parse_config, recipe_dict,
                               recipe_names)

TINY = {
    "system": {"n_bosons": 2, "interaction": {"kind": "harmonic", "k_i": 1.0}},
    "grid": {"x_min": -8, "x_max": 8, "n": 128},
    "solver": {"kind": "ipw", "mode": "full"},
    "m_orbitals": 3, "n_configs": 30, "dt": 0.01, "t_max": 0.1, "seed": 4,
    "record_every": 2,
    "observables": ["xsq_traj", "xsq_cw", "rho0", "energy", "rdm"],
    "references": ["exact", "hermitian", "analytic_quench"],
    "exact_grid": {"x_min": -8, "x_max": 8, "n": 64},
}


def write(tmp_path, d, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(d))
    return p


def csv_files(d):
    return {p.name: p.read_bytes() for p in sorted(d.glob("*.csv"))}


# config --------------------------------------------------------------------------------

@pytest.mark.parametrize("patch, field", [
    ({"dt": -0.1}, "dt"),
    ({"t_max": "long"}, "t_max"),
    ({"m_orbitals": None}, "m_orbitals"),
    ({"solver": {"kind": "magic"}}, "solver.kind"),
    ({"observables": ["xsq_traj", "spin"]}, "observables[1]"),
    ({"grid": {"n": 100}}, "grid"),
    ({"system": {"interaction": {"kind": "cubic"}}}, "system.interaction"),
    ({"bogus": 1}, "bogus"),
])
def test_config_errors_name_the_field(patch, field):
    with pytest.raises(ConfigError, match=r"^" + field.replace("[", r"\[").replace("]", r"\]")):
        parse_config({**TINY, **patch})


def test_unresolvable_basis_is_a_config_error(tmp_path, capsys):
    d = {**TINY, "grid": {"x_min": -8, "x_max": 8, "n": 16}, "m_orbitals": 4, "references": []}
    assert main(["run", str(write(tmp_path, d))]) == 2
    assert "resolved" in capsys.readouterr().err


def test_exact_solver_needs_two_bosons():
    d = {**TINY, "system": {"n_bosons": 3}, "solver": {"kind": "exact2body"}, "references": []}
    with pytest.raises(ConfigError, match="n_bosons"):
        parse_config(d)


def test_recipes_are_plain_configs():
    assert {"fig1", "fig2a", "fig3", "fig4", "fig5"} <= set(recipe_names())
    for name in recipe_names():
        cfg = parse_config(recipe_dict(name))
        assert parse_config(cfg.to_dict()) == cfg


def test_overrides():
    d = apply_overrides(recipe_dict("fig1"), ["n_configs=100", "system.interaction.k_i=0.5",
                                              "output_dir=runs/x"])
    cfg = parse_config(d)
    assert cfg.n_configs == 100 and cfg.system.interaction.k_i == 0.5
    assert cfg.output_dir == "runs/x"
    with pytest.raises(ConfigError):
        apply_overrides({}, ["novalue"])


def test_cli_config_error_exit_code(tmp_path, capsys):
    assert main(["run", str(write(tmp_path, {**TINY, "dt": 0}))]) == 2
    assert "dt" in capsys.readouterr().err
    assert main(["run", str(tmp_path / "missing.json")]) == 2
    assert main(["recipe", "fig9"]) == 2


def test_recipe_print(capsys):
    assert main(["recipe", "fig2a", "--set", "n_configs=7", "--print"]) == 0
    assert json.loads(capsys.readouterr().out)["n_configs"] == 7


# compare ---------------------------------------------------------------------------------

def test_compare_metrics(tmp_path, capsys):
    t = np.linspace(0, 1, 11)
    a = tmp_path / "a.csv"
    b = tmp_path / "b.csv"
    np.savetxt(a, np.column_stack([t, np.full(11, 0.5)]), delimiter=",", header="t,value",
               comments="")
    np.savetxt(b, np.column_stack([t, np.full(11, 0.6)]), delimiter=",", header="t,value",
               comments="")
    sa, sb = runner.load_series(a), runner.load_series(b)
    for m in ("max_abs", "time_integrated_abs"):
        assert runner.compare(sa, sa, m) == 0.0
    assert runner.compare(sa, sa, "rel_at", 0.3) == 0.0
    assert runner.compare(sa, sb, "max_abs") == pytest.approx(0.1)
    assert runner.compare(sa, sb, "time_integrated_abs") == pytest.approx(0.1)
    assert runner.compare(sa, sb, "rel_at", 0.5) == pytest.approx(0.1 / 0.6)
    assert main(["compare", str(a), str(b), "--metric", "max_abs"]) == 0
    assert float(capsys.readouterr().out) == pytest.approx(0.1)


def test_compare_interpolates_and_rejects_disjoint():
    a = (np.array([0.0, 1.0]), np.array([0.0, 1.0]))
    b = (np.array([0.0, 0.5, 1.0]), np.array([0.0, 0.5, 1.0]))
    assert runner.compare(a, b, "max_abs") == 0.0
    with pytest.raises(ValueError):
        runner.compare(a, (np.array([2.0, 3.0]), np.array([0.0, 0.0])))


# runs ---------------------------------------------------------------------------------

def test_tiny_run_outputs_and_manifest_round_trip(tmp_path):
    out1 = tmp_path / "r1"
    assert main(["run", str(write(tmp_path, TINY)), "--out", str(out1)]) == 0
    files = csv_files(out1)
    for name in ("xsq_traj_ipw_full.csv", "rho0_ipw_full.csv", "xsq_cw_ipw_hermitian.csv",
                 "rho0_exact.csv", "xsq_analytic.csv", "occupations_ipw_full.csv"):
        assert name in files, name
    man = json.loads((out1 / "manifest.json").read_text())
    assert man["status"] == "ok" and man["seed"] == 4
    assert (out1 / "plot.py").exists()
    series = runner.load_series(out1 / "xsq_traj_ipw_full.csv")
    assert series[0][-1] == pytest.approx(0.1)
    assert len(series[0]) == 6

    out2 = tmp_path / "r2"
    assert main(["run", str(out1 / "manifest.json"), "--out", str(out2)]) == 0
    assert csv_files(out2) == files


def test_checkpoint_resume_is_bit_identical(tmp_path):
    full = tmp_path / "full"
    part = tmp_path / "part"
    cfg = {**TINY, "references": [], "t_max": 0.1}
    assert main(["run", str(write(tmp_path, cfg)), "--out", str(full)]) == 0
    assert main(["run", str(write(tmp_path, {**cfg, "t_max": 0.06}, "c2.json")),
                 "--out", str(part)]) == 0
    assert main(["checkpoint-resume", str(part / "checkpoint.npz"), "--t-max", "0.1"]) == 0
    assert csv_files(part) == csv_files(full)


def test_divergence_exit_code(tmp_path, monkeypatch, capsys):
    calls = {"n": 0}
    real = runner.ipw_step

    def flaky(ens, dt, mode):
        calls["n"] += 1
        if calls["n"] > 3:
            raise FloatingPointError("non-finite CW values")
        return real(ens, dt, mode)

    monkeypatch.setattr(runner, "ipw_step", flaky)
    out = tmp_path / "d"
    cfg = {**TINY, "references": [], "record_every": 1}
    assert main(["run", str(write(tmp_path, cfg)), "--out", str(out)]) == 3
    err = capsys.readouterr().err
    assert "checkpoint.npz" in err
    assert json.loads((out / "manifest.json").read_text())["status"] == "diverged"


def test_exact_and_hierarchy_solvers(tmp_path):
    ex_cfg = {**TINY, "solver": {"kind": "exact2body"}, "references": ["analytic_quench"],
              "observables": ["xsq_cw", "rho0", "rdm"]}
    out = tmp_path / "e"
    assert main(["run", str(write(tmp_path, ex_cfg)), "--out", str(out)]) == 0
    assert "rho0_exact.csv" in csv_files(out)

    h = apply_overrides(recipe_dict("fig5"), ["t_max=0.05", "grid.n=64", "grid.x_min=-8",
                                              "grid.x_max=8"])
    out = tmp_path / "h"
    assert main(["run", str(write(tmp_path, h, "h.json")), "--out", str(out)]) == 0
    rows = np.loadtxt(out / "hierarchy_depth7.csv", delimiter=",", skiprows=1)
    assert rows[0, 1] == 1.0 and rows[-1, 0] == pytest.approx(0.05)
    assert abs(rows[-1, 1] - rows[-1, 2]) < 1e-3
