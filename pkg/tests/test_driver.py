import json
import shutil
import textwrap

import numpy as np
import pytest

from dwr_adapt import cli
from dwr_adapt.config import AdaptConfig, ConfigError, load_config
from dwr_adapt.driver import (CSV_COLUMNS, ConvergenceRow, RunFailed, adaptive_loop, build_adapter, build_mesh,
                              matched_comparison, read_csv, run_uniform, write_csv, write_outputs)
from dwr_adapt.vtk import read_vtk

from conftest import CONFIGS

QUICK = CONFIGS / "quickstart.ini"


def write_ini(tmp_path, text, name="c.ini"):
    p = tmp_path / name
    p.write_text(textwrap.dedent(text))
    return p


# -- configuration ---------------------------------------------------------------------
def test_shipped_configs_parse():
    for p in sorted(CONFIGS.glob("*.ini")):
        cfg = load_config(p)
        build_adapter(cfg)
        assert build_mesh(cfg).num_cells > 0


def test_silicone_config_values():
    cfg = load_config(CONFIGS / "silicone.ini")
    assert cfg.hyper.params["C30"] == 0.0038 and cfg.hyper.incompressible
    assert cfg.boundary.dirichlet == {1: (0.0, 0.0), 2: (0.0, 57.3)}
    assert cfg.goal.thickness == 1.75 and cfg.target_value == 20.0 and cfg.max_dofs == 50000


def test_combined_goal_sections(tmp_path):
    p = write_ini(tmp_path, """
        [run]
        [goal]
        kind = combined
        goals = a, b
        omegas = 1 10
        [a]
        kind = subdomain_integral
        weights = 1 0
        [b]
        kind = point_value
        point = 0.5 0.5
        component = 1
        """)
    g = load_config(p).goal
    assert [s.kind for s in g.goals] == ["subdomain_integral", "point_value"] and g.omegas == (1.0, 10.0)


@pytest.mark.parametrize("body", [
    "[run]\nalpha = 1.5\n", "[run]\nepsilon = 0\n", "[run]\nproblem = stokes\n", "[run]\nmax_iterations = 0\n",
    "[run]\ndual_strategy = guess\n", "[boundary]\ndirichlet = 1: 0\n", "[material]\nE = 1 0.5\n",
    "[goal]\nkind = combined\n", "[goal]\nkind = combined\ngoals = nope\n", "[run]\nreference = maybe\n",
])
def test_bad_configs_raise(tmp_path, body):
    with pytest.raises(ConfigError):
        load_config(write_ini(tmp_path, body))


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.ini")


def test_env_overrides():
    cfg = load_config(QUICK)
    out = cfg.with_env_overrides({"DWR_ADAPT_ALPHA": "0.9", "DWR_ADAPT_EPSILON": "1e-3"})
    assert (out.alpha, out.epsilon) == (0.9, 1e-3) and (cfg.alpha, cfg.epsilon) == (0.5, 1e-6)
    assert cfg.with_env_overrides({}) is cfg
    with pytest.raises(ConfigError):
        cfg.with_env_overrides({"DWR_ADAPT_ALPHA": "0"})


# -- loop --------------------------------------------------------------------------------
@pytest.fixture(scope="module")
def quick_history():
    return adaptive_loop(load_config(QUICK))


def test_loop_rows(quick_history):
    h = quick_history
    assert len(h) == 4 and h.status == "max_iterations" and not h.converged
    cells = [r.cells for r in h]
    assert all(b > a for a, b in zip(cells, cells[1:]))
    for r in h:
        assert r.eta_global <= r.sum_local * (1 + 1e-12)  # equal when all contributions share a sign
        assert r.relative_error is not None and r.effectivity_global > 0


def test_large_tolerance_stops_after_one_iteration():
    cfg = load_config(QUICK).with_env_overrides({"DWR_ADAPT_EPSILON": "1e3"})
    h = adaptive_loop(cfg)
    assert len(h) == 1 and h.converged


def test_dof_budget_stops_loop():
    cfg = load_config(QUICK)
    cfg.max_dofs = 1
    cfg.max_iterations = 10
    h = adaptive_loop(cfg)
    assert len(h) == 1 and h.status == "max_iterations"


def test_uniform_single_level_matches_first_adaptive_row(quick_history):
    u = run_uniform(load_config(QUICK), 1)
    assert len(u) == 1 and u.status == "converged"
    # the reference differs (it is built on each run's final mesh); the estimator columns agree
    for c in CSV_COLUMNS[:6]:
        assert getattr(u[0], c) == getattr(quick_history[0], c)
    with pytest.raises(ValueError):
        run_uniform(load_config(QUICK), 0)


def test_matched_comparison():
    def row(c, e):
        return ConvergenceRow(0, c, 0, 0.0, 0.0, 0.0, e)

    adaptive = [row(10, 1.0), row(15, 0.5), row(30, 0.1)]
    uniform = [row(5, 2.0), row(20, 0.8), row(80, 0.2)]
    assert matched_comparison(adaptive, uniform) == [(20, 0.8, 15, 0.5), (80, 0.2, 30, 0.1)]


class FlakyAdapter:
    """Delegates to a real adapter but fails on the n-th solve."""

    def __init__(self, inner, fail_at):
        self.inner, self.fail_at, self.calls = inner, fail_at, 0

    def solve(self, mesh, previous=None):
        self.calls += 1
        if self.calls == self.fail_at:
            raise FloatingPointError("solver blew up")
        return self.inner.solve(mesh, previous)

    def __getattr__(self, name):
        return getattr(self.inner, name)


def test_failure_keeps_completed_rows(tmp_path):
    cfg = load_config(QUICK)
    ad = FlakyAdapter(build_adapter(cfg), 3)
    with pytest.raises(RunFailed) as info:
        adaptive_loop(cfg, adapter=ad)
    h = info.value.history
    assert len(h) == 2 and h.status == "failed"
    write_outputs(h, tmp_path, ad)
    assert len(read_csv(tmp_path / "convergence.csv")) == 2


# -- output ------------------------------------------------------------------------------
def test_csv_round_trip(tmp_path, quick_history):
    write_csv(quick_history, tmp_path / "a.csv")
    assert read_csv(tmp_path / "a.csv") == list(quick_history)
    write_csv([], tmp_path / "empty.csv")
    assert (tmp_path / "empty.csv").read_text().strip() == ",".join(CSV_COLUMNS)
    assert read_csv(tmp_path / "empty.csv") == []


def test_outputs_and_vtk_round_trip(tmp_path, quick_history):
    cfg = load_config(QUICK)
    ad = build_adapter(cfg)
    write_outputs(quick_history, tmp_path, ad)
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["iterations"] == 4 and summary["status"] == "max_iterations"
    rec = quick_history.records[-1]
    data = read_vtk(tmp_path / "mesh_003.vtk")
    np.testing.assert_allclose(data["points"][:, :2], rec.mesh.vertices, rtol=1e-7, atol=1e-12)
    np.testing.assert_array_equal(data["cells"], rec.mesh.cells)
    np.testing.assert_allclose(data["cell_data"]["eta_K"], rec.report.eta_local.astype(np.float32), rtol=1e-7)
    u = data["point_data"]["u_h"][:, :2]
    point, _ = ad.fields(rec.state, rec.report)
    np.testing.assert_allclose(u, point["u_h"], rtol=1e-7, atol=1e-7 * np.abs(point["u_h"]).max())


# -- command line --------------------------------------------------------------------------
def test_cli_run_exit_codes_and_determinism(tmp_path, capsys):
    assert cli.main(["run", str(QUICK), "--out", str(tmp_path / "a")]) == 2
    assert cli.main(["run", str(QUICK), "--out", str(tmp_path / "b"), "--no-vtk"]) == 2
    a = (tmp_path / "a" / "convergence.csv").read_bytes()
    assert a == (tmp_path / "b" / "convergence.csv").read_bytes()
    assert len(list((tmp_path / "a").glob("mesh_*.vtk"))) == 4
    assert not list((tmp_path / "b").glob("mesh_*.vtk"))
    assert "cells=" in capsys.readouterr().out


def test_cli_converged_exit_code(tmp_path, monkeypatch):
    monkeypatch.setenv("DWR_ADAPT_EPSILON", "1e3")
    assert cli.main(["run", str(QUICK), "--out", str(tmp_path)]) == 0
    assert len(read_csv(tmp_path / "convergence.csv")) == 1


def test_cli_uniform(tmp_path):
    assert cli.main(["uniform", str(QUICK), "--levels", "2", "--out", str(tmp_path), "--no-vtk"]) == 0
    rows = read_csv(tmp_path / "convergence.csv")
    assert [r.cells for r in rows] == [32, 128]
    assert cli.main(["uniform", str(QUICK), "--levels", "0", "--out", str(tmp_path)]) == 1


def test_cli_configuration_error(tmp_path, capsys):
    assert cli.main(["run", str(write_ini(tmp_path, "[run]\nalpha = 2\n")), "--out", str(tmp_path)]) == 1
    assert "configuration error" in capsys.readouterr().err
    mesh_missing = write_ini(tmp_path, "[mesh]\nfile = nowhere.mesh\n", "m.ini")
    assert cli.main(["run", str(mesh_missing), "--out", str(tmp_path)]) == 1


def test_cli_runtime_failure_writes_partial_table(tmp_path, capsys):
    p = write_ini(tmp_path, """
        [run]
        problem = hyperelastic
        degree = 2
        max_iterations = 2
        reference = no
        dual_strategy = extrapolate
        [mesh]
        geometry = unit_square
        n = 2
        [hyperelastic]
        law = gent
        E = 1.0
        Jm = 0.05
        kappa = 1.0
        [newton]
        max_iter = 3
        load_steps = 1
        [boundary]
        dirichlet = 4: 0 0; 2: 2 0
        [goal]
        kind = boundary_flux
        tag = 2
        """)
    assert cli.main(["run", str(p), "--out", str(tmp_path / "o")]) == 1
    assert "run failed" in capsys.readouterr().err
    assert read_csv(tmp_path / "o" / "convergence.csv") == []
