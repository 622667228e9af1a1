"""Tests for the plotting package against hand-built artifact fixtures.

No dependency on the simulation package: every input file is written
directly in the documented CSV/JSON schema.
"""

import json
import math

import numpy as np
import pytest

from safeloop_viz import (
    PlotSpec,
    SchemaError,
    check_certificate_consistency,
    load_grid,
    load_trajectories,
    plot_barrier_trace,
    plot_safety_heatmap,
    plot_trajectories,
)
from safeloop_viz.cli import main_barrier, main_heatmap, main_trajectories


# ---------------------------------------------------------------- fixtures

def write_summary(d, barrier=None, grid_meta=None):
    doc = {"command": "run", "scenario": {"barrier": barrier or
           {"kind": "halfspace", "a": [0.4, 0.4], "b": 1.0}}}
    if grid_meta:
        doc["command"] = "grid"
        doc["grid"] = grid_meta
    (d / "summary.json").write_text(json.dumps(doc))


def write_traj(d, trials, n=2, m=1):
    header = (["trial", "k"] + [f"x{i}" for i in range(1, n + 1)]
              + [f"xh{i}" for i in range(1, n + 1)]
              + [f"u{i}" for i in range(1, m + 1)] + ["h", "h_hat"])
    lines = [",".join(header)]
    for tid, rows in trials.items():
        for row in rows:
            lines.append(",".join([str(tid)] + [str(v) for v in row]))
    (d / "traj.csv").write_text("\n".join(lines) + "\n")


def spiral_trial(h0=2.0, steps=12, unsafe_at=None):
    """Rows [k, x1, x2, xh1, xh2, u1, h, h_hat] for a decaying spiral."""
    rows = []
    for k in range(steps):
        ang = 0.5 * k
        r = 1.5 * 0.9**k
        x1, x2 = r * math.cos(ang), r * math.sin(ang)
        h = h0 * 0.9**k
        if unsafe_at is not None and k >= unsafe_at:
            h = -0.1 * (k - unsafe_at + 1)
        u = "" if k == steps - 1 else 0.1 * k
        rows.append([k, x1, x2, x1 + 0.01, x2 - 0.01, u, h, h - 0.05])
    return rows


def write_grid(d, rows):
    lines = ["x0_1,x0_2,p_hat,p_theory,vacuous"]
    lines += [",".join(str(v) for v in r) for r in rows]
    (d / "grid.csv").write_text("\n".join(lines) + "\n")


def lattice_rows(nx, ny, p_hat, p_theory, vacuous=0):
    rows = []
    for x in np.linspace(-1, 1, nx):
        for y in np.linspace(-1, 1, ny):
            rows.append([x, y, p_hat, p_theory, vacuous])
    return rows


# ------------------------------------------------------------------- io

class TestReaders:
    def test_traj_roundtrip(self, tmp_path):
        write_traj(tmp_path, {0: spiral_trial(), 3: spiral_trial()})
        data = load_trajectories(tmp_path / "traj.csv")
        assert data.n == 2 and data.m == 1
        assert sorted(data.trials) == [0, 3]
        tr = data.trials[0]
        assert tr["x"].shape == (12, 2)
        assert math.isnan(tr["u"][-1, 0])  # trailing input is blank
        assert tr["h"][0] == 2.0

    def test_bad_header_rejected(self, tmp_path):
        (tmp_path / "traj.csv").write_text("trial,k,x1,h,h_hat\n0,0,1,1,1\n")
        with pytest.raises(SchemaError):
            load_trajectories(tmp_path / "traj.csv")

    def test_empty_file_rejected(self, tmp_path):
        (tmp_path / "traj.csv").write_text("")
        with pytest.raises(SchemaError):
            load_trajectories(tmp_path / "traj.csv")

    def test_header_only_rejected(self, tmp_path):
        write_traj(tmp_path, {})
        with pytest.raises(SchemaError):
            load_trajectories(tmp_path / "traj.csv")

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(SchemaError):
            load_grid(tmp_path / "grid.csv")

    def test_grid_header_checked(self, tmp_path):
        (tmp_path / "grid.csv").write_text("a,b,c,d,e\n1,2,3,4,0\n")
        with pytest.raises(SchemaError):
            load_grid(tmp_path / "grid.csv")


# ------------------------------------------------------------ trajectories

class TestTrajectoryPlot:
    def test_renders_png_and_svg(self, tmp_path):
        write_traj(tmp_path, {i: spiral_trial() for i in range(5)})
        write_summary(tmp_path)
        outs = [tmp_path / "t.png", tmp_path / "t.svg"]
        plot_trajectories(PlotSpec(tmp_path, outs))
        for p in outs:
            assert p.stat().st_size > 1000

    def test_ellipse_overlay(self, tmp_path):
        write_traj(tmp_path, {0: spiral_trial()})
        write_summary(tmp_path, barrier={"kind": "quadratic", "c0": 1.0,
                                         "W": [[1.0, 0.0], [0.0, 4.0]],
                                         "x_c": [0.0, 0.0]})
        out = tmp_path / "e.png"
        plot_trajectories(PlotSpec(tmp_path, [out]))
        assert out.stat().st_size > 1000

    def test_requires_2d_state(self, tmp_path):
        write_traj(tmp_path, {0: [[0, 1.0, 0.9, 0.1, 0.5, 0.45]]}, n=1)
        write_summary(tmp_path)
        with pytest.raises(SchemaError):
            plot_trajectories(PlotSpec(tmp_path, [tmp_path / "x.png"]))


# ------------------------------------------------------------ barrier trace

class TestBarrierTrace:
    def test_safe_and_unsafe_traces(self, tmp_path):
        write_traj(tmp_path, {0: spiral_trial(),
                              1: spiral_trial(unsafe_at=6)})
        out = tmp_path / "b.svg"
        plot_barrier_trace(PlotSpec(tmp_path, [out]))
        assert out.stat().st_size > 1000

    def test_single_trial(self, tmp_path):
        write_traj(tmp_path, {0: spiral_trial()})
        out = tmp_path / "b.png"
        plot_barrier_trace(PlotSpec(tmp_path, [out]))
        assert out.exists()

    def test_svg_reproducible(self, tmp_path):
        write_traj(tmp_path, {0: spiral_trial(), 1: spiral_trial(unsafe_at=4)})
        a, b = tmp_path / "a.svg", tmp_path / "b.svg"
        plot_barrier_trace(PlotSpec(tmp_path, [a]))
        plot_barrier_trace(PlotSpec(tmp_path, [b]))
        assert a.read_bytes() == b.read_bytes()


# --------------------------------------------------------------- heatmap

class TestHeatmap:
    def test_consistent_grid_renders(self, tmp_path):
        rows = lattice_rows(4, 4, p_hat=0.9, p_theory=0.7)
        rows[0][4] = 1  # one vacuous cell gets masked
        write_grid(tmp_path, rows)
        write_summary(tmp_path, grid_meta={"trials_per_cell": 200})
        outs = [tmp_path / "h.png", tmp_path / "h.svg"]
        stats = plot_safety_heatmap(PlotSpec(tmp_path, outs))
        assert stats == {"non_vacuous": 15, "consistent": 15, "fraction": 1.0}
        for p in outs:
            assert p.stat().st_size > 1000

    def test_single_cell(self, tmp_path):
        write_grid(tmp_path, [[0.0, 0.0, 1.0, 0.4, 0]])
        write_summary(tmp_path, grid_meta={"trials_per_cell": 50})
        out = tmp_path / "h.png"
        plot_safety_heatmap(PlotSpec(tmp_path, [out]))
        assert out.exists()

    def test_all_vacuous_is_allowed(self, tmp_path):
        write_grid(tmp_path, lattice_rows(3, 3, 0.0, 0.0, vacuous=1))
        write_summary(tmp_path, grid_meta={"trials_per_cell": 50})
        stats = plot_safety_heatmap(PlotSpec(tmp_path, [tmp_path / "h.png"]))
        assert stats["non_vacuous"] == 0

    def test_violation_fails_loudly(self, tmp_path):
        # p_hat far below the bound: 0.2 < 0.9 - 3*sqrt(0.2*0.8/200)=0.815
        write_grid(tmp_path, lattice_rows(3, 3, p_hat=0.2, p_theory=0.9))
        write_summary(tmp_path, grid_meta={"trials_per_cell": 200})
        with pytest.raises(SchemaError, match="certificate-consistency"):
            plot_safety_heatmap(PlotSpec(tmp_path, [tmp_path / "h.png"]))
        assert not (tmp_path / "h.png").exists()  # nothing rendered

    def test_slack_formula(self):
        # borderline cell: p_hat = p_theory - 3*SE exactly passes
        ph, n = 0.5, 100
        se3 = 3.0 * math.sqrt(ph * (1 - ph) / n)
        grid = np.array([[0.0, 0.0, ph, ph + se3, 0.0],
                         [1.0, 0.0, ph, ph + se3 + 1e-9, 0.0]])
        with pytest.raises(SchemaError):
            check_certificate_consistency(grid, n)
        assert check_certificate_consistency(grid, n, min_fraction=0.5) == \
            {"non_vacuous": 2, "consistent": 1, "fraction": 0.5}

    def test_ragged_lattice_rejected(self, tmp_path):
        rows = lattice_rows(3, 3, 0.9, 0.5)[:-1]
        write_grid(tmp_path, rows)
        write_summary(tmp_path, grid_meta={"trials_per_cell": 10})
        with pytest.raises(SchemaError, match="lattice"):
            plot_safety_heatmap(PlotSpec(tmp_path, [tmp_path / "h.png"]))


# ------------------------------------------------------------------ CLI

class TestCli:
    def test_trajectories_default_outputs(self, tmp_path, capsys):
        write_traj(tmp_path, {0: spiral_trial()})
        write_summary(tmp_path)
        assert main_trajectories(["--in", str(tmp_path)]) == 0
        assert (tmp_path / "trajectories.png").exists()
        assert (tmp_path / "trajectories.svg").exists()

    def test_barrier_explicit_out(self, tmp_path):
        write_traj(tmp_path, {0: spiral_trial()})
        out = tmp_path / "plots" / "trace.svg"
        assert main_barrier(["--in", str(tmp_path), "--out", str(out)]) == 0
        assert out.exists()

    def test_heatmap_ok_and_violation_exit_codes(self, tmp_path, capsys):
        write_grid(tmp_path, lattice_rows(3, 3, 0.9, 0.5))
        write_summary(tmp_path, grid_meta={"trials_per_cell": 100})
        assert main_heatmap(["--in", str(tmp_path)]) == 0
        assert "non_vacuous=9" in capsys.readouterr().out
        write_grid(tmp_path, lattice_rows(3, 3, 0.1, 0.9))
        assert main_heatmap(["--in", str(tmp_path)]) == 2
        assert "certificate-consistency" in capsys.readouterr().err

    def test_missing_input_exit_2(self, tmp_path, capsys):
        assert main_trajectories(["--in", str(tmp_path)]) == 2

    def test_bad_extension_rejected(self, tmp_path, capsys):
        write_traj(tmp_path, {0: spiral_trial()})
        write_summary(tmp_path)
        code = main_trajectories(["--in", str(tmp_path),
                                  "--out", str(tmp_path / "t.pdf")])
        assert code == 2
