"""Figure builders for safeloop artifacts.

All three builders are pure functions of the input files: no clocks, no
RNG, and images are saved without timestamp metadata so re-running
reproduces identical output (modulo raster encoder details).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
# fixed hash salt so SVG element ids do not vary between runs
matplotlib.rcParams["svg.hashsalt"] = "safeloop-viz"

import matplotlib.pyplot as plt
import numpy as np

from .io import SchemaError, barrier_overlay, load_grid, load_summary, load_trajectories


@dataclass
class PlotSpec:
    """Inputs and outputs for one figure."""

    in_dir: Path
    out_paths: list[Path] = field(default_factory=list)
    max_trials: int | None = None  # cap on trajectories drawn (None = all)

    def __post_init__(self):
        self.in_dir = Path(self.in_dir)
        self.out_paths = [Path(p) for p in self.out_paths]


def _save(fig, out_paths: list[Path]) -> None:
    for path in out_paths:
        path.parent.mkdir(parents=True, exist_ok=True)
        fmt = path.suffix.lstrip(".").lower()
        if fmt not in ("png", "svg"):
            raise SchemaError(f"unsupported image format: {path}")
        # strip creation-date metadata so outputs are bit-reproducible
        metadata = {"Date": None} if fmt == "svg" else {"Software": None}
        fig.savefig(path, format=fmt, dpi=150, metadata=metadata)
    plt.close(fig)


def _draw_safe_boundary(ax, overlay: dict, xlim, ylim) -> None:
    if overlay["kind"] == "halfspace":
        a, b = overlay["a"], overlay["b"]
        # boundary a'x + b = 0, drawn across the current view
        if abs(a[1]) >= abs(a[0]):
            xs = np.linspace(*xlim, 200)
            ys = -(b + a[0] * xs) / a[1]
        else:
            ys = np.linspace(*ylim, 200)
            xs = -(b + a[1] * ys) / a[0]
        ax.plot(xs, ys, "k--", lw=1.2, label="safe-set boundary")
    elif overlay["kind"] == "quadratic":
        c0, W, x_c = overlay["c0"], overlay["W"], overlay["x_c"]
        t = np.linspace(0.0, 2.0 * math.pi, 400)
        circle = np.stack([np.cos(t), np.sin(t)])
        # points with (x-x_c)'W(x-x_c) = c0: map the unit circle through
        # sqrt(c0) * W^{-1/2}
        vals, vecs = np.linalg.eigh(W)
        vals = np.clip(vals, 1e-300, None)
        pts = (vecs @ np.diag(np.sqrt(c0 / vals)) @ circle).T + x_c
        ax.plot(pts[:, 0], pts[:, 1], "k--", lw=1.2, label="safe-set boundary")


def plot_trajectories(spec: PlotSpec) -> None:
    """State-plane bundle of true and estimated trajectories."""
    data = load_trajectories(spec.in_dir / "traj.csv")
    if data.n != 2:
        raise SchemaError("trajectory plot requires a two-dimensional state")
    overlay = barrier_overlay(load_summary(spec.in_dir / "summary.json"))
    fig, ax = plt.subplots(figsize=(6, 5))
    items = sorted(data.trials.items())
    if spec.max_trials is not None:
        items = items[: spec.max_trials]
    for i, (trial, tr) in enumerate(items):
        lbl_t = "true state" if i == 0 else None
        lbl_e = "estimate" if i == 0 else None
        ax.plot(tr["x"][:, 0], tr["x"][:, 1], color="C0", alpha=0.6, lw=0.9,
                label=lbl_t)
        ax.plot(tr["xhat"][:, 0], tr["xhat"][:, 1], color="C1", alpha=0.6,
                lw=0.9, ls=":", label=lbl_e)
        ax.plot(tr["x"][0, 0], tr["x"][0, 1], "o", color="C0", ms=3)
    _draw_safe_boundary(ax, overlay, ax.get_xlim(), ax.get_ylim())
    ax.set_xlabel("x1")
    ax.set_ylabel("x2")
    ax.set_title(f"closed-loop trajectories ({len(items)} trials)")
    ax.legend(loc="best", fontsize=8)
    _save(fig, spec.out_paths)


def plot_barrier_trace(spec: PlotSpec) -> None:
    """Barrier value h(x_k) against k for every logged trial."""
    data = load_trajectories(spec.in_dir / "traj.csv")
    fig, ax = plt.subplots(figsize=(6, 4))
    items = sorted(data.trials.items())
    if spec.max_trials is not None:
        items = items[: spec.max_trials]
    n_unsafe = 0
    for trial, tr in items:
        unsafe = bool(np.nanmin(tr["h"]) < 0.0)
        n_unsafe += unsafe
        ax.plot(tr["k"], tr["h"],
                color="C3" if unsafe else "C0",
                alpha=0.9 if unsafe else 0.5, lw=1.2 if unsafe else 0.8)
        if unsafe:
            exit_k = int(tr["k"][np.argmax(tr["h"] < 0.0)])
            ax.plot(exit_k, tr["h"][tr["k"] == exit_k][0], "x", color="C3",
                    ms=6)
    ax.axhline(0.0, color="k", lw=1.0)
    ax.set_xlabel("step k")
    ax.set_ylabel("h(x_k)")
    ax.set_title(f"barrier traces ({len(items)} trials, {n_unsafe} unsafe)")
    _save(fig, spec.out_paths)


def check_certificate_consistency(grid: np.ndarray, trials_per_cell: int,
                                  min_fraction: float = 0.95) -> dict:
    """Verify p_hat >= p_theory - 3*SE cellwise on non-vacuous cells.

    Returns counting statistics; raises SchemaError if fewer than
    ``min_fraction`` of the non-vacuous cells satisfy the inequality.
    """
    nonvac = grid[grid[:, 4] == 0.0]
    if nonvac.size == 0:
        return {"non_vacuous": 0, "consistent": 0, "fraction": float("nan")}
    ph, pt = nonvac[:, 2], nonvac[:, 3]
    slack = 3.0 * np.sqrt(ph * (1.0 - ph) / trials_per_cell)
    ok = int(np.sum(ph >= pt - slack))
    frac = ok / len(nonvac)
    if frac < min_fraction:
        raise SchemaError(
            f"certificate-consistency check failed: only {ok}/{len(nonvac)} "
            f"non-vacuous cells ({frac:.1%}) satisfy "
            "p_hat >= p_theory - 3*sqrt(p_hat*(1-p_hat)/N)")
    return {"non_vacuous": len(nonvac), "consistent": ok, "fraction": frac}


def plot_safety_heatmap(spec: PlotSpec) -> dict:
    """Side-by-side p_theory / p_hat heatmaps with vacuous cells masked.

    Re-validates the certificate-consistency inequality before rendering
    and fails (SchemaError) if it is violated.
    """
    grid = load_grid(spec.in_dir / "grid.csv")
    summary = load_summary(spec.in_dir / "summary.json")
    try:
        trials_per_cell = int(summary["grid"]["trials_per_cell"])
    except (KeyError, TypeError):
        raise SchemaError("summary.json lacks grid.trials_per_cell") from None
    stats = check_certificate_consistency(grid, trials_per_cell)

    xs = np.unique(grid[:, 0])
    ys = np.unique(grid[:, 1])
    if len(xs) * len(ys) != len(grid):
        raise SchemaError("grid.csv rows do not form a full lattice")
    ix = np.searchsorted(xs, grid[:, 0])
    iy = np.searchsorted(ys, grid[:, 1])
    vacuous = grid[:, 4] != 0.0

    panels = []
    for col, title in ((3, "certified lower bound p_theory"),
                       (2, "empirical p_hat")):
        img = np.full((len(ys), len(xs)), np.nan)
        img[iy, ix] = np.where(vacuous, np.nan, grid[:, col])
        panels.append((np.ma.masked_invalid(img), title))

    fig, axes = plt.subplots(1, 2, figsize=(10, 4.2), sharey=True)
    extent = None
    if len(xs) > 1 and len(ys) > 1:
        extent = [xs[0], xs[-1], ys[0], ys[-1]]
    for ax, (img, title) in zip(axes, panels):
        im = ax.imshow(img, origin="lower", vmin=0.0, vmax=1.0,
                       extent=extent, aspect="auto", cmap="viridis")
        ax.set_title(title)
        ax.set_xlabel("x0_1")
    axes[0].set_ylabel("x0_2")
    fig.colorbar(im, ax=axes, fraction=0.04, label="safety probability")
    _save(fig, spec.out_paths)
    return stats
