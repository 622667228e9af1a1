"""Offline plotting for safeloop artifacts (CSV/JSON only, no runtime link)."""

from .io import SchemaError, load_grid, load_summary, load_trajectories
from .plots import (
    PlotSpec,
    check_certificate_consistency,
    plot_barrier_trace,
    plot_safety_heatmap,
    plot_trajectories,
)

__all__ = [
    "PlotSpec",
    "SchemaError",
    "check_certificate_consistency",
    "load_grid",
    "load_summary",
    "load_trajectories",
    "plot_barrier_trace",
    "plot_safety_heatmap",
    "plot_trajectories",
]
