"""Readers for the safeloop CLI artifacts.

Only the documented file schemas are consumed:

* ``traj.csv``    header ``trial,k,x1..xn,xh1..xhn,u1..um,h,h_hat``
* ``grid.csv``    header ``x0_1,x0_2,p_hat,p_theory,vacuous``
* ``summary.json`` for barrier overlay parameters and grid metadata

Schema violations raise :class:`SchemaError`; callers map it to a nonzero
exit code.
"""

from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class SchemaError(Exception):
    """An input file is missing or does not match the documented schema."""


@dataclass
class TrajectoryData:
    """Per-trial arrays parsed from traj.csv."""

    trials: dict[int, dict[str, np.ndarray]]  # trial -> {k, x, xhat, u, h, h_hat}
    n: int
    m: int


def _float_or_nan(s: str) -> float:
    return float(s) if s != "" else float("nan")


def load_trajectories(path: str | Path) -> TrajectoryData:
    path = Path(path)
    if not path.is_file():
        raise SchemaError(f"trajectory file not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        n = sum(1 for c in header if re.fullmatch(r"x\d+", c))
        m = sum(1 for c in header if re.fullmatch(r"u\d+", c))
        expected = (["trial", "k"]
                    + [f"x{i}" for i in range(1, n + 1)]
                    + [f"xh{i}" for i in range(1, n + 1)]
                    + [f"u{i}" for i in range(1, m + 1)]
                    + ["h", "h_hat"])
        if n == 0 or m == 0 or header != expected:
            raise SchemaError(f"{path}: unexpected header {header}")
        rows = [[int(r[0]), int(r[1]), *map(_float_or_nan, r[2:])]
                for r in reader]
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    trials: dict[int, dict[str, np.ndarray]] = {}
    arr = np.asarray(rows, dtype=float)
    for trial in np.unique(arr[:, 0]).astype(int):
        block = arr[arr[:, 0] == trial]
        block = block[np.argsort(block[:, 1])]
        trials[int(trial)] = {
            "k": block[:, 1].astype(int),
            "x": block[:, 2:2 + n],
            "xhat": block[:, 2 + n:2 + 2 * n],
            "u": block[:, 2 + 2 * n:2 + 2 * n + m],
            "h": block[:, 2 + 2 * n + m],
            "h_hat": block[:, 3 + 2 * n + m],
        }
    return TrajectoryData(trials=trials, n=n, m=m)


GRID_HEADER = ["x0_1", "x0_2", "p_hat", "p_theory", "vacuous"]


def load_grid(path: str | Path) -> np.ndarray:
    """Return grid rows as a float array with columns in GRID_HEADER order."""
    path = Path(path)
    if not path.is_file():
        raise SchemaError(f"grid file not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        if header != GRID_HEADER:
            raise SchemaError(f"{path}: unexpected header {header}")
        rows = [list(map(float, r)) for r in reader]
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    return np.asarray(rows, dtype=float)


def load_summary(path: str | Path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise SchemaError(f"summary file not found: {path}")
    try:
        with path.open() as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON ({exc})") from exc


def barrier_overlay(summary: dict) -> dict:
    """Extract the safe-set boundary parameters from summary.json."""
    try:
        bar = summary["scenario"]["barrier"]
        kind = bar["kind"]
    except (KeyError, TypeError):
        raise SchemaError("summary.json lacks scenario.barrier") from None
    if kind == "halfspace":
        return {"kind": "halfspace", "a": np.asarray(bar["a"], dtype=float),
                "b": float(bar["b"])}
    if kind == "quadratic":
        W = np.atleast_2d(np.asarray(bar["W"], dtype=float))
        x_c = np.asarray(bar.get("x_c") or np.zeros(W.shape[0]), dtype=float)
        return {"kind": "quadratic", "c0": float(bar["c0"]), "W": W, "x_c": x_c}
    return {"kind": kind}
