"""Command-line front end.

Commands
    run       simulate N closed-loop trials -> summary.json + trials.csv (+ traj.csv)
    bound     evaluate the certificate only -> summary.json (no simulation)
    sweep     Monte Carlo over an (alpha, k_J) grid -> sweep.csv + summary.json
    grid      Monte Carlo over an initial-state lattice -> grid.csv + summary.json
    validate  parse and schema-check a scenario, no execution

Exit codes: 0 success, 2 configuration error, 3 numeric failure. All floats
in artifacts carry 17 significant digits so runs are reproducible from the
files alone.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from .bounds import BoundResult
from .config import apply_overrides, load_scenario, scenario_from_doc, serialize_doc
from .errors import ConfigurationError, NumericError
from .montecarlo import (
    CompiledScenario,
    MCSummary,
    TrialResult,
    compile_scenario,
    grid_initial_states,
    run_batch,
    run_trial,
    sweep_params,
)

_FMT = ".17g"


def _f(x: float) -> str:
    return format(float(x), _FMT)


class _Encoder17(json.JSONEncoder):
    """JSON encoder emitting floats with 17 significant digits."""

    def iterencode(self, o, _one_shot=False):
        markers = {} if self.check_circular else None
        indent = self.indent
        if indent is not None and not isinstance(indent, str):
            indent = " " * indent

        def floatstr(x):
            if not math.isfinite(x):
                return "NaN" if math.isnan(x) else ("Infinity" if x > 0 else "-Infinity")
            return format(x, _FMT)

        return json.encoder._make_iterencode(
            markers, self.default, json.encoder.encode_basestring_ascii,
            indent, floatstr, self.key_separator, self.item_separator,
            self.sort_keys, self.skipkeys, _one_shot,
        )(o, 0)


def _theory_dict(theory: BoundResult) -> dict:
    return {
        "p_exit_raw": theory.p_exit_raw,
        "p_exit": theory.p_exit,
        "p_safe_lower": theory.p_safe_lower,
        "branch": theory.branch.value,
        "vacuous": theory.vacuous,
    }


def _resolved_dict(comp: CompiledScenario) -> dict:
    scn = comp.scn
    return {
        "mode": scn.params.mode.value,
        "alpha": scn.params.alpha,
        "sigma": scn.params.sigma,
        "k_J": scn.params.k_J,
        "cj_abs": scn.params.cj_abs,
        "gamma_mode": scn.gamma_mode,
        "gamma": comp.gamma,
        "h_gamma": comp.h_gamma,
        "M": comp.M,
        "lambda_max": comp.lambda_max,
        "cj_max": comp.cj_max.tolist(),
        "cj": comp.cj.tolist(),
        "delta": comp.delta.tolist(),
        "delta_min": comp.delta_min,
        "horizon": scn.T,
        "x0": scn.x0.tolist(),
        "xhat0": (scn.x0 if scn.xhat0 is None else scn.xhat0).tolist(),
    }


def _summary_dict(summary: MCSummary) -> dict:
    return {
        "trials": summary.trials,
        "n_safe": summary.n_safe,
        "p_safe_hat": summary.p_safe_hat,
        "wilson_ci95": list(summary.wilson_ci95),
        "exit_step_histogram": {str(k): v for k, v in summary.exit_step_histogram.items()},
        "mean_solve_time": summary.mean_solve_time,
        "p95_solve_time": summary.p95_solve_time,
        "max_solve_time": summary.max_solve_time,
        "p_safe_theory": summary.p_safe_theory,
        "rng_transform": summary.rng_transform,
    }


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, cls=_Encoder17) + "\n")


def _write_trials_csv(path: Path, results: list[TrialResult]) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["trial_id", "seed", "safe", "min_h", "exit_step",
             "infeasible_steps", "mean_solve_ms"]
        )
        for r in results:
            writer.writerow([
                r.trial_id,
                r.seed,
                int(r.safe),
                _f(r.min_h),
                "" if r.exit_step is None else r.exit_step,
                r.infeasible_steps,
                _f(r.mean_solve_time * 1e3),
            ])


def _write_traj_csv(path: Path, comp: CompiledScenario, master_seed: int, N: int) -> None:
    scn = comp.scn
    n, m = scn.sys.n, scn.sys.m
    header = (
        ["trial", "k"]
        + [f"x{i + 1}" for i in range(n)]
        + [f"xh{i + 1}" for i in range(n)]
        + [f"u{i + 1}" for i in range(m)]
        + ["h", "h_hat"]
    )
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for trial in range(N):
            _, log = run_trial(comp, master_seed, trial, log=True)
            for k in range(scn.T + 1):
                u = [_f(v) for v in log.u[k]] if k < scn.T else [""] * m
                writer.writerow(
                    [trial, k]
                    + [_f(v) for v in log.x[k]]
                    + [_f(v) for v in log.xhat[k]]
                    + u
                    + [_f(log.h[k]), _f(log.h_hat[k])]
                )


def _parse_floats(text: str, flag: str) -> list[float]:
    try:
        values = [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError as exc:
        raise ConfigurationError(f"{flag}: {exc}") from exc
    if not values:
        raise ConfigurationError(f"{flag} must list at least one value")
    return values


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="safeloop",
        description="Output-feedback safety filters with certified safety bounds.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        src = p.add_mutually_exclusive_group(required=True)
        src.add_argument("--preset", help="built-in scenario name")
        src.add_argument("--config", help="path to a scenario file")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="SECTION.KEY=VALUE", help="override a config entry")
        p.add_argument("--out", default=".", help="artifact output directory")
        p.add_argument("--trials", type=int, help="number of Monte Carlo trials")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--workers", type=int, default=1, help="parallel trial workers")

    p_run = sub.add_parser("run", help="simulate closed-loop trials")
    common(p_run)
    p_run.add_argument("--log-traj", action="store_true",
                       help="also write per-step trajectories to traj.csv")

    p_bound = sub.add_parser("bound", help="evaluate the certificate without simulating")
    common(p_bound)

    p_sweep = sub.add_parser("sweep", help="Monte Carlo over an (alpha, k_J) grid")
    common(p_sweep)
    p_sweep.add_argument("--alphas", help="comma-separated alpha values (default: preset alpha)")
    p_sweep.add_argument("--kjs", help="comma-separated k_J values (default: preset k_J)")

    p_grid = sub.add_parser("grid", help="Monte Carlo over an initial-state lattice")
    common(p_grid)
    p_grid.add_argument("--grid-lo", help="comma-separated lower corner (default: preset x0)")
    p_grid.add_argument("--grid-hi", help="comma-separated upper corner")
    p_grid.add_argument("--grid-n", type=int, default=15, help="lattice points per axis")

    p_val = sub.add_parser("validate", help="parse and schema-check a scenario")
    common(p_val)
    return parser


def _load(args) -> tuple:
    scn, doc = load_scenario(preset_name=args.preset, path=args.config)
    if args.overrides:
        doc = apply_overrides(doc, args.overrides)
        scn = scenario_from_doc(doc)
    run_cfg = doc.get("run", {})
    trials = args.trials if args.trials is not None else int(run_cfg.get("trials", 100))
    seed = args.seed if args.seed is not None else int(run_cfg.get("master_seed", 0))
    if trials < 1:
        raise ConfigurationError("--trials must be >= 1")
    return scn, doc, trials, seed


def _base_payload(args, doc: dict, comp: CompiledScenario) -> dict:
    return {
        "command": args.command,
        "scenario": doc,
        "resolved": _resolved_dict(comp),
        "theory": _theory_dict(comp.theory),
    }


def _cmd_run(args) -> int:
    scn, doc, trials, seed = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    comp = compile_scenario(scn)
    summary, results = run_batch(comp, trials, seed, workers=args.workers,
                                 return_results=True)
    payload = _base_payload(args, doc, comp)
    payload["master_seed"] = seed
    payload["summary"] = _summary_dict(summary)
    _write_json(out / "summary.json", payload)
    _write_trials_csv(out / "trials.csv", results)
    log_traj = args.log_traj or bool(doc.get("run", {}).get("log_trajectories", False))
    if log_traj:
        _write_traj_csv(out / "traj.csv", comp, seed, trials)
    print(f"p_safe_hat={summary.p_safe_hat:.4f} "
          f"ci95=[{summary.wilson_ci95[0]:.4f}, {summary.wilson_ci95[1]:.4f}] "
          f"p_safe_theory={summary.p_safe_theory:.4f} "
          f"({summary.n_safe}/{summary.trials} safe)")
    return 0


def _cmd_bound(args) -> int:
    scn, doc, _, _ = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    comp = compile_scenario(scn)
    _write_json(out / "summary.json", _base_payload(args, doc, comp))
    th = comp.theory
    print(f"p_safe_lower={th.p_safe_lower:.4f} p_exit_raw={th.p_exit_raw:.4f} "
          f"branch={th.branch.value} vacuous={th.vacuous}")
    return 0


def _cmd_sweep(args) -> int:
    scn, doc, trials, seed = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    alphas = (_parse_floats(args.alphas, "--alphas")
              if args.alphas else [scn.params.alpha])
    if args.kjs:
        kjs = _parse_floats(args.kjs, "--kjs")
    elif scn.params.k_J is not None:
        kjs = [scn.params.k_J]
    else:
        raise ConfigurationError("--kjs is required when the scenario uses cj_abs")
    rows = sweep_params(scn, alphas, kjs, trials, seed, workers=args.workers)
    with (out / "sweep.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["alpha", "k_J", "trials", "n_safe", "p_hat",
                         "ci_lo", "ci_hi", "p_theory"])
        for row in rows:
            s: MCSummary = row["summary"]
            writer.writerow([
                _f(row["alpha"]), _f(row["k_J"]), s.trials, s.n_safe,
                _f(s.p_safe_hat), _f(s.wilson_ci95[0]), _f(s.wilson_ci95[1]),
                _f(s.p_safe_theory),
            ])
    comp = compile_scenario(scn)
    payload = _base_payload(args, doc, comp)
    payload["master_seed"] = seed
    payload["sweep"] = {"alphas": alphas, "k_J": kjs, "trials_per_point": trials}
    _write_json(out / "summary.json", payload)
    for row in rows:
        s = row["summary"]
        print(f"alpha={row['alpha']:g} k_J={row['k_J']:g} "
              f"p_hat={s.p_safe_hat:.4f} p_theory={s.p_safe_theory:.4f}")
    return 0


def _cmd_grid(args) -> int:
    scn, doc, trials, seed = _load(args)
    if scn.sys.n != 2:
        raise ConfigurationError("the grid command supports two-dimensional states only")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if (args.grid_lo is None) != (args.grid_hi is None):
        raise ConfigurationError("--grid-lo and --grid-hi must be given together")
    if args.grid_lo is not None:
        lo = _parse_floats(args.grid_lo, "--grid-lo")
        hi = _parse_floats(args.grid_hi, "--grid-hi")
        if len(lo) != 2 or len(hi) != 2:
            raise ConfigurationError("--grid-lo/--grid-hi need exactly two components")
    else:
        lim = math.pi / 6.0
        lo, hi = [-lim, -lim], [lim, lim]
    if args.grid_n < 1:
        raise ConfigurationError("--grid-n must be >= 1")
    axes = [np.linspace(lo[i], hi[i], args.grid_n) for i in range(2)]
    lattice = [np.array([a, b]) for a in axes[0] for b in axes[1]]
    rows = grid_initial_states(scn, lattice, trials, seed, workers=args.workers)
    with (out / "grid.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x0_1", "x0_2", "p_hat", "p_theory", "vacuous"])
        for row in rows:
            writer.writerow([
                _f(row["x0"][0]), _f(row["x0"][1]),
                _f(row["p_hat"]), _f(row["p_theory"]),
                int(row["vacuous"]),
            ])
    comp = compile_scenario(scn)
    payload = _base_payload(args, doc, comp)
    payload["master_seed"] = seed
    payload["grid"] = {"lo": lo, "hi": hi, "points_per_axis": args.grid_n,
                       "trials_per_cell": trials}
    _write_json(out / "summary.json", payload)
    n_vac = sum(r["vacuous"] for r in rows)
    print(f"{len(rows)} cells ({n_vac} vacuous), {trials} trials each")
    return 0


def _cmd_validate(args) -> int:
    scn, doc, _, _ = _load(args)
    # round-trip check: serialization must reproduce an equivalent scenario
    import tempfile

    from .config import parse_config

    with tempfile.NamedTemporaryFile("w", suffix=".toml", delete=False) as fh:
        fh.write(serialize_doc(doc))
        tmp = fh.name
    parse_config(tmp)
    Path(tmp).unlink()
    print(f"ok: n={scn.sys.n} m={scn.sys.m} n_y={scn.sys.n_y} T={scn.T} "
          f"mode={scn.params.mode.value}")
    return 0


_COMMANDS = {
    "run": _cmd_run,
    "bound": _cmd_bound,
    "sweep": _cmd_sweep,
    "grid": _cmd_grid,
    "validate": _cmd_validate,
}


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (NumericError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
