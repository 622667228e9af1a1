"""Seeded closed-loop Monte Carlo engine.

Each trial simulates plant + Kalman predictor + safety filter. All noise is
drawn from counter-based Philox streams keyed by
(master_seed, trial_index) with the counter set per (step, channel), so the
result is a pure function of (scenario, master_seed, N) regardless of how
trials are scheduled across workers. Gaussian draws use numpy's ziggurat
(``standard_normal``); the transform is recorded in the summary metadata.

Safety is judged on the TRUE state h(x_k) even though control only sees the
estimate; both traces are logged when requested.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .barrier import (
    Barrier,
    ShiftedBarrier,
    compute_gamma,
    compute_gamma_mc,
    compute_h_gamma,
    eval_h,
    eval_h_hat,
    hessian_bound,
    upper_bound_M,
)
from .bounds import BoundInput, BoundResult, exit_bound
from .errors import ConfigurationError
from .safety_filter import (
    FeedbackMode,
    SafetyParams,
    compute_cj_max,
    compute_cj_max_state,
    compute_delta_prime,
    compute_delta_state,
    resolve_cj,
    solve_safe_input,
)
from .system import (
    FilterSchedule,
    LinearSystem,
    NominalController,
    build_filter_schedule,
)

RNG_TRANSFORM = "philox4x64/ziggurat-standard-normal"

_CHANNEL_PROCESS = 0
_CHANNEL_MEASUREMENT = 1


@dataclass
class Scenario:
    """Everything needed to run one closed-loop experiment."""

    sys: LinearSystem
    barrier: Barrier
    nominal: NominalController
    params: SafetyParams
    x0: np.ndarray
    P0: np.ndarray
    T: int
    fallback_M: float | None = None
    xhat0: np.ndarray | None = None          # defaults to x0
    gamma_mode: str = "montecarlo"           # montecarlo | analytic | fixed
    gamma_draws: int = 10_000
    gamma_seed: int = 0
    gamma_abs: float | None = None           # radius used when gamma_mode == "fixed"

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float).ravel()
        self.P0 = np.atleast_2d(np.asarray(self.P0, dtype=float))
        if self.xhat0 is not None:
            self.xhat0 = np.asarray(self.xhat0, dtype=float).ravel()
        if self.T < 1:
            raise ConfigurationError("horizon T must be >= 1")
        if self.gamma_mode not in ("montecarlo", "analytic", "fixed"):
            raise ConfigurationError("gamma_mode must be 'montecarlo', 'analytic', or 'fixed'")
        if self.gamma_mode == "fixed" and (self.gamma_abs is None or self.gamma_abs < 0):
            raise ConfigurationError("gamma_mode='fixed' requires gamma_abs >= 0")
        if self.x0.size != self.sys.n:
            raise ConfigurationError(
                f"x0 has dimension {self.x0.size}, system has n={self.sys.n}"
            )


@dataclass
class TrialResult:
    trial_id: int
    seed: int
    safe: bool
    min_h: float
    exit_step: int | None
    infeasible_steps: int
    mean_solve_time: float


@dataclass
class TrialLog:
    x: np.ndarray      # (T+1, n)
    xhat: np.ndarray   # (T+1, n)
    u: np.ndarray      # (T, m)
    y: np.ndarray      # (T, n_y)
    h: np.ndarray      # (T+1,)
    h_hat: np.ndarray  # (T+1,) evaluated at xhat


@dataclass
class MCSummary:
    trials: int
    n_safe: int
    p_safe_hat: float
    wilson_ci95: tuple[float, float]
    exit_step_histogram: dict[int, int]
    mean_solve_time: float
    p95_solve_time: float
    max_solve_time: float
    p_safe_theory: float
    theory: BoundResult
    rng_transform: str = RNG_TRANSFORM


@dataclass
class CompiledScenario:
    """Scenario with all data-independent quantities precomputed."""

    scn: Scenario
    sched: FilterSchedule
    sb: ShiftedBarrier
    lambda_max: float
    M: float
    gamma: float
    h_gamma: float
    cj: np.ndarray          # (T,) tightening constant per step
    cj_max: np.ndarray      # (T,)
    delta: np.ndarray       # (T,) expectation margin per step
    delta_min: float
    theory: BoundResult = field(default=None)
    # per-step matrix caches
    A: np.ndarray = field(default=None)
    B: np.ndarray = field(default=None)
    C: np.ndarray = field(default=None)
    Lq: np.ndarray = field(default=None)    # (T, n, n) sqrt factors of Q_k
    Lr: np.ndarray = field(default=None)    # (T, n_y, n_y) sqrt factors of R_k


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    eigs, vecs = np.linalg.eigh(mat)
    return vecs * np.sqrt(np.clip(eigs, 0.0, None))


def compile_scenario(scn: Scenario) -> CompiledScenario:
    """Precompute the filter schedule, error radius, barrier shift, per-step
    tightening constants and the theoretical certificate."""
    sys, params, T = scn.sys, scn.params, scn.T
    sched = build_filter_schedule(sys, scn.P0, T)
    lambda_max = hessian_bound(scn.barrier)
    M = upper_bound_M(scn.barrier, scn.fallback_M)

    if params.mode == FeedbackMode.OUTPUT:
        if scn.gamma_mode == "analytic":
            gamma = compute_gamma(sched, params.sigma, T)
        elif scn.gamma_mode == "fixed":
            gamma = float(scn.gamma_abs)
        else:
            gamma = compute_gamma_mc(
                sched, params.sigma, T, n_draws=scn.gamma_draws, seed=scn.gamma_seed
            )
        h_gamma = compute_h_gamma(scn.barrier, gamma)
        sigma = params.sigma
    else:
        gamma, h_gamma, sigma = 0.0, 0.0, 0.0
    sb = ShiftedBarrier(base=scn.barrier, gamma=gamma, h_gamma=h_gamma, sigma=sigma)

    cj = np.empty(T)
    cj_max = np.empty(T)
    delta = np.empty(T)
    for k in range(T):
        if params.mode == FeedbackMode.OUTPUT:
            cmax = compute_cj_max(
                M, h_gamma, params.alpha, lambda_max,
                sched.K[k], sys.R(k), sys.C(k), sched.P[k],
            )
            c = resolve_cj(params, cmax)
            d = compute_delta_prime(
                c, lambda_max, sched.K[k], sys.R(k), sys.C(k), sched.P[k]
            )
        else:
            cmax = compute_cj_max_state(M, params.alpha, lambda_max, sys.Q(k))
            c = resolve_cj(params, cmax)
            d = compute_delta_state(c, lambda_max, sys.Q(k))
        cj_max[k], cj[k], delta[k] = cmax, c, d
    # one delta enters the certificate; the worst step is the valid choice
    delta_min = float(delta.min())

    xhat0 = scn.x0 if scn.xhat0 is None else scn.xhat0
    if params.mode == FeedbackMode.OUTPUT:
        h0_eff = eval_h_hat(sb, xhat0)
    else:
        h0_eff = eval_h(scn.barrier, scn.x0)
    theory = exit_bound(BoundInput(
        M_eff=M - h_gamma,
        h0_eff=min(h0_eff, M - h_gamma),
        alpha=params.alpha,
        delta=min(delta_min, (M - h_gamma) * (1.0 - params.alpha)),
        horizon=T,
        sigma=sigma,
    ))

    A = np.stack([sys.A(k) for k in range(T)])
    B = np.stack([sys.B(k) for k in range(T)])
    C = np.stack([sys.C(k) for k in range(T)])
    Lq = np.stack([_psd_sqrt(sys.Q(k)) for k in range(T)])
    Lr = np.stack([_psd_sqrt(sys.R(k)) for k in range(T)])
    return CompiledScenario(
        scn=scn, sched=sched, sb=sb, lambda_max=lambda_max, M=M,
        gamma=gamma, h_gamma=h_gamma, cj=cj, cj_max=cj_max,
        delta=delta, delta_min=delta_min, theory=theory,
        A=A, B=B, C=C, Lq=Lq, Lr=Lr,
    )


def _stream_normal(master_seed: int, trial: int, step: int, channel: int, size: int) -> np.ndarray:
    """Counter-based Gaussian stream for one (trial, step, channel) slot."""
    bits = np.random.Philox(
        counter=[step, channel, 0, 0],
        key=[master_seed & 0xFFFFFFFFFFFFFFFF, trial],
    )
    return np.random.Generator(bits).standard_normal(size)


def trial_seed(master_seed: int, trial: int) -> int:
    """64-bit per-trial stream identifier recorded in outputs."""
    return int(np.random.SeedSequence((master_seed, trial)).generate_state(1, np.uint64)[0])


def run_trial(
    comp: CompiledScenario,
    master_seed: int,
    trial: int,
    log: bool = False,
) -> TrialResult | tuple[TrialResult, TrialLog]:
    """Simulate one closed-loop trial; bit-deterministic for fixed
    (scenario, master_seed, trial)."""
    scn = comp.scn
    sys, params, T = scn.sys, scn.params, scn.T
    n, m, n_y = sys.n, sys.m, sys.n_y
    sched, sb = comp.sched, comp.sb
    A, B, C, K = comp.A, comp.B, comp.C, sched.K
    state_mode = params.mode == FeedbackMode.STATE

    x = scn.x0.copy()
    xhat = (scn.x0 if scn.xhat0 is None else scn.xhat0).copy()
    min_h = eval_h(sb.base, x)
    exit_step = 0 if min_h < 0 else None
    infeasible = 0
    solve_total = 0.0

    if log:
        xs = np.empty((T + 1, n)); xhats = np.empty((T + 1, n))
        us = np.empty((T, m)); ys = np.empty((T, n_y))
        hs = np.empty(T + 1); hhats = np.empty(T + 1)
        xs[0], xhats[0] = x, xhat
        hs[0] = min_h
        hhats[0] = eval_h_hat(sb, xhat)

    for k in range(T):
        x_ctrl = x if state_mode else xhat
        u_nom = scn.nominal(x_ctrl)
        res = solve_safe_input(sb, params, comp.cj[k], A[k], B[k], x_ctrl, u_nom)
        solve_total += res.solve_time
        if not res.feasible:
            infeasible += 1
        u = res.u_star

        w = comp.Lq[k] @ _stream_normal(master_seed, trial, k, _CHANNEL_PROCESS, n)
        v = comp.Lr[k] @ _stream_normal(master_seed, trial, k, _CHANNEL_MEASUREMENT, n_y)
        y = C[k] @ x + v
        x_next = A[k] @ x + B[k] @ u + w
        xhat = A[k] @ xhat + B[k] @ u + K[k] @ (y - C[k] @ xhat)
        x = x_next

        h_k = eval_h(sb.base, x)
        if h_k < min_h:
            min_h = h_k
        if h_k < 0 and exit_step is None:
            exit_step = k + 1
        if log:
            us[k], ys[k] = u, y
            xs[k + 1], xhats[k + 1] = x, xhat
            hs[k + 1] = h_k
            hhats[k + 1] = eval_h_hat(sb, xhat)

    result = TrialResult(
        trial_id=trial,
        seed=trial_seed(master_seed, trial),
        safe=exit_step is None,
        min_h=float(min_h),
        exit_step=exit_step,
        infeasible_steps=infeasible,
        mean_solve_time=solve_total / T,
    )
    if log:
        return result, TrialLog(x=xs, xhat=xhats, u=us, y=ys, h=hs, h_hat=hhats)
    return result


def _run_chunk(comp: CompiledScenario, master_seed: int, indices: list[int]):
    return [run_trial(comp, master_seed, i) for i in indices]


def wilson_ci(successes: int, n: int, z: float = 1.959963984540054) -> tuple[float, float]:
    """Wilson 95% score interval for a binomial proportion."""
    if n == 0:
        return (0.0, 1.0)
    phat = successes / n
    denom = 1.0 + z * z / n
    center = (phat + z * z / (2 * n)) / denom
    half = (z / denom) * math.sqrt(phat * (1 - phat) / n + z * z / (4 * n * n))
    return (max(0.0, center - half), min(1.0, center + half))


def summarize(results: list[TrialResult], theory: BoundResult) -> MCSummary:
    """Aggregate trial results in fixed trial-index order."""
    results = sorted(results, key=lambda r: r.trial_id)
    N = len(results)
    n_safe = sum(r.safe for r in results)
    p_hat = n_safe / N
    hist: dict[int, int] = {}
    for r in results:
        if r.exit_step is not None:
            hist[r.exit_step] = hist.get(r.exit_step, 0) + 1
    times = [r.mean_solve_time for r in results]
    return MCSummary(
        trials=N,
        n_safe=n_safe,
        p_safe_hat=p_hat,
        wilson_ci95=wilson_ci(n_safe, N),
        exit_step_histogram=dict(sorted(hist.items())),
        mean_solve_time=math.fsum(times) / N,
        p95_solve_time=float(np.percentile(times, 95)),
        max_solve_time=max(times),
        p_safe_theory=theory.p_safe_lower,
        theory=theory,
    )


def run_batch(
    scn: Scenario | CompiledScenario,
    N: int,
    master_seed: int,
    workers: int = 1,
    return_results: bool = False,
):
    """Run N independent trials and aggregate.

    The summary is identical for any worker count: per-trial streams are
    index-derived and aggregation is order-fixed.
    """
    if N < 1:
        raise ConfigurationError("N must be >= 1")
    comp = scn if isinstance(scn, CompiledScenario) else compile_scenario(scn)
    if workers <= 1:
        results = [run_trial(comp, master_seed, i) for i in range(N)]
    else:
        chunks = [list(range(N))[w::workers] for w in range(workers)]
        results = []
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for part in pool.map(_run_chunk, [comp] * workers, [master_seed] * workers, chunks):
                results.extend(part)
    summary = summarize(results, comp.theory)
    if return_results:
        return summary, sorted(results, key=lambda r: r.trial_id)
    return summary


def sweep_params(
    scn: Scenario,
    alphas: list[float],
    kjs: list[float],
    N: int,
    master_seed: int,
    workers: int = 1,
) -> list[dict]:
    """One MCSummary per (alpha, k_J) grid point; the filter schedule (which
    does not depend on alpha or k_J) is shared."""
    if not alphas or not kjs:
        raise ConfigurationError("sweep grid must be nonempty")
    rows = []
    from dataclasses import replace

    for alpha in alphas:
        for kj in kjs:
            params = replace(scn.params, alpha=alpha, k_J=kj, cj_abs=None)
            sub = replace(scn, params=params)
            summary = run_batch(compile_scenario(sub), N, master_seed, workers=workers)
            rows.append({
                "alpha": alpha,
                "k_J": kj,
                "summary": summary,
            })
    return rows


def grid_initial_states(
    scn: Scenario,
    x0_list: list[np.ndarray],
    N: int,
    master_seed: int,
    workers: int = 1,
) -> list[dict]:
    """Per initial state: theoretical certificate + empirical estimate.

    Cells whose shifted barrier value at xhat_0 is negative are flagged
    vacuous (the bound carries no information there). The schedule, error
    radius and barrier shift do not depend on x0 and are computed once.
    """
    base = compile_scenario(scn)
    rows = []
    for idx, x0 in enumerate(x0_list):
        x0 = np.asarray(x0, dtype=float).ravel()
        comp = retarget(base, x0)
        cell_seed = trial_seed(master_seed, idx)
        summary = run_batch(comp, N, cell_seed, workers=workers)
        rows.append({
            "x0": x0,
            "p_hat": summary.p_safe_hat,
            "p_theory": summary.p_safe_theory,
            "vacuous": comp.theory.vacuous,
            "summary": summary,
        })
    return rows


def retarget(comp: CompiledScenario, x0: np.ndarray) -> CompiledScenario:
    """Copy of a compiled scenario with a new initial state; only the
    certificate (which depends on x0 through h0_eff) is recomputed."""
    from dataclasses import replace

    scn = replace(comp.scn, x0=np.asarray(x0, dtype=float).ravel(), xhat0=None)
    params, M, h_gamma, sb = scn.params, comp.M, comp.h_gamma, comp.sb
    if params.mode == FeedbackMode.OUTPUT:
        h0_eff = eval_h_hat(sb, scn.x0)
    else:
        h0_eff = eval_h(scn.barrier, scn.x0)
    theory = exit_bound(BoundInput(
        M_eff=M - h_gamma,
        h0_eff=min(h0_eff, M - h_gamma),
        alpha=params.alpha,
        delta=min(comp.delta_min, (M - h_gamma) * (1.0 - params.alpha)),
        horizon=scn.T,
        sigma=sb.sigma,
    ))
    return replace(comp, scn=scn, theory=theory)
