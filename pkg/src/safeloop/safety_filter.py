"""Minimally invasive safe-control step.

Per step the filter solves

    min ||u - u_nom||^2   s.t.   hhat(A xhat + B u) - c_J >= alpha * hhat(xhat)

in closed form for half-space barriers (projection onto a half-space of the
input space) and via a single-constraint QCQP for concave quadratics
(Lagrange-multiplier bisection). State-feedback mode swaps xhat -> x and
drops the h_gamma shift.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .barrier import (
    Barrier,
    ConcaveQuadratic,
    GenericHook,
    HalfSpace,
    ShiftedBarrier,
    eval_h,
    grad_h,
)
from .errors import ConfigurationError


class FeedbackMode(str, Enum):
    OUTPUT = "output"
    STATE = "state"


class InfeasiblePolicy(str, Enum):
    LEAST_VIOLATION = "least_violation"
    NOMINAL = "nominal"


@dataclass
class SafetyParams:
    """Tuning knobs of the safety filter."""

    alpha: float
    k_J: float | None = None          # fraction of c_J^max
    cj_abs: float | None = None       # absolute c_J (clamped to [0, c_J^max])
    sigma: float = 0.05
    mode: FeedbackMode = FeedbackMode.OUTPUT
    infeasible_policy: InfeasiblePolicy = InfeasiblePolicy.LEAST_VIOLATION
    input_box: float = 1e6            # numerical guard for least-violation fallback

    def __post_init__(self):
        self.mode = FeedbackMode(self.mode)
        self.infeasible_policy = InfeasiblePolicy(self.infeasible_policy)
        if not 0.0 < self.alpha < 1.0:
            raise ConfigurationError("alpha must lie in (0, 1)")
        if (self.k_J is None) == (self.cj_abs is None):
            raise ConfigurationError("specify exactly one of k_J and cj_abs")
        if self.k_J is not None and not 0.0 <= self.k_J <= 1.0:
            raise ConfigurationError("k_J must lie in [0, 1]")
        if self.cj_abs is not None and self.cj_abs < 0:
            raise ConfigurationError("cj_abs must be >= 0")


@dataclass
class FilterStepResult:
    u_star: np.ndarray
    feasible: bool
    constraint_slack: float
    solve_time: float
    certified: bool = True


def compute_cj_max(M, h_gamma, alpha, lambda_max, K_k, R_k, C_k, P_k) -> float:
    """Theorem ceiling for the output-feedback tightening constant:

    (M - h_gamma)(1 - alpha) + (lambda_max/2) tr(K R K') +
    (lambda_max/2) tr(K C P C' K')
    """
    if M <= h_gamma:
        raise ConfigurationError(
            f"M={M} <= h_gamma={h_gamma}: the safe set is swallowed by the "
            "estimation margin; increase M or reduce gamma/sigma"
        )
    if not 0.0 < alpha < 1.0:
        raise ConfigurationError("alpha must lie in (0, 1)")
    K_k = np.atleast_2d(np.asarray(K_k, dtype=float))
    R_k = np.atleast_2d(np.asarray(R_k, dtype=float))
    C_k = np.atleast_2d(np.asarray(C_k, dtype=float))
    P_k = np.atleast_2d(np.asarray(P_k, dtype=float))
    corr = 0.5 * lambda_max * (
        np.trace(K_k @ R_k @ K_k.T) + np.trace(K_k @ C_k @ P_k @ C_k.T @ K_k.T)
    )
    return float((M - h_gamma) * (1.0 - alpha) + corr)


def compute_cj_max_state(M, alpha, lambda_max, Q_k) -> float:
    """State-feedback ceiling: (lambda_max/2) tr(Q) + M (1 - alpha)."""
    if not 0.0 < alpha < 1.0:
        raise ConfigurationError("alpha must lie in (0, 1)")
    Q_k = np.atleast_2d(np.asarray(Q_k, dtype=float))
    return float(0.5 * lambda_max * np.trace(Q_k) + M * (1.0 - alpha))


def compute_delta_prime(cj, lambda_max, K_k, R_k, C_k, P_k) -> float:
    """Expectation margin at its ceiling:

    delta' = c_J - (lambda_max/2) tr(K R K') - (lambda_max/2) tr(K C P C' K')

    Taking equality gives the tightest admissible exit bound. May be negative.
    """
    if cj < 0:
        raise ConfigurationError("c_J must be >= 0")
    K_k = np.atleast_2d(np.asarray(K_k, dtype=float))
    R_k = np.atleast_2d(np.asarray(R_k, dtype=float))
    C_k = np.atleast_2d(np.asarray(C_k, dtype=float))
    P_k = np.atleast_2d(np.asarray(P_k, dtype=float))
    corr = 0.5 * lambda_max * (
        np.trace(K_k @ R_k @ K_k.T) + np.trace(K_k @ C_k @ P_k @ C_k.T @ K_k.T)
    )
    return float(cj - corr)


def compute_delta_state(cj, lambda_max, Q_k) -> float:
    """State-feedback margin: delta = c_J - (lambda_max/2) tr(Q)."""
    Q_k = np.atleast_2d(np.asarray(Q_k, dtype=float))
    return float(cj - 0.5 * lambda_max * np.trace(Q_k))


def resolve_cj(params: SafetyParams, cj_max: float, warn=None) -> float:
    """Resolve the tightening constant: fractional k_J * c_J^max, or an
    absolute value clamped to [0, c_J^max]."""
    if cj_max < 0:
        raise ConfigurationError("c_J^max must be >= 0")
    if params.k_J is not None:
        return float(params.k_J * cj_max)
    cj = float(params.cj_abs)
    if cj > cj_max:
        if warn is not None:
            warn(f"c_J={cj} exceeds c_J^max={cj_max}; clamping")
        cj = cj_max
    return cj


def constraint_slack(sb: ShiftedBarrier, mode: FeedbackMode, cj, alpha, A_k, B_k, x, u) -> float:
    """Slack of the barrier constraint at (x, u); feasible iff >= 0."""
    x = np.asarray(x, dtype=float).ravel()
    u = np.asarray(u, dtype=float).ravel()
    x_next = A_k @ x + B_k @ u
    shift = sb.h_gamma if mode == FeedbackMode.OUTPUT else 0.0
    h_next = eval_h(sb.base, x_next) - shift
    h_now = eval_h(sb.base, x) - shift
    return float(h_next - cj - alpha * h_now)


def _solve_halfspace(bar, shift, cj, alpha, A_k, B_k, x, u_nom, policy, input_box):
    a, b = bar.a, bar.b - shift
    g = B_k.T @ a  # constraint gradient in input space
    rhs = alpha * (a @ x + b) + cj - b - a @ (A_k @ x)
    gu = g @ u_nom
    if gu >= rhs:
        return u_nom.copy(), True, float(gu - rhs)
    gg = float(g @ g)
    if gg > 0.0:
        u = u_nom + ((rhs - gu) / gg) * g
        return u, True, 0.0
    # a'B = 0 with positive required slack: no input helps
    if policy == InfeasiblePolicy.NOMINAL:
        return u_nom.copy(), False, float(gu - rhs)
    u = np.clip(u_nom, -input_box, input_box)
    return u, False, float(g @ u - rhs)


def _solve_quadratic(bar, shift, cj, alpha, A_k, B_k, x, u_nom, policy, input_box):
    W, c0, x_c = bar.W, bar.c0, bar.x_c
    s = A_k @ x - x_c
    h_now = c0 - float((x - x_c) @ W @ (x - x_c)) - shift
    r = c0 - shift - cj - alpha * h_now
    BtW = B_k.T @ W
    BtWB = BtW @ B_k
    BtWs = BtW @ s

    def resid(u):
        z = s + B_k @ u
        return float(z @ W @ z) - r

    if r < 0.0:
        # constraint set empty
        if policy == InfeasiblePolicy.NOMINAL:
            u = u_nom.copy()
        else:
            # least violation: minimize z'Wz, minimal-norm shift from u_nom
            d, *_ = np.linalg.lstsq(BtWB, -(BtWs + BtWB @ u_nom), rcond=None)
            u = u_nom + d
        return u, False, -resid(u)

    r0 = resid(u_nom)
    if r0 <= 0.0:
        return u_nom.copy(), True, -r0

    m = u_nom.size
    eye = np.eye(m)

    def u_of_mu(mu):
        return np.linalg.solve(eye + mu * BtWB, u_nom - mu * BtWs)

    # double mu until the constraint is met, then bisect on the residual
    mu_hi = 1.0
    for _ in range(200):
        if resid(u_of_mu(mu_hi)) <= 0.0:
            break
        mu_hi *= 2.0
    else:
        # residual never reaches r: the reachable minimum of z'Wz exceeds r
        if policy == InfeasiblePolicy.NOMINAL:
            u = u_nom.copy()
        else:
            u = u_of_mu(mu_hi)
        return u, False, -resid(u)
    mu_lo = 0.0
    for _ in range(200):
        mu = 0.5 * (mu_lo + mu_hi)
        res = resid(u_of_mu(mu))
        if res > 0.0:
            mu_lo = mu
        else:
            mu_hi = mu
        if abs(res) < 1e-10:
            break
    u = u_of_mu(mu_hi)  # mu_hi side is always feasible
    return u, True, -resid(u)


def _solve_generic(bar, shift, cj, alpha, A_k, B_k, x, u_nom, policy, input_box):
    # Sequential linearization of the constraint around the current iterate;
    # best effort, not certified.
    u = u_nom.copy()
    h_now = eval_h(bar, x) - shift
    for _ in range(50):
        x_next = A_k @ x + B_k @ u
        h_next = eval_h(bar, x_next) - shift
        slack = h_next - cj - alpha * h_now
        if slack >= -1e-10:
            break
        g = B_k.T @ grad_h(bar, x_next)
        gg = float(g @ g)
        if gg <= 1e-16:
            break
        u = u + (-slack / gg) * g
    x_next = A_k @ x + B_k @ u
    slack = eval_h(bar, x_next) - shift - cj - alpha * h_now
    feasible = slack >= -1e-8
    if not feasible and policy == InfeasiblePolicy.NOMINAL:
        u = u_nom.copy()
        x_next = A_k @ x + B_k @ u
        slack = eval_h(bar, x_next) - shift - cj - alpha * h_now
    return np.clip(u, -input_box, input_box), feasible, float(slack)


def solve_safe_input(
    sb: ShiftedBarrier,
    params: SafetyParams,
    cj: float,
    A_k,
    B_k,
    xhat,
    u_nom,
) -> FilterStepResult:
    """Project the nominal input onto the barrier constraint set.

    In output-feedback mode the constraint uses hhat at the estimate; in
    state-feedback mode it uses h at the true state (no h_gamma shift).
    """
    t0 = time.perf_counter()
    A_k = np.atleast_2d(np.asarray(A_k, dtype=float))
    B_k = np.atleast_2d(np.asarray(B_k, dtype=float))
    x = np.asarray(xhat, dtype=float).ravel()
    u_nom = np.asarray(u_nom, dtype=float).ravel()
    shift = sb.h_gamma if params.mode == FeedbackMode.OUTPUT else 0.0
    bar = sb.base
    certified = True
    if isinstance(bar, HalfSpace):
        u, feasible, slack = _solve_halfspace(
            bar, shift, cj, params.alpha, A_k, B_k, x, u_nom,
            params.infeasible_policy, params.input_box,
        )
    elif isinstance(bar, ConcaveQuadratic):
        u, feasible, slack = _solve_quadratic(
            bar, shift, cj, params.alpha, A_k, B_k, x, u_nom,
            params.infeasible_policy, params.input_box,
        )
    elif isinstance(bar, GenericHook):
        certified = False
        u, feasible, slack = _solve_generic(
            bar, shift, cj, params.alpha, A_k, B_k, x, u_nom,
            params.infeasible_policy, params.input_box,
        )
    else:
        raise ConfigurationError(f"unsupported barrier type {type(bar).__name__}")
    return FilterStepResult(
        u_star=u,
        feasible=feasible,
        constraint_slack=slack,
        solve_time=time.perf_counter() - t0,
        certified=certified,
    )
