"""Barrier function geometry.

A barrier h marks the safe set {x : h(x) >= 0}. Three variants:

* HalfSpace          h(x) = a'x + b
* ConcaveQuadratic   h(x) = c0 - (x - x_c)' W (x - x_c),  W PSD
* GenericHook        user callbacks with user-supplied curvature/upper bounds

The output-feedback machinery needs, on top of h itself:

* lambda_max  — a global bound on ||hess h||_2 (Jensen correction scale),
* M           — a global upper bound on h,
* gamma       — a radius covering the estimation error over the horizon
                with probability >= 1 - sigma,
* h_gamma     — the worst-case value of h over gamma-balls around the zero
                level set; subtracting it gives the estimate-based barrier
                hhat = h - h_gamma, whose positivity at xhat certifies the
                true state.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.stats import chi2

from .errors import ConfigurationError
from .system import FilterSchedule


@dataclass
class HalfSpace:
    """h(x) = a'x + b."""

    a: np.ndarray
    b: float

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=float).ravel()
        self.b = float(self.b)
        if not np.any(self.a):
            raise ConfigurationError("HalfSpace barrier requires a != 0")


@dataclass
class ConcaveQuadratic:
    """h(x) = c0 - (x - x_c)' W (x - x_c) with W symmetric PSD, c0 > 0."""

    c0: float
    W: np.ndarray
    x_c: np.ndarray | None = None

    def __post_init__(self):
        self.c0 = float(self.c0)
        self.W = np.atleast_2d(np.asarray(self.W, dtype=float))
        if self.x_c is None:
            self.x_c = np.zeros(self.W.shape[0])
        else:
            self.x_c = np.asarray(self.x_c, dtype=float).ravel()
        if self.c0 <= 0:
            raise ConfigurationError("ConcaveQuadratic requires c0 > 0")
        if not np.allclose(self.W, self.W.T, atol=1e-10):
            raise ConfigurationError("ConcaveQuadratic W must be symmetric")
        if np.linalg.eigvalsh(self.W).min() < -1e-12:
            raise ConfigurationError("ConcaveQuadratic W must be PSD")


@dataclass
class GenericHook:
    """User-supplied barrier: callbacks plus explicit curvature/upper bounds."""

    h: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray] | None = None
    hess: Callable[[np.ndarray], np.ndarray] | None = None
    lambda_max: float | None = None
    M: float | None = None

    def __post_init__(self):
        if self.lambda_max is not None and self.lambda_max < 0:
            raise ConfigurationError("GenericHook lambda_max must be >= 0")


Barrier = HalfSpace | ConcaveQuadratic | GenericHook


@dataclass
class ShiftedBarrier:
    """Estimate-based barrier hhat(x) = h(x) - h_gamma."""

    base: Barrier
    gamma: float
    h_gamma: float
    sigma: float

    def __post_init__(self):
        if self.gamma < 0:
            raise ConfigurationError("gamma must be >= 0")
        if not 0.0 <= self.sigma < 1.0:
            raise ConfigurationError("sigma must lie in [0, 1)")
        if self.h_gamma < -1e-12:
            raise ConfigurationError("h_gamma must be >= 0")


def eval_h(bar: Barrier, x) -> float:
    """Evaluate the barrier at a state."""
    x = np.asarray(x, dtype=float).ravel()
    if isinstance(bar, HalfSpace):
        return float(bar.a @ x + bar.b)
    if isinstance(bar, ConcaveQuadratic):
        d = x - bar.x_c
        return float(bar.c0 - d @ bar.W @ d)
    return float(bar.h(x))


def eval_h_batch(bar: Barrier, X: np.ndarray) -> np.ndarray:
    """Vectorized eval_h over rows of X (used by oracles and the simulator)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if isinstance(bar, HalfSpace):
        return X @ bar.a + bar.b
    if isinstance(bar, ConcaveQuadratic):
        D = X - bar.x_c
        return bar.c0 - np.einsum("ij,jk,ik->i", D, bar.W, D)
    return np.array([float(bar.h(row)) for row in X])


def grad_h(bar: Barrier, x) -> np.ndarray:
    x = np.asarray(x, dtype=float).ravel()
    if isinstance(bar, HalfSpace):
        return bar.a.copy()
    if isinstance(bar, ConcaveQuadratic):
        return -2.0 * bar.W @ (x - bar.x_c)
    if bar.grad is None:
        raise ConfigurationError("GenericHook barrier has no gradient callback")
    return np.asarray(bar.grad(x), dtype=float).ravel()


def hessian_bound(bar: Barrier) -> float:
    """Global bound on the spectral norm of the Hessian of h."""
    if isinstance(bar, HalfSpace):
        return 0.0
    if isinstance(bar, ConcaveQuadratic):
        return 2.0 * float(np.linalg.eigvalsh(bar.W).max())
    if bar.lambda_max is None:
        raise ConfigurationError("GenericHook barrier requires an explicit lambda_max")
    return float(bar.lambda_max)


def upper_bound_M(bar: Barrier, fallback_M: float | None = None) -> float:
    """Global upper bound on h.

    A half-space barrier is unbounded above, so the scenario must supply
    fallback_M (used only inside the c_J ceiling).
    """
    if isinstance(bar, ConcaveQuadratic):
        return bar.c0
    if isinstance(bar, HalfSpace):
        if fallback_M is None:
            raise ConfigurationError(
                "half-space barriers are unbounded above; set barrier.fallback_M "
                "in the scenario (it only enters the c_J ceiling)"
            )
        return float(fallback_M)
    if bar.M is None:
        raise ConfigurationError("GenericHook barrier requires an explicit M")
    return float(bar.M)


def compute_gamma(sched: FilterSchedule, sigma: float, K: int) -> float:
    """Analytic error radius: chi-square tail per step plus a union bound.

    gamma = max_k sqrt( chi2_n^{-1}(1 - sigma/(K+1)) * lambda_max(P_k) )
    guarantees P[sup_k ||x_k - xhat_k|| <= gamma] >= 1 - sigma under the
    Gaussian error model.
    """
    if not 0.0 < sigma < 1.0:
        raise ConfigurationError("sigma must lie in (0, 1)")
    if K + 1 > sched.P.shape[0]:
        raise ConfigurationError(f"schedule covers {sched.P.shape[0] - 1} steps, need {K}")
    n = sched.P.shape[1]
    q = chi2.ppf(1.0 - sigma / (K + 1), df=n)
    lam = max(float(np.linalg.eigvalsh(sched.P[k]).max()) for k in range(K + 1))
    return float(np.sqrt(q * max(lam, 0.0)))


def compute_gamma_mc(
    sched: FilterSchedule,
    sigma: float,
    K: int,
    n_draws: int = 10_000,
    seed: int = 0,
) -> float:
    """Monte Carlo error radius: empirical (1 - sigma) quantile of
    sup_k ||e_k|| with e_k ~ N(0, P_k) drawn independently per step.

    Less conservative than the analytic union bound; deterministic for a
    fixed seed.
    """
    if not 0.0 < sigma < 1.0:
        raise ConfigurationError("sigma must lie in (0, 1)")
    rng = np.random.Generator(np.random.Philox(key=seed))
    n = sched.P.shape[1]
    sup_norm = np.zeros(n_draws)
    for k in range(K + 1):
        eigs, vecs = np.linalg.eigh(sched.P[k])
        L = vecs * np.sqrt(np.clip(eigs, 0.0, None))
        e = rng.standard_normal((n_draws, n)) @ L.T
        sup_norm = np.maximum(sup_norm, np.linalg.norm(e, axis=1))
    return float(np.quantile(sup_norm, 1.0 - sigma))


def _level_set_samples(bar: ConcaveQuadratic, n_samples: int, rng) -> np.ndarray:
    """Points on {x : (x - x_c)' W (x - x_c) = c0}, angle-parameterized in
    2-D, random directions scaled to the boundary otherwise."""
    n = bar.W.shape[0]
    if n == 2:
        theta = np.linspace(0.0, 2.0 * np.pi, n_samples, endpoint=False)
        dirs = np.column_stack([np.cos(theta), np.sin(theta)])
    else:
        dirs = rng.standard_normal((n_samples, n))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    quad = np.einsum("ij,jk,ik->i", dirs, bar.W, dirs)
    ok = quad > 1e-14
    if not np.any(ok):
        raise ConfigurationError("barrier level set is empty or degenerate")
    scale = np.sqrt(bar.c0 / quad[ok])
    return bar.x_c + dirs[ok] * scale[:, None]


def compute_h_gamma(
    bar: Barrier,
    gamma: float,
    n_samples: int = 4096,
    n_ascent: int = 100,
    seed: int = 0,
    interior_point=None,
) -> float:
    """Worst-case inflation of h over gamma-balls around the zero level set.

    HalfSpace is analytic (gamma * ||a||). ConcaveQuadratic / GenericHook use
    level-set sampling plus projected gradient ascent; for the quadratic the
    result is cross-checked against the closed-form candidate
    c0 - (sqrt(c0) - gamma*sqrt(lam_W))^2 and the larger value is returned.
    """
    if gamma < 0:
        raise ConfigurationError("gamma must be >= 0")
    if gamma == 0.0:
        return 0.0
    if isinstance(bar, HalfSpace):
        return float(gamma * np.linalg.norm(bar.a))

    rng = np.random.Generator(np.random.Philox(key=seed))
    if isinstance(bar, ConcaveQuadratic):
        anchors = _level_set_samples(bar, n_samples, rng)
        X = anchors.copy()
        step = 0.1 * gamma
        for _ in range(n_ascent):
            G = -2.0 * (X - bar.x_c) @ bar.W
            X = X + step * G
            d = X - anchors
            norms = np.linalg.norm(d, axis=1)
            over = norms > gamma
            if np.any(over):
                X[over] = anchors[over] + d[over] * (gamma / norms[over])[:, None]
        best = float(eval_h_batch(bar, X).max())
        lam_w = float(np.linalg.eigvalsh(bar.W).max())
        if gamma * np.sqrt(lam_w) <= np.sqrt(bar.c0):
            closed = bar.c0 - (np.sqrt(bar.c0) - gamma * np.sqrt(lam_w)) ** 2
            best = max(best, float(closed))
        return max(best, 0.0)

    # GenericHook: locate level-set anchors by bisection along random rays
    # from an interior point, then run the same projected ascent.
    if bar.grad is None:
        raise ConfigurationError("GenericHook h_gamma search requires a gradient callback")
    if interior_point is None:
        raise ConfigurationError(
            "GenericHook h_gamma search requires an interior point with h > 0"
        )
    x_i = np.asarray(interior_point, dtype=float).ravel()
    if eval_h(bar, x_i) <= 0:
        raise ConfigurationError("interior_point must satisfy h > 0")
    n = x_i.size
    dirs = rng.standard_normal((n_samples, n))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    anchors = []
    for d in dirs:
        lo, hi = 0.0, 1.0
        for _ in range(60):  # expand until the ray exits the safe set
            if eval_h(bar, x_i + hi * d) < 0:
                break
            hi *= 2.0
        else:
            continue  # ray never leaves the safe set
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if eval_h(bar, x_i + mid * d) >= 0:
                lo = mid
            else:
                hi = mid
        anchors.append(x_i + 0.5 * (lo + hi) * d)
    if not anchors:
        raise ConfigurationError("could not locate the barrier zero level set")
    anchors = np.array(anchors)
    X = anchors.copy()
    step = 0.1 * gamma
    for _ in range(n_ascent):
        G = np.array([np.asarray(bar.grad(row), dtype=float).ravel() for row in X])
        X = X + step * G
        d = X - anchors
        norms = np.linalg.norm(d, axis=1)
        over = norms > gamma
        if np.any(over):
            X[over] = anchors[over] + d[over] * (gamma / norms[over])[:, None]
    best = max(float(bar.h(row)) for row in X)
    return max(best, 0.0)


def eval_h_hat(sb: ShiftedBarrier, x) -> float:
    """hhat(x) = h(x) - h_gamma."""
    return eval_h(sb.base, x) - sb.h_gamma
