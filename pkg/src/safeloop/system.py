"""State-space plant, Kalman predictor recursion, and LQR synthesis.

The plant is the time-varying linear stochastic system

    x_{k+1} = A_k x_k + B_k u_k + w_k,      w_k ~ N(0, Q_k)
    y_k     = C_k x_k + v_k,                v_k ~ N(0, R_k)

estimated by the one-step Kalman predictor

    xhat_{k+1} = A_k xhat_k + B_k u_k + K_k (y_k - C_k xhat_k)

with gain K_k = A_k P_k C_k^T (C_k P_k C_k^T + R_k)^{-1} and prediction-error
covariance P_k evolved by the discrete Riccati recursion.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, NumericError

# Condition-number guard for the innovation covariance inverse.
_INNOVATION_COND_MAX = 1e12


def _as_schedule(mat, T: int, shape: tuple[int, int], name: str) -> np.ndarray:
    """Broadcast a constant matrix (or validate a per-step stack) to (T, *shape)."""
    arr = np.asarray(mat, dtype=float)
    if arr.ndim == 2:
        if arr.shape != shape:
            raise ConfigurationError(
                f"{name}: expected shape {shape}, got {arr.shape}"
            )
        return np.broadcast_to(arr, (T, *shape)).copy()
    if arr.ndim == 3:
        if arr.shape[1:] != shape:
            raise ConfigurationError(
                f"{name}: expected per-step shape {shape}, got {arr.shape[1:]}"
            )
        if arr.shape[0] < T:
            raise ConfigurationError(
                f"{name}: schedule has {arr.shape[0]} steps, horizon needs {T}"
            )
        return arr[:T].astype(float, copy=True)
    raise ConfigurationError(f"{name}: expected a matrix or a stack of matrices")


def _check_psd(mat: np.ndarray, name: str, require_pd: bool = False) -> None:
    if not np.allclose(mat, mat.T, atol=1e-10):
        raise ConfigurationError(f"{name} must be symmetric")
    eigs = np.linalg.eigvalsh(mat)
    if require_pd:
        if eigs.min() <= 0:
            raise ConfigurationError(f"{name} must be positive definite")
    elif eigs.min() < -1e-10:
        raise ConfigurationError(f"{name} must be positive semidefinite")


@dataclass
class LinearSystem:
    """Time-varying linear plant with Gaussian process/measurement noise.

    Constant matrices broadcast over the horizon; per-step schedules are
    stored densely as (T, ., .) stacks.
    """

    A_sched: np.ndarray
    B_sched: np.ndarray
    C_sched: np.ndarray
    Q_sched: np.ndarray
    R_sched: np.ndarray
    n: int = field(init=False)
    m: int = field(init=False)
    n_y: int = field(init=False)

    def __post_init__(self):
        A0 = np.asarray(self.A_sched, dtype=float)
        A0 = A0 if A0.ndim == 2 else A0[0]
        n = A0.shape[0]
        B0 = np.asarray(self.B_sched, dtype=float)
        B0 = B0 if B0.ndim == 2 else B0[0]
        m = B0.shape[1]
        C0 = np.asarray(self.C_sched, dtype=float)
        C0 = C0 if C0.ndim == 2 else C0[0]
        n_y = C0.shape[0]
        T = max(
            (np.asarray(s).shape[0] if np.asarray(s).ndim == 3 else 1)
            for s in (self.A_sched, self.B_sched, self.C_sched, self.Q_sched, self.R_sched)
        )
        self.A_sched = _as_schedule(self.A_sched, T, (n, n), "A")
        self.B_sched = _as_schedule(self.B_sched, T, (n, m), "B")
        self.C_sched = _as_schedule(self.C_sched, T, (n_y, n), "C")
        self.Q_sched = _as_schedule(self.Q_sched, T, (n, n), "Q")
        self.R_sched = _as_schedule(self.R_sched, T, (n_y, n_y), "R")
        for k in range(T):
            _check_psd(self.Q_sched[k], f"Q_{k}")
            _check_psd(self.R_sched[k], f"R_{k}", require_pd=True)
        self.n, self.m, self.n_y = n, m, n_y

    def _idx(self, k: int) -> int:
        # constant systems carry a length-1 schedule; clamp for any horizon
        return min(k, self.A_sched.shape[0] - 1)

    def A(self, k: int) -> np.ndarray:
        return self.A_sched[self._idx(k)]

    def B(self, k: int) -> np.ndarray:
        return self.B_sched[self._idx(k)]

    def C(self, k: int) -> np.ndarray:
        return self.C_sched[self._idx(k)]

    def Q(self, k: int) -> np.ndarray:
        return self.Q_sched[self._idx(k)]

    def R(self, k: int) -> np.ndarray:
        return self.R_sched[self._idx(k)]


@dataclass
class FilterSchedule:
    """Precomputed Riccati covariances P_0..P_T and Kalman gains K_0..K_{T-1}."""

    P: np.ndarray  # (T+1, n, n)
    K: np.ndarray  # (T, n, n_y)


@dataclass
class NominalController:
    """Static-gain nominal law u = -K_fb (x - target) + offset.

    LQR-weighted controllers are resolved to a static gain at setup via
    :func:`solve_dlqr`.
    """

    K_fb: np.ndarray  # (m, n)
    target: np.ndarray  # (n,)
    offset: np.ndarray | None = None  # (m,)

    def __post_init__(self):
        self.K_fb = np.atleast_2d(np.asarray(self.K_fb, dtype=float))
        self.target = np.asarray(self.target, dtype=float).ravel()
        if self.offset is None:
            self.offset = np.zeros(self.K_fb.shape[0])
        else:
            self.offset = np.asarray(self.offset, dtype=float).ravel()

    @classmethod
    def from_lqr(cls, A, B, Q_lqr, R_lqr, target) -> "NominalController":
        K_fb = solve_dlqr(A, B, Q_lqr, R_lqr)
        return cls(K_fb=K_fb, target=target)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return -self.K_fb @ (np.asarray(x, dtype=float) - self.target) + self.offset


def dynamics_step(sys: LinearSystem, k: int, x, u, w) -> np.ndarray:
    """One plant step: A_k x + B_k u + w."""
    x = np.asarray(x, dtype=float).ravel()
    u = np.asarray(u, dtype=float).ravel()
    w = np.asarray(w, dtype=float).ravel()
    if x.size != sys.n or u.size != sys.m or w.size != sys.n:
        raise ConfigurationError(
            f"dynamics_step: got dims x={x.size}, u={u.size}, w={w.size}; "
            f"system has n={sys.n}, m={sys.m}"
        )
    return sys.A(k) @ x + sys.B(k) @ u + w


def measure(sys: LinearSystem, k: int, x, v) -> np.ndarray:
    """One measurement: C_k x + v."""
    x = np.asarray(x, dtype=float).ravel()
    v = np.asarray(v, dtype=float).ravel()
    if x.size != sys.n or v.size != sys.n_y:
        raise ConfigurationError(
            f"measure: got dims x={x.size}, v={v.size}; "
            f"system has n={sys.n}, n_y={sys.n_y}"
        )
    return sys.C(k) @ x + v


def _innovation_inverse(C: np.ndarray, P: np.ndarray, R: np.ndarray) -> np.ndarray:
    S = C @ P @ C.T + R
    cond = np.linalg.cond(S)
    if not np.isfinite(cond) or cond > _INNOVATION_COND_MAX:
        raise NumericError(
            f"innovation covariance near-singular (cond={cond:.3e}); "
            "check that R is positive definite"
        )
    return np.linalg.inv(S)


def riccati_step(P, A, C, Q, R) -> np.ndarray:
    """One prediction-error covariance update.

    Returns the symmetrized A P A^T + Q - A P C^T (C P C^T + R)^{-1} C P A^T
    with eigenvalues below -1e-9 clipped to zero.
    """
    P = np.atleast_2d(np.asarray(P, dtype=float))
    A = np.atleast_2d(np.asarray(A, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    Sinv = _innovation_inverse(C, P, R)
    APC = A @ P @ C.T
    P_next = A @ P @ A.T + Q - APC @ Sinv @ APC.T
    P_next = 0.5 * (P_next + P_next.T)
    eigs, vecs = np.linalg.eigh(P_next)
    if eigs.min() < -1e-9:
        eigs = np.clip(eigs, 0.0, None)
        P_next = vecs @ np.diag(eigs) @ vecs.T
        P_next = 0.5 * (P_next + P_next.T)
    return P_next


def kalman_gain(P, A, C, R) -> np.ndarray:
    """Predictor gain K = A P C^T (C P C^T + R)^{-1}."""
    P = np.atleast_2d(np.asarray(P, dtype=float))
    A = np.atleast_2d(np.asarray(A, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    Sinv = _innovation_inverse(C, P, R)
    return A @ P @ C.T @ Sinv


def predictor_update(xhat, u, y, k: int, sys: LinearSystem, sched: FilterSchedule) -> np.ndarray:
    """One predictor step: A_k xhat + B_k u + K_k (y - C_k xhat).

    u is a function of xhat_k (conditioned on y_{0:k-1}); y_k then drives
    xhat_{k+1}.
    """
    xhat = np.asarray(xhat, dtype=float).ravel()
    u = np.asarray(u, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if k >= sched.K.shape[0]:
        raise ConfigurationError(f"predictor_update: step {k} beyond schedule")
    K = sched.K[k]
    return sys.A(k) @ xhat + sys.B(k) @ u + K @ (y - sys.C(k) @ xhat)


def build_filter_schedule(sys: LinearSystem, P0, T: int) -> FilterSchedule:
    """Iterate the Riccati recursion from P0 over T steps.

    Deterministic: the schedule depends only on the system matrices, never
    on data.
    """
    P0 = np.atleast_2d(np.asarray(P0, dtype=float))
    _check_psd(P0, "P0")
    n, n_y = sys.n, sys.n_y
    P = np.empty((T + 1, n, n))
    K = np.empty((T, n, n_y))
    P[0] = 0.5 * (P0 + P0.T)
    for k in range(T):
        K[k] = kalman_gain(P[k], sys.A(k), sys.C(k), sys.R(k))
        P[k + 1] = riccati_step(P[k], sys.A(k), sys.C(k), sys.Q(k), sys.R(k))
    return FilterSchedule(P=P, K=K)


def solve_dlqr(A, B, Q_lqr, R_lqr, tol: float = 1e-10, max_iter: int = 10_000) -> np.ndarray:
    """Infinite-horizon discrete LQR gain via Riccati fixed-point iteration.

    Iterates the value-matrix recursion until the successive-iterate max-abs
    difference drops below `tol`; verifies the closed loop is stable.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    Q_lqr = np.atleast_2d(np.asarray(Q_lqr, dtype=float))
    R_lqr = np.atleast_2d(np.asarray(R_lqr, dtype=float))
    _check_psd(Q_lqr, "Q_lqr")
    _check_psd(R_lqr, "R_lqr", require_pd=True)
    P = Q_lqr.copy()
    for _ in range(max_iter):
        BtP = B.T @ P
        K = np.linalg.solve(R_lqr + BtP @ B, BtP @ A)
        P_next = Q_lqr + A.T @ P @ (A - B @ K)
        P_next = 0.5 * (P_next + P_next.T)
        resid = np.abs(P_next - P).max()
        P = P_next
        if resid < tol:
            break
    else:
        raise NumericError(
            f"LQR Riccati iteration did not converge (residual {resid:.3e} "
            f"after {max_iter} iterations)"
        )
    BtP = B.T @ P
    K = np.linalg.solve(R_lqr + BtP @ B, BtP @ A)
    closed = A - B @ K
    rho = np.abs(np.linalg.eigvals(closed)).max()
    if rho >= 1.0:
        raise NumericError(
            f"LQR synthesis produced an unstable closed loop (spectral radius {rho:.6f})"
        )
    return K


def lqr_value_matrix(A, B, Q_lqr, R_lqr, K_fb) -> np.ndarray:
    """One application of the Riccati map at the value matrix implied by K_fb.

    Used by tests to confirm the synthesized gain is a fixed point.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    Q_lqr = np.atleast_2d(np.asarray(Q_lqr, dtype=float))
    R_lqr = np.atleast_2d(np.asarray(R_lqr, dtype=float))
    K_fb = np.atleast_2d(np.asarray(K_fb, dtype=float))
    # value matrix of the fixed policy u = -K x: P = Q + K'RK + (A-BK)' P (A-BK)
    Acl = A - B @ K_fb
    Qcl = Q_lqr + K_fb.T @ R_lqr @ K_fb
    P = Qcl.copy()
    for _ in range(100_000):
        P_next = Qcl + Acl.T @ P @ Acl
        if np.abs(P_next - P).max() < 1e-13:
            return P_next
        P = P_next
    return P
