"""Closed-form finite-horizon exit/safety probability bounds.

Both the state-feedback and output-feedback certificates share one algebraic
form; the output-feedback case substitutes M -> M - h_gamma, h -> hhat and
pays an extra sigma for the estimation-error coverage.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigurationError


class BoundBranch(str, Enum):
    DELTA_NEGATIVE = "delta_negative"
    DELTA_NONNEGATIVE = "delta_nonnegative"


@dataclass
class BoundInput:
    """Inputs to the exit bound.

    M_eff is M (state feedback) or M - h_gamma (output feedback); h0_eff is
    h(x_0) or hhat(xhat_0) accordingly; sigma is 0 in state-feedback mode.
    """

    M_eff: float
    h0_eff: float
    alpha: float
    delta: float
    horizon: int
    sigma: float = 0.0

    def __post_init__(self):
        if self.M_eff <= 0:
            raise ConfigurationError("M_eff must be > 0")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigurationError("alpha must lie in (0, 1)")
        if self.delta > self.M_eff * (1.0 - self.alpha) + 1e-12:
            raise ConfigurationError(
                f"delta={self.delta} violates admissibility "
                f"delta <= M_eff(1-alpha)={self.M_eff * (1.0 - self.alpha)}"
            )
        if self.horizon < 0:
            raise ConfigurationError("horizon must be >= 0")
        if self.h0_eff > self.M_eff + 1e-12:
            raise ConfigurationError("h0_eff cannot exceed M_eff")


@dataclass
class BoundResult:
    p_exit_raw: float
    p_exit: float
    p_safe_lower: float
    branch: BoundBranch
    vacuous: bool


def exit_bound(inp: BoundInput) -> BoundResult:
    """Finite-horizon exit probability bound.

    delta < 0:  ((M - h0)/M) alpha^K + ((M(1-alpha) - delta)/M) sum_{i=1..K} alpha^{i-1}
    delta >= 0: 1 - (h0/M) ((M alpha + delta)/M)^K

    The raw value is reported alongside its [0, 1] clip. A negative h0_eff
    makes the certificate vacuous (p_exit = 1, flagged) rather than an error,
    so initial-state grid sweeps run without special-casing.
    """
    M, h0, a, d, K = inp.M_eff, inp.h0_eff, inp.alpha, inp.delta, inp.horizon
    if h0 < 0:
        raw = 1.0
        branch = BoundBranch.DELTA_NEGATIVE if d < 0 else BoundBranch.DELTA_NONNEGATIVE
        return BoundResult(
            p_exit_raw=raw, p_exit=1.0,
            p_safe_lower=0.0, branch=branch, vacuous=True,
        )
    if d < 0:
        branch = BoundBranch.DELTA_NEGATIVE
        geom = (1.0 - a**K) / (1.0 - a)  # sum_{i=1..K} alpha^{i-1}
        raw = ((M - h0) / M) * a**K + ((M * (1.0 - a) - d) / M) * geom
    else:
        branch = BoundBranch.DELTA_NONNEGATIVE
        raw = 1.0 - (h0 / M) * ((M * a + d) / M) ** K
    p_exit = float(np.clip(raw, 0.0, 1.0))
    p_safe = float(np.clip(1.0 - p_exit - inp.sigma, 0.0, 1.0))
    return BoundResult(
        p_exit_raw=float(raw),
        p_exit=p_exit,
        p_safe_lower=p_safe,
        branch=branch,
        vacuous=raw >= 1.0,
    )


def safety_lower_bound(inp: BoundInput) -> float:
    """clip(1 - p_exit - sigma, 0, 1)."""
    return exit_bound(inp).p_safe_lower
