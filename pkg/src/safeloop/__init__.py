"""Output-feedback safety filters for discrete-time linear stochastic systems.

Kalman-filtered control barrier constraints with Jensen corrections,
closed-form finite-horizon safety certificates, and a seeded Monte Carlo
closed-loop validator.
"""

from .barrier import (
    ConcaveQuadratic,
    GenericHook,
    HalfSpace,
    ShiftedBarrier,
    compute_gamma,
    compute_gamma_mc,
    compute_h_gamma,
    eval_h,
    eval_h_hat,
    hessian_bound,
    upper_bound_M,
)
from .bounds import BoundBranch, BoundInput, BoundResult, exit_bound, safety_lower_bound
from .config import load_scenario, parse_config, preset, scenario_from_doc
from .errors import ConfigurationError, NumericError
from .montecarlo import (
    CompiledScenario,
    MCSummary,
    Scenario,
    TrialResult,
    compile_scenario,
    grid_initial_states,
    run_batch,
    run_trial,
    sweep_params,
)
from .safety_filter import (
    FeedbackMode,
    FilterStepResult,
    InfeasiblePolicy,
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
    dynamics_step,
    kalman_gain,
    lqr_value_matrix,
    measure,
    predictor_update,
    riccati_step,
    solve_dlqr,
)

__version__ = "0.1.0"
