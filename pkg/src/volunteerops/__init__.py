"""Solver and simulator for dynamic volunteer-engagement control.

The package computes the optimal nested-threshold activation policy of a
drift-controlled reflected Ornstein-Uhlenbeck workload model and evaluates it
against static alternatives in a daily-period simulation of the underlying
multiclass sign-up queue.
"""

from .params import (
    DriftLadder,
    EngagementActivity,
    Kind,
    LimitParams,
    NthSystemParams,
    VolunteerClass,
    balanced_load_check,
    derive_ladder,
    scale_to_limit,
    validate_nth_params,
)
from .cost import beta_lower_bound, conjugate_phi, cost_c, psi_min_argmax
from .bellman import (
    BellmanSolution,
    BetaClass,
    classify_beta,
    extract_thresholds,
    integrate_v,
    ode_rhs,
    solve_beta_star,
    u_piece,
    workload_thresholds,
)
from .simulator import (
    AbandonModel,
    DynamicPolicy,
    SimConfig,
    SimMetrics,
    SlotsModel,
    StaticPolicy,
    SwitchPolicy,
    run_replication,
    schedule_for,
)
from .experiments import (
    ExperimentReport,
    enumerate_static,
    run_experiment,
    sweep_gamma,
    transition_experiment,
    tune_theta0,
)
from .pipeline import SolveOutput, SolverSettings, solve_policy

__version__ = "0.1.0"
