"""End-to-end wiring: raw parameters -> ladder -> Bellman solve -> queue thresholds."""
from __future__ import annotations

from dataclasses import dataclass

from .bellman import BellmanSolution, solve_beta_star, workload_thresholds
from .params import DriftLadder, NthSystemParams, derive_ladder, scale_to_limit
from .simulator import DynamicPolicy


@dataclass
class SolverSettings:
    theta0: float | None = None
    gamma_units: str = "per_day"
    rk4_step: float = 1e-3
    tol_beta_rel: float = 1e-8
    tol_terminal_rel: float = 1e-3
    root_tol: float = 1e-10
    x_max: float | None = None


@dataclass
class SolveOutput:
    ladder: DriftLadder
    solution: BellmanSolution
    q_star_sorted: list[float]  # by ladder rung (ascending marginal cost)
    q_star_by_activity: tuple[float, ...]  # by original activity index

    @property
    def policy(self) -> DynamicPolicy:
        return DynamicPolicy(thresholds=self.q_star_by_activity)


def solve_policy(
    params: NthSystemParams,
    settings: SolverSettings | None = None,
    theta0: float | None = None,
) -> SolveOutput:
    """Solve the workload control problem for this system and return queue thresholds.

    ``theta0`` overrides the settings' override (used by the tuning grid).
    """
    st = settings or SolverSettings()
    eff_theta0 = theta0 if theta0 is not None else st.theta0
    limit = scale_to_limit(params)
    ladder = derive_ladder(limit, theta0=eff_theta0, gamma_units=st.gamma_units)
    solution = solve_beta_star(
        ladder,
        x_max=st.x_max,
        tol_beta=st.tol_beta_rel * ladder.p,
        tol_terminal=st.tol_terminal_rel * ladder.p,
        step=st.rk4_step,
    )
    mu = limit.classes[0].mu
    q_sorted = workload_thresholds(solution, limit.n, mu)
    by_activity = [0.0] * len(params.activities)
    for rung, orig in enumerate(ladder.order):
        by_activity[orig] = q_sorted[rung]
    return SolveOutput(
        ladder=ladder,
        solution=solution,
        q_star_sorted=q_sorted,
        q_star_by_activity=tuple(by_activity),
    )


def make_solver_hook(settings: SolverSettings | None = None):
    """Hook params -> DynamicPolicy for the gamma sweep."""

    def hook(params: NthSystemParams) -> DynamicPolicy:
        return solve_policy(params, settings).policy

    return hook


def make_theta_solver_hook(settings: SolverSettings | None = None):
    """Hook (params, theta0) -> DynamicPolicy for the theta0 tuning grid."""

    def hook(params: NthSystemParams, theta0: float) -> DynamicPolicy:
        return solve_policy(params, settings, theta0=theta0).policy

    return hook
