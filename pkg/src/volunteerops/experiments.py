"""Replicated policy experiments: comparisons, sweeps, tuning, transitions.

Every comparison here relies on common random numbers: with ``config.crn``
set, replication i of every policy is driven by identical per-day random
blocks, so policy differences are paired and the reported confidence
intervals on differences shrink accordingly.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np
from scipy.stats import t as student_t

from .params import NthSystemParams
from .simulator import (
    DynamicPolicy,
    Policy,
    QuarterlySeries,
    SCALAR_METRICS,
    SimConfig,
    SimMetrics,
    StaticPolicy,
    SwitchPolicy,
    run_replication,
    with_gamma,
)


def _halfwidth(values: Sequence[float]) -> float:
    n = len(values)
    if n < 2:
        return 0.0
    sd = float(np.std(values, ddof=1))
    return float(student_t.ppf(0.975, n - 1)) * sd / math.sqrt(n)


@dataclass
class PolicyResult:
    label: str
    policy: Policy
    reps: list[SimMetrics]
    mean: dict[str, float]
    halfwidth: dict[str, float]
    usage_mean: tuple[float, ...]

    @property
    def total_cost(self) -> float:
        return self.mean["total_cost"]


@dataclass
class ExperimentReport:
    policies: list[PolicyResult]
    best_static_label: str | None = None
    improvement_pct: float | None = None
    improvement_halfwidth: float | None = None

    def by_label(self, label: str) -> PolicyResult:
        for pr in self.policies:
            if pr.label == label:
                return pr
        raise KeyError(label)


def run_experiment(
    config: SimConfig,
    policies: Sequence[Policy],
    labels: Sequence[str] | None = None,
    collect_quarterly: bool = False,
) -> ExperimentReport:
    """Run every policy over the configured replications and aggregate.

    The improvement line compares the (single) dynamic policy against the
    best static policy present, when both exist.
    """
    if not policies:
        raise ValueError("at least one policy required")
    labels = [p.label() for p in policies] if labels is None else list(labels)
    results: list[PolicyResult] = []
    for idx, policy in enumerate(policies):
        salt = 0 if config.crn else idx + 1
        reps = [
            run_replication(config, policy, r, policy_salt=salt, collect_quarterly=collect_quarterly)
            for r in range(config.replications)
        ]
        mean = {m: float(np.mean([rep.scalar(m) for rep in reps])) for m in SCALAR_METRICS}
        halfw = {m: _halfwidth([rep.scalar(m) for rep in reps]) for m in SCALAR_METRICS}
        usage = tuple(
            float(np.mean([rep.activity_usage_pct[l] for rep in reps]))
            for l in range(len(config.params.activities))
        )
        results.append(
            PolicyResult(
                label=labels[idx],
                policy=policy,
                reps=reps,
                mean=mean,
                halfwidth=halfw,
                usage_mean=usage,
            )
        )

    statics = [pr for pr in results if isinstance(pr.policy, StaticPolicy)]
    dynamics = [pr for pr in results if isinstance(pr.policy, DynamicPolicy)]
    report = ExperimentReport(policies=results)
    if statics:
        best = min(statics, key=lambda pr: pr.total_cost)
        report.best_static_label = best.label
        if len(dynamics) == 1:
            dyn = dynamics[0]
            report.improvement_pct = 100.0 * (best.total_cost - dyn.total_cost) / best.total_cost
            diffs = [
                100.0 * (s.total_cost - d.total_cost) / best.total_cost
                for s, d in zip(best.reps, dyn.reps)
            ]
            report.improvement_halfwidth = _halfwidth(diffs)
    return report


def all_static_policies(n_activities: int) -> list[StaticPolicy]:
    """Every subset of activities (including the empty set), 2^L policies."""
    if n_activities > 16:
        raise ValueError("static enumeration guarded at 16 activities")
    out = []
    for r in range(n_activities + 1):
        for combo in itertools.combinations(range(n_activities), r):
            out.append(StaticPolicy(frozenset(combo)))
    return out


def enumerate_static(config: SimConfig, extra: Sequence[Policy] = ()) -> ExperimentReport:
    """Evaluate all 2^L static subsets (plus optional extra policies, CRN-shared)."""
    policies: list[Policy] = list(all_static_policies(len(config.params.activities)))
    policies.extend(extra)
    return run_experiment(config, policies)


SolverHook = Callable[[NthSystemParams], DynamicPolicy]
ThetaSolverHook = Callable[[NthSystemParams, float], DynamicPolicy]


@dataclass
class SweepRow:
    gamma: float
    best_static_label: str
    best_static_total: float
    dynamic_total: float
    improvement_pct: float
    improvement_halfwidth: float
    q_star: tuple[float, ...]


def sweep_gamma(
    config: SimConfig, gammas: Sequence[float], solver_hook: SolverHook
) -> list[SweepRow]:
    """Re-derive thresholds and re-run the static enumeration per abandonment rate."""
    rows = []
    for gamma in gammas:
        if gamma <= 0:
            raise ValueError("gamma must be positive")
        cfg = with_gamma(config, gamma)
        dyn = solver_hook(cfg.params)
        report = enumerate_static(cfg, extra=[dyn])
        best = report.by_label(report.best_static_label)
        rows.append(
            SweepRow(
                gamma=gamma,
                best_static_label=best.label,
                best_static_total=best.total_cost,
                dynamic_total=report.by_label("dynamic").total_cost,
                improvement_pct=report.improvement_pct,
                improvement_halfwidth=report.improvement_halfwidth,
                q_star=dyn.thresholds,
            )
        )
    return rows


@dataclass
class TuneRow:
    theta0: float
    total_cost: float
    halfwidth: float
    q_star: tuple[float, ...]


@dataclass
class TuneResult:
    rows: list[TuneRow]
    best_theta0: float
    best_policy: DynamicPolicy


def tune_theta0(
    config: SimConfig, theta0_grid: Sequence[float], solver_hook: ThetaSolverHook
) -> TuneResult:
    """Grid search over the base-drift override; returns the cost-minimizing policy."""
    if not theta0_grid:
        raise ValueError("theta0 grid must be nonempty")
    if any(t >= 0 for t in theta0_grid):
        raise ValueError("theta0 candidates must be negative")
    policies = [solver_hook(config.params, t0) for t0 in theta0_grid]
    labels = [f"dynamic@theta0={t0:g}" for t0 in theta0_grid]
    report = run_experiment(config, policies, labels=labels)
    rows = [
        TuneRow(
            theta0=t0,
            total_cost=pr.total_cost,
            halfwidth=pr.halfwidth["total_cost"],
            q_star=pol.thresholds,
        )
        for t0, pol, pr in zip(theta0_grid, policies, report.policies)
    ]
    best_i = int(np.argmin([r.total_cost for r in rows]))
    return TuneResult(rows=rows, best_theta0=theta0_grid[best_i], best_policy=policies[best_i])


@dataclass
class TransitionReport:
    quarters: list[int]  # 1-based quarter numbers
    a_queue: list[float]
    a_queue_hw: list[float]
    b_queue: list[float]
    b_queue_hw: list[float]
    diff_queue: list[float]  # B - A, paired
    diff_queue_hw: list[float]
    a_abandon: list[float]
    b_abandon: list[float]
    a_act_cost: list[float]
    b_act_cost: list[float]
    switch_quarter: int  # first quarter (1-based) run under the second policy


def transition_experiment(
    config: SimConfig,
    static_policy: StaticPolicy,
    dynamic_policy: DynamicPolicy,
    switch_day: int,
    total_years: int,
    replications: int,
) -> TransitionReport:
    """Sim A (dynamic throughout) vs Sim B (static, then dynamic at switch_day).

    Replications are CRN-paired across A and B; series are quarterly.
    """
    from .params import DAYS_PER_YEAR
    from .simulator import DAYS_PER_QUARTER

    if switch_day % DAYS_PER_QUARTER != 0:
        raise ValueError("switch day must sit on a quarter boundary")
    cfg = replace(
        config,
        horizon_years=total_years,
        warmup_years=0,
        measure_years=total_years,
        replications=replications,
    )
    pol_a = dynamic_policy
    pol_b = SwitchPolicy(first=static_policy, second=dynamic_policy, switch_day=switch_day)
    a_reps: list[QuarterlySeries] = []
    b_reps: list[QuarterlySeries] = []
    for r in range(replications):
        a_reps.append(run_replication(cfg, pol_a, r, policy_salt=0, collect_quarterly=True).quarterly)
        b_reps.append(run_replication(cfg, pol_b, r, policy_salt=0, collect_quarterly=True).quarterly)

    n_q = len(a_reps[0].mean_queue)
    a_q = np.array([rep.mean_queue for rep in a_reps])
    b_q = np.array([rep.mean_queue for rep in b_reps])
    diff = b_q - a_q
    return TransitionReport(
        quarters=list(range(1, n_q + 1)),
        a_queue=a_q.mean(axis=0).tolist(),
        a_queue_hw=[_halfwidth(a_q[:, i]) for i in range(n_q)],
        b_queue=b_q.mean(axis=0).tolist(),
        b_queue_hw=[_halfwidth(b_q[:, i]) for i in range(n_q)],
        diff_queue=diff.mean(axis=0).tolist(),
        diff_queue_hw=[_halfwidth(diff[:, i]) for i in range(n_q)],
        a_abandon=np.array([rep.abandon_pct for rep in a_reps]).mean(axis=0).tolist(),
        b_abandon=np.array([rep.abandon_pct for rep in b_reps]).mean(axis=0).tolist(),
        a_act_cost=np.array([rep.activity_cost for rep in a_reps]).mean(axis=0).tolist(),
        b_act_cost=np.array([rep.activity_cost for rep in b_reps]).mean(axis=0).tolist(),
        switch_quarter=switch_day // DAYS_PER_QUARTER + 1,
    )
