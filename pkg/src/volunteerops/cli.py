"""Batch command-line interface: solve | simulate | sweep | enumerate | tune | transition.

Every command reads one YAML configuration, writes machine-readable CSV
artifacts (atomically, with the config hash and seed embedded as comment
lines) plus a human summary on stdout.  Exit codes: 0 ok, 2 configuration
error, 3 solver failure, 4 simulation failure.
"""
from __future__ import annotations

import argparse
import os
import sys
import tempfile
from dataclasses import replace

from .bellman import SolverError
from .config import ConfigError, RunConfig, parse_config
from .experiments import (
    ExperimentReport,
    all_static_policies,
    enumerate_static,
    run_experiment,
    sweep_gamma,
    transition_experiment,
    tune_theta0,
)
from .params import LadderError, ScalingError
from .pipeline import SolveOutput, make_solver_hook, make_theta_solver_hook, solve_policy
from .simulator import DAYS_PER_QUARTER, DynamicPolicy, Policy, StaticPolicy

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_SIM = 4


def _atomic_write(path: str, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp_", suffix=".csv")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _meta_lines(rc: RunConfig, extra: dict | None = None) -> list[str]:
    lines = [
        f"# config_hash={rc.content_hash}",
        f"# seed={rc.sim.seed}",
        f"# replications={rc.sim.replications}",
    ]
    for k, v in (extra or {}).items():
        lines.append(f"# {k}={v}")
    return lines


def _fmt(x) -> str:
    if isinstance(x, float):
        return format(x, ".10g")
    return str(x)


def _csv(meta: list[str], header: list[str], rows: list[list]) -> str:
    out = list(meta)
    out.append(",".join(header))
    for row in rows:
        out.append(",".join(_fmt(v) for v in row))
    return "\n".join(out) + "\n"


def parse_policy_spec(spec: str, rc: RunConfig, solve_out: SolveOutput | None) -> Policy:
    spec = spec.strip()
    if spec == "dynamic":
        if solve_out is None:
            raise ConfigError("dynamic policy requested but thresholds were not solved")
        return solve_out.policy
    if spec.startswith("static:"):
        body = spec[len("static:"):].strip()
        if not body:
            return StaticPolicy(frozenset())
        names = [a.name for a in rc.params.activities]
        indices = set()
        for token in body.split(","):
            token = token.strip()
            if token.isdigit():
                idx = int(token) - 1
                if not 0 <= idx < len(names):
                    raise ConfigError(f"policy '{spec}': activity index {token} out of range")
            elif token in names:
                idx = names.index(token)
            else:
                raise ConfigError(f"policy '{spec}': unknown activity {token!r}")
            indices.add(idx)
        return StaticPolicy(frozenset(indices))
    raise ConfigError(f"unknown policy spec {spec!r} (use 'dynamic' or 'static:1,2,...')")


def _report_rows(report: ExperimentReport, n_activities: int) -> list[list]:
    rows = []
    for pr in report.policies:
        for metric in ("activity_cost", "idle_cost", "total_cost", "idle_pct", "abandon_pct", "mean_queue_length"):
            rows.append([pr.label, metric, pr.mean[metric], pr.halfwidth[metric]])
        for l in range(n_activities):
            rows.append([pr.label, f"activity_usage_pct_{l + 1}", pr.usage_mean[l], 0.0])
        if report.best_static_label is not None and isinstance(pr.policy, StaticPolicy):
            rows.append([pr.label, "is_best_static", 1.0 if pr.label == report.best_static_label else 0.0, 0.0])
    if report.improvement_pct is not None:
        rows.append(["_comparison", "improvement_pct", report.improvement_pct, report.improvement_halfwidth or 0.0])
    return rows


def _print_report(report: ExperimentReport) -> None:
    print(f"{'policy':24s} {'total $/yr':>12s} {'+/-':>8s} {'activity':>10s} {'idle':>10s} {'abandon%':>9s}")
    for pr in report.policies:
        print(
            f"{pr.label:24s} {pr.mean['total_cost']:12.1f} {pr.halfwidth['total_cost']:8.1f} "
            f"{pr.mean['activity_cost']:10.1f} {pr.mean['idle_cost']:10.1f} {pr.mean['abandon_pct']:9.2f}"
        )
    if report.best_static_label:
        print(f"best static: {report.best_static_label}")
    if report.improvement_pct is not None:
        print(
            f"dynamic vs best static improvement: {report.improvement_pct:.1f}% "
            f"(+/- {report.improvement_halfwidth:.1f})"
        )


def cmd_solve(rc: RunConfig, out_dir: str) -> int:
    out = solve_policy(rc.params, rc.solver)
    sol, ladder = out.solution, out.ladder
    header = ["rung", "activity", "c_hat", "eta", "theta", "tau", "w_star", "q_star"]
    rows = []
    import math

    sqrt_n = math.sqrt(rc.params.scaling_n)
    for rung, orig in enumerate(ladder.order):
        rows.append(
            [
                rung + 1,
                ladder.names[rung],
                ladder.c_hat[rung],
                ladder.eta[rung],
                ladder.theta[rung + 1],
                sol.tau[rung],
                sqrt_n * sol.tau[rung],
                out.q_star_sorted[rung],
            ]
        )
    meta = _meta_lines(
        rc,
        {
            "beta_star": _fmt(sol.beta_star),
            "beta_lower": _fmt(sol.beta_lower),
            "terminal_gap": _fmt(sol.terminal_gap),
            "theta0": _fmt(ladder.theta[0]),
            "theta0_analytic": _fmt(ladder.theta0_analytic),
            "kappa": _fmt(ladder.kappa),
            "sigma_w2": _fmt(ladder.sigma_w2),
            "x_max": _fmt(sol.x_max),
        },
    )
    _atomic_write(os.path.join(out_dir, "thresholds.csv"), _csv(meta, header, rows))
    print(f"beta* = {sol.beta_star:.6f}  (bracket floor {sol.beta_lower:.6f}, terminal gap {sol.terminal_gap:.2e})")
    print(f"theta0 = {ladder.theta[0]:.4f} (analytic {ladder.theta0_analytic:.4f}), kappa = {ladder.kappa:.5f}, sigma_w2 = {ladder.sigma_w2:.4f}")
    print(f"{'rung':>4s} {'activity':16s} {'c_hat':>9s} {'tau':>10s} {'q*':>10s}")
    for rung in range(ladder.n_rungs):
        print(
            f"{rung + 1:4d} {ladder.names[rung]:16s} {ladder.c_hat[rung]:9.4f} "
            f"{sol.tau[rung]:10.5f} {out.q_star_sorted[rung]:10.1f}"
        )
    return EXIT_OK


def _solve_if_needed(rc: RunConfig, specs: list[str]) -> SolveOutput | None:
    if any(s.strip() == "dynamic" for s in specs):
        return solve_policy(rc.params, rc.solver)
    return None


def cmd_simulate(rc: RunConfig, out_dir: str, policy_specs: list[str]) -> int:
    specs = policy_specs or rc.experiment.policies
    solve_out = _solve_if_needed(rc, specs)
    policies = [parse_policy_spec(s, rc, solve_out) for s in specs]
    report = run_experiment(rc.sim, policies, labels=[s.strip() for s in specs])
    rows = _report_rows(report, len(rc.params.activities))
    _atomic_write(os.path.join(out_dir, "report.csv"), _csv(_meta_lines(rc), ["policy", "metric", "mean", "half95"], rows))
    _print_report(report)
    return EXIT_OK


def cmd_enumerate(rc: RunConfig, out_dir: str) -> int:
    report = enumerate_static(rc.sim)
    rows = _report_rows(report, len(rc.params.activities))
    _atomic_write(os.path.join(out_dir, "report.csv"), _csv(_meta_lines(rc), ["policy", "metric", "mean", "half95"], rows))
    _print_report(report)
    return EXIT_OK


def cmd_sweep(rc: RunConfig, out_dir: str) -> int:
    gammas = rc.experiment.sweep_gammas
    if not gammas:
        raise ConfigError("experiment.sweep_gammas is empty")
    rows_out = []
    hook = make_solver_hook(rc.solver)
    for row in sweep_gamma(rc.sim, gammas, hook):
        rows_out.append(
            [
                row.gamma,
                row.best_static_label,
                row.best_static_total,
                row.dynamic_total,
                row.improvement_pct,
                row.improvement_halfwidth,
            ]
        )
        print(
            f"gamma={row.gamma:.3f}  best static {row.best_static_label:14s} "
            f"${row.best_static_total:8.1f}  dynamic ${row.dynamic_total:8.1f}  "
            f"improvement {row.improvement_pct:5.1f}%"
        )
    header = ["gamma", "best_static", "best_static_total", "dynamic_total", "improvement_pct", "improvement_half95"]
    _atomic_write(os.path.join(out_dir, "sweep.csv"), _csv(_meta_lines(rc), header, rows_out))
    return EXIT_OK


def cmd_tune(rc: RunConfig, out_dir: str) -> int:
    grid = rc.experiment.theta0_grid
    if not grid:
        raise ConfigError("experiment.theta0_grid is empty")
    result = tune_theta0(rc.sim, grid, make_theta_solver_hook(rc.solver))
    rows = [
        [r.theta0, r.total_cost, r.halfwidth, 1 if r.theta0 == result.best_theta0 else 0]
        for r in result.rows
    ]
    _atomic_write(
        os.path.join(out_dir, "tune.csv"),
        _csv(_meta_lines(rc), ["theta0", "total_cost", "half95", "best"], rows),
    )
    for r in result.rows:
        tag = " <- best" if r.theta0 == result.best_theta0 else ""
        print(f"theta0={r.theta0:7.3f}  total ${r.total_cost:8.1f} +/- {r.halfwidth:6.1f}{tag}")
    return EXIT_OK


def cmd_transition(rc: RunConfig, out_dir: str) -> int:
    solve_out = solve_policy(rc.params, rc.solver)
    static = parse_policy_spec("static:" + rc.experiment.transition_static, rc, None)
    from .params import DAYS_PER_YEAR

    switch_day = rc.experiment.transition_switch_year * DAYS_PER_YEAR
    rep = transition_experiment(
        rc.sim,
        static,
        solve_out.policy,
        switch_day=switch_day,
        total_years=rc.experiment.transition_total_years,
        replications=rc.experiment.transition_replications,
    )
    meta = _meta_lines(rc, {"switch_quarter": rep.switch_quarter})
    header_a = ["quarter", "mean_queue", "mean_queue_half95", "abandon_pct", "activity_cost"]
    rows_a = [
        [q, rep.a_queue[i], rep.a_queue_hw[i], rep.a_abandon[i], rep.a_act_cost[i]]
        for i, q in enumerate(rep.quarters)
    ]
    header_b = header_a + ["diff_queue", "diff_queue_half95"]
    rows_b = [
        [q, rep.b_queue[i], rep.b_queue_hw[i], rep.b_abandon[i], rep.b_act_cost[i], rep.diff_queue[i], rep.diff_queue_hw[i]]
        for i, q in enumerate(rep.quarters)
    ]
    _atomic_write(os.path.join(out_dir, "transition_a.csv"), _csv(meta, header_a, rows_a))
    _atomic_write(os.path.join(out_dir, "transition_b.csv"), _csv(meta, header_b, rows_b))
    pre = range(rep.switch_quarter - 20, rep.switch_quarter - 1)
    gap = sum(rep.diff_queue[q] for q in pre) / len(pre)
    q2 = rep.switch_quarter + 1  # second quarter after switching, 0-based idx q2-1
    print(f"static-period queue gap (B-A): {gap:.1f} volunteers")
    print(
        f"post-switch quarter {q2}: diff {rep.diff_queue[q2 - 1]:.2f} "
        f"+/- {rep.diff_queue_hw[q2 - 1]:.2f}"
    )
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="volunteerops", description=__doc__)
    ap.add_argument("command", choices=["solve", "simulate", "sweep", "enumerate", "tune", "transition"])
    ap.add_argument("--config", required=True, help="path to the YAML run configuration")
    ap.add_argument("--policy", action="append", default=[], help="policy spec for simulate (repeatable)")
    ap.add_argument("--out", default=".", help="output directory for CSV artifacts")
    ap.add_argument("--seed", type=int, default=None, help="override simulation seed")
    ap.add_argument("--reps", type=int, default=None, help="override replication count")
    args = ap.parse_args(argv)

    try:
        rc = parse_config(args.config)
        if args.seed is not None:
            rc = replace(rc, sim=replace(rc.sim, seed=args.seed))
        if args.reps is not None:
            rc = replace(rc, sim=replace(rc.sim, replications=args.reps))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if args.command == "solve":
            return cmd_solve(rc, args.out)
        if args.command == "simulate":
            return cmd_simulate(rc, args.out, args.policy)
        if args.command == "enumerate":
            return cmd_enumerate(rc, args.out)
        if args.command == "sweep":
            return cmd_sweep(rc, args.out)
        if args.command == "tune":
            return cmd_tune(rc, args.out)
        if args.command == "transition":
            return cmd_transition(rc, args.out)
        raise AssertionError(args.command)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, LadderError, ScalingError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        print("hint: raise solver.x_max, check activity marginal-cost ordering", file=sys.stderr)
        return EXIT_SOLVER
    except ValueError as exc:
        print(f"simulation failure: {exc}", file=sys.stderr)
        return EXIT_SIM


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
