"""Configuration ingestion: strict YAML with unit-suffixed keys.

A run configuration has five sections: ``classes``, ``activities``,
``simulation``, ``solver``, ``experiment``.  Unknown keys are hard errors
(with a section.key locus), physical quantities carry their unit in the key
name, and the parsed document round-trips losslessly through
:func:`serialize_config`.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import yaml

from .params import (
    EngagementActivity,
    Kind,
    NthSystemParams,
    VolunteerClass,
    fcfs_mix_weights,
    validate_nth_params,
)
from .pipeline import SolverSettings
from .simulator import AbandonModel, SimConfig, SlotsModel


class ConfigError(ValueError):
    """Raised with a file/key locus for every malformed configuration."""


_CLASS_KEYS = {
    "name",
    "kind",
    "population",
    "repose_exit_rate_per_year",
    "arrival_rate_per_year",
    "gamma_per_day",
    "mix_weight",
}
_ACTIVITY_KEYS = {
    "name",
    "repeat_targets",
    "onetime_targets",
    "fixed_cost_per_year",
    "schedule_frequency_per_year",
    "boost_per_activation",
    "repose_boosts_per_year",
    "arrival_boosts_per_year",
}
_SIMULATION_KEYS = {
    "scaling_n",
    "idleness_penalty_per_slot",
    "slots_per_day",
    "working_days_per_week",
    "horizon_years",
    "warmup_years",
    "measure_years",
    "replications",
    "seed",
    "crn",
    "slots_model",
    "slots_values",
    "abandon_model",
    "abandon_gamma_shape",
    "abandon_gamma_rate_per_day",
    "service_discipline",
}
_SOLVER_KEYS = {
    "theta0",
    "gamma_units",
    "rk4_step",
    "tol_beta_rel",
    "tol_terminal_rel",
    "root_tol",
    "x_max",
}
_EXPERIMENT_KEYS = {
    "policies",
    "theta0_grid",
    "sweep_gammas",
    "transition_total_years",
    "transition_switch_year",
    "transition_replications",
    "transition_static",
}
_SECTIONS = ("classes", "activities", "simulation", "solver", "experiment")


@dataclass
class ExperimentSettings:
    policies: list[str] = field(default_factory=lambda: ["dynamic"])
    theta0_grid: list[float] = field(default_factory=list)
    sweep_gammas: list[float] = field(default_factory=list)
    transition_total_years: int = 50
    transition_switch_year: int = 25
    transition_replications: int = 50
    transition_static: str = ""


@dataclass
class RunConfig:
    params: NthSystemParams
    sim: SimConfig
    solver: SolverSettings
    experiment: ExperimentSettings
    source_path: str
    content_hash: str
    doc: dict = field(repr=False, default_factory=dict)


def _check_keys(mapping: dict, allowed: set, locus: str, path: str) -> None:
    for key in mapping:
        if key not in allowed:
            raise ConfigError(f"{path}: unknown key '{locus}.{key}'")


def _need(mapping: dict, key: str, locus: str, path: str):
    if key not in mapping:
        raise ConfigError(f"{path}: missing key '{locus}.{key}'")
    return mapping[key]


def _num(value, locus: str, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path}: '{locus}' must be a number, got {value!r}")
    return float(value)


def parse_config(path: str) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read ({exc})") from exc
    digest = hashlib.sha256(raw).hexdigest()
    try:
        doc = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        locus = f" at line {mark.line + 1}" if mark is not None else ""
        raise ConfigError(f"{path}: malformed YAML{locus}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: missing section: classes")
    for section in ("classes", "activities", "simulation"):
        if section not in doc:
            raise ConfigError(f"{path}: missing section: {section}")
    for key in doc:
        if key not in _SECTIONS:
            raise ConfigError(f"{path}: unknown section '{key}'")

    return _build(doc, path, digest)


def _build(doc: dict, path: str, digest: str) -> RunConfig:
    # --- classes -----------------------------------------------------------
    sim_raw = doc["simulation"]
    if not isinstance(sim_raw, dict):
        raise ConfigError(f"{path}: section 'simulation' must be a mapping")
    _check_keys(sim_raw, _SIMULATION_KEYS, "simulation", path)
    slots_per_day = int(_num(_need(sim_raw, "slots_per_day", "simulation", path), "simulation.slots_per_day", path))
    wdpw = int(_num(_need(sim_raw, "working_days_per_week", "simulation", path), "simulation.working_days_per_week", path))
    capacity = float(slots_per_day * 52 * wdpw)

    classes_raw = doc["classes"]
    if not isinstance(classes_raw, list) or not classes_raw:
        raise ConfigError(f"{path}: section 'classes' must be a nonempty list")
    names: list[str] = []
    classes: list[VolunteerClass] = []
    for i, c in enumerate(classes_raw):
        locus = f"classes[{i}]"
        if not isinstance(c, dict):
            raise ConfigError(f"{path}: '{locus}' must be a mapping")
        _check_keys(c, _CLASS_KEYS, locus, path)
        name = str(_need(c, "name", locus, path))
        if name in names:
            raise ConfigError(f"{path}: duplicate class name '{name}'")
        kind_s = str(_need(c, "kind", locus, path))
        if kind_s not in ("repeat", "one_time"):
            raise ConfigError(f"{path}: '{locus}.kind' must be 'repeat' or 'one_time'")
        kind = Kind.REPEAT if kind_s == "repeat" else Kind.ONE_TIME
        gamma = _num(_need(c, "gamma_per_day", locus, path), f"{locus}.gamma_per_day", path)
        if kind is Kind.REPEAT:
            for bad_key in ("arrival_rate_per_year",):
                if bad_key in c:
                    raise ConfigError(f"{path}: '{locus}.{bad_key}' invalid for a repeat class (unit mismatch with kind)")
            population = int(_num(_need(c, "population", locus, path), f"{locus}.population", path))
            rate = _num(_need(c, "repose_exit_rate_per_year", locus, path), f"{locus}.repose_exit_rate_per_year", path)
            cls = VolunteerClass(
                name=name, kind=kind, abandon_rate=gamma, service_rate=capacity,
                population=population, repose_exit_rate=rate,
                mix_weight=float(c.get("mix_weight", 0.0)),
            )
        else:
            for bad_key in ("population", "repose_exit_rate_per_year"):
                if bad_key in c:
                    raise ConfigError(f"{path}: '{locus}.{bad_key}' invalid for a one-time class (unit mismatch with kind)")
            rate = _num(_need(c, "arrival_rate_per_year", locus, path), f"{locus}.arrival_rate_per_year", path)
            cls = VolunteerClass(
                name=name, kind=kind, abandon_rate=gamma, service_rate=capacity,
                arrival_rate=rate, mix_weight=float(c.get("mix_weight", 0.0)),
            )
        names.append(name)
        classes.append(cls)
    if all(c.mix_weight == 0.0 for c in classes):
        for c, w in zip(classes, fcfs_mix_weights(classes)):
            c.mix_weight = w

    # --- activities --------------------------------------------------------
    acts_raw = doc["activities"]
    if not isinstance(acts_raw, list):
        raise ConfigError(f"{path}: section 'activities' must be a list")
    activities: list[EngagementActivity] = []
    for i, a in enumerate(acts_raw):
        locus = f"activities[{i}]"
        if not isinstance(a, dict):
            raise ConfigError(f"{path}: '{locus}' must be a mapping")
        _check_keys(a, _ACTIVITY_KEYS, locus, path)
        name = str(_need(a, "name", locus, path))
        rep_targets = tuple(_class_index(t, names, f"{locus}.repeat_targets", path) for t in a.get("repeat_targets", []))
        ot_targets = tuple(_class_index(t, names, f"{locus}.onetime_targets", path) for t in a.get("onetime_targets", []))
        if not rep_targets and not ot_targets:
            raise ConfigError(f"{path}: '{locus}' targets no classes")
        fixed = _num(_need(a, "fixed_cost_per_year", locus, path), f"{locus}.fixed_cost_per_year", path)
        freq = int(_num(_need(a, "schedule_frequency_per_year", locus, path), f"{locus}.schedule_frequency_per_year", path))
        boost = _num(_need(a, "boost_per_activation", locus, path), f"{locus}.boost_per_activation", path)
        repose_boosts = {
            _class_index(k, names, f"{locus}.repose_boosts_per_year", path): float(v)
            for k, v in (a.get("repose_boosts_per_year") or {}).items()
        }
        arrival_boosts = {
            _class_index(k, names, f"{locus}.arrival_boosts_per_year", path): float(v)
            for k, v in (a.get("arrival_boosts_per_year") or {}).items()
        }
        if not repose_boosts and not arrival_boosts:
            repose_boosts, arrival_boosts = _proportional_boosts(
                classes, rep_targets, ot_targets, boost * freq
            )
        activities.append(
            EngagementActivity(
                name=name,
                repeat_targets=rep_targets,
                onetime_targets=ot_targets,
                fixed_cost=fixed,
                schedule_frequency=freq,
                boost_per_activation=boost,
                repose_boosts=repose_boosts,
                arrival_boosts=arrival_boosts,
            )
        )

    params = NthSystemParams(
        classes=classes,
        activities=activities,
        scaling_n=_num(_need(sim_raw, "scaling_n", "simulation", path), "simulation.scaling_n", path),
        idleness_penalty=_num(
            _need(sim_raw, "idleness_penalty_per_slot", "simulation", path),
            "simulation.idleness_penalty_per_slot", path,
        ),
        slots_per_day=slots_per_day,
        working_days_per_week=wdpw,
    )
    diags = validate_nth_params(params)
    if diags:
        raise ConfigError(f"{path}: invariant violations: " + "; ".join(str(d) for d in diags))

    slots_model = SlotsModel(
        kind=str(sim_raw.get("slots_model", "fixed")),
        values=tuple(sim_raw["slots_values"]) if "slots_values" in sim_raw else None,
    )
    abandon_model = AbandonModel(
        kind=str(sim_raw.get("abandon_model", "exponential")),
        shape=sim_raw.get("abandon_gamma_shape"),
        rate=sim_raw.get("abandon_gamma_rate_per_day"),
    )
    try:
        sim = SimConfig(
            params=params,
            horizon_years=int(_num(_need(sim_raw, "horizon_years", "simulation", path), "simulation.horizon_years", path)),
            warmup_years=int(_num(_need(sim_raw, "warmup_years", "simulation", path), "simulation.warmup_years", path)),
            measure_years=int(_num(_need(sim_raw, "measure_years", "simulation", path), "simulation.measure_years", path)),
            replications=int(_num(_need(sim_raw, "replications", "simulation", path), "simulation.replications", path)),
            seed=int(_num(_need(sim_raw, "seed", "simulation", path), "simulation.seed", path)),
            slots_model=slots_model,
            abandon_model=abandon_model,
            crn=bool(sim_raw.get("crn", True)),
            service_discipline=str(sim_raw.get("service_discipline", "fcfs")),
        )
    except ValueError as exc:
        raise ConfigError(f"{path}: simulation: {exc}") from exc

    solver_raw = doc.get("solver", {}) or {}
    _check_keys(solver_raw, _SOLVER_KEYS, "solver", path)
    solver = SolverSettings(
        theta0=solver_raw.get("theta0"),
        gamma_units=str(solver_raw.get("gamma_units", "per_day")),
        rk4_step=float(solver_raw.get("rk4_step", 1e-3)),
        tol_beta_rel=float(solver_raw.get("tol_beta_rel", 1e-8)),
        tol_terminal_rel=float(solver_raw.get("tol_terminal_rel", 1e-3)),
        root_tol=float(solver_raw.get("root_tol", 1e-10)),
        x_max=solver_raw.get("x_max"),
    )
    if solver.gamma_units not in ("per_day", "per_year"):
        raise ConfigError(f"{path}: 'solver.gamma_units' must be per_day or per_year")

    exp_raw = doc.get("experiment", {}) or {}
    _check_keys(exp_raw, _EXPERIMENT_KEYS, "experiment", path)
    experiment = ExperimentSettings(
        policies=[str(p) for p in exp_raw.get("policies", ["dynamic"])],
        theta0_grid=[float(t) for t in exp_raw.get("theta0_grid", [])],
        sweep_gammas=[float(g) for g in exp_raw.get("sweep_gammas", [])],
        transition_total_years=int(exp_raw.get("transition_total_years", 50)),
        transition_switch_year=int(exp_raw.get("transition_switch_year", 25)),
        transition_replications=int(exp_raw.get("transition_replications", 50)),
        transition_static=str(exp_raw.get("transition_static", "")),
    )

    return RunConfig(
        params=params,
        sim=sim,
        solver=solver,
        experiment=experiment,
        source_path=path,
        content_hash=digest,
        doc=_normalize(doc),
    )


def _class_index(token, names: list[str], locus: str, path: str) -> int:
    if isinstance(token, int) and not isinstance(token, bool):
        if 1 <= token <= len(names):
            return token - 1
        raise ConfigError(f"{path}: '{locus}' index {token} out of range")
    if isinstance(token, str) and token in names:
        return names.index(token)
    raise ConfigError(f"{path}: '{locus}' references unknown class {token!r}")


def _proportional_boosts(classes, rep_targets, ot_targets, annual_increase):
    """Split an annual arrival increase over target classes by baseline share."""
    targets = list(rep_targets) + list(ot_targets)
    total = sum(classes[j].annual_arrivals for j in targets)
    repose = {
        j: annual_increase * classes[j].annual_arrivals / total / classes[j].population
        for j in rep_targets
    }
    arrivals = {j: annual_increase * classes[j].annual_arrivals / total for j in ot_targets}
    return repose, arrivals


def _normalize(node):
    """Canonical plain-python form of the document (for hashing/round-trip)."""
    if isinstance(node, dict):
        return {k: _normalize(node[k]) for k in node}
    if isinstance(node, list):
        return [_normalize(v) for v in node]
    return node


def serialize_config(rc: RunConfig) -> str:
    """Emit the configuration document; parse(serialize(parse(f))) is a fixed point."""
    return yaml.safe_dump(rc.doc, sort_keys=False, default_flow_style=False)
