"""Daily-period discrete-event simulation of the volunteer sign-up operation.

One simulated day proceeds in a fixed order:

1. every activity with a scheduled opportunity today is decided (static: by
   membership, dynamic: total queue vs. its threshold); an activated activity
   boosts the affected classes' arrival rates until its next opportunity,
2. per-class arrivals are drawn from Poisson counts at the day's effective
   rates (repeat classes thinned by the off-repose population factor),
3. entries whose abandonment clock expired leave the list,
4. on working days the first min(queue, slots) entries are served FCFS;
   unfilled slots accrue the idleness penalty.

Randomness comes from counter-based Philox streams keyed by (seed,
replication, purpose) and jumped to a per-day block, so two policies under
common random numbers consume identical arrival/slot randomness on every
single day no matter how their decisions diverge.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.random import Generator, Philox

from .params import DAYS_PER_YEAR, Kind, NthSystemParams, fcfs_mix_weights

DAYS_PER_QUARTER = 91  # 13 weeks

# stream purposes: 0..J-1 per-class arrivals, then abandonment, slots
_PURPOSE_ABANDON = 1000
_PURPOSE_SLOTS = 1001


# ---------------------------------------------------------------------------
# configuration


@dataclass
class SlotsModel:
    """Fixed(count) or Discrete3(a1,a2,a3) daily slot counts (probs 1/4, 1/2, 1/4)."""

    kind: str = "fixed"  # "fixed" | "discrete3"
    values: tuple[int, int, int] | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("fixed", "discrete3"):
            raise ValueError(f"unknown slots model {self.kind!r}")
        if self.kind == "discrete3" and (self.values is None or len(self.values) != 3):
            raise ValueError("discrete3 slots model needs three values")


@dataclass
class AbandonModel:
    """Exponential(per-class gamma/day) or Gamma(shape, rate/day) time to abandon."""

    kind: str = "exponential"  # "exponential" | "gamma"
    shape: float | None = None
    rate: float | None = None  # per day

    def __post_init__(self) -> None:
        if self.kind not in ("exponential", "gamma"):
            raise ValueError(f"unknown abandonment model {self.kind!r}")
        if self.kind == "gamma" and (not self.shape or not self.rate):
            raise ValueError("gamma abandonment needs shape and rate")


@dataclass
class SimConfig:
    params: NthSystemParams
    horizon_years: int
    warmup_years: int
    measure_years: int
    replications: int
    seed: int
    slots_model: SlotsModel = field(default_factory=SlotsModel)
    abandon_model: AbandonModel = field(default_factory=AbandonModel)
    crn: bool = True
    service_discipline: str = "fcfs"  # "fcfs" | "priority"

    def __post_init__(self) -> None:
        if self.warmup_years + self.measure_years > self.horizon_years:
            raise ValueError("warmup + measure window exceeds horizon")
        if self.service_discipline not in ("fcfs", "priority"):
            raise ValueError(f"unknown service discipline {self.service_discipline!r}")


# ---------------------------------------------------------------------------
# policies


@dataclass(frozen=True)
class StaticPolicy:
    active: frozenset[int]  # activity indices, 0-based

    def label(self) -> str:
        return "static:" + ",".join(str(i + 1) for i in sorted(self.active))


@dataclass(frozen=True)
class DynamicPolicy:
    """Queue-count thresholds, one per activity (activity-list order).

    Activity l fires at an opportunity iff the current total queue is below
    thresholds[l].  Sorted by descending threshold these must be strictly
    decreasing (the nested structure).
    """

    thresholds: tuple[float, ...]

    def __post_init__(self) -> None:
        ordered = sorted(self.thresholds, reverse=True)
        if any(a <= b for a, b in zip(ordered, ordered[1:])):
            raise ValueError("dynamic thresholds must be strictly decreasing")

    def label(self) -> str:
        return "dynamic"


@dataclass(frozen=True)
class SwitchPolicy:
    first: StaticPolicy | DynamicPolicy
    second: StaticPolicy | DynamicPolicy
    switch_day: int

    def label(self) -> str:
        return f"switch@{self.switch_day}:{self.first.label()}->{self.second.label()}"


Policy = StaticPolicy | DynamicPolicy | SwitchPolicy


# ---------------------------------------------------------------------------
# results


@dataclass
class QuarterlySeries:
    mean_queue: list[float]
    abandon_pct: list[float]
    activity_cost: list[float]


@dataclass
class SimMetrics:
    activity_cost: float  # $/yr over the measure window
    idle_cost: float  # $/yr
    total_cost: float  # $/yr
    idle_pct: float
    abandon_pct: float
    activity_usage_pct: tuple[float, ...]
    mean_queue_length: float
    arrivals: int  # whole horizon
    served: int
    abandoned: int
    final_queue: int
    quarterly: QuarterlySeries | None = None

    def scalar(self, name: str) -> float:
        return float(getattr(self, name))


SCALAR_METRICS = (
    "activity_cost",
    "idle_cost",
    "total_cost",
    "idle_pct",
    "abandon_pct",
    "mean_queue_length",
)


# ---------------------------------------------------------------------------
# schedules


def schedule_for(frequency: int, working_days_per_week: int) -> tuple[int, ...]:
    """Opportunity days-of-year for an activity with the given annual frequency.

    An activity running once per shift covers every working day; a weekly one
    fires on the first day of each week; anything else is spread evenly over
    the 364-day year.
    """
    working_per_year = working_days_per_week * 52
    if frequency == working_per_year:
        return tuple(d for d in range(DAYS_PER_YEAR) if d % 7 < working_days_per_week)
    if frequency == 52:
        return tuple(d for d in range(DAYS_PER_YEAR) if d % 7 == 0)
    if not 0 < frequency <= DAYS_PER_YEAR:
        raise ValueError(f"cannot schedule {frequency} activations/year")
    return tuple(m * DAYS_PER_YEAR // frequency for m in range(frequency))


# ---------------------------------------------------------------------------
# counter-based random streams


class DayStream:
    """A Philox stream addressed by day: each day owns a disjoint counter block."""

    __slots__ = ("_bitgen", "_template", "_counter", "generator")

    def __init__(self, key: np.ndarray):
        self._bitgen = Philox(key=int(key[0]) | (int(key[1]) << 64))
        self._counter = np.zeros(4, dtype=np.uint64)
        self._template = {
            "bit_generator": "Philox",
            "state": {"counter": self._counter, "key": key},
            "buffer": np.zeros(4, dtype=np.uint64),
            "buffer_pos": 4,
            "has_uint32": 0,
            "uinteger": 0,
        }
        self.generator = Generator(self._bitgen)

    def at_day(self, day: int) -> Generator:
        self._counter[1] = day
        self._bitgen.state = self._template
        return self.generator


def _stream_key(seed: int, rep: int, purpose: int, salt: int) -> np.ndarray:
    ss = np.random.SeedSequence([np.uint64(seed), rep, purpose, salt])
    return ss.generate_state(2, np.uint64)


# ---------------------------------------------------------------------------
# abandonment hazard tables

_HAZARD_CAP = 4000  # days; the daily hazard is flat beyond this


def _hazard_table(model: AbandonModel, gammas: np.ndarray) -> np.ndarray:
    """P(abandon during the next day | waited `age` full days), rows by age 1..cap.

    Exponential clocks are memoryless so every row repeats; Gamma clocks get
    the exact conditional one-day hazard from the survival function.
    """
    n_classes = len(gammas)
    if model.kind == "exponential":
        p = -np.expm1(-gammas)
        return np.tile(p, (_HAZARD_CAP, 1))
    from scipy.stats import gamma as gamma_dist

    ages = np.arange(_HAZARD_CAP + 1, dtype=float)
    surv = gamma_dist.sf(ages, a=model.shape, scale=1.0 / model.rate)
    with np.errstate(divide="ignore", invalid="ignore"):
        cond = 1.0 - surv[1:] / surv[:-1]
    cond = np.where(np.isfinite(cond), cond, 1.0)
    return np.repeat(cond[:, None], n_classes, axis=1)


# ---------------------------------------------------------------------------
# the replication engine


class _ActivityRuntime:
    __slots__ = (
        "index",
        "opportunity_days",
        "gap_after",
        "shares",
        "cost_per_activation",
        "boost",
        "contrib",
    )

    def __init__(self, index, params: NthSystemParams, n_classes: int):
        act = params.activities[index]
        self.index = index
        days = schedule_for(act.schedule_frequency, params.working_days_per_week)
        self.opportunity_days = frozenset(days)
        gaps = {}
        ordered = sorted(days)
        for i, d in enumerate(ordered):
            nxt = ordered[i + 1] if i + 1 < len(ordered) else ordered[0] + DAYS_PER_YEAR
            gaps[d] = nxt - d
        self.gap_after = gaps
        targets = list(act.repeat_targets) + list(act.onetime_targets)
        base = np.array([params.classes[j].annual_arrivals for j in targets])
        shares = np.zeros(n_classes)
        shares[targets] = base / base.sum()
        self.shares = shares
        self.cost_per_activation = act.cost_per_activation
        self.boost = act.boost_per_activation
        self.contrib = np.zeros(n_classes)


def run_replication(
    config: SimConfig,
    policy: Policy,
    rep_index: int,
    policy_salt: int = 0,
    collect_quarterly: bool = False,
) -> SimMetrics:
    """Simulate one replication and return its measure-window metrics.

    ``policy_salt`` keeps streams identical across policies when zero (common
    random numbers) and decorrelates them otherwise.
    """
    params = config.params
    classes = params.classes
    n_classes = len(classes)
    n_acts = len(params.activities)
    total_days = config.horizon_years * DAYS_PER_YEAR
    meas_start = config.warmup_years * DAYS_PER_YEAR
    meas_end = meas_start + config.measure_years * DAYS_PER_YEAR
    wdays = params.working_days_per_week

    is_repeat = np.array([c.kind is Kind.REPEAT for c in classes])
    population = np.array([c.population if c.kind is Kind.REPEAT else 0 for c in classes], dtype=float)
    repose_rate = np.array(
        [c.repose_exit_rate if c.kind is Kind.REPEAT else 0.0 for c in classes]
    )
    onetime_daily = np.array(
        [c.arrival_rate / DAYS_PER_YEAR if c.kind is Kind.ONE_TIME else 0.0 for c in classes]
    )
    gammas = np.array([c.abandon_rate for c in classes])
    hazard = _hazard_table(config.abandon_model, gammas)
    mix = np.array([c.mix_weight for c in classes])
    if not mix.all():
        mix = np.array(fcfs_mix_weights(classes))

    acts = [_ActivityRuntime(i, params, n_classes) for i in range(n_acts)]
    extra_rate = np.zeros(n_classes)

    arr_streams = [
        DayStream(_stream_key(config.seed, rep_index, j, policy_salt)) for j in range(n_classes)
    ]
    abn_stream = DayStream(_stream_key(config.seed, rep_index, _PURPOSE_ABANDON, policy_salt))
    slot_stream = DayStream(_stream_key(config.seed, rep_index, _PURPOSE_SLOTS, policy_salt))

    cohorts: deque[list] = deque()  # [arrival_day, counts ndarray, cohort total]
    q_by_class = np.zeros(n_classes, dtype=np.int64)
    total_queue = 0

    arrivals_h = served_h = abandoned_h = 0
    arrivals_w = abandoned_w = 0
    unfilled_w = offered_w = 0
    activations_w = np.zeros(n_acts, dtype=np.int64)
    opportunities_w = np.zeros(n_acts, dtype=np.int64)
    activity_cost_w = 0.0
    queue_sum_w = 0.0
    queue_days_w = 0

    n_quarters = (total_days + DAYS_PER_QUARTER - 1) // DAYS_PER_QUARTER if collect_quarterly else 0
    q_queue_sum = np.zeros(n_quarters)
    q_days = np.zeros(n_quarters, dtype=np.int64)
    q_abandoned = np.zeros(n_quarters, dtype=np.int64)
    q_arrivals = np.zeros(n_quarters, dtype=np.int64)
    q_act_cost = np.zeros(n_quarters)

    fixed_slots = config.slots_model.kind == "fixed"
    slot_values = None if fixed_slots else np.array(config.slots_model.values, dtype=np.int64)
    priority = config.service_discipline == "priority"

    repeat_idx = [j for j in range(n_classes) if is_repeat[j]]
    onetime_idx = [j for j in range(n_classes) if not is_repeat[j]]
    lam = np.zeros(n_classes)

    for day in range(total_days):
        doy = day % DAYS_PER_YEAR
        measuring = meas_start <= day < meas_end
        quarter = day // DAYS_PER_QUARTER if collect_quarterly else 0

        # 1. activity decisions at today's opportunities
        active_policy = policy
        if isinstance(policy, SwitchPolicy):
            active_policy = policy.first if day < policy.switch_day else policy.second
        for rt in acts:
            if doy not in rt.opportunity_days:
                continue
            if isinstance(active_policy, StaticPolicy):
                fire = rt.index in active_policy.active
            else:
                fire = total_queue < active_policy.thresholds[rt.index]
            extra_rate -= rt.contrib
            if fire:
                gap = rt.gap_after[doy]
                rt.contrib = rt.shares * (rt.boost / gap)
                extra_rate += rt.contrib
                if measuring:
                    activations_w[rt.index] += 1
                    activity_cost_w += rt.cost_per_activation
                if collect_quarterly:
                    q_act_cost[quarter] += rt.cost_per_activation
            else:
                rt.contrib = np.zeros(n_classes)
            if measuring:
                opportunities_w[rt.index] += 1

        # 2. arrivals
        for j in repeat_idx:
            pool = population[j] - q_by_class[j]
            lam[j] = (repose_rate[j] * pool if pool > 0.0 else 0.0) / DAYS_PER_YEAR + extra_rate[j]
        for j in onetime_idx:
            lam[j] = onetime_daily[j] + extra_rate[j]
        arrived = np.zeros(n_classes, dtype=np.int64)
        n_arrived = 0
        for j in range(n_classes):
            if lam[j] > 0.0:
                cnt = int(arr_streams[j].at_day(day).poisson(lam[j]))
                arrived[j] = cnt
                n_arrived += cnt
        if n_arrived:
            cohorts.append([day, arrived, n_arrived])
            q_by_class += arrived
            total_queue += n_arrived
        arrivals_h += n_arrived
        if measuring:
            arrivals_w += n_arrived
        if collect_quarterly:
            q_arrivals[quarter] += n_arrived

        # 3. abandonment (entries arriving today sit out their first day)
        if cohorts:
            gen = abn_stream.at_day(day)
            gone_today = 0
            for coh in cohorts:
                age = day - coh[0]
                if age < 1 or coh[2] == 0:
                    continue
                p_row = hazard[min(age, _HAZARD_CAP) - 1]
                gone = gen.binomial(coh[1], p_row)
                n_gone = int(gone.sum())
                if n_gone:
                    coh[1] -= gone
                    coh[2] -= n_gone
                    q_by_class -= gone
                    gone_today += n_gone
            if gone_today:
                total_queue -= gone_today
                abandoned_h += gone_today
                if measuring:
                    abandoned_w += gone_today
                if collect_quarterly:
                    q_abandoned[quarter] += gone_today
            while cohorts and cohorts[0][2] == 0:
                cohorts.popleft()

        # 4. service
        if day % 7 < wdays:
            if fixed_slots:
                cap = params.slots_per_day
            else:
                u = slot_stream.at_day(day).random()
                cap = int(slot_values[0 if u < 0.25 else (1 if u < 0.75 else 2)])
            if measuring:
                offered_w += cap
            if priority:
                remaining = _serve_priority(cohorts, q_by_class, mix, cap)
            else:
                remaining = _serve_fcfs(cohorts, q_by_class, cap)
            served_h += cap - remaining
            total_queue -= cap - remaining
            if measuring:
                unfilled_w += remaining

        if measuring:
            queue_sum_w += total_queue
            queue_days_w += 1
        if collect_quarterly:
            q_queue_sum[quarter] += total_queue
            q_days[quarter] += 1

    years = config.measure_years
    activity_cost = activity_cost_w / years
    idle_cost = unfilled_w * params.idleness_penalty / years
    usage = tuple(
        100.0 * a / o if o else 0.0 for a, o in zip(activations_w, opportunities_w)
    )
    quarterly = None
    if collect_quarterly:
        with np.errstate(invalid="ignore", divide="ignore"):
            qq = np.where(q_days > 0, q_queue_sum / np.maximum(q_days, 1), np.nan)
            qa = np.where(q_arrivals > 0, 100.0 * q_abandoned / np.maximum(q_arrivals, 1), 0.0)
        quarterly = QuarterlySeries(
            mean_queue=qq.tolist(),
            abandon_pct=qa.tolist(),
            activity_cost=q_act_cost.tolist(),
        )
    return SimMetrics(
        activity_cost=activity_cost,
        idle_cost=idle_cost,
        total_cost=activity_cost + idle_cost,
        idle_pct=100.0 * unfilled_w / offered_w if offered_w else 0.0,
        abandon_pct=100.0 * abandoned_w / arrivals_w if arrivals_w else 0.0,
        activity_usage_pct=usage,
        mean_queue_length=queue_sum_w / queue_days_w if queue_days_w else 0.0,
        arrivals=arrivals_h,
        served=served_h,
        abandoned=abandoned_h,
        final_queue=int(q_by_class.sum()),
        quarterly=quarterly,
    )


def _serve_fcfs(cohorts: deque, q_by_class: np.ndarray, cap: int) -> int:
    """Serve whole cohorts oldest-first; split the marginal cohort proportionally."""
    while cap > 0 and cohorts:
        coh = cohorts[0]
        size = coh[2]
        if size == 0:
            cohorts.popleft()
            continue
        if size <= cap:
            q_by_class -= coh[1]
            cap -= size
            cohorts.popleft()
        else:
            take = (coh[1] * cap) // size
            short = cap - int(take.sum())
            if short:
                # largest-remainder rounding keeps the split proportional
                rema = (coh[1] * cap) % size
                order = sorted(range(len(rema)), key=lambda j: -rema[j])
                for j in order:
                    if short == 0:
                        break
                    if take[j] < coh[1][j]:
                        take[j] += 1
                        short -= 1
            coh[1] -= take
            coh[2] -= int(take.sum())
            q_by_class -= take
            cap = 0
    return cap


def _serve_priority(cohorts: deque, q_by_class: np.ndarray, mix: np.ndarray, cap: int) -> int:
    """Serve slot-by-slot the class with the largest imbalance Q_j - x_j * total.

    Ties go to the lowest class index; within a class the oldest entry is
    served.  Mirrors the workload-balancing prioritization rule.
    """
    while cap > 0:
        total = q_by_class.sum()
        if total == 0:
            break
        penalty = q_by_class - mix * total
        penalty[q_by_class == 0] = -np.inf
        j = int(np.argmax(penalty))
        for coh in cohorts:
            if coh[1][j] > 0:
                coh[1][j] -= 1
                coh[2] -= 1
                break
        q_by_class[j] -= 1
        cap -= 1
    while cohorts and cohorts[0][2] == 0:
        cohorts.popleft()
    return cap


def with_gamma(config: SimConfig, gamma: float) -> SimConfig:
    """Copy of the config with every class's abandonment hazard replaced."""
    from .params import with_abandon_rate

    return replace(config, params=with_abandon_rate(config.params, gamma))
