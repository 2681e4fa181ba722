"""Raw queueing-system parameters, heavy-traffic scaling, and the drift ladder.

Two parameter spaces live here.  ``NthSystemParams`` describes the operation in
natural units (volunteers, arrivals/year, dollars/year).  ``scale_to_limit``
maps it onto the limit system used by the solver, and ``derive_ladder`` reduces
the limit system to the one-dimensional control structure: the ordered drifts
theta_0 < ... < theta_L, the drift increments eta_l, and the marginal control
costs c_hat_l = F_l / eta_l.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

DAYS_PER_YEAR = 364  # 52 weeks x 7 days
WEEKS_PER_YEAR = 52

# Traffic intensity must sit within this band of 1 for the scaling to be
# meaningful.
HEAVY_TRAFFIC_BAND = 0.05


class Kind(enum.Enum):
    REPEAT = "repeat"
    ONE_TIME = "one_time"


@dataclass
class VolunteerClass:
    """One volunteer class of the raw (n-th) system.

    Repeat classes carry ``population`` and ``repose_exit_rate`` (per volunteer
    per year); one-time classes carry ``arrival_rate`` (arrivals/year).
    ``abandon_rate`` is a per-day hazard while on the sign-up list.
    """

    name: str
    kind: Kind
    abandon_rate: float  # per day
    service_rate: float  # slots/year, shared by every class
    population: int | None = None
    repose_exit_rate: float | None = None  # per year per volunteer
    arrival_rate: float | None = None  # arrivals/year
    mix_weight: float = 0.0

    @property
    def annual_arrivals(self) -> float:
        """Baseline arrivals/year contributed by this class."""
        if self.kind is Kind.REPEAT:
            return float(self.population) * float(self.repose_exit_rate)
        return float(self.arrival_rate)


@dataclass
class EngagementActivity:
    """A costed engagement activity of the raw system.

    ``repose_boosts[j]`` raises class j's repose exit rate (per year per
    volunteer) while the activity runs continuously; ``arrival_boosts[j]``
    raises a one-time class's arrival rate (arrivals/year).
    ``boost_per_activation`` is the simulator-side lump of extra arrivals per
    scheduled activation.
    """

    name: str
    repeat_targets: tuple[int, ...]
    onetime_targets: tuple[int, ...]
    fixed_cost: float  # $/year when continuously active
    schedule_frequency: int  # activations/year
    boost_per_activation: float  # extra arrivals per activation
    repose_boosts: dict[int, float] = field(default_factory=dict)
    arrival_boosts: dict[int, float] = field(default_factory=dict)

    @property
    def cost_per_activation(self) -> float:
        return self.fixed_cost / self.schedule_frequency

    def annual_boost_arrivals(self, classes: list[VolunteerClass]) -> float:
        """Arrivals/year implied by the per-class boosts."""
        total = sum(self.repose_boosts[j] * classes[j].population for j in self.repeat_targets)
        total += sum(self.arrival_boosts[j] for j in self.onetime_targets)
        return total


@dataclass
class NthSystemParams:
    classes: list[VolunteerClass]
    activities: list[EngagementActivity]
    scaling_n: float
    idleness_penalty: float  # $ per unfilled slot
    slots_per_day: int
    working_days_per_week: int

    @property
    def working_days_per_year(self) -> int:
        return WEEKS_PER_YEAR * self.working_days_per_week

    @property
    def annual_capacity(self) -> float:
        return float(self.slots_per_day * self.working_days_per_year)

    @property
    def total_annual_arrivals(self) -> float:
        return sum(c.annual_arrivals for c in self.classes)

    @property
    def traffic_intensity(self) -> float:
        """rho^n = sum_j r_j^n k_j^n / mu_j^n + sum_j lambda_j^n / mu_j^n."""
        return sum(c.annual_arrivals / c.service_rate for c in self.classes)


def fcfs_mix_weights(classes: list[VolunteerClass]) -> list[float]:
    """Mix weights x_j of the FCFS discipline: class shares of baseline arrivals."""
    total = sum(c.annual_arrivals for c in classes)
    return [c.annual_arrivals / total for c in classes]


@dataclass
class Diagnostic:
    field: str
    expected: str
    actual: str

    def __str__(self) -> str:  # pragma: no cover - cosmetic
        return f"{self.field}: expected {self.expected}, got {self.actual}"


def validate_nth_params(params: NthSystemParams) -> list[Diagnostic]:
    """Check every structural invariant; returns one diagnostic per violation."""
    out: list[Diagnostic] = []

    def bad(field_name: str, expected: str, actual) -> None:
        out.append(Diagnostic(field_name, expected, str(actual)))

    if not params.classes:
        bad("classes", "at least one volunteer class", "none")
        return out
    if params.scaling_n <= 0:
        bad("scaling_n", "> 0", params.scaling_n)
    if params.idleness_penalty <= 0:
        bad("idleness_penalty", "> 0", params.idleness_penalty)

    for i, c in enumerate(params.classes):
        tag = f"classes[{i}]({c.name})"
        if c.kind is Kind.REPEAT:
            if c.population is None or c.repose_exit_rate is None:
                bad(f"{tag}.population/repose_exit_rate", "set for repeat class", "missing")
                continue
            if c.arrival_rate is not None:
                bad(f"{tag}.arrival_rate", "unset for repeat class", c.arrival_rate)
            if c.population <= 0:
                bad(f"{tag}.population", "> 0", c.population)
            if c.repose_exit_rate <= 0:
                bad(f"{tag}.repose_exit_rate", "> 0", c.repose_exit_rate)
        else:
            if c.arrival_rate is None:
                bad(f"{tag}.arrival_rate", "set for one-time class", "missing")
                continue
            if c.population is not None or c.repose_exit_rate is not None:
                bad(f"{tag}.population/repose_exit_rate", "unset for one-time class", "set")
            if c.arrival_rate <= 0:
                bad(f"{tag}.arrival_rate", "> 0", c.arrival_rate)
        if c.abandon_rate < 0:
            bad(f"{tag}.abandon_rate", ">= 0 (abandonment_rate negative)", c.abandon_rate)
        if c.service_rate <= 0:
            bad(f"{tag}.service_rate", "> 0", c.service_rate)
        if c.mix_weight <= 0:
            bad(f"{tag}.mix_weight", "> 0", c.mix_weight)

    mus = {c.service_rate for c in params.classes}
    if len(mus) > 1:
        bad("classes[*].service_rate", "single shared service rate", sorted(mus))
    capacity = params.annual_capacity
    for c in params.classes:
        if not math.isclose(c.service_rate, capacity, rel_tol=1e-9):
            bad(
                "service_rate",
                f"slots_per_day x working days/year = {capacity:g}",
                c.service_rate,
            )
            break

    rho = params.traffic_intensity
    if abs(rho - 1.0) > HEAVY_TRAFFIC_BAND:
        bad(
            "traffic_intensity",
            f"within {1 - HEAVY_TRAFFIC_BAND:.2f}..{1 + HEAVY_TRAFFIC_BAND:.2f} heavy-traffic band",
            f"{rho:.4g} exceeds band" if rho > 1 else f"{rho:.4g} below band",
        )

    n_classes = len(params.classes)
    for i, a in enumerate(params.activities):
        tag = f"activities[{i}]({a.name})"
        if a.fixed_cost <= 0:
            bad(f"{tag}.fixed_cost", "> 0", a.fixed_cost)
        if a.schedule_frequency <= 0:
            bad(f"{tag}.schedule_frequency", "> 0", a.schedule_frequency)
            continue
        ok_targets = True
        for j in a.repeat_targets:
            if not (0 <= j < n_classes) or params.classes[j].kind is not Kind.REPEAT:
                bad(f"{tag}.repeat_targets", "indices of repeat classes", j)
                ok_targets = False
        for j in a.onetime_targets:
            if not (0 <= j < n_classes) or params.classes[j].kind is not Kind.ONE_TIME:
                bad(f"{tag}.onetime_targets", "indices of one-time classes", j)
                ok_targets = False
        if not ok_targets:
            continue
        if any(v < 0 for v in a.repose_boosts.values()) or any(
            v < 0 for v in a.arrival_boosts.values()
        ):
            bad(f"{tag}.boosts", "nonnegative", "negative boost present")
        missing = [j for j in a.repeat_targets if j not in a.repose_boosts] + [
            j for j in a.onetime_targets if j not in a.arrival_boosts
        ]
        if missing:
            bad(f"{tag}.boosts", "one boost per target class", f"missing for {missing}")
            continue
        implied = a.annual_boost_arrivals(params.classes)
        scheduled = a.boost_per_activation * a.schedule_frequency
        if abs(implied - scheduled) > 1.0:
            bad(
                f"{tag}.boost_per_activation",
                f"x frequency within 1 arrival/year of per-class boosts ({implied:.2f})",
                scheduled,
            )
    return out


@dataclass
class LimitClass:
    name: str
    kind: Kind
    abandon_rate: float  # per day, carried through unscaled
    mu: float
    mix_weight: float
    alpha: float
    k_hat: float | None = None  # repeat only
    r: float | None = None  # repeat only, per year
    lam: float | None = None  # one-time only, per year

    @property
    def balanced_share(self) -> float:
        """This class's term of the balanced-load sum r_j k_hat_j/mu + lambda_j/mu."""
        if self.kind is Kind.REPEAT:
            return self.r * self.k_hat / self.mu
        return self.lam / self.mu


@dataclass
class LimitActivity:
    name: str
    repeat_targets: tuple[int, ...]
    onetime_targets: tuple[int, ...]
    fixed_cost: float  # F_l = F_l^n / sqrt(n)
    schedule_frequency: int
    boost_per_activation: float
    repose_boosts: dict[int, float] = field(default_factory=dict)  # r_hat = sqrt(n) r_hat^n
    arrival_boosts: dict[int, float] = field(default_factory=dict)  # lam_hat = lam_hat^n/sqrt(n)


@dataclass
class LimitParams:
    classes: list[LimitClass]
    activities: list[LimitActivity]
    n: float
    p: float  # idleness penalty, carried numerically as p^n
    slots_per_day: int
    working_days_per_week: int
    rho_n: float = 1.0  # traffic intensity of the source system
    alpha_mode: str = "balanced"  # "balanced" (rates divided by rho) | "supplied"


class ScalingError(ValueError):
    pass


def scale_to_limit(
    params: NthSystemParams, alphas: list[float] | None = None
) -> LimitParams:
    """Map the n-th system onto the limit system.

    When ``alphas`` is omitted, the excess-capacity constants are derived so
    the balanced-load identity holds exactly: every base rate is divided by
    rho^n and alpha_j = sqrt(n) (r_j^n - r_j).  For the overloaded calibrations
    of interest (rho^n > 1) this yields positive alphas, matching the source
    calibration's published constants.  When ``alphas`` is supplied, rates
    follow the heavy-traffic recipe r_j = r_j^n + alpha_j/sqrt(n) verbatim.
    """
    diags = validate_nth_params(params)
    if diags:
        raise ScalingError(f"invalid n-th system parameters: {[str(d) for d in diags]}")
    n = params.scaling_n
    if n <= 0:
        raise ScalingError("scaling_n must be positive")
    sqrt_n = math.sqrt(n)
    rho = params.traffic_intensity
    if alphas is not None and len(alphas) != len(params.classes):
        raise ScalingError("one alpha per class required")

    classes: list[LimitClass] = []
    for i, c in enumerate(params.classes):
        mu = c.service_rate / n
        if c.kind is Kind.REPEAT:
            base = c.repose_exit_rate
            rate = base + alphas[i] / sqrt_n if alphas is not None else base / rho
            alpha = alphas[i] if alphas is not None else sqrt_n * (base - rate)
            if rate <= 0:
                raise ScalingError(f"scaled repose rate for {c.name} is nonpositive")
            classes.append(
                LimitClass(
                    name=c.name,
                    kind=c.kind,
                    abandon_rate=c.abandon_rate,
                    mu=mu,
                    mix_weight=c.mix_weight,
                    alpha=alpha,
                    k_hat=c.population / n,
                    r=rate,
                )
            )
        else:
            base = c.arrival_rate / n
            rate = base + alphas[i] / sqrt_n if alphas is not None else base / rho
            alpha = alphas[i] if alphas is not None else sqrt_n * (base - rate)
            if rate <= 0:
                raise ScalingError(f"scaled arrival rate for {c.name} is nonpositive")
            classes.append(
                LimitClass(
                    name=c.name,
                    kind=c.kind,
                    abandon_rate=c.abandon_rate,
                    mu=mu,
                    mix_weight=c.mix_weight,
                    alpha=alpha,
                    lam=rate,
                )
            )

    activities: list[LimitActivity] = []
    for a in params.activities:
        activities.append(
            LimitActivity(
                name=a.name,
                repeat_targets=a.repeat_targets,
                onetime_targets=a.onetime_targets,
                fixed_cost=a.fixed_cost / sqrt_n,
                schedule_frequency=a.schedule_frequency,
                boost_per_activation=a.boost_per_activation,
                repose_boosts={j: v * sqrt_n for j, v in a.repose_boosts.items()},
                arrival_boosts={j: v / sqrt_n for j, v in a.arrival_boosts.items()},
            )
        )
    return LimitParams(
        classes=classes,
        activities=activities,
        n=n,
        p=params.idleness_penalty,
        slots_per_day=params.slots_per_day,
        working_days_per_week=params.working_days_per_week,
        rho_n=rho,
        alpha_mode="balanced" if alphas is None else "supplied",
    )


def unscale_from_limit(limit: LimitParams) -> NthSystemParams:
    """Exact inverse of :func:`scale_to_limit`."""
    n = limit.n
    sqrt_n = math.sqrt(n)

    def base_rate(rate: float, alpha: float) -> float:
        if limit.alpha_mode == "balanced":
            return rate * limit.rho_n
        return rate - alpha / sqrt_n

    classes: list[VolunteerClass] = []
    for c in limit.classes:
        if c.kind is Kind.REPEAT:
            classes.append(
                VolunteerClass(
                    name=c.name,
                    kind=c.kind,
                    abandon_rate=c.abandon_rate,
                    service_rate=c.mu * n,
                    population=int(round(c.k_hat * n)),
                    repose_exit_rate=base_rate(c.r, c.alpha),
                    mix_weight=c.mix_weight,
                )
            )
        else:
            classes.append(
                VolunteerClass(
                    name=c.name,
                    kind=c.kind,
                    abandon_rate=c.abandon_rate,
                    service_rate=c.mu * n,
                    arrival_rate=base_rate(c.lam, c.alpha) * n,
                    mix_weight=c.mix_weight,
                )
            )
    activities: list[EngagementActivity] = []
    for a in limit.activities:
        activities.append(
            EngagementActivity(
                name=a.name,
                repeat_targets=a.repeat_targets,
                onetime_targets=a.onetime_targets,
                fixed_cost=a.fixed_cost * sqrt_n,
                schedule_frequency=a.schedule_frequency,
                boost_per_activation=a.boost_per_activation,
                repose_boosts={j: v / sqrt_n for j, v in a.repose_boosts.items()},
                arrival_boosts={j: v * sqrt_n for j, v in a.arrival_boosts.items()},
            )
        )
    return NthSystemParams(
        classes=classes,
        activities=activities,
        scaling_n=n,
        idleness_penalty=limit.p,
        slots_per_day=limit.slots_per_day,
        working_days_per_week=limit.working_days_per_week,
    )


def balanced_load_check(limit: LimitParams) -> float:
    """Residual |sum r_j k_hat_j/mu_j + sum lambda_j/mu_j - 1|."""
    return abs(sum(c.balanced_share for c in limit.classes) - 1.0)


@dataclass
class DriftLadder:
    """The one-dimensional control structure consumed by the solver.

    ``theta[0]`` is the uncontrolled drift; rung l adds increment ``eta[l-1]``
    at marginal cost ``c_hat[l-1]``.  Activities are stored sorted by
    ascending marginal cost; ``order[i]`` gives the original activity index of
    sorted rung i.
    """

    theta: list[float]  # theta_0 .. theta_L
    eta: list[float]  # eta_1 .. eta_L (sorted order)
    c_hat: list[float]  # marginal costs, strictly increasing
    c_of_theta: list[float]  # c(theta_0)=0 .. c(theta_L)
    kappa: float
    sigma_w2: float
    p: float
    order: list[int]  # sorted rung -> original activity index
    names: list[str]
    theta0_analytic: float

    @property
    def n_rungs(self) -> int:
        return len(self.eta)

    def check(self) -> None:
        if self.theta[0] >= 0:
            raise LadderError(f"theta_0 must be negative, got {self.theta[0]:.6g}")
        if any(e <= 0 for e in self.eta):
            raise LadderError("every drift increment eta_l must be positive")
        for a, b in zip(self.c_hat, self.c_hat[1:]):
            if not a < b:
                raise LadderError(
                    f"marginal costs must be strictly increasing, got {a:.6g} !< {b:.6g}"
                )
        if self.c_hat and self.c_hat[-1] >= self.p:
            raise LadderError(
                f"largest marginal cost {self.c_hat[-1]:.6g} must stay below p={self.p:.6g}"
            )
        if self.kappa <= 0 or self.sigma_w2 <= 0:
            raise LadderError("kappa and sigma_w2 must be positive")


class LadderError(ValueError):
    pass


def derive_ladder(
    limit: LimitParams,
    theta0: float | None = None,
    gamma_units: str = "per_day",
) -> DriftLadder:
    """Build the drift/cost ladder from limit parameters.

    ``gamma_units="per_day"`` feeds the per-day abandonment hazards into kappa
    unconverted, mirroring the source calibration's arithmetic;
    ``"per_year"`` converts them (x 364) first.
    """
    if not limit.activities:
        raise LadderError("at least one engagement activity required")
    if gamma_units not in ("per_day", "per_year"):
        raise LadderError(f"unknown gamma_units {gamma_units!r}")
    gscale = float(DAYS_PER_YEAR) if gamma_units == "per_year" else 1.0

    kappa = 0.0
    for c in limit.classes:
        g = c.abandon_rate * gscale
        kappa += ((c.r + g) if c.kind is Kind.REPEAT else g) * c.mix_weight

    sigma_w2 = 0.0
    for c in limit.classes:
        if c.kind is Kind.REPEAT:
            sigma_w2 += 2.0 * c.r * c.k_hat / c.mu**2
        else:
            sigma_w2 += 2.0 * c.lam / c.mu**2

    etas: list[float] = []
    for a in limit.activities:
        eta = sum(
            limit.classes[j].k_hat * a.repose_boosts[j] / limit.classes[j].mu
            for j in a.repeat_targets
        )
        eta += sum(a.arrival_boosts[j] / limit.classes[j].mu for j in a.onetime_targets)
        if eta <= 0:
            raise LadderError(f"activity {a.name} contributes no drift")
        etas.append(eta)

    c_hats = [a.fixed_cost / eta for a, eta in zip(limit.activities, etas)]
    for i, a in enumerate(limit.activities):
        for k in range(i + 1, len(limit.activities)):
            if c_hats[i] == c_hats[k]:
                raise LadderError(
                    f"marginal-cost tie between activities {a.name} and "
                    f"{limit.activities[k].name}; merge them before solving"
                )
    order = sorted(range(len(c_hats)), key=lambda i: c_hats[i])

    theta0_analytic = -sum(
        (c.k_hat * c.alpha if c.kind is Kind.REPEAT else c.alpha) / c.mu
        for c in limit.classes
    )
    theta_0 = theta0 if theta0 is not None else theta0_analytic
    if theta_0 >= 0:
        raise LadderError(
            f"effective theta_0 = {theta_0:.6g} is nonnegative; the calibration "
            "is overloaded, pass an explicit theta0 override"
        )

    theta = [theta_0]
    c_of_theta = [0.0]
    for i in order:
        theta.append(theta[-1] + etas[i])
        c_of_theta.append(c_of_theta[-1] + c_hats[i] * etas[i])

    ladder = DriftLadder(
        theta=theta,
        eta=[etas[i] for i in order],
        c_hat=[c_hats[i] for i in order],
        c_of_theta=c_of_theta,
        kappa=kappa,
        sigma_w2=sigma_w2,
        p=limit.p,
        order=order,
        names=[limit.activities[i].name for i in order],
        theta0_analytic=theta0_analytic,
    )
    ladder.check()
    return ladder


def with_abandon_rate(params: NthSystemParams, gamma: float) -> NthSystemParams:
    """Copy of ``params`` with every class's abandonment hazard set to ``gamma``."""
    return replace(
        params,
        classes=[replace(c, abandon_rate=gamma) for c in params.classes],
    )
