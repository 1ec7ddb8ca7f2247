"""Thermal time and assembly of the season-long decision model.

The remaining season is segmented into thermal weeks (equal degree-day
periods); one :class:`~midas.gdm.TimeStepModule` is instantiated per week and
chained into an influence diagram, steps counted DOWN from n (now) to 1 (last
week before maturity).  Two structures are produced from the same modules:

* ``true``    — disease carries over directly (DiseaseLevelA depends on
                DiseaseLevelB); correct, but the decision problem's
                information scenarios grow with history.
* ``blocked`` — each week's incidence observation screens off the past:
                DiseaseLevelA is rewired to depend on (DiseaseObserv,
                Treatment) with a CPT mixed under a DiseaseLevelB prior.
                Approximate, but the optimization collapses to a per-week
                state (DiseaseObserv, PrevTreatment, PrevDose).

`solve_chain` exploits exactly that collapse for backward induction and is
cross-checked against the generic strong-order solver.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .factors import DiscreteVariable, Evidence, Factor
from .gdm import (
    CultivationFactors,
    DomainError,
    TimeStepModule,
    basic_protection_level,
    blocked_post_treatment,
    build_time_step_module,
)
from .graphs import CHANCE, DECISION, UTILITY, GraphError, InfluenceDiagram, d_separated
from .inference import Policy, SolveResult
from .params import Parameters, StateSchema

__all__ = [
    "AssemblyError",
    "Economics",
    "SeasonSetup",
    "ThermalCalendar",
    "DecisionModel",
    "degree_days",
    "thermal_week_boundaries",
    "assemble",
    "apply_blocking",
    "per_context_priors",
    "solve_chain",
    "blocking_holds",
    "as_network",
]

MAX_STEPS = 20


class AssemblyError(ValueError):
    """Raised when a season model cannot be assembled as requested."""


# ---------------------------------------------------------------------------
# Thermal time
# ---------------------------------------------------------------------------


def degree_days(daily_mean_temps, base: float = 5.0) -> float:
    """Accumulated daily mean temperature above the base (degree-days)."""
    temps = np.asarray(daily_mean_temps, dtype=float)
    if temps.size and not np.all(np.isfinite(temps)):
        raise AssemblyError("temperatures must be finite")
    return float(np.sum(np.maximum(0.0, temps - base)))


@dataclass
class ThermalCalendar:
    """Step lengths of the remaining season, in thermal-week units.

    `delta_taus[i]` belongs to step n-i (countdown order: entry 0 is the
    current week).  Under the default calibration every step is one thermal
    week (delta_tau = 1); a weather-forecast override may rescale step n.
    """

    weeks_to_maturity: int
    degree_days_per_week: float
    delta_taus: list[float] = field(default_factory=list)
    chronological_spans: list[int] = field(default_factory=list)

    def __post_init__(self):
        if len(self.delta_taus) != self.weeks_to_maturity:
            raise AssemblyError("one delta_tau per thermal week is required")
        if any(dt <= 0 for dt in self.delta_taus):
            raise AssemblyError("all step lengths must be positive")

    @staticmethod
    def uniform(weeks: int) -> "ThermalCalendar":
        return ThermalCalendar(weeks, float("nan"), [1.0] * weeks, [7] * weeks)

    def delta_tau_for_step(self, step: int) -> float:
        return self.delta_taus[self.weeks_to_maturity - step]


def thermal_week_boundaries(
    weeks_to_maturity: int,
    climate_normals,
    start_day: int,
    *,
    base_temp: float = 5.0,
    forecast_degree_days: float | None = None,
) -> ThermalCalendar:
    """Split the remaining season into equal degree-day thermal weeks.

    `climate_normals` maps day-of-year (1-based) to the daily mean temperature;
    days wrap around the year.  The total remaining degree-days over
    7 * weeks chronological days define one thermal week as total/weeks, so
    every step has delta_tau 1 under this calibration; the optional forecast
    override rescales the first step to forecast_degree_days / week.
    """
    if weeks_to_maturity < 1:
        raise AssemblyError("weeks_to_maturity must be >= 1")
    if weeks_to_maturity > MAX_STEPS:
        warnings.warn(
            f"weeks_to_maturity {weeks_to_maturity} capped at {MAX_STEPS} steps",
            stacklevel=2,
        )
        weeks_to_maturity = MAX_STEPS

    temps = np.asarray(climate_normals, dtype=float)
    if temps.ndim != 1 or temps.size < 365:
        raise AssemblyError("climate normals must list daily means for a full year")
    horizon_days = 7 * weeks_to_maturity
    days = [(start_day - 1 + i) % temps.size for i in range(horizon_days)]
    daily_dd = np.maximum(0.0, temps[days] - base_temp)
    total = float(daily_dd.sum())
    if total <= 0:
        raise AssemblyError("no degree-days accumulate over the remaining season")
    per_week = total / weeks_to_maturity

    # Chronological span of each equal-degree-day step.
    cumulative = np.cumsum(daily_dd)
    boundaries = [
        int(np.searchsorted(cumulative, per_week * (j + 1) - 1e-9) + 1)
        for j in range(weeks_to_maturity)
    ]
    spans = [b - a for a, b in zip([0] + boundaries[:-1], boundaries)]

    delta_taus = [1.0] * weeks_to_maturity
    if forecast_degree_days is not None:
        if forecast_degree_days <= 0:
            raise AssemblyError("forecast degree-days must be positive")
        delta_taus[0] = forecast_degree_days / per_week
    return ThermalCalendar(weeks_to_maturity, per_week, delta_taus, spans)


# ---------------------------------------------------------------------------
# Season setup and economics
# ---------------------------------------------------------------------------


@dataclass
class Economics:
    """The farmer's numbers; everything downstream is currency per hectare."""

    expected_yield: float = 7.0  # t/ha
    grain_price: float = 150.0  # currency/t
    fungicide_cost_per_label_dose: float = 30.0  # currency/ha
    spray_operation_cost: float = 12.0  # currency/ha

    def validate(self) -> "Economics":
        for name in (
            "expected_yield",
            "grain_price",
            "fungicide_cost_per_label_dose",
            "spray_operation_cost",
        ):
            if getattr(self, name) < 0:
                raise DomainError(f"{name} must be >= 0")
        return self

    def cost(self, dose: float) -> float:
        if dose == 0:
            return 0.0
        return self.spray_operation_cost + dose * self.fungicide_cost_per_label_dose

    def loss_value(self, yield_loss_percent: float) -> float:
        return yield_loss_percent / 100.0 * self.expected_yield * self.grain_price


@dataclass
class SeasonSetup:
    """Everything the assembler needs to know about the case, distilled."""

    cultivation: CultivationFactors = field(default_factory=CultivationFactors)
    economics: Economics = field(default_factory=Economics)
    weeks_to_maturity: int = 4
    prev_treatment_index: int = 0  # "never" by default
    prev_dose_index: int = 0
    initial_disease_prior: np.ndarray | None = None
    coarse_band: str | None = None  # optional severity band for the current week


@dataclass
class DecisionModel:
    """An assembled season model plus its step bookkeeping."""

    diagram: InfluenceDiagram
    structure: str  # "true" | "blocked"
    n_steps: int
    modules: dict  # step -> TimeStepModule
    setup: SeasonSetup
    schema: StateSchema
    params: Parameters
    calendar: ThermalCalendar
    blocking_priors: dict = field(default_factory=dict)  # step -> prior used
    blocking_diagnostics: dict = field(default_factory=dict)

    def step_variables(self, step: int) -> list[str]:
        suffix = f"_{step}"
        return [n for n in self.diagram.kinds if n.endswith(suffix)]

    def information_set(self, step: int) -> list[str]:
        return [f"DiseaseObserv_{step}", f"PrevTreatment_{step}", f"PrevDose_{step}"]

    def decision(self, step: int) -> str:
        return f"Treatment_{step}"


def _band_adjusted(prior: np.ndarray, schema: StateSchema, band: str | None) -> np.ndarray:
    if band is None:
        return prior
    masked = prior * schema.band_mask(band)
    total = masked.sum()
    if total <= 0:
        raise AssemblyError(f"coarse band {band!r} has zero prior mass")
    return masked / total


def apply_blocking(
    module: TimeStepModule, prior_dlb: np.ndarray
) -> tuple[TimeStepModule, int]:
    """Rewire DiseaseLevelA's disease parent onto the observation.

    Returns (blocked module, zero-denominator observation count).  Idempotent:
    a module already carrying the blocked structure is returned unchanged.
    """
    parents = module.parent_roles("DiseaseLevelA")
    if parents == ("DiseaseObserv", "Treatment"):
        return module, 0
    table, zero_states = blocked_post_treatment(module, prior_dlb)
    blocked = TimeStepModule(
        module.time_step,
        module.delta_tau,
        module.cultivation,
        dict(module.cpts),
        dict(module.diagnostics),
    )
    blocked.cpts["DiseaseLevelA"] = (("DiseaseObserv", "Treatment"), table)
    return blocked, zero_states


def assemble(
    setup: SeasonSetup,
    schema: StateSchema,
    params: Parameters,
    structure: str = "blocked",
    *,
    calendar: ThermalCalendar | None = None,
    context_priors: np.ndarray | None = None,
) -> DecisionModel:
    """Chain per-week modules into the season influence diagram.

    Steps run n..1 (n = current week).  Each step contributes the frame
    variables, an information arc set {DiseaseObserv, PrevTreatment,
    PrevDose} -> Treatment, and two utility nodes (treatment cost and the
    value of the disease-induced yield loss).  The next week's inputs
    (DiseaseLevelB, PrevTreatment, PrevDose — and through them ProtectnConc)
    are wired to this week's outputs.  A terminal DiseaseLevelB_0 carries the
    projected severity at maturity.
    """
    if structure not in ("true", "blocked"):
        raise AssemblyError(f"unknown structure {structure!r}")
    n = setup.weeks_to_maturity
    if n < 1:
        raise AssemblyError("weeks_to_maturity must be >= 1")
    if n > MAX_STEPS:
        warnings.warn(f"weeks_to_maturity {n} capped at {MAX_STEPS} steps", stacklevel=2)
        n = MAX_STEPS
    setup.cultivation.validate()
    setup.economics.validate()
    if calendar is None:
        calendar = ThermalCalendar.uniform(n)
    if calendar.weeks_to_maturity != n:
        raise AssemblyError("calendar does not match weeks_to_maturity")
    if params.priors_mode == "per_context" and context_priors is None:
        context_priors = per_context_priors(schema, params, setup.cultivation)

    doses = np.asarray(schema.treatment_doses)
    loss_reps = schema.representatives("YieldLossPct")
    bp_index = basic_protection_level(setup.cultivation, params)

    initial_prior = (
        np.asarray(setup.initial_disease_prior, dtype=float)
        if setup.initial_disease_prior is not None
        else np.asarray(params.lookups.initial_disease_prior, dtype=float)
    )
    initial_prior = _band_adjusted(
        initial_prior / initial_prior.sum(), schema, setup.coarse_band
    )

    modules: dict[int, TimeStepModule] = {}
    blocking_priors: dict[int, np.ndarray] = {}
    diagnostics: dict[int, int] = {}
    for step in range(n, 0, -1):
        module = build_time_step_module(
            step,
            setup.cultivation,
            schema,
            params,
            delta_tau=calendar.delta_tau_for_step(step),
        )
        if structure == "blocked":
            if params.priors_mode == "per_context":
                prior = np.asarray(context_priors[step - 1, bp_index], dtype=float)
            else:
                prior = np.asarray(params.lookups.initial_disease_prior, dtype=float)
            if step == n:
                prior = _band_adjusted(prior, schema, setup.coarse_band)
            module, zero_states = apply_blocking(module, prior)
            blocking_priors[step] = prior
            diagnostics[step] = zero_states
        modules[step] = module

    variables: list[DiscreteVariable] = []
    kinds: dict[str, str] = {}
    arcs: list[tuple[str, str]] = []
    cpts: dict[str, Factor] = {}
    utilities: dict[str, Factor] = {}
    var_cache: dict[str, DiscreteVariable] = {}

    def v(role: str, step: int) -> DiscreteVariable:
        name = f"{role}_{step}"
        if name not in var_cache:
            var_cache[name] = schema.variable(role, f"_{step}")
            variables.append(var_cache[name])
        return var_cache[name]

    def add_chance(role: str, step: int, parent_vars, table) -> None:
        child = v(role, step)
        kinds[child.id] = CHANCE
        scope = list(parent_vars) + [child]
        cpts[child.id] = Factor(scope, table)
        arcs.extend((p.id, child.id) for p in parent_vars)

    for step in range(n, 0, -1):
        module = modules[step]

        # Decision node and its information arcs.
        treatment = v("Treatment", step)
        kinds[treatment.id] = DECISION

        # Per-step roots.
        for role in ("ClimateEffect", "CropStructure", "BasicProtection", "NewLeafFract"):
            add_chance(role, step, [], module.table(role))

        # Treatment memory: roots at step n, chained outputs afterwards.
        if step == n:
            pt_row = np.zeros(len(schema.prev_treatment_labels))
            pt_row[setup.prev_treatment_index] = 1.0
            add_chance("PrevTreatment", step, [], pt_row)
            pd_row = np.zeros(len(schema.treatment_doses))
            pd_row[setup.prev_dose_index] = 1.0
            add_chance("PrevDose", step, [], pd_row)
            add_chance("DiseaseLevelB", step, [], initial_prior)
        else:
            prev = step + 1
            add_chance(
                "PrevTreatment",
                step,
                [v("PrevTreatment", prev), v("Treatment", prev)],
                modules[prev].table("PrevTreatment_next"),
            )
            add_chance(
                "PrevDose",
                step,
                [v("PrevDose", prev), v("Treatment", prev)],
                modules[prev].table("PrevDose_next"),
            )
            add_chance(
                "DiseaseLevelB",
                step,
                [v("DiseaseLevelA", prev), v("GrowthRate", prev)],
                modules[prev].table("DiseaseLevelB_next"),
            )

        add_chance(
            "ProtectnConc",
            step,
            [v("PrevTreatment", step), v("PrevDose", step)],
            module.table("ProtectnConc"),
        )
        add_chance(
            "ProtectnLevel", step, [v("ProtectnConc", step)], module.table("ProtectnLevel")
        )
        add_chance(
            "MeanProtectn",
            step,
            [v("BasicProtection", step), v("ProtectnLevel", step), v("NewLeafFract", step)],
            module.table("MeanProtectn"),
        )
        add_chance(
            "GrowthRate",
            step,
            [v("ClimateEffect", step), v("CropStructure", step), v("MeanProtectn", step)],
            module.table("GrowthRate"),
        )
        add_chance(
            "DiseaseObserv", step, [v("DiseaseLevelB", step)], module.table("DiseaseObserv")
        )

        dla_parents = module.parent_roles("DiseaseLevelA")
        add_chance(
            "DiseaseLevelA",
            step,
            [v(dla_parents[0], step), v("Treatment", step)],
            module.table("DiseaseLevelA"),
        )
        add_chance(
            "YieldLossPct", step, [v("DiseaseLevelA", step)], module.table("YieldLossPct")
        )

        # Information arcs: what the farmer knows at this week's decision.
        for role in ("DiseaseObserv", "PrevTreatment", "PrevDose"):
            arcs.append((f"{role}_{step}", treatment.id))

        # Utilities: negated cost and negated loss value.
        cost_node = DiscreteVariable(f"CostU_{step}", ("u",))
        variables.append(cost_node)
        kinds[cost_node.id] = UTILITY
        arcs.append((treatment.id, cost_node.id))
        utilities[cost_node.id] = Factor(
            [treatment],
            np.array([-setup.economics.cost(d) for d in doses]),
            allow_negative=True,
        )
        loss_node = DiscreteVariable(f"LossU_{step}", ("u",))
        variables.append(loss_node)
        kinds[loss_node.id] = UTILITY
        arcs.append((f"YieldLossPct_{step}", loss_node.id))
        utilities[loss_node.id] = Factor(
            [v("YieldLossPct", step)],
            np.array([-setup.economics.loss_value(r) for r in loss_reps]),
            allow_negative=True,
        )

    # Terminal projected severity at maturity.
    add_chance(
        "DiseaseLevelB",
        0,
        [v("DiseaseLevelA", 1), v("GrowthRate", 1)],
        modules[1].table("DiseaseLevelB_next"),
    )

    diagram = InfluenceDiagram(
        variables,
        kinds,
        arcs,
        cpts,
        utilities,
        decision_order=[f"Treatment_{k}" for k in range(n, 0, -1)],
    )
    return DecisionModel(
        diagram,
        structure,
        n,
        modules,
        setup,
        schema,
        params,
        calendar,
        blocking_priors,
        diagnostics,
    )


# ---------------------------------------------------------------------------
# Structural and numeric blocking checks
# ---------------------------------------------------------------------------


def blocking_holds(model: DecisionModel) -> bool:
    """Past ⫫ future given the current information set and all past decisions.

    For every step k: variables of steps > k are d-separated from variables of
    steps < k given {DiseaseObserv_k, PrevTreatment_k, PrevDose_k,
    Treatment_k} and the treatments of steps > k.
    """
    n = model.n_steps
    names = [m for m in model.diagram.kinds if model.diagram.kinds[m] != UTILITY]

    def step_of(name: str) -> int:
        return int(name.rsplit("_", 1)[1])

    for k in range(n, 0, -1):
        past = {m for m in names if step_of(m) > k}
        future = {m for m in names if step_of(m) < k}
        given = set(model.information_set(k)) | {model.decision(k)}
        given |= {model.decision(j) for j in range(k + 1, n + 1)}
        past -= given
        future -= given
        if not past or not future:
            continue
        if not d_separated(model.diagram, past, future, given):
            return False
    return True


def as_network(
    model: DecisionModel,
    *,
    policy: Policy | None = None,
    fixed_doses: Mapping[int, int] | None = None,
) -> InfluenceDiagram:
    """The Bayesian-network version of the model, for propagation.

    Decisions become chance nodes: uniform priors by default, deterministic
    policy CPTs over the step's information set when a policy is given, and
    point-mass priors for steps listed in `fixed_doses` (which wins over the
    policy).
    """
    dg = model.diagram
    kinds = {m: (CHANCE if k == DECISION else k) for m, k in dg.kinds.items()}
    arcs = [(p, c) for (p, c) in dg.arcs if dg.kinds[c] != DECISION]
    cpts = dict(dg.cpts)
    n_dose = len(model.schema.treatment_doses)
    for step in range(model.n_steps, 0, -1):
        name = model.decision(step)
        dvar = dg.variables[name]
        if fixed_doses is not None and step in fixed_doses:
            row = np.zeros(n_dose)
            row[fixed_doses[step]] = 1.0
            cpts[name] = Factor([dvar], row)
        elif policy is not None:
            info = model.information_set(step)
            scope = [dg.variables[m] for m in info] + [dvar]
            shape = tuple(v.cardinality for v in scope)
            table = np.zeros(shape)
            for idx in np.ndindex(*shape[:-1]):
                assignment = dict(zip(info, idx))
                table[idx + (policy.decide(name, assignment),)] = 1.0
            cpts[name] = Factor(scope, table)
            arcs.extend((m, name) for m in info)
        else:
            cpts[name] = Factor([dvar], np.full(n_dose, 1.0 / n_dose))
    return InfluenceDiagram(
        list(dg.variables.values()), kinds, arcs, cpts, dg.utilities, decision_order=[]
    )


# ---------------------------------------------------------------------------
# Per-step transition algebra (shared by solve_chain, priors, evaluation)
# ---------------------------------------------------------------------------


def growth_rate_distribution(
    module: TimeStepModule, bp_index: int, pt_index: int, pd_index: int
) -> np.ndarray:
    """P(GrowthRate) for fixed protection memory, roots integrated out."""
    pc = module.table("ProtectnConc")[pt_index, pd_index]  # (conc,)
    pl = pc @ module.table("ProtectnLevel")  # (pl,)
    nlf = module.table("NewLeafFract")  # (nlf,)
    mp = np.einsum("l,n,lnm->m", pl, nlf, module.table("MeanProtectn")[bp_index])
    return np.einsum(
        "c,s,m,csmg->g",
        module.table("ClimateEffect"),
        module.table("CropStructure"),
        mp,
        module.table("GrowthRate"),
    )


def severity_transition(
    module: TimeStepModule, gr_dist: np.ndarray, dose_index: int
) -> np.ndarray:
    """P(next DiseaseLevelB | DiseaseLevelB) for a fixed dose (true structure)."""
    dla = module.table("DiseaseLevelA")
    if module.parent_roles("DiseaseLevelA") != ("DiseaseLevelB", "Treatment"):
        raise AssemblyError("severity_transition needs the true-structure module")
    return np.einsum(
        "da,g,agb->db", dla[:, dose_index, :], gr_dist, module.table("DiseaseLevelB_next")
    )


def memory_update(
    schema: StateSchema, module: TimeStepModule, pt_index: int, pd_index: int, dose_index: int
) -> tuple[int, int]:
    """Deterministic next (PrevTreatment, PrevDose) state."""
    pt_row = module.table("PrevTreatment_next")[pt_index, dose_index]
    pd_row = module.table("PrevDose_next")[pd_index, dose_index]
    return int(np.argmax(pt_row)), int(np.argmax(pd_row))


# ---------------------------------------------------------------------------
# Per-context priors (TimeStep x BasicProtection)
# ---------------------------------------------------------------------------


def per_context_priors(
    schema: StateSchema,
    params: Parameters,
    cultivation: CultivationFactors | None = None,
) -> np.ndarray:
    """Disease priors for every (TimeStep, BasicProtection) combination.

    Each prior is the untreated marginal of DiseaseLevelB reached by chaining
    one-step models from season start (the full step budget) down to the given
    week, under the given intrinsic protection.  Shape: (max_time_steps,
    protection levels, severity bins).
    """
    cultivation = cultivation or CultivationFactors()
    n_steps = schema.max_time_steps
    n_bp = len(schema.basic_protection_levels)
    initial = np.asarray(params.lookups.initial_disease_prior, dtype=float)
    priors = np.empty((n_steps, n_bp, schema.n_severity_bins))
    pt_never, pd_zero, dose_zero = 0, 0, 0
    modules = {
        t: build_time_step_module(t, cultivation, schema, params, delta_tau=1.0)
        for t in range(2, n_steps + 1)
    }
    for b in range(n_bp):
        belief = initial.copy()
        priors[n_steps - 1, b] = belief
        for t in range(n_steps, 1, -1):
            gr = growth_rate_distribution(modules[t], b, pt_never, pd_zero)
            transition = severity_transition(modules[t], gr, dose_zero)
            belief = belief @ transition
            priors[t - 2, b] = belief
    return priors


# ---------------------------------------------------------------------------
# Backward induction over the blocked chain
# ---------------------------------------------------------------------------


def solve_chain(
    model: DecisionModel,
    observed: tuple[int, int, int] | None = None,
) -> SolveResult:
    """Backward induction over the per-week state (DiseaseObserv,
    PrevTreatment, PrevDose) of a blocked season model.

    `observed` pins the current week's state (the recommendation case); when
    omitted the result is the unconditioned optimum, comparable to solve_id.
    Refuses models whose structure does not actually block the past.
    """
    if model.structure != "blocked":
        raise AssemblyError("solve_chain requires the blocked structure; use solve_id")
    if not blocking_holds(model):
        raise AssemblyError(
            "assembled model fails the structural blocking check; use solve_id"
        )
    schema = model.schema
    economics = model.setup.economics
    n = model.n_steps
    n_do = len(schema.incidence_edges) - 1
    n_pt = len(schema.prev_treatment_labels)
    n_pd = len(schema.treatment_doses)
    n_dose = n_pd
    doses = schema.treatment_doses
    loss_values = np.array(
        [economics.loss_value(r) for r in schema.representatives("YieldLossPct")]
    )
    cost = np.array([economics.cost(d) for d in doses])
    bp_index = basic_protection_level(model.setup.cultivation, model.params)

    value = np.zeros((n_do, n_pt, n_pd))
    q_tables: dict[int, np.ndarray] = {}
    policy = Policy()

    gr_cache: dict[tuple[int, int, int], np.ndarray] = {}

    def gr_dist(step: int, pt: int, pd: int) -> np.ndarray:
        key = (step, pt, pd)
        if key not in gr_cache:
            gr_cache[key] = growth_rate_distribution(
                model.modules[step], bp_index, pt, pd
            )
        return gr_cache[key]

    for step in range(1, n + 1):
        module = model.modules[step]
        dla = module.table("DiseaseLevelA")  # (do, dose, dla) in blocked form
        loss = module.table("YieldLossPct") @ loss_values  # (dla,)
        immediate = -cost[None, :] - np.einsum("ota,a->ot", dla, loss)  # (do, dose)

        q = np.empty((n_do, n_pt, n_pd, n_dose))
        if step == 1:
            q[:] = immediate[:, None, None, :]
        else:
            next_obs = model.modules[step - 1].table("DiseaseObserv")  # (dlb, do')
            for pt in range(n_pt):
                for pd in range(n_pd):
                    for dose in range(n_dose):
                        gr = gr_dist(step, pt, pd)
                        # (do, dlb') severity at next week per current observation
                        dlb_next = np.einsum(
                            "oa,g,agb->ob", dla[:, dose, :], gr,
                            module.table("DiseaseLevelB_next"),
                        )
                        do_next = dlb_next @ next_obs  # (do, do')
                        pt2, pd2 = memory_update(schema, module, pt, pd, dose)
                        q[:, pt, pd, dose] = (
                            immediate[:, dose] + do_next @ value[:, pt2, pd2]
                        )
        q_tables[step] = q
        value = np.max(q, axis=-1)
        arg = np.argmax(q, axis=-1)
        policy.tables[model.decision(step)] = (
            (
                f"DiseaseObserv_{step}",
                f"PrevTreatment_{step}",
                f"PrevDose_{step}",
            ),
            arg,
        )

    q_first = q_tables[n]
    if observed is not None:
        do, pt, pd = observed
        per_alt = q_first[do, pt, pd].copy()
        meu = float(np.max(per_alt))
    else:
        # Unconditioned: weight the first week's scenarios by their probability.
        prior = model.diagram.cpts[f"DiseaseLevelB_{n}"].values
        p_do = prior @ model.modules[n].table("DiseaseObserv")
        pt0 = model.setup.prev_treatment_index
        pd0 = model.setup.prev_dose_index
        meu = float(p_do @ value[:, pt0, pd0])
        per_alt = p_do @ q_first[:, pt0, pd0, :]
    return SolveResult(meu=meu, policy=policy, per_alternative=np.asarray(per_alt))
