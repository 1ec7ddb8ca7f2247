"""The mildew domain model: quantification functions and per-step CPT generation.

Expert knowledge enters as simple deterministic response curves (dose
efficacy, growth, decay, loss, incidence saturation); the CPTs of one time
step are produced by pushing low-discrepancy samples of the parent bins
through those curves under multiplicative lognormal noise, then histogramming
into the child bins.  Everything is seeded, so identical inputs yield
bit-identical tables.

One :class:`TimeStepModule` holds the conditional tables of a single thermal
week; the temporal assembly chains them into a season model.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.stats import norm, qmc

from .factors import DiscreteVariable, Factor
from .params import Parameters, ParameterError, QuantificationParameters, StateSchema

__all__ = [
    "DomainError",
    "CultivationFactors",
    "TimeStepModule",
    "dose_efficacy",
    "disease_step",
    "growth_rate",
    "mean_protection",
    "protectant_decay",
    "incidence_from_severity",
    "yield_loss_pct",
    "protection_from_concentration",
    "new_leaf_fraction",
    "discretize_model",
    "build_time_step_module",
    "basic_protection_level",
]


class DomainError(ValueError):
    """Raised when domain inputs fall outside their stated ranges."""


@dataclass(frozen=True)
class CultivationFactors:
    """Static field facts the farmer supplies once per season."""

    variety_resistance: str = "medium"  # low | medium | high
    nitrogen_strategy: str = "normal"  # normal | high
    soil_type: str = "loam"  # sandy | loam
    plant_density: str = "normal"  # low | normal | high

    def validate(self) -> "CultivationFactors":
        allowed = {
            "variety_resistance": ("low", "medium", "high"),
            "nitrogen_strategy": ("normal", "high"),
            "soil_type": ("sandy", "loam"),
            "plant_density": ("low", "normal", "high"),
        }
        for name, options in allowed.items():
            if getattr(self, name) not in options:
                raise DomainError(
                    f"{name} must be one of {options}, got {getattr(self, name)!r}"
                )
        return self


# ---------------------------------------------------------------------------
# Quantification curves (vectorized over numpy arrays)
# ---------------------------------------------------------------------------


def dose_efficacy(dose, q: QuantificationParameters):
    """Kill fraction of a treatment: saturating in dose, zero at dose zero."""
    dose = np.asarray(dose, dtype=float)
    if np.any(dose < 0):
        raise DomainError("dose must be nonnegative")
    return q.efficacy_max * dose / (dose + q.dose_half)


def disease_step(severity, rate, delta_tau):
    """Severity after one step of multiplicative growth, capped at 100%."""
    severity = np.asarray(severity, dtype=float)
    return np.minimum(100.0, severity * np.power(rate, delta_tau))


def growth_rate(climate_mult, structure_mult, mean_prot, q: QuantificationParameters):
    """Intrinsic weekly growth multiplier, throttled by the protection level."""
    return q.r_base * climate_mult * structure_mult * (1.0 - np.asarray(mean_prot))


def mean_protection(basic, protectant, new_leaf_fract):
    """Blend of protection on fresh (untreated) and older (treated) leaves."""
    basic = np.asarray(basic, dtype=float)
    return new_leaf_fract * basic + (1.0 - new_leaf_fract) * np.maximum(basic, protectant)


def protectant_decay(conc, delta_tau, new_dose, q: QuantificationParameters):
    """Exponential decay of protectant concentration plus any fresh application."""
    conc = np.asarray(conc, dtype=float)
    return conc * np.exp(-q.decay_lambda * delta_tau) + new_dose


def incidence_from_severity(severity, q: QuantificationParameters):
    """Fraction of plants showing symptoms; saturates near 100% at ~2% severity."""
    severity = np.asarray(severity, dtype=float)
    return 1.0 - np.exp(-q.incidence_k * severity / 100.0)


def yield_loss_pct(severity, delta_tau, q: QuantificationParameters):
    """Relative yield loss from carrying this severity through the step."""
    severity = np.asarray(severity, dtype=float)
    return np.minimum(100.0, q.loss_coeff * severity * delta_tau)


def protection_from_concentration(conc, q: QuantificationParameters):
    """Protectant effect of the chemical concentration, saturating."""
    conc = np.asarray(conc, dtype=float)
    return q.protection_max * conc / (conc + q.protection_half)


def new_leaf_fraction(time_step: int, q: QuantificationParameters):
    """Leaf turnover per thermal week; fast early in the season (high step index)."""
    return min(
        q.leaf_emergence_max,
        q.leaf_emergence_base + q.leaf_emergence_per_week * time_step,
    )


def basic_protection_level(cultivation: CultivationFactors, params: Parameters) -> int:
    """State index of the crop's intrinsic protection, from the lookup tables."""
    lookups = params.lookups
    level = lookups.basic_protection_by_resistance[cultivation.variety_resistance]
    if cultivation.nitrogen_strategy == "high":
        level -= lookups.high_nitrogen_penalty
    levels = np.asarray(params.state_schema.basic_protection_levels)
    return int(np.argmin(np.abs(levels - level)))


# ---------------------------------------------------------------------------
# Discretization of deterministic maps into CPTs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ParentSpec:
    """How one parent enters the quantification: binned range, fixed per-state
    value, or bare category label."""

    variable: DiscreteVariable
    kind: str  # "bins" | "values" | "labels"
    data: tuple = ()

    @staticmethod
    def bins(variable: DiscreteVariable, edges) -> "ParentSpec":
        return ParentSpec(variable, "bins", tuple(float(e) for e in edges))

    @staticmethod
    def values(variable: DiscreteVariable, values) -> "ParentSpec":
        return ParentSpec(variable, "values", tuple(float(v) for v in values))

    @staticmethod
    def labels(variable: DiscreteVariable) -> "ParentSpec":
        return ParentSpec(variable, "labels", variable.states)


def _stable_seed(base_seed: int, name: str) -> np.random.SeedSequence:
    return np.random.SeedSequence([base_seed, zlib.crc32(name.encode())])


def discretize_model(
    fn: Callable,
    parents: Sequence[ParentSpec],
    child: DiscreteVariable,
    child_edges,
    *,
    samples_per_cell: int = 64,
    noise_sd: float = 0.25,
    seed: int = 0,
    name: str = "",
    diagnostics: dict | None = None,
) -> Factor:
    """Tabulate P(child | parents) from a deterministic map plus lognormal noise.

    For every parent-state configuration, `samples_per_cell` points are drawn
    from a deterministic low-discrepancy (Halton) sequence, one dimension per
    binned parent, and pushed through `fn`.  The mean-one lognormal noise is
    then integrated analytically around each mapped point (its bin-boundary
    CDF is closed-form), which is both tighter and dominance-preserving
    compared to sampling the noise.  `fn` receives one argument per parent (an
    array for binned parents, a fixed value or a label for categorical ones)
    and must be numpy-vectorized.  Out-of-range output mass is clamped into
    the boundary bins and accounted in `diagnostics`.

    The same unit points serve every cell: a monotone fn then maps matched
    samples monotonically across neighbouring parent bins, so generated rows
    inherit exact stochastic dominance, not just dominance in expectation.
    """
    if samples_per_cell < 1:
        raise ParameterError("samples_per_cell must be >= 1")
    child_edges = np.asarray(child_edges, dtype=float)
    n_child = len(child_edges) - 1
    binned = [i for i, p in enumerate(parents) if p.kind == "bins"]
    dims = len(binned)

    cells = [p.variable.cardinality for p in parents]

    if dims > 0:
        sampler = qmc.Halton(
            d=dims,
            scramble=True,
            seed=np.random.default_rng(_stable_seed(seed, name or child.id)),
        )
        unit = sampler.random(samples_per_cell)
    else:
        unit = np.zeros((samples_per_cell, 0))

    sigma = math.sqrt(math.log(1.0 + noise_sd**2)) if noise_sd > 0 else 0.0

    shape = tuple(cells) + (n_child,)
    table = np.empty(shape)
    clamped = 0.0
    for idx in np.ndindex(*cells) if cells else [()]:
        args = []
        bin_slot = 0
        for p, state in zip(parents, idx):
            if p.kind == "bins":
                lo, hi = p.data[state], p.data[state + 1]
                args.append(lo + unit[:, bin_slot] * (hi - lo))
                bin_slot += 1
            elif p.kind == "values":
                args.append(p.data[state])
            else:
                args.append(p.variable.states[state])
        y = np.asarray(fn(*args), dtype=float)
        y = np.broadcast_to(y, (samples_per_cell,))
        if sigma > 0:
            # P(y * noise <= e) = Phi((ln e - ln y)/sigma + sigma/2); y = 0 is
            # a point mass at zero and lands in the lowest bin.
            with np.errstate(divide="ignore"):
                log_y = np.log(y)
                log_edges = np.log(child_edges)
            z = (log_edges[None, :] - log_y[:, None]) / sigma + 0.5 * sigma
            cdf = norm.cdf(z)  # (samples, edges)
            positive = y > 0
            clamped += float(
                np.sum(cdf[positive, 0]) + np.sum(1.0 - cdf[positive, -1])
            )
            cdf[~positive, :] = 1.0  # a zero output sits exactly in the lowest bin
            probs = np.diff(cdf, axis=1)
            probs[:, 0] += cdf[:, 0]  # below-range mass clamps down
            probs[:, -1] += 1.0 - cdf[:, -1]  # above-range mass clamps up
            row = probs.sum(axis=0)
        else:
            below = np.sum(y < child_edges[0])
            above = np.sum(y > child_edges[-1])
            clamped += float(below + above)
            bins = np.clip(
                np.searchsorted(child_edges, y, side="right") - 1, 0, n_child - 1
            )
            row = np.bincount(bins, minlength=n_child).astype(float)
        table[idx] = row / row.sum()

    if diagnostics is not None:
        diagnostics[name or child.id] = {"clamped_samples": clamped}
    scope = [p.variable for p in parents] + [child]
    return Factor(scope, table)


# ---------------------------------------------------------------------------
# One thermal week of the decision model
# ---------------------------------------------------------------------------

# Roles of the per-step frame variables; "*_next" feeds the following step.
STEP_ROLES = (
    "DiseaseLevelB",
    "DiseaseObserv",
    "Treatment",
    "DiseaseLevelA",
    "GrowthRate",
    "ClimateEffect",
    "CropStructure",
    "BasicProtection",
    "MeanProtectn",
    "ProtectnLevel",
    "ProtectnConc",
    "NewLeafFract",
    "PrevTreatment",
    "PrevDose",
    "YieldLossPct",
)


@dataclass
class TimeStepModule:
    """All conditional tables of one thermal week, keyed by child role.

    `cpts` maps child role -> (parent roles, table); the table's last axis is
    the child.  Roles ending in "_next" are the outputs wired into the next
    step by the assembly.
    """

    time_step: int
    delta_tau: float
    cultivation: CultivationFactors
    cpts: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    def table(self, role: str) -> np.ndarray:
        return self.cpts[role][1]

    def parent_roles(self, role: str) -> tuple[str, ...]:
        return self.cpts[role][0]


def build_time_step_module(
    time_step: int,
    cultivation: CultivationFactors,
    schema: StateSchema,
    params: Parameters,
    *,
    delta_tau: float = 1.0,
    initial_disease_prior=None,
) -> TimeStepModule:
    """Instantiate the general per-week template for one case and week.

    Cultivation sets BasicProtection and CropStructure via lookup tables; the
    week index sets NewLeafFract and the climate prior; the quantification
    curves produce everything else through `discretize_model`.
    """
    cultivation.validate()
    if not 1 <= time_step <= schema.max_time_steps:
        raise DomainError(
            f"time_step must be in 1..{schema.max_time_steps}, got {time_step}"
        )
    q = params.quantification
    module = TimeStepModule(time_step, delta_tau, cultivation)
    # One seed for the whole template: the same conditional table (same
    # parents, curve, and step length) is then bit-identical across steps.
    seed_base = params.seed

    var = {role: schema.variable(role) for role in STEP_ROLES}

    def put(role, parent_roles, factor: Factor):
        module.cpts[role] = (tuple(parent_roles), factor.values)

    def dm(fn, parent_specs, child_role, name, noise=None):
        child = var[child_role.replace("_next", "")]
        return discretize_model(
            fn,
            parent_specs,
            child,
            schema.edges_for(child.id),
            samples_per_cell=params.samples_per_cell,
            noise_sd=params.noise_sd if noise is None else noise,
            seed=seed_base,
            name=name,
            diagnostics=module.diagnostics,
        )

    # Case-setting roots.
    prior = (
        np.asarray(initial_disease_prior, dtype=float)
        if initial_disease_prior is not None
        else np.asarray(params.lookups.initial_disease_prior, dtype=float)
    )
    put("DiseaseLevelB", (), Factor([var["DiseaseLevelB"]], prior / prior.sum()))
    put(
        "ClimateEffect",
        (),
        Factor([var["ClimateEffect"]], params.lookups.climate_prior),
    )
    structure_key = f"{cultivation.plant_density},{cultivation.soil_type}"
    put(
        "CropStructure",
        (),
        Factor([var["CropStructure"]], params.lookups.crop_structure[structure_key]),
    )
    bp_index = basic_protection_level(cultivation, params)
    bp_row = np.zeros(len(schema.basic_protection_levels))
    bp_row[bp_index] = 1.0
    put("BasicProtection", (), Factor([var["BasicProtection"]], bp_row))

    nlf = new_leaf_fraction(time_step, q)
    put(
        "NewLeafFract",
        (),
        dm(lambda: nlf, [], "NewLeafFract", "NewLeafFract"),
    )

    # Protection memory of the previous treatment.
    weeks = schema.prev_treatment_weeks

    def conc_from_memory(weeks_since, dose):
        conc = dose * np.exp(-q.decay_lambda * np.asarray(weeks_since))
        return np.where(np.asarray(weeks_since) < 0, 0.0, conc)

    put(
        "ProtectnConc",
        ("PrevTreatment", "PrevDose"),
        dm(
            conc_from_memory,
            [
                ParentSpec.values(var["PrevTreatment"], weeks),
                ParentSpec.values(var["PrevDose"], schema.treatment_doses),
            ],
            "ProtectnConc",
            "ProtectnConc",
        ),
    )
    put(
        "ProtectnLevel",
        ("ProtectnConc",),
        dm(
            lambda conc: protection_from_concentration(conc, q),
            [ParentSpec.bins(var["ProtectnConc"], schema.concentration_edges)],
            "ProtectnLevel",
            "ProtectnLevel",
        ),
    )
    put(
        "MeanProtectn",
        ("BasicProtection", "ProtectnLevel", "NewLeafFract"),
        dm(
            mean_protection,
            [
                ParentSpec.values(var["BasicProtection"], schema.basic_protection_levels),
                ParentSpec.bins(var["ProtectnLevel"], schema.protection_level_edges),
                ParentSpec.bins(var["NewLeafFract"], schema.new_leaf_edges),
            ],
            "MeanProtectn",
            "MeanProtectn",
        ),
    )

    climate_mults = [q.climate_multipliers[label] for label in schema.climate_labels]
    structure_mults = [
        q.structure_multipliers[label] for label in schema.structure_labels
    ]
    put(
        "GrowthRate",
        ("ClimateEffect", "CropStructure", "MeanProtectn"),
        dm(
            lambda cm, sm, mp: growth_rate(cm, sm, mp, q),
            [
                ParentSpec.values(var["ClimateEffect"], climate_mults),
                ParentSpec.values(var["CropStructure"], structure_mults),
                ParentSpec.bins(var["MeanProtectn"], schema.mean_protection_edges),
            ],
            "GrowthRate",
            "GrowthRate",
        ),
    )

    put(
        "DiseaseLevelA",
        ("DiseaseLevelB", "Treatment"),
        dm(
            lambda sev, dose: sev * (1.0 - dose_efficacy(dose, q)),
            [
                ParentSpec.bins(var["DiseaseLevelB"], schema.severity_edges),
                ParentSpec.values(var["Treatment"], schema.treatment_doses),
            ],
            "DiseaseLevelA",
            "DiseaseLevelA",
        ),
    )
    put(
        "DiseaseLevelB_next",
        ("DiseaseLevelA", "GrowthRate"),
        dm(
            lambda sev, rate: disease_step(sev, rate, delta_tau),
            [
                ParentSpec.bins(var["DiseaseLevelA"], schema.severity_edges),
                ParentSpec.bins(var["GrowthRate"], schema.growth_rate_edges),
            ],
            "DiseaseLevelB_next",
            "DiseaseLevelB_next",
        ),
    )
    put(
        "DiseaseObserv",
        ("DiseaseLevelB",),
        dm(
            lambda sev: 100.0 * incidence_from_severity(sev, q),
            [ParentSpec.bins(var["DiseaseLevelB"], schema.severity_edges)],
            "DiseaseObserv",
            "DiseaseObserv",
        ),
    )
    put(
        "YieldLossPct",
        ("DiseaseLevelA",),
        dm(
            lambda sev: yield_loss_pct(sev, delta_tau, q),
            [ParentSpec.bins(var["DiseaseLevelA"], schema.severity_edges)],
            "YieldLossPct",
            "YieldLossPct",
        ),
    )

    # Deterministic treatment memory for the next step.
    n_prev, n_dose = len(weeks), len(schema.treatment_doses)
    pt_next = np.zeros((n_prev, n_dose, n_prev))
    for pt in range(n_prev):
        for dose_idx in range(n_dose):
            if schema.treatment_doses[dose_idx] > 0:
                pt_next[pt, dose_idx, 1] = 1.0  # treated this week -> "1 week ago"
            else:
                if weeks[pt] < 0:  # never treated stays never
                    pt_next[pt, dose_idx, 0] = 1.0
                else:
                    pt_next[pt, dose_idx, min(pt + 1, n_prev - 1)] = 1.0
    module.cpts["PrevTreatment_next"] = (("PrevTreatment", "Treatment"), pt_next)

    pd_next = np.zeros((n_dose, n_dose, n_dose))
    for pd in range(n_dose):
        for dose_idx in range(n_dose):
            if schema.treatment_doses[dose_idx] > 0:
                pd_next[pd, dose_idx, dose_idx] = 1.0
            else:
                pd_next[pd, dose_idx, pd] = 1.0
    module.cpts["PrevDose_next"] = (("PrevDose", "Treatment"), pd_next)

    return module


def blocked_post_treatment(
    module: TimeStepModule, prior_dlb: np.ndarray
) -> tuple[np.ndarray, int]:
    """Rewrite P(DiseaseLevelA | DiseaseLevelB, Treatment) into
    P(DiseaseLevelA | DiseaseObserv, Treatment) under the given DiseaseLevelB
    prior.

    Returns the new table plus the number of observation states whose
    posterior weight had a zero denominator (those fall back to uniform).
    """
    prior = np.asarray(prior_dlb, dtype=float)
    if abs(prior.sum() - 1.0) > 1e-9:
        raise DomainError("prior over DiseaseLevelB must be normalized")
    p_obs = module.table("DiseaseObserv")  # (dlb, do)
    p_dla = module.table("DiseaseLevelA")  # (dlb, dose, dla)
    weights = p_obs * prior[:, None]  # (dlb, do)
    denom = weights.sum(axis=0)  # (do,)
    zero_states = int(np.sum(denom <= 0))
    w = np.where(denom > 0, weights / np.where(denom > 0, denom, 1.0), 1.0 / len(prior))
    # (do, dose, dla) = sum_dlb w[dlb, do] * p_dla[dlb, dose, dla]
    blocked = np.einsum("bo,bta->ota", w, p_dla)
    return blocked, zero_states
