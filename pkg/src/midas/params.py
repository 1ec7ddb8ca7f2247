"""Parameter file and state schema: every tunable constant in one place.

The parameter file is JSON; anything omitted falls back to the defaults
embedded here, so an empty file (or no file) is a complete configuration.
Experts refit the quantification constants without touching code.

Top-level keys:

    seed                  int, drives all CPT discretization noise
    samples_per_cell      int, low-discrepancy points per parent-bin cell
    noise_sd              float, relative sd of the lognormal quantification noise
    quantification        the growth/efficacy/decay/loss constants (see below)
    lookups               cultivation lookup tables and priors
    state_schema          bin edges / state labels per model variable
    baseline              threshold rule for the empirical comparison policy
    priors                {"mode": "fixed" | "per_context"}

Tables are laid out first-variable-slowest (C order), matching the factor
layout used everywhere else.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .factors import DiscreteVariable

__all__ = [
    "ParameterError",
    "QuantificationParameters",
    "StateSchema",
    "Parameters",
    "default_parameters",
    "load_parameters",
]


class ParameterError(ValueError):
    """Raised when a parameter file fails validation."""


# Incidence saturates near 2% severity: 1 - exp(-k * 0.02) = 0.98.
_INCIDENCE_K_DEFAULT = math.log(50.0) / 0.02


@dataclass
class QuantificationParameters:
    """Constants of the deterministic stand-in models quantifying the CPTs."""

    r_base: float = 2.0  # disease growth multiplier per thermal week, unprotected
    climate_multipliers: dict = field(
        default_factory=lambda: {"unfavourable": 0.4, "neutral": 1.0, "favourable": 1.8}
    )
    structure_multipliers: dict = field(
        default_factory=lambda: {"open": 0.8, "normal": 1.0, "dense": 1.25}
    )
    efficacy_max: float = 0.95  # kill fraction at saturating dose
    dose_half: float = 0.15  # dose (fraction of label dose) giving half efficacy
    decay_lambda: float = 0.5  # protectant decay per thermal week
    incidence_k: float = _INCIDENCE_K_DEFAULT
    loss_coeff: float = 0.4  # yield-loss % per severity-% per thermal week
    leaf_emergence_base: float = 0.05  # new-leaf fraction per thermal week, floor
    leaf_emergence_per_week: float = 0.03  # extra emergence per remaining week
    leaf_emergence_max: float = 0.9
    protection_max: float = 0.9  # protectant effect ceiling
    protection_half: float = 0.4  # concentration at half protectant effect

    def validate(self) -> None:
        positive = {
            "r_base": self.r_base,
            "dose_half": self.dose_half,
            "decay_lambda": self.decay_lambda,
            "incidence_k": self.incidence_k,
            "loss_coeff": self.loss_coeff,
            "protection_half": self.protection_half,
        }
        for name, value in positive.items():
            if not value > 0:
                raise ParameterError(f"{name} must be > 0, got {value}")
        if not 0 < self.efficacy_max <= 1:
            raise ParameterError(f"efficacy_max must be in (0, 1], got {self.efficacy_max}")
        if not 0 < self.protection_max <= 1:
            raise ParameterError(f"protection_max must be in (0, 1], got {self.protection_max}")
        for table in (self.climate_multipliers, self.structure_multipliers):
            for key, value in table.items():
                if not value > 0:
                    raise ParameterError(f"multiplier {key!r} must be > 0, got {value}")
        # Calibration anchor: 2% severity must read as near-total incidence.
        if 1.0 - math.exp(-self.incidence_k * 0.02) < 0.95:
            raise ParameterError(
                "incidence_k too small: severity 2% must map to incidence >= 0.95"
            )


@dataclass
class Lookups:
    """Cultivation lookups and the priors that seed the disease chain."""

    basic_protection_by_resistance: dict = field(
        default_factory=lambda: {"low": 0.1, "medium": 0.3, "high": 0.5}
    )
    high_nitrogen_penalty: float = 0.1  # one protection level
    crop_structure: dict = field(
        default_factory=lambda: {
            "low,sandy": [0.85, 0.15, 0.0],
            "low,loam": [0.7, 0.3, 0.0],
            "normal,sandy": [0.15, 0.75, 0.1],
            "normal,loam": [0.05, 0.75, 0.2],
            "high,sandy": [0.0, 0.35, 0.65],
            "high,loam": [0.0, 0.2, 0.8],
        }
    )
    climate_prior: list = field(default_factory=lambda: [0.25, 0.5, 0.25])
    initial_disease_prior: list = field(
        default_factory=lambda: [0.35, 0.25, 0.17, 0.12, 0.06, 0.035, 0.015]
    )

    def validate(self, schema: "StateSchema") -> None:
        for key, row in self.crop_structure.items():
            if len(row) != len(schema.structure_labels):
                raise ParameterError(f"crop_structure row {key!r} has wrong length")
            if abs(sum(row) - 1.0) > 1e-9:
                raise ParameterError(f"crop_structure row {key!r} does not sum to 1")
        if len(self.climate_prior) != len(schema.climate_labels):
            raise ParameterError("climate_prior length mismatch")
        if len(self.initial_disease_prior) != schema.n_severity_bins:
            raise ParameterError("initial_disease_prior length mismatch")
        for name, row in (
            ("climate_prior", self.climate_prior),
            ("initial_disease_prior", self.initial_disease_prior),
        ):
            if abs(sum(row) - 1.0) > 1e-9:
                raise ParameterError(f"{name} does not sum to 1")


def _format_edge(x: float) -> str:
    return f"{x:g}"


def _bin_labels(edges) -> tuple[str, ...]:
    return tuple(
        f"{_format_edge(lo)}-{_format_edge(hi)}" for lo, hi in zip(edges, edges[1:])
    )


@dataclass
class StateSchema:
    """Bin edges and state labels for every model variable.

    Bins are contiguous, non-overlapping, and cover the stated range by
    construction (they are given as sorted edge lists).
    """

    max_time_steps: int = 20
    treatment_doses: list = field(default_factory=lambda: [0.0, 0.25, 0.5, 1.0])
    severity_edges: list = field(
        default_factory=lambda: [0.0, 0.01, 0.1, 0.5, 2.0, 5.0, 20.0, 100.0]
    )
    incidence_edges: list = field(default_factory=lambda: [0.0, 10.0, 50.0, 90.0, 100.0])
    growth_rate_edges: list = field(default_factory=lambda: [0.0, 0.5, 1.0, 2.0, 4.0, 8.0])
    climate_labels: list = field(
        default_factory=lambda: ["unfavourable", "neutral", "favourable"]
    )
    structure_labels: list = field(default_factory=lambda: ["open", "normal", "dense"])
    basic_protection_levels: list = field(
        default_factory=lambda: [0.0, 0.1, 0.2, 0.3, 0.4, 0.5]
    )
    mean_protection_edges: list = field(
        default_factory=lambda: [0.0, 0.1, 0.25, 0.4, 0.55, 0.75, 1.0]
    )
    protection_level_edges: list = field(default_factory=lambda: [0.0, 0.2, 0.5, 0.8, 1.0])
    concentration_edges: list = field(
        default_factory=lambda: [0.0, 0.05, 0.15, 0.3, 0.45, 1.0]
    )
    new_leaf_edges: list = field(default_factory=lambda: [0.0, 0.25, 0.5, 0.75, 1.0])
    prev_treatment_labels: list = field(default_factory=lambda: ["never", "1", "2", "3+"])
    prev_treatment_weeks: list = field(default_factory=lambda: [-1.0, 1.0, 2.0, 3.5])
    yield_loss_edges: list = field(
        default_factory=lambda: [0.0, 0.05, 0.2, 1.0, 3.0, 10.0, 100.0]
    )
    coarse_severity_bands: dict = field(
        default_factory=lambda: {"0-2": [0, 3], "2-20": [4, 5], "20-100": [6, 6]}
    )

    def validate(self) -> None:
        if self.max_time_steps > 20:
            raise ParameterError("max_time_steps is capped at 20")
        for name in (
            "severity_edges",
            "incidence_edges",
            "growth_rate_edges",
            "mean_protection_edges",
            "protection_level_edges",
            "concentration_edges",
            "new_leaf_edges",
            "yield_loss_edges",
        ):
            edges = getattr(self, name)
            if len(edges) < 2 or any(b <= a for a, b in zip(edges, edges[1:])):
                raise ParameterError(f"{name} must be strictly increasing")
        if sorted(self.treatment_doses) != list(self.treatment_doses):
            raise ParameterError("treatment_doses must be ascending (ties favour lower dose)")
        if len(self.prev_treatment_labels) != len(self.prev_treatment_weeks):
            raise ParameterError("prev_treatment labels/weeks length mismatch")

    # -- derived sizes ---------------------------------------------------

    @property
    def n_severity_bins(self) -> int:
        return len(self.severity_edges) - 1

    @property
    def dose_labels(self) -> tuple[str, ...]:
        return tuple(_format_edge(d) for d in self.treatment_doses)

    # -- variable factories ----------------------------------------------

    def variable(self, role: str, suffix: str = "") -> DiscreteVariable:
        return DiscreteVariable(role + suffix, self.states_for(role))

    def states_for(self, role: str) -> tuple[str, ...]:
        table = {
            "Treatment": self.dose_labels,
            "PrevDose": self.dose_labels,
            "DiseaseLevelB": _bin_labels(self.severity_edges),
            "DiseaseLevelA": _bin_labels(self.severity_edges),
            "DiseaseObserv": _bin_labels(self.incidence_edges),
            "GrowthRate": _bin_labels(self.growth_rate_edges),
            "ClimateEffect": tuple(self.climate_labels),
            "CropStructure": tuple(self.structure_labels),
            "BasicProtection": tuple(_format_edge(x) for x in self.basic_protection_levels),
            "MeanProtectn": _bin_labels(self.mean_protection_edges),
            "ProtectnLevel": _bin_labels(self.protection_level_edges),
            "ProtectnConc": _bin_labels(self.concentration_edges),
            "NewLeafFract": _bin_labels(self.new_leaf_edges),
            "PrevTreatment": tuple(self.prev_treatment_labels),
            "YieldLossPct": _bin_labels(self.yield_loss_edges),
        }
        if role not in table:
            raise ParameterError(f"unknown variable role {role!r}")
        return table[role]

    def edges_for(self, role: str) -> np.ndarray:
        table = {
            "DiseaseLevelB": self.severity_edges,
            "DiseaseLevelA": self.severity_edges,
            "DiseaseObserv": self.incidence_edges,
            "GrowthRate": self.growth_rate_edges,
            "MeanProtectn": self.mean_protection_edges,
            "ProtectnLevel": self.protection_level_edges,
            "ProtectnConc": self.concentration_edges,
            "NewLeafFract": self.new_leaf_edges,
            "YieldLossPct": self.yield_loss_edges,
        }
        if role not in table:
            raise ParameterError(f"variable role {role!r} has no bin edges")
        return np.asarray(table[role], dtype=float)

    def values_for(self, role: str) -> np.ndarray:
        """Fixed numeric value per state, for categorical-numeric variables."""
        table = {
            "Treatment": self.treatment_doses,
            "PrevDose": self.treatment_doses,
            "BasicProtection": self.basic_protection_levels,
            "PrevTreatment": self.prev_treatment_weeks,
        }
        if role not in table:
            raise ParameterError(f"variable role {role!r} has no per-state values")
        return np.asarray(table[role], dtype=float)

    def bin_index(self, role: str, value: float) -> int:
        """Index of the bin containing `value`, clamped at the boundary bins."""
        edges = self.edges_for(role)
        idx = int(np.searchsorted(edges, value, side="right")) - 1
        return int(np.clip(idx, 0, len(edges) - 2))

    def representative(self, role: str, index: int) -> float:
        """Point value standing for a bin: geometric midpoint for ratio-scaled
        bins, arithmetic for a bin touching zero."""
        edges = self.edges_for(role)
        lo, hi = float(edges[index]), float(edges[index + 1])
        if lo <= 0.0:
            return hi / 2.0
        return math.sqrt(lo * hi)

    def representatives(self, role: str) -> np.ndarray:
        edges = self.edges_for(role)
        return np.array([self.representative(role, i) for i in range(len(edges) - 1)])

    def band_mask(self, band: str) -> np.ndarray:
        """Boolean mask over severity bins for a coarse band like '2-20'."""
        if band not in self.coarse_severity_bands:
            raise ParameterError(f"unknown coarse severity band {band!r}")
        lo, hi = self.coarse_severity_bands[band]
        mask = np.zeros(self.n_severity_bins, dtype=bool)
        mask[lo : hi + 1] = True
        return mask


@dataclass
class BaselineRule:
    """Empirical threshold stand-in: spray a fixed dose above an incidence bin."""

    incidence_threshold_bin: str = "50-90"
    dose: float = 0.5


@dataclass
class Parameters:
    seed: int = 0
    samples_per_cell: int = 128
    noise_sd: float = 0.25
    quantification: QuantificationParameters = field(default_factory=QuantificationParameters)
    lookups: Lookups = field(default_factory=Lookups)
    state_schema: StateSchema = field(default_factory=StateSchema)
    baseline: BaselineRule = field(default_factory=BaselineRule)
    priors_mode: str = "fixed"  # fixed | per_context

    def validate(self) -> "Parameters":
        if self.samples_per_cell < 1:
            raise ParameterError("samples_per_cell must be >= 1")
        if self.noise_sd < 0:
            raise ParameterError("noise_sd must be >= 0")
        if self.priors_mode not in ("fixed", "per_context"):
            raise ParameterError("priors_mode must be 'fixed' or 'per_context'")
        self.quantification.validate()
        self.state_schema.validate()
        self.lookups.validate(self.state_schema)
        if self.baseline.incidence_threshold_bin not in _bin_labels(
            self.state_schema.incidence_edges
        ):
            raise ParameterError("baseline threshold is not an incidence bin label")
        if self.baseline.dose not in self.state_schema.treatment_doses:
            raise ParameterError("baseline dose is not on the treatment dose grid")
        return self

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def default_parameters() -> Parameters:
    return Parameters().validate()


def _merge_dataclass(instance, overrides: dict, path: str = ""):
    for key, value in overrides.items():
        if not hasattr(instance, key):
            raise ParameterError(f"unknown parameter {path + key!r}")
        current = getattr(instance, key)
        if hasattr(current, "__dataclass_fields__"):
            if not isinstance(value, dict):
                raise ParameterError(f"parameter {path + key!r} must be an object")
            _merge_dataclass(current, value, path + key + ".")
        else:
            setattr(instance, key, value)


def load_parameters(path: str | Path | None = None) -> Parameters:
    """Defaults overlaid with the JSON file at `path` (if given)."""
    params = Parameters()
    if path is not None:
        raw = json.loads(Path(path).read_text())
        if not isinstance(raw, dict):
            raise ParameterError("parameter file must contain a JSON object")
        _merge_dataclass(params, raw)
    return params.validate()
