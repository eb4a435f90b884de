"""Synthetic completion/production datasets for end-to-end pipeline testing.

The response is a known linear + pairwise-interaction function of the features
plus Gaussian noise, floored at zero; each well also gets a noisy exponential
decline curve whose first-12-month sum matches the response exactly. MCAR
masks are applied last, so the ground-truth signal is recoverable when
missingness and noise are switched off.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .table import CATEGORICAL, NUMERIC, Table


@dataclass(frozen=True)
class NumericFeature:
    name: str
    lo: float
    hi: float
    weight: float


@dataclass(frozen=True)
class CategoricalFeature:
    name: str
    levels: tuple
    offsets: tuple

    def __post_init__(self):
        if len(self.levels) != len(self.offsets):
            raise ValueError("levels and offsets must align")


@dataclass(frozen=True)
class Interaction:
    a: str
    b: str
    weight: float


@dataclass(frozen=True)
class DerivedNumeric:
    """Exact rescale of another numeric column (a deliberate collinear duplicate)."""

    name: str
    source: str
    factor: float


@dataclass(frozen=True)
class SynthSpec:
    n_wells: int = 1000
    numeric: tuple = ()
    categorical: tuple = ()
    derived: tuple = ()
    interactions: tuple = ()
    base_level: float = 40.0
    noise_std: float = 0.0
    missingness: dict = field(default_factory=dict)
    months: int = 24
    monthly_noise: float = 0.05
    decline_range: tuple = (0.08, 0.30)
    seed: int = 0

    def __post_init__(self):
        if self.n_wells < 1:
            raise ValueError("n_wells must be >= 1")
        if self.months < 2:
            raise ValueError("months must be >= 2")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        for name, frac in self.missingness.items():
            if not 0 <= frac < 1:
                raise ValueError(f"missingness for {name!r} must be in [0, 1)")


@dataclass
class GeneratedData:
    table: Table
    monthly: dict
    truth: dict  # effect weights actually used, for diagnostics


RESPONSE_COLUMN = "cum_prod_12m"
WELL_ID_COLUMN = "well_id"


def default_spec(n_wells: int = 1000, noise_std: float = 0.0, seed: int = 0, **overrides) -> SynthSpec:
    """A 10-ish predictor layout shaped like a completion dataset.

    Includes an exactly collinear pair (lateral length in ft and m) and two
    zero-weight junk columns so pruning and missingness filtering have
    something to do. Units are thousand barrels.
    """
    numeric = (
        NumericFeature("stage_count", 15, 60, 45.0),
        NumericFeature("proppant_lb_per_ft", 500, 2500, 70.0),
        NumericFeature("fluid_bbl_per_ft", 10, 50, 25.0),
        NumericFeature("lateral_length_ft", 4000, 11000, 55.0),
        NumericFeature("well_spacing_ft", 400, 1400, -22.0),
        NumericFeature("formation_thickness_ft", 20, 120, 18.0),
        NumericFeature("pump_rate_bpm", 50, 110, 12.0),
        NumericFeature("mud_weight_ppg", 8, 16, 0.0),
    )
    derived = (DerivedNumeric("lateral_length_m", "lateral_length_ft", 0.3048),)
    categorical = (
        CategoricalFeature(
            "township", tuple(f"T15{i}N" for i in range(6)), (0.0, 6.0, 14.0, -4.0, 9.0, 2.0)
        ),
        CategoricalFeature(
            "range_band", tuple(f"R9{i}W" for i in range(4)), (0.0, -5.0, 8.0, 3.0)
        ),
        CategoricalFeature("operator", ("alpha", "bravo", "charlie"), (0.0, 2.0, -2.0)),
    )
    interactions = (
        Interaction("stage_count", "proppant_lb_per_ft", 30.0),
        Interaction("lateral_length_ft", "fluid_bbl_per_ft", 20.0),
    )
    missingness = dict(
        overrides.pop(
            "missingness",
            {"formation_thickness_ft": 0.12, "pump_rate_bpm": 0.08, "mud_weight_ppg": 0.35},
        )
    )
    return SynthSpec(
        n_wells=n_wells,
        numeric=numeric,
        categorical=categorical,
        derived=derived,
        interactions=interactions,
        noise_std=noise_std,
        missingness=missingness,
        seed=seed,
        **overrides,
    )


def calibrated_spec(n_wells: int = 1000, noise_fraction: float = 0.1, seed: int = 0) -> SynthSpec:
    """default_spec with noise_std set to ``noise_fraction`` of the noiseless response std."""
    clean = generate(default_spec(n_wells=n_wells, noise_std=0.0, seed=seed, missingness={}))
    signal_std = float(clean.table.column_values(RESPONSE_COLUMN).std())
    return default_spec(n_wells=n_wells, noise_std=noise_fraction * signal_std, seed=seed)


def _unit_scale(x: np.ndarray, lo: float, hi: float) -> np.ndarray:
    return (x - lo) / (hi - lo)


def ground_truth_response(spec: SynthSpec, numeric_values: dict, categorical_codes: dict) -> np.ndarray:
    """Noiseless response for the given feature draws (the generator's formula)."""
    n = len(next(iter(numeric_values.values())))
    core = np.full(n, spec.base_level)
    scaled = {f.name: _unit_scale(numeric_values[f.name], f.lo, f.hi) for f in spec.numeric}
    for f in spec.numeric:
        core += f.weight * scaled[f.name]
    for f in spec.categorical:
        core += np.asarray(f.offsets)[categorical_codes[f.name]]
    for inter in spec.interactions:
        core += inter.weight * scaled[inter.a] * scaled[inter.b]
    return core


def generate(spec: SynthSpec) -> GeneratedData:
    """Draw the feature table, response, and per-well monthly series.

    Draw order (all from one stream seeded by spec.seed): numeric features,
    categorical codes, response noise, decline rates, monthly noise, MCAR
    masks. The sum of each well's first 12 months equals its response before
    masking; shorter histories normalize over the months that exist.
    """
    rng = np.random.default_rng(spec.seed)
    n = spec.n_wells

    numeric_values = {f.name: rng.uniform(f.lo, f.hi, size=n) for f in spec.numeric}
    categorical_codes = {
        f.name: rng.integers(0, len(f.levels), size=n) for f in spec.categorical
    }
    core = ground_truth_response(spec, numeric_values, categorical_codes)
    noise = rng.normal(0.0, spec.noise_std, size=n) if spec.noise_std > 0 else np.zeros(n)
    response = np.maximum(core + noise, 0.0)

    decline = rng.uniform(*spec.decline_range, size=n)
    wobble = rng.normal(0.0, spec.monthly_noise, size=(n, spec.months))
    wobble = np.clip(wobble, -0.9, None)
    t = np.arange(spec.months)
    shape = np.exp(-decline[:, None] * t[None, :]) * (1.0 + wobble)
    norm_months = min(12, spec.months)
    scale = response / shape[:, :norm_months].sum(axis=1)
    series = shape * scale[:, None]

    well_ids = [f"W{i:05d}" for i in range(n)]
    monthly = {well_ids[i]: series[i].copy() for i in range(n)}

    names = [WELL_ID_COLUMN]
    kinds = [CATEGORICAL]
    labels = [well_ids]
    columns = [np.arange(n, dtype=float)]
    for f in spec.numeric:
        names.append(f.name)
        kinds.append(NUMERIC)
        labels.append(None)
        columns.append(numeric_values[f.name])
    for f in spec.derived:
        names.append(f.name)
        kinds.append(NUMERIC)
        labels.append(None)
        columns.append(f.factor * numeric_values[f.source])
    for f in spec.categorical:
        names.append(f.name)
        kinds.append(CATEGORICAL)
        labels.append(list(f.levels))
        columns.append(categorical_codes[f.name].astype(float))
    names.append(RESPONSE_COLUMN)
    kinds.append(NUMERIC)
    labels.append(None)
    columns.append(response)

    mask = np.zeros((len(names), n), dtype=bool)
    for name, frac in spec.missingness.items():
        if name not in names:
            raise ValueError(f"missingness names unknown column {name!r}")
        mask[names.index(name)] = rng.random(n) < frac

    table = Table(names, kinds, np.array(columns), mask, labels)
    truth = {
        "base_level": spec.base_level,
        "numeric_weights": {f.name: f.weight for f in spec.numeric},
        "categorical_offsets": {f.name: list(f.offsets) for f in spec.categorical},
        "interaction_weights": {(i.a, i.b): i.weight for i in spec.interactions},
    }
    return GeneratedData(table, monthly, truth)
