# Copyright 2024 ICU Fairness Monitor contributors
# See LICENSE file for licensing details.

"""Seeded synthetic ICU cohort with GCS documentation bias.

Every ICU draws one documentation policy for sedated patients: leave the GCS empty ("unable to
score"), record it as 3 or record it as 15. Mortality only depends on the latent severity and
the true GCS, never on what was documented. Two scorers read the documented GCS:

- `score_legacy` takes the recorded value at face value;
- `score_robust` discounts a recorded 3 on a sedated patient.

The random stream is a numpy `PCG64` bit generator read one raw 64-bit word at a time, so the
cohort only depends on the seed. Uniforms are `(word >> 11) * 2**-53`, normals come from the
Box-Muller transform and categorical draws invert the cumulative weights.

Example:
```python

from icu_fairness.v0.cohort_sim import CohortConfig, serialize_cohort, simulate_cohort

config = CohortConfig(seed=42, n_icus=10, stays_per_icu=50)
stays = simulate_cohort(config)
csv_bytes = serialize_cohort(stays, config)
```
"""

import logging
import math
from enum import Enum
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.special import expit

# Increment this major API version when introducing breaking changes
LIBAPI = 0

# Increment this PATCH version before publishing a change to this library
LIBPATCH = 1

logger = logging.getLogger(__name__)

COHORT_COLUMNS = [
    "stay_id",
    "icu_id",
    "sex",
    "race",
    "dxGroup",
    "sedated",
    "gcs_true",
    "gcs_recorded",
    "died",
    "score_legacy",
    "score_robust",
]
GCS_MIN = 3
GCS_MAX = 15
WEIGHT_TOLERANCE = 1e-9


class DocumentationPolicy(str, Enum):
    """How an ICU documents the GCS of a sedated patient."""

    RECORD_NULL = "record_null"
    RECORD_AS_3 = "record_as_3"
    RECORD_AS_15 = "record_as_15"


class Coefficients(BaseModel):
    """Logistic coefficients over severity and GCS deficit (15 - GCS)."""

    model_config = ConfigDict(frozen=True)

    intercept: float = -3.0
    severity: float = Field(default=1.2, ge=0.0)
    gcs: float = Field(default=0.25, ge=0.0)


class CohortConfig(BaseModel):
    """Parameters of a simulated cohort."""

    model_config = ConfigDict(frozen=True)

    seed: int = Field(default=42, ge=0, lt=2**64)
    n_icus: int = Field(default=100, gt=0)
    stays_per_icu: int = Field(default=200, gt=0)
    sedation_rate: float = Field(default=0.15, ge=0.0, le=1.0)
    sedation_spread: float = Field(
        default=0.8,
        ge=0.0,
        le=1.0,
        description="Relative spread of per-ICU sedation rates around `sedation_rate`.",
    )
    policy_mix: Dict[DocumentationPolicy, float] = Field(
        default_factory=lambda: {
            DocumentationPolicy.RECORD_NULL: 0.5,
            DocumentationPolicy.RECORD_AS_3: 0.25,
            DocumentationPolicy.RECORD_AS_15: 0.25,
        }
    )
    dx_mix: Dict[str, float] = Field(
        default_factory=lambda: {"CardiacArrest": 0.08, "ARDS": 0.07, "DKA": 0.10, "Other": 0.75}
    )
    dx_severity_offsets: Dict[str, float] = Field(
        default_factory=lambda: {"CardiacArrest": 3.0, "ARDS": 1.0, "DKA": -3.0, "Other": -2.5}
    )
    sex_mix: Dict[str, float] = Field(
        default_factory=lambda: {"Female": 0.45, "Non-Female": 0.55}
    )
    race_mix: Dict[str, float] = Field(
        default_factory=lambda: {
            "African American": 0.11,
            "Asian": 0.02,
            "Caucasian": 0.76,
            "Hispanic": 0.04,
            "Native American": 0.01,
            "Other/Unknown": 0.06,
        }
    )
    gcs_slope: float = Field(default=3.0, gt=0.0, description="GCS points lost per unit severity.")
    proxy_noise: float = Field(default=0.5, ge=0.0)
    imputed_gcs: int = Field(default=10, ge=GCS_MIN, le=GCS_MAX)
    mortality_coeffs: Coefficients = Field(default_factory=Coefficients)
    scorer_coeffs: Optional[Coefficients] = Field(
        default=None, description="Coefficients of both scorers; defaults to mortality_coeffs."
    )

    @field_validator("policy_mix", "dx_mix", "sex_mix", "race_mix")
    @classmethod
    def _weights_are_a_distribution(cls, mix: Dict) -> Dict:
        if not mix:
            raise ValueError("at least one category is required")
        if any(weight < 0 for weight in mix.values()):
            raise ValueError("weights must be non-negative")
        if abs(sum(mix.values()) - 1.0) > WEIGHT_TOLERANCE:
            raise ValueError(f"weights must sum to 1, got {sum(mix.values())}")
        return mix

    @model_validator(mode="after")
    def _every_diagnosis_has_an_offset(self) -> "CohortConfig":
        missing = set(self.dx_mix) - set(self.dx_severity_offsets)
        if missing:
            raise ValueError(f"no severity offset for diagnosis groups {sorted(missing)}")
        return self

    @property
    def scorer(self) -> Coefficients:
        """Coefficients used by both scorers."""
        return self.scorer_coeffs or self.mortality_coeffs


class SimulatedStay(BaseModel):
    """One simulated ICU stay."""

    model_config = ConfigDict(frozen=True)

    stay_id: str
    icu_id: str
    policy: DocumentationPolicy
    sex: str
    race: str
    dx_group: str
    severity: float
    severity_proxy: float
    true_gcs: int = Field(ge=GCS_MIN, le=GCS_MAX)
    sedated: bool
    recorded_gcs: Optional[int] = Field(ge=GCS_MIN, le=GCS_MAX)
    died: int = Field(ge=0, le=1)

    @model_validator(mode="after")
    def _documentation_follows_policy(self) -> "SimulatedStay":
        if not self.sedated and self.recorded_gcs != self.true_gcs:
            raise ValueError("a stay without sedation records its true GCS")
        if self.sedated and self.recorded_gcs not in (None, GCS_MIN, GCS_MAX):
            raise ValueError("a sedated stay records GCS as empty, 3 or 15")
        return self


class SeededStream:
    """Platform-independent random draws from a `PCG64` raw word stream."""

    def __init__(self, seed: int):
        self._bit_generator = np.random.PCG64(seed)

    def uniform(self) -> float:
        """Returns a draw in [0, 1) built from the top 53 bits of the next word."""
        word = int(self._bit_generator.random_raw())
        return (word >> 11) * 2.0**-53

    def normal(self) -> float:
        """Returns a standard normal draw (Box-Muller, cosine branch)."""
        u1 = 1.0 - self.uniform()
        u2 = self.uniform()
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def bernoulli(self, p: float) -> bool:
        """Returns True with probability p."""
        return self.uniform() < p

    def categorical(self, weights: Sequence[float]) -> int:
        """Returns the index drawn by inverting the cumulative weights."""
        cumulative = np.cumsum(weights)
        index = int(np.searchsorted(cumulative, self.uniform() * cumulative[-1], side="right"))
        return min(index, len(weights) - 1)

    def permutation(self, n: int) -> List[int]:
        """Returns a Fisher-Yates shuffle of range(n)."""
        order = list(range(n))
        for i in range(n - 1, 0, -1):
            j = int(self.uniform() * (i + 1))
            order[i], order[j] = order[j], order[i]
        return order


def _choice(stream: SeededStream, mix: Dict) -> object:
    keys = list(mix)
    return keys[stream.categorical([mix[key] for key in keys])]


def icu_sedation_rates(config: CohortConfig, stream: SeededStream) -> List[float]:
    """Spreads sedation rates evenly around `sedation_rate` and shuffles them over ICUs.

    The mean over ICUs equals `sedation_rate` exactly unless clipping to [0, 1] applies.
    """
    n = config.n_icus
    strata = [
        config.sedation_rate * (1.0 + config.sedation_spread * (2.0 * (i + 0.5) / n - 1.0))
        for i in range(n)
    ]
    return [min(max(strata[i], 0.0), 1.0) for i in stream.permutation(n)]


def true_gcs_from_severity(severity: float, slope: float = 3.0) -> int:
    """Maps latent severity onto a GCS total; non-positive severity is a GCS of 15."""
    deficit = int(math.floor(slope * max(severity, 0.0) + 0.5))
    return min(max(GCS_MAX - deficit, GCS_MIN), GCS_MAX)


def _recorded_gcs(policy: DocumentationPolicy, sedated: bool, true_gcs: int) -> Optional[int]:
    if not sedated:
        return true_gcs
    if policy is DocumentationPolicy.RECORD_NULL:
        return None
    if policy is DocumentationPolicy.RECORD_AS_3:
        return GCS_MIN
    return GCS_MAX


def _logistic(coeffs: Coefficients, severity: float, gcs: int) -> float:
    linear = coeffs.intercept + coeffs.severity * severity + coeffs.gcs * (GCS_MAX - gcs)
    return float(expit(linear))


def simulate_cohort(config: CohortConfig) -> List[SimulatedStay]:
    """Generates a cohort; the same config always yields the same stays.

    Args:
        config (CohortConfig): Cohort parameters.

    Returns:
        List[SimulatedStay]: `n_icus * stays_per_icu` stays, grouped by ICU.
    """
    stream = SeededStream(config.seed)
    sedation_rates = icu_sedation_rates(config, stream)
    stays = []
    for i in range(config.n_icus):
        icu_id = f"icu{i + 1:03d}"
        policy = DocumentationPolicy(_choice(stream, config.policy_mix))
        for j in range(config.stays_per_icu):
            dx_group = str(_choice(stream, config.dx_mix))
            severity = stream.normal() + config.dx_severity_offsets[dx_group]
            sex = str(_choice(stream, config.sex_mix))
            race = str(_choice(stream, config.race_mix))
            true_gcs = true_gcs_from_severity(severity, config.gcs_slope)
            sedated = stream.bernoulli(sedation_rates[i])
            died = stream.bernoulli(_logistic(config.mortality_coeffs, severity, true_gcs))
            severity_proxy = severity + config.proxy_noise * stream.normal()
            stays.append(
                SimulatedStay(
                    stay_id=f"{icu_id}-s{j + 1:04d}",
                    icu_id=icu_id,
                    policy=policy,
                    sex=sex,
                    race=race,
                    dx_group=dx_group,
                    severity=severity,
                    severity_proxy=severity_proxy,
                    true_gcs=true_gcs,
                    sedated=sedated,
                    recorded_gcs=_recorded_gcs(policy, sedated, true_gcs),
                    died=int(died),
                )
            )
    logger.info(
        "Simulated %d stays over %d ICUs (seed %d, mortality %.3f)",
        len(stays),
        config.n_icus,
        config.seed,
        sum(stay.died for stay in stays) / len(stays),
    )
    return stays


def score_legacy(stay: SimulatedStay, coeffs: Coefficients, imputed_gcs: int = 10) -> float:
    """Scores a stay from its recorded GCS, imputing an empty GCS to `imputed_gcs`."""
    gcs = imputed_gcs if stay.recorded_gcs is None else stay.recorded_gcs
    return _logistic(coeffs, stay.severity_proxy, gcs)


def score_robust(stay: SimulatedStay, coeffs: Coefficients, imputed_gcs: int = 10) -> float:
    """Scores like `score_legacy`, but treats a recorded 3 on a sedated stay as missing."""
    if stay.sedated and stay.recorded_gcs == GCS_MIN:
        return _logistic(coeffs, stay.severity_proxy, imputed_gcs)
    return score_legacy(stay, coeffs, imputed_gcs)


def cohort_frame(stays: Sequence[SimulatedStay], config: CohortConfig) -> pd.DataFrame:
    """Lays the cohort and both scores out as the simulator output table."""
    coeffs = config.scorer
    return pd.DataFrame(
        [
            {
                "stay_id": stay.stay_id,
                "icu_id": stay.icu_id,
                "sex": stay.sex,
                "race": stay.race,
                "dxGroup": stay.dx_group,
                "sedated": int(stay.sedated),
                "gcs_true": stay.true_gcs,
                "gcs_recorded": "" if stay.recorded_gcs is None else str(stay.recorded_gcs),
                "died": stay.died,
                "score_legacy": repr(score_legacy(stay, coeffs, config.imputed_gcs)),
                "score_robust": repr(score_robust(stay, coeffs, config.imputed_gcs)),
            }
            for stay in stays
        ],
        columns=COHORT_COLUMNS,
    )


def serialize_cohort(stays: Sequence[SimulatedStay], config: CohortConfig) -> bytes:
    """Writes the simulator output CSV."""
    return cohort_frame(stays, config).to_csv(index=False, lineterminator="\n").encode()
