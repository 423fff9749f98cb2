from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional


@dataclass(frozen=True)
class EstimatorReport:
    name: str
    value: float
    std_error: float
    n_samples: int
    parameters: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (self.std_error >= 0.0 or math.isnan(self.std_error)):
            raise ValueError("std_error must be non-negative")

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "value": self.value,
            "std_error": self.std_error,
            "n_samples": self.n_samples,
            "parameters": dict(self.parameters),
        }


@dataclass(frozen=True)
class DiagnosticsRecord:
    """One time-stamped row of estimated observables."""

    t: float
    m2: float
    m4: float
    entropy: EstimatorReport
    fisher: EstimatorReport
    pairwise_a_moment: EstimatorReport
    w2_to_reference: Optional[EstimatorReport] = None
    chaos_cov: Optional[EstimatorReport] = None
    residuals: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.m2 > 0.0:
            raise ValueError("m2 must be positive")
