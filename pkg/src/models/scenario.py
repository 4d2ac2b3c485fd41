"""
Simulation scenario models.

Defines the scenario parameters for the data-generating mechanism and the
preset scenarios 1-8 plus the linear-exposure variant of scenario 2.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Dict, Optional, Tuple


class Mechanism(str, Enum):
    """Missing-data mechanism of a scenario."""

    MCAR = "MCAR"
    MAR = "MAR"


class ExposureModel(str, Enum):
    """Exposure allocation model of the data-generating mechanism."""

    NONLINEAR = "nonlinear"
    LINEAR = "linear"


@dataclass(frozen=True)
class ScenarioConfig:
    """
    One simulation scenario.

    W3 is set to missing with probability ``p``; under MAR, W4 is set to
    missing with probability expit(a0 + a1*W1 + a2*A + a3*Y), independently
    of W3.

    Attributes:
        id: Scenario identifier ("1".."8", "2L")
        gamma: Conditional log odds ratio of A in the outcome model
        mechanism: MCAR or MAR
        p: Missingness probability of W3
        alpha: (a0, a1, a2, a3) for W4 missingness, None under MCAR
        exposure_model: Nonlinear (default) or linear exposure allocation
        pmp: Reference average proportion of missing data points
        pir: Reference average proportion of incomplete records
    """

    id: str
    gamma: float
    mechanism: Mechanism
    p: float
    alpha: Optional[Tuple[float, float, float, float]] = None
    exposure_model: ExposureModel = ExposureModel.NONLINEAR
    pmp: Optional[float] = None
    pir: Optional[float] = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"Scenario {self.id}: p must lie in [0, 1], got {self.p}")
        if self.mechanism == Mechanism.MAR and self.alpha is None:
            raise ValueError(f"Scenario {self.id}: MAR requires alpha coefficients")
        if self.alpha is not None and len(self.alpha) != 4:
            raise ValueError(f"Scenario {self.id}: alpha must have four coefficients")

    def to_dict(self) -> dict:
        """Convert to dictionary for provenance headers."""
        return {
            "id": self.id,
            "gamma": self.gamma,
            "mechanism": self.mechanism.value,
            "p": self.p,
            "alpha": list(self.alpha) if self.alpha is not None else None,
            "exposure_model": self.exposure_model.value,
        }


SCENARIOS: Dict[str, ScenarioConfig] = {
    "1": ScenarioConfig("1", 1.0, Mechanism.MCAR, 0.3, pmp=0.03, pir=0.30),
    "2": ScenarioConfig("2", 1.0, Mechanism.MCAR, 0.6, pmp=0.05, pir=0.60),
    "3": ScenarioConfig("3", 1.0, Mechanism.MAR, 0.0, (-0.7, 0.0, 0.0, 1.5), pmp=0.04, pir=0.48),
    "4": ScenarioConfig("4", -1.0, Mechanism.MAR, 0.0, (-1.0, 0.0, 0.0, 1.5), pmp=0.03, pir=0.35),
    "5": ScenarioConfig("5", 1.0, Mechanism.MAR, 0.1, (-1.6, 0.5, 0.5, 0.5), pmp=0.03, pir=0.37),
    "6": ScenarioConfig("6", 1.0, Mechanism.MAR, 0.1, (-2.1, 0.5, 0.5, 1.5), pmp=0.03, pir=0.37),
    "7": ScenarioConfig("7", 1.0, Mechanism.MAR, 0.1, (-2.3, 0.5, 1.5, 0.5), pmp=0.03, pir=0.36),
    "8": ScenarioConfig("8", 1.0, Mechanism.MAR, 0.1, (-2.2, 1.5, 0.5, 0.5), pmp=0.03, pir=0.37),
    "2L": ScenarioConfig(
        "2L", 1.0, Mechanism.MCAR, 0.6, exposure_model=ExposureModel.LINEAR, pmp=0.05, pir=0.60
    ),
}


def get_scenario(scenario_id: str) -> ScenarioConfig:
    """Look up a preset scenario by id."""
    try:
        return SCENARIOS[str(scenario_id)]
    except KeyError as e:
        raise ValueError(f"Unknown scenario: {scenario_id}") from e
