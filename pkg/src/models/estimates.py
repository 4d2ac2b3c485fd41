"""
Estimation data models.

Defines propensity scores, ATT weights, matched samples and effect
estimates, together with the enums that name estimators and modes.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Optional, Tuple

import numpy as np


class PsMethod(str, Enum):
    """Propensity score estimation method."""

    BACART = "baCART"
    BCART = "bCART"
    LRC = "LRc"
    LRM = "LRm"

    @classmethod
    def from_string(cls, value: str) -> "PsMethod":
        """Parse a method name case-insensitively (e.g. 'bacart', 'lrc')."""
        normalized = value.strip().lower()
        for method in cls:
            if method.value.lower() == normalized:
                return method
        raise ValueError(f"Unknown propensity score method: {value}")

    @property
    def is_cart(self) -> bool:
        """True for the tree-ensemble methods."""
        return self in (PsMethod.BACART, PsMethod.BCART)


class MissingHandling(str, Enum):
    """How missing covariate data are handled before score estimation."""

    NONE = "none"
    DIRECT = "direct"
    CCA = "cca"
    MI = "mi"


class EstimationMode(str, Enum):
    """Effect estimation mode."""

    IPW = "ipw"
    MATCH = "match"


@dataclass(frozen=True)
class PropensityScores:
    """
    Truncated propensity scores.

    Attributes:
        values: Per-row scores in [lower, upper]
        method: Estimator that produced the scores
        generalised: True when the scores condition on missingness, e*(V)
    """

    values: np.ndarray
    method: Optional[PsMethod] = None
    generalised: bool = False

    def __len__(self) -> int:
        return int(self.values.shape[0])

    @property
    def logit(self) -> np.ndarray:
        """Logit of the scores."""
        return np.log(self.values / (1.0 - self.values))


@dataclass(frozen=True)
class AttWeights:
    """
    ATT weights: 1 for exposed rows, PS/(1-PS) for unexposed rows.

    Attributes:
        values: Per-row weight
        estimand: Target estimand tag
    """

    values: np.ndarray
    estimand: str = "ATT"

    @property
    def effective_sample_size(self) -> float:
        """Kish effective sample size (sum w)^2 / sum w^2."""
        total = float(self.values.sum())
        return total * total / float(np.square(self.values).sum())


@dataclass(frozen=True)
class MatchedSample:
    """
    1:1 matched pairs without replacement.

    Attributes:
        pairs: (exposed row, unexposed row) positions
        caliper: Caliper on the logit scale used for matching
    """

    pairs: Tuple[Tuple[int, int], ...]
    caliper: float

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def rows(self) -> np.ndarray:
        """All matched row positions, exposed rows first within each pair."""
        return np.array([row for pair in self.pairs for row in pair], dtype=np.int64)


@dataclass(frozen=True)
class PooledEstimate:
    """
    Rubin's-rules combination of m estimates.

    Attributes:
        point: Mean of the m point estimates
        within: Mean within-imputation variance
        between: Between-imputation variance
        total: within + (1 + 1/m) * between
        df: Degrees of freedom (inf when between == 0)
        ci_low: Lower confidence limit
        ci_high: Upper confidence limit
        m: Number of estimates pooled
        level: Confidence level
    """

    point: float
    within: float
    between: float
    total: float
    df: float
    ci_low: float
    ci_high: float
    m: int
    level: float = 0.90

    @property
    def se(self) -> float:
        """Pooled standard error."""
        return float(np.sqrt(self.total))


@dataclass(frozen=True)
class EffectEstimate:
    """
    ATT log odds ratio estimate.

    Attributes:
        point: log-OR estimate
        se: Standard error
        ci_low: Lower confidence limit
        ci_high: Upper confidence limit
        level: Confidence level
        diagnostics: Matched count, effective sample size, fallbacks
        pooled: Rubin's-rules details when the estimate pools imputations
    """

    point: float
    se: float
    ci_low: float
    ci_high: float
    level: float = 0.90
    diagnostics: Dict[str, Any] = field(default_factory=dict)
    pooled: Optional[PooledEstimate] = None

    def covers(self, value: float) -> bool:
        """True if ``value`` lies in the closed confidence interval."""
        return self.ci_low <= value <= self.ci_high

    def to_dict(self) -> dict:
        """Convert to dictionary."""
        return {
            "point": self.point,
            "se": self.se,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "level": self.level,
        }
