"""
Simulation report models.

Defines estimator specifications and the per-estimator performance
metrics aggregated over Monte Carlo replications.
"""

import math
from dataclasses import asdict, dataclass, field, fields
from typing import Dict, List, Optional

import pandas as pd

from .estimates import EstimationMode, MissingHandling, PsMethod


@dataclass(frozen=True)
class EstimatorSpec:
    """
    One estimator: score method x missing-data handling x effect mode.

    Attributes:
        ps_method: Propensity score method
        handling: Missing-data handling (none = complete data before missingness)
        mode: IPW or matching
    """

    ps_method: PsMethod
    handling: MissingHandling
    mode: EstimationMode

    def __post_init__(self) -> None:
        if not self.ps_method.is_cart and self.handling not in (
            MissingHandling.NONE,
            MissingHandling.MI,
        ):
            raise ValueError(
                f"{self.ps_method.value} needs complete data; "
                f"handling '{self.handling.value}' is not allowed"
            )

    @property
    def label(self) -> str:
        """Table label, e.g. 'baCART', 'CCA+bCART', 'MI+LRc'."""
        if self.handling == MissingHandling.CCA:
            return f"CCA+{self.ps_method.value}"
        if self.handling == MissingHandling.MI:
            return f"MI+{self.ps_method.value}"
        return self.ps_method.value

    @property
    def group(self) -> str:
        """'Without' for complete-data estimates, 'With' otherwise."""
        return "Without" if self.handling == MissingHandling.NONE else "With"

    @property
    def key(self) -> str:
        """Unique key, e.g. 'mi:baCART:ipw'."""
        return f"{self.handling.value}:{self.ps_method.value}:{self.mode.value}"

    @property
    def baseline(self) -> Optional["EstimatorSpec"]:
        """Complete-data counterpart used for the bias difference (CART methods only)."""
        if self.handling == MissingHandling.NONE or not self.ps_method.is_cart:
            return None
        return EstimatorSpec(self.ps_method, MissingHandling.NONE, self.mode)

    @classmethod
    def parse(cls, text: str, mode: EstimationMode) -> "EstimatorSpec":
        """
        Parse a table label such as 'baCART', 'CCA+bCART', 'MI+LRc' or 'none:baCART'.

        A bare CART method name means direct handling; 'none:<method>' selects
        the complete-data estimate.
        """
        text = text.strip()
        if ":" in text:
            handling_str, method_str = text.split(":", 1)
            return cls(
                PsMethod.from_string(method_str), MissingHandling(handling_str.lower()), mode
            )
        if "+" in text:
            prefix, method_str = text.split("+", 1)
            return cls(PsMethod.from_string(method_str), MissingHandling(prefix.lower()), mode)
        return cls(PsMethod.from_string(text), MissingHandling.DIRECT, mode)


def default_estimators(modes: List[EstimationMode]) -> List[EstimatorSpec]:
    """All estimators of the study, in table order, for each mode."""
    specs: List[EstimatorSpec] = []
    for mode in modes:
        for handling in (MissingHandling.NONE, MissingHandling.DIRECT, MissingHandling.CCA):
            for method in (PsMethod.BACART, PsMethod.BCART):
                specs.append(EstimatorSpec(method, handling, mode))
        for method in (PsMethod.BACART, PsMethod.BCART, PsMethod.LRC, PsMethod.LRM):
            specs.append(EstimatorSpec(method, MissingHandling.MI, mode))
    return specs


@dataclass
class MetricsRow:
    """
    Performance metrics of one estimator in one scenario.

    Attributes:
        scenario: Scenario id
        group: 'Without' or 'With' missing data
        method: Table label
        ps_method: Score method value
        handling: Missing-data handling value
        mode: 'ipw' or 'match'
        truth: True marginal ATT log odds ratio
        bias: Mean of (estimate - truth)
        bias_diff: bias minus the complete-data bias of the same method (NaN if none)
        emp_se: Standard deviation of estimates (divisor R - 1)
        mean_se: Mean estimated standard error
        mse: Mean of (estimate - truth)^2
        coverage: Fraction of CIs containing the truth
        replications: Successful replications R
        failures: Failed replications
        ridge_fallbacks: Replications that needed the IRLS ridge fallback
        invalid: True when failures exceed the configured threshold
    """

    scenario: str
    group: str
    method: str
    ps_method: str
    handling: str
    mode: str
    truth: float
    bias: float
    bias_diff: float
    emp_se: float
    mean_se: float
    mse: float
    coverage: float
    replications: int
    failures: int
    ridge_fallbacks: int = 0
    invalid: bool = False


METRIC_COLUMNS = [f.name for f in fields(MetricsRow)]


@dataclass
class MetricsReport:
    """
    Collection of metrics rows plus provenance.

    Attributes:
        rows: Metrics rows in table order
        provenance: Config echo written into report headers
    """

    rows: List[MetricsRow] = field(default_factory=list)
    provenance: Dict[str, str] = field(default_factory=dict)

    def to_frame(self) -> pd.DataFrame:
        """Convert rows to a DataFrame with stable column order."""
        return pd.DataFrame([asdict(r) for r in self.rows], columns=METRIC_COLUMNS)

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> "MetricsReport":
        """Rebuild a report from ``to_frame`` output."""
        rows = []
        for record in frame.to_dict(orient="records"):
            bias_diff = record["bias_diff"]
            rows.append(
                MetricsRow(
                    scenario=str(record["scenario"]),
                    group=str(record["group"]),
                    method=str(record["method"]),
                    ps_method=str(record["ps_method"]),
                    handling=str(record["handling"]),
                    mode=str(record["mode"]),
                    truth=float(record["truth"]),
                    bias=float(record["bias"]),
                    bias_diff=float("nan") if bias_diff is None else float(bias_diff),
                    emp_se=float(record["emp_se"]),
                    mean_se=float(record["mean_se"]),
                    mse=float(record["mse"]),
                    coverage=float(record["coverage"]),
                    replications=int(record["replications"]),
                    failures=int(record["failures"]),
                    ridge_fallbacks=int(record["ridge_fallbacks"]),
                    invalid=str(record["invalid"]).lower() == "true",
                )
            )
        return cls(rows=rows)

    def get(self, scenario: str, method: str, mode: str, group: str = "With") -> MetricsRow:
        """Look up a row by scenario, label, mode and group."""
        for row in self.rows:
            if (row.scenario, row.method, row.mode, row.group) == (scenario, method, mode, group):
                return row
        raise KeyError(f"No row for scenario={scenario} method={method} mode={mode} {group}")

    def same_rows(self, other: "MetricsReport") -> bool:
        """True if both reports hold identical rows (NaN equal to NaN)."""
        if len(self.rows) != len(other.rows):
            return False
        for a, b in zip(self.rows, other.rows):
            for name in METRIC_COLUMNS:
                x, y = getattr(a, name), getattr(b, name)
                if isinstance(x, float) and isinstance(y, float):
                    if math.isnan(x) and math.isnan(y):
                        continue
                if x != y:
                    return False
        return True
