"""
Monte Carlo driver.

For each replication a cohort is generated, every estimator is run on the
complete cohort and again after missingness injection, and the estimates
are scored against the true marginal ATT log odds ratio. Replications run
in a joblib worker pool; aggregation is ordered by replication index so
reports do not depend on scheduling.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from causal import estimate_att, estimate_att_mi, fit_propensity
from config import Settings, settings as default_settings
from dgp import generate_cohort, inject_missingness, true_att_log_or
from exceptions import PsMissError
from impute import ImputedSet, MiceConfig, mice_impute
from models import (
    METRIC_COLUMNS,
    Dataset,
    EffectEstimate,
    EstimatorSpec,
    MetricsReport,
    MetricsRow,
    MissingHandling,
    PropensityScores,
    PsMethod,
    ScenarioConfig,
)
from stats import RngStream, content_id, empirical_sd

logger = logging.getLogger(__name__)

METRIC_BLOCKS: Tuple[Tuple[str, str], ...] = (
    ("bias", "Bias"),
    ("emp_se", "Empirical SE"),
    ("mean_se", "Mean SE-hat"),
    ("mse", "MSE"),
    ("coverage", "Coverage"),
    ("bias_diff", "Bias dif."),
)


_TEXT_COLUMNS = ("scenario", "group", "method", "ps_method", "handling", "mode")


class ReportFormat(str, Enum):
    """Report output formats."""

    CSV = "csv"
    MARKDOWN = "markdown"


@dataclass
class ReplicationResult:
    """
    Estimates of one replication, keyed by estimator key.

    Attributes:
        replication: Replication index
        estimates: Successful estimates
        errors: Failure messages of estimators that raised
    """

    replication: int
    estimates: Dict[str, EffectEstimate] = field(default_factory=dict)
    errors: Dict[str, str] = field(default_factory=dict)


class _ReplicationData:
    """Per-replication datasets and score caches shared across estimators."""

    def __init__(
        self,
        scenario: ScenarioConfig,
        rng: RngStream,
        settings: Settings,
    ) -> None:
        self.scenario = scenario
        self.rng = rng
        self.settings = settings
        cohort = generate_cohort(settings.simulation.n, scenario, rng.substream("cohort"))
        self.complete = cohort.dataset
        self.incomplete = inject_missingness(cohort, scenario, rng.substream("missingness"))
        self._cca: Optional[Dataset] = None
        self._imputed: Optional[Union[ImputedSet, PsMissError]] = None
        self._scores: Dict[Tuple[str, str], Any] = {}

    def dataset(self, handling: MissingHandling) -> Dataset:
        if handling == MissingHandling.NONE:
            return self.complete
        if handling == MissingHandling.DIRECT:
            return self.incomplete
        if self._cca is None:
            self._cca = self.incomplete.complete_cases()
        return self._cca

    def imputed(self) -> ImputedSet:
        if self._imputed is None:
            try:
                config = MiceConfig.default_for(self.incomplete, self.settings.imputation)
                self._imputed = mice_impute(
                    self.incomplete, config, self.rng.substream("imputation")
                )
            except PsMissError as e:
                self._imputed = e
        if isinstance(self._imputed, PsMissError):
            raise self._imputed
        return self._imputed

    def _cached(self, key: Tuple[str, str], compute: Callable[[], Any]) -> Any:
        if key not in self._scores:
            try:
                self._scores[key] = compute()
            except PsMissError as e:
                self._scores[key] = e
        value = self._scores[key]
        if isinstance(value, PsMissError):
            raise value
        return value

    def scores(self, handling: MissingHandling, method: PsMethod) -> PropensityScores:
        purpose = f"ps/{handling.value}/{method.value}"
        return self._cached(
            (handling.value, method.value),
            lambda: fit_propensity(
                self.dataset(handling),
                method,
                self.rng.substream(purpose),
                self.settings,
                self.scenario.exposure_model,
            ),
        )

    def imputed_scores(self, method: PsMethod) -> List[PropensityScores]:
        purpose = f"ps/mi/{method.value}"

        def compute() -> List[PropensityScores]:
            return [
                fit_propensity(
                    data,
                    method,
                    self.rng.substream(purpose, content_id(data.values)),
                    self.settings,
                    self.scenario.exposure_model,
                )
                for data in self.imputed()
            ]

        return self._cached(("mi", method.value), compute)


def run_replication(
    scenario: ScenarioConfig,
    estimators: Sequence[EstimatorSpec],
    seed: int,
    replication: int,
    settings: Settings,
) -> ReplicationResult:
    """
    Run every estimator on one replication.

    Estimator failures are caught and recorded by estimator key.
    """
    rng = RngStream.for_replication(seed, replication, "replication")
    data = _ReplicationData(scenario, rng, settings)
    result = ReplicationResult(replication)
    for spec in estimators:
        match_rng = rng.substream(f"match/{spec.key}")
        try:
            if spec.handling == MissingHandling.MI:
                estimate = estimate_att_mi(
                    data.imputed(),
                    spec.ps_method,
                    spec.mode,
                    match_rng,
                    settings,
                    scenario.exposure_model,
                    scores=data.imputed_scores(spec.ps_method),
                )
            else:
                estimate = estimate_att(
                    data.dataset(spec.handling),
                    data.scores(spec.handling, spec.ps_method),
                    spec.mode,
                    match_rng,
                    settings.estimation,
                )
            result.estimates[spec.key] = estimate
        except PsMissError as e:
            result.errors[spec.key] = f"{type(e).__name__}: {e}"
    logger.info(
        f"Scenario {scenario.id} replication {replication + 1}: "
        f"{len(result.estimates)} estimates, {len(result.errors)} failures"
    )
    return result


def coverage_mc_se(p: float, replications: int) -> float:
    """Monte Carlo standard error of a coverage proportion, sqrt(p (1 - p) / R)."""
    if replications < 1:
        raise ValueError(f"replications must be >= 1, got {replications}")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"Coverage must lie in [0, 1], got {p}")
    return math.sqrt(p * (1.0 - p) / replications)


def summarise(
    scenario: ScenarioConfig,
    spec: EstimatorSpec,
    truth: float,
    estimates: Sequence[EffectEstimate],
    failures: int,
    failure_threshold: float = 0.01,
) -> MetricsRow:
    """
    Metrics of one estimator over its successful replications.

    emp_se uses divisor R - 1, so mse = bias^2 + (R - 1) / R emp_se^2.
    Coverage counts closed intervals containing the truth.
    """
    r = len(estimates)
    nan = float("nan")
    if r > 0:
        points = np.array([e.point for e in estimates])
        errors = points - truth
        bias = float(errors.mean())
        mse = float(np.square(errors).mean())
        mean_se = float(np.mean([e.se for e in estimates]))
        coverage = float(np.mean([e.covers(truth) for e in estimates]))
        emp_se = empirical_sd(points) if r >= 2 else nan
    else:
        bias = mse = mean_se = coverage = emp_se = nan
    total = r + failures
    invalid = total > 0 and failures / total > failure_threshold
    if invalid:
        logger.warning(
            f"Scenario {scenario.id} {spec.label} ({spec.mode.value}): "
            f"{failures} of {total} replications failed; report marked invalid"
        )
    return MetricsRow(
        scenario=scenario.id,
        group=spec.group,
        method=spec.label,
        ps_method=spec.ps_method.value,
        handling=spec.handling.value,
        mode=spec.mode.value,
        truth=truth,
        bias=bias,
        bias_diff=nan,
        emp_se=emp_se,
        mean_se=mean_se,
        mse=mse,
        coverage=coverage,
        replications=r,
        failures=failures,
        ridge_fallbacks=sum(1 for e in estimates if e.diagnostics.get("ridge_used")),
        invalid=invalid,
    )


def aggregate(
    scenario: ScenarioConfig,
    estimators: Sequence[EstimatorSpec],
    truth: float,
    results: Sequence[ReplicationResult],
    failure_threshold: float = 0.01,
) -> List[MetricsRow]:
    """Reduce replication results to one metrics row per estimator, in estimator order."""
    ordered = sorted(results, key=lambda r: r.replication)
    rows: Dict[str, MetricsRow] = {}
    for spec in estimators:
        estimates = [r.estimates[spec.key] for r in ordered if spec.key in r.estimates]
        failures = sum(1 for r in ordered if spec.key in r.errors)
        for r in ordered:
            if spec.key in r.errors:
                logger.warning(
                    f"Excluded {spec.key} in replication {r.replication + 1}: "
                    f"{r.errors[spec.key]}"
                )
        rows[spec.key] = summarise(
            scenario, spec, truth, estimates, failures, failure_threshold
        )
    for spec in estimators:
        baseline = spec.baseline
        if baseline is not None and baseline.key in rows:
            row = rows[spec.key]
            row.bias_diff = row.bias - rows[baseline.key].bias
    return [rows[spec.key] for spec in estimators]


def run_scenario(
    scenario: ScenarioConfig,
    estimators: Sequence[EstimatorSpec],
    replications: Optional[int] = None,
    seed: int = 0,
    settings: Optional[Settings] = None,
    n_jobs: Optional[int] = None,
    truth: Optional[float] = None,
) -> MetricsReport:
    """
    Simulate ``replications`` replications of ``scenario`` for every estimator.

    Args:
        scenario: Scenario preset
        estimators: Estimators to evaluate
        replications: Number of replications R >= 2 (settings default if None)
        seed: Root seed; the report is a deterministic function of it
        settings: Estimator and simulation settings
        n_jobs: joblib workers (settings default if None)
        truth: True ATT log odds ratio (computed by the oracle if None)

    Returns:
        MetricsReport with one row per estimator
    """
    settings = settings or default_settings
    replications = settings.simulation.replications if replications is None else replications
    if replications < 2:
        raise ValueError(f"At least two replications are required, got {replications}")
    n_jobs = settings.simulation.n_jobs if n_jobs is None else n_jobs
    keys = [spec.key for spec in estimators]
    if len(set(keys)) != len(keys):
        raise ValueError("Duplicate estimators")

    if truth is None:
        truth = true_att_log_or(
            scenario.gamma,
            scenario.exposure_model,
            settings.simulation.n_oracle,
            RngStream(seed).substream("truth"),
        )
    logger.info(
        f"Running scenario {scenario.id}: {replications} replications, "
        f"{len(estimators)} estimators",
        extra={"seed": seed, "n": settings.simulation.n, "n_jobs": n_jobs},
    )
    results = Parallel(n_jobs=n_jobs)(
        delayed(run_replication)(scenario, estimators, seed, r, settings)
        for r in range(replications)
    )
    rows = aggregate(
        scenario, estimators, truth, results, settings.simulation.failure_threshold
    )
    provenance = {
        "scenario": scenario.id,
        "replications": str(replications),
        "seed": str(seed),
        "n": str(settings.simulation.n),
        "preset": settings.preset.value,
        "boosting_trees": str(settings.boosting.n_trees),
        "m": str(settings.imputation.m),
        "truth": repr(truth),
    }
    return MetricsReport(rows=rows, provenance=provenance)


def merge_reports(reports: Sequence[MetricsReport]) -> MetricsReport:
    """Concatenate reports of several scenarios; provenance keys are prefixed by scenario."""
    rows: List[MetricsRow] = []
    provenance: Dict[str, str] = {}
    for report in reports:
        rows.extend(report.rows)
        scenario = report.provenance.get("scenario", "")
        for key, value in report.provenance.items():
            provenance[f"{scenario}.{key}" if len(reports) > 1 else key] = value
    return MetricsReport(rows=rows, provenance=provenance)


def _format_value(value: float) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    return f"{value:.3f}"


def render_markdown(report: MetricsReport) -> str:
    """
    Table layout: one block per mode and metric, estimators as rows and
    scenarios as columns, values to three decimals.
    """
    frame = report.to_frame()
    lines: List[str] = []
    if frame.empty:
        return ""
    scenarios = list(dict.fromkeys(frame["scenario"]))
    for mode in dict.fromkeys(frame["mode"]):
        subset = frame[frame["mode"] == mode]
        labels = list(dict.fromkeys(zip(subset["group"], subset["method"])))
        for column, title in METRIC_BLOCKS:
            lines.append(f"### {title} ({mode})")
            lines.append("")
            lines.append("| Missing data | Method | " + " | ".join(scenarios) + " |")
            lines.append("|---|---|" + "---|" * len(scenarios))
            for group, method in labels:
                cells = []
                for scenario in scenarios:
                    match = subset[
                        (subset["group"] == group)
                        & (subset["method"] == method)
                        & (subset["scenario"] == scenario)
                    ]
                    cells.append(_format_value(float(match[column].iloc[0])) if len(match) else "")
                lines.append(f"| {group} | {method} | " + " | ".join(cells) + " |")
            lines.append("")
    return "\n".join(lines)


def emit_report(
    report: MetricsReport, path: Path, fmt: ReportFormat = ReportFormat.CSV
) -> Path:
    """
    Write ``report`` to ``path``.

    CSV output is lossless and starts with '#' provenance lines; an empty
    report yields the header row only.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == ReportFormat.MARKDOWN:
        path.write_text(render_markdown(report), encoding="utf-8")
    else:
        header = "".join(f"# {key}: {value}\n" for key, value in report.provenance.items())
        body = report.to_frame().to_csv(index=False, lineterminator="\n")
        path.write_text(header + body, encoding="utf-8")
    logger.info(f"Wrote {fmt.value} report to {path}", extra={"rows": len(report.rows)})
    return path


def read_report(path: Path) -> MetricsReport:
    """Read a CSV report written by ``emit_report``."""
    path = Path(path)
    provenance: Dict[str, str] = {}
    with path.open(encoding="utf-8") as handle:
        for line in handle:
            if not line.startswith("#"):
                break
            key, _, value = line[1:].strip().partition(": ")
            provenance[key] = value
    frame = pd.read_csv(
        path,
        comment="#",
        float_precision="round_trip",
        dtype={name: str for name in _TEXT_COLUMNS},
    )
    frame = frame.reindex(columns=METRIC_COLUMNS)
    report = MetricsReport.from_frame(frame)
    return replace(report, provenance=provenance)
