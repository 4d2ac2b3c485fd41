"""
Tests for the Monte Carlo driver and report output.
"""

import sys
import os

# Add src to path for imports
sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

import math
from dataclasses import replace

import pytest

from config import BoostingConfig, Preset, settings
from harness import (
    ReplicationResult,
    ReportFormat,
    aggregate,
    coverage_mc_se,
    emit_report,
    merge_reports,
    read_report,
    render_markdown,
    run_replication,
    run_scenario,
    summarise,
)
from models import (
    EffectEstimate,
    EstimationMode,
    EstimatorSpec,
    MetricsReport,
    MissingHandling,
    PsMethod,
    get_scenario,
)

SMALL = replace(
    settings,
    bagging=replace(settings.bagging, n_trees=5),
    boosting=BoostingConfig(n_trees=20, shrinkage=0.05, eval_stride=10, min_leaf=5),
    imputation=replace(settings.imputation, m=2, cycles=1),
    simulation=replace(settings.simulation, n=300, n_jobs=1),
)

IPW = EstimationMode.IPW

ESTIMATORS = [
    EstimatorSpec(PsMethod.BACART, MissingHandling.NONE, IPW),
    EstimatorSpec(PsMethod.BACART, MissingHandling.DIRECT, IPW),
    EstimatorSpec(PsMethod.LRM, MissingHandling.NONE, IPW),
    EstimatorSpec(PsMethod.LRM, MissingHandling.MI, IPW),
]


def estimate(point: float, se: float = 0.1, half: float = 0.5) -> EffectEstimate:
    return EffectEstimate(point, se, point - half, point + half)


class TestRunScenario:
    """Tests for a full (small) scenario run."""

    def test_rows_in_estimator_order(self):
        """One row per estimator, in the order given."""
        report = run_scenario(get_scenario("1"), ESTIMATORS, 3, seed=1, settings=SMALL, truth=0.9)
        assert [row.method for row in report.rows] == ["baCART", "baCART", "LRm", "MI+LRm"]
        assert [row.group for row in report.rows] == ["Without", "With", "Without", "With"]
        for row in report.rows:
            assert row.truth == 0.9
            assert row.replications + row.failures == 3

    def test_bias_difference(self):
        """CART rows with missing data report bias minus the complete-data bias."""
        report = run_scenario(get_scenario("1"), ESTIMATORS, 3, seed=2, settings=SMALL, truth=0.9)
        without, direct = report.rows[0], report.rows[1]
        assert direct.bias_diff == pytest.approx(direct.bias - without.bias)
        assert math.isnan(without.bias_diff)
        assert math.isnan(report.rows[3].bias_diff)

    def test_provenance(self):
        """The report records the seed, scale and truth it was run with."""
        report = run_scenario(
            get_scenario("2"), ESTIMATORS[2:3], 2, seed=7, settings=SMALL, truth=0.5
        )
        assert report.provenance["scenario"] == "2"
        assert report.provenance["seed"] == "7"
        assert report.provenance["replications"] == "2"
        assert report.provenance["n"] == "300"
        assert report.provenance["truth"] == "0.5"

    def test_deterministic(self):
        """The same seed should give identical reports."""
        a = run_scenario(get_scenario("1"), ESTIMATORS, 2, seed=3, settings=SMALL, truth=0.9)
        b = run_scenario(get_scenario("1"), ESTIMATORS, 2, seed=3, settings=SMALL, truth=0.9)
        assert a.same_rows(b)

    def test_independent_of_workers(self):
        """Running replications in parallel does not change the report."""
        serial = run_scenario(
            get_scenario("1"), ESTIMATORS, 2, seed=4, settings=SMALL, n_jobs=1, truth=0.9
        )
        parallel = run_scenario(
            get_scenario("1"), ESTIMATORS, 2, seed=4, settings=SMALL, n_jobs=2, truth=0.9
        )
        assert serial.same_rows(parallel)

    def test_replications_validated(self):
        """At least two replications are required."""
        with pytest.raises(ValueError):
            run_scenario(get_scenario("1"), ESTIMATORS, 1, settings=SMALL, truth=0.9)

    def test_duplicate_estimators(self):
        """Each estimator may appear only once."""
        with pytest.raises(ValueError):
            run_scenario(
                get_scenario("1"), ESTIMATORS[:1] * 2, 2, settings=SMALL, truth=0.9
            )


class TestRunReplication:
    """Tests for a single replication."""

    def test_replication_is_reproducible(self):
        """A replication depends only on the seed and its index."""
        a = run_replication(get_scenario("1"), ESTIMATORS[2:], 5, 3, SMALL)
        b = run_replication(get_scenario("1"), ESTIMATORS[2:], 5, 3, SMALL)
        assert a.replication == 3
        for key, value in a.estimates.items():
            assert b.estimates[key].point == value.point


class TestSummaries:
    """Tests for metric aggregation."""

    SPEC = EstimatorSpec(PsMethod.LRM, MissingHandling.NONE, IPW)

    def test_metrics(self):
        """Bias, empirical SE, MSE and coverage of three estimates."""
        row = summarise(
            get_scenario("1"), self.SPEC, 2.0, [estimate(1.0), estimate(2.0), estimate(3.0)], 0
        )
        assert row.bias == pytest.approx(0.0)
        assert row.emp_se == pytest.approx(1.0)
        assert row.mse == pytest.approx(2.0 / 3.0)
        assert row.mse == pytest.approx(row.bias**2 + 2.0 / 3.0 * row.emp_se**2)
        assert row.mean_se == pytest.approx(0.1)
        assert row.coverage == pytest.approx(1.0 / 3.0)
        assert not row.invalid

    def test_interval_endpoints_cover(self):
        """Coverage counts closed intervals."""
        row = summarise(get_scenario("1"), self.SPEC, 2.5, [estimate(2.0), estimate(3.0)], 0)
        assert row.coverage == 1.0

    def test_failures_mark_invalid(self):
        """More than 1% failed replications marks the row invalid."""
        spec = self.SPEC
        results = [
            ReplicationResult(0, estimates={spec.key: estimate(1.0)}),
            ReplicationResult(1, errors={spec.key: "SeparationError: separated"}),
            ReplicationResult(2, estimates={spec.key: estimate(1.2)}),
        ]
        (row,) = aggregate(get_scenario("1"), [spec], 1.0, results)
        assert row.replications == 2
        assert row.failures == 1
        assert row.invalid

    def test_aggregation_ignores_result_order(self):
        """Results are reduced in replication order."""
        spec = self.SPEC
        results = [
            ReplicationResult(k, estimates={spec.key: estimate(0.1 * k)}) for k in range(4)
        ]
        forward = aggregate(get_scenario("1"), [spec], 0.2, results)
        backward = aggregate(get_scenario("1"), [spec], 0.2, results[::-1])
        assert MetricsReport(forward).same_rows(MetricsReport(backward))

    def test_coverage_mc_se(self):
        """sqrt(0.9 * 0.1 / 100) = 0.03."""
        assert coverage_mc_se(0.9, 100) == pytest.approx(0.03)
        with pytest.raises(ValueError):
            coverage_mc_se(1.5, 100)


class TestReportOutput:
    """Tests for report files and tables."""

    def make_report(self) -> MetricsReport:
        spec = EstimatorSpec(PsMethod.BCART, MissingHandling.CCA, IPW)
        row = summarise(
            get_scenario("3"), spec, 0.906, [estimate(0.8123456789), estimate(0.95)], 0
        )
        return MetricsReport(rows=[row], provenance={"scenario": "3", "seed": "11"})

    def test_csv_round_trip(self, tmp_path):
        """CSV reports read back with identical values and provenance."""
        report = self.make_report()
        path = emit_report(report, tmp_path / "report.csv")
        assert path.read_text().startswith("# scenario: 3\n# seed: 11\n")
        loaded = read_report(path)
        assert loaded.same_rows(report)
        assert loaded.provenance == report.provenance

    def test_empty_report(self, tmp_path):
        """An empty report writes the header row only."""
        path = emit_report(MetricsReport(), tmp_path / "empty.csv")
        lines = path.read_text().splitlines()
        assert len(lines) == 1
        assert lines[0].startswith("scenario,group,method")

    def test_markdown_rounding(self):
        """Values are shown to three decimals and NaN as a blank cell."""
        report = self.make_report()
        report.rows[0].bias = 0.0005
        text = render_markdown(report)
        assert "### Bias (ipw)" in text
        assert "| With | CCA+bCART | 0.001 |" in text
        assert "| With | CCA+bCART |  |" in text

    def test_markdown_file(self, tmp_path):
        """Markdown output goes through the same writer."""
        path = emit_report(self.make_report(), tmp_path / "report.md", ReportFormat.MARKDOWN)
        assert path.read_text().startswith("### Bias (ipw)")

    def test_merge_prefixes_provenance(self):
        """Merged reports keep every row and prefix provenance by scenario."""
        a = self.make_report()
        b = replace(self.make_report(), provenance={"scenario": "4", "seed": "11"})
        merged = merge_reports([a, b])
        assert len(merged.rows) == 2
        assert merged.provenance["3.seed"] == "11"
        assert merged.provenance["4.scenario"] == "4"


DESK = settings.for_preset(Preset.DESK).with_overrides(n=2000)

MI_BACART = EstimatorSpec(PsMethod.BACART, MissingHandling.MI, IPW)
DIRECT_BACART = EstimatorSpec(PsMethod.BACART, MissingHandling.DIRECT, IPW)
DIRECT_BCART = EstimatorSpec(PsMethod.BCART, MissingHandling.DIRECT, IPW)
CCA_BACART = EstimatorSpec(PsMethod.BACART, MissingHandling.CCA, IPW)


@pytest.mark.slow
@pytest.mark.skipif(
    os.environ.get("PSMISS_DESK_TESTS") != "1",
    reason="desk-scale study takes hours; set PSMISS_DESK_TESTS=1",
)
class TestDeskScale:
    """Desk-scale reproduction of the reference bias and coverage results."""

    def run(self, scenario_id: str, estimators, replications: int) -> MetricsReport:
        return run_scenario(
            get_scenario(scenario_id), estimators, replications, seed=2024, settings=DESK
        )

    def test_scenario_1_intervals(self):
        """MI+baCART is nearly unbiased with nominal coverage; CART alone is biased down."""
        report = self.run("1", [MI_BACART, DIRECT_BACART, DIRECT_BCART], 500)
        mi, bagged, boosted = report.rows
        assert -0.02 <= mi.bias <= 0.02
        assert -0.06 <= bagged.bias <= -0.01
        assert boosted.bias < 0.0
        assert abs(mi.bias) < abs(bagged.bias)
        assert 0.87 <= mi.coverage <= 0.94

    def test_outcome_dependent_missingness_attenuates_boosting(self):
        """Direct bCART is biased towards the null in scenarios 3 and 6."""
        (three,) = self.run("3", [DIRECT_BCART], 300).rows
        (six,) = self.run("6", [DIRECT_BCART], 300).rows
        assert three.bias < -0.05
        assert six.bias < -0.10

    def test_complete_case_bias_from_collider_stratification(self):
        """CCA bias is small in scenarios 3-4 and larger in scenarios 6-7."""
        bias = {s: self.run(s, [CCA_BACART], 300).rows[0].bias for s in ("3", "4", "6", "7")}
        assert max(abs(bias["3"]), abs(bias["4"])) < min(abs(bias["6"]), abs(bias["7"]))
