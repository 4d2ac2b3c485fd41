"""
Tests for the synthetic cohort generator.
"""

import sys
import os

# Add src to path for imports
sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

import numpy as np
import pytest

from dgp import (
    BINARY_COVARIATES,
    EXPOSURE_TERMS,
    exposure_terms,
    generate_cohort,
    generate_covariates,
    generate_outcome,
    inject_missingness,
    outcome_linear_predictor,
    true_att_log_or,
    true_propensity,
)
from models import SCENARIOS, ExposureModel, get_scenario
from stats import RngStream, expit


class TestCovariates:
    """Tests for covariate generation."""

    def test_binary_columns(self):
        """Dichotomised columns hold only 0 and 1 with mean near 0.5."""
        n = 20000
        w = generate_covariates(n, RngStream(1))
        for j in BINARY_COVARIATES:
            assert set(np.unique(w[:, j])) <= {0.0, 1.0}
            assert abs(w[:, j].mean() - 0.5) < 4 / np.sqrt(n)

    def test_correlation_before_dichotomising(self):
        """corr(W4, W9) should be 0.9 on the latent normal scale."""
        w = generate_covariates(100_000, RngStream(2), dichotomise=False)
        assert np.corrcoef(w[:, 3], w[:, 8])[0, 1] == pytest.approx(0.9, abs=0.01)

    def test_reproducible(self):
        """A fixed stream should reproduce the draw."""
        a = generate_covariates(50, RngStream(3))
        b = generate_covariates(50, RngStream(3))
        np.testing.assert_array_equal(a, b)

    def test_invalid_n(self):
        """n must be positive."""
        with pytest.raises(ValueError):
            generate_covariates(0, RngStream(0))


class TestExposureModel:
    """Tests for the exposure allocation model."""

    def test_zero_row(self):
        """All-zero covariates give a score of one half."""
        assert true_propensity(np.zeros(10)) == 0.5

    def test_spot_row(self):
        """Only the W1 main effect applies to (1, 0, ..., 0)."""
        w = np.zeros(10)
        w[0] = 1.0
        assert true_propensity(w) == pytest.approx(expit(0.8))

    def test_linear_model_drops_higher_order_terms(self):
        """The linear model keeps exactly the seven main effects."""
        linear = exposure_terms(ExposureModel.LINEAR)
        assert len(linear) == 7
        assert linear == tuple(t for t in EXPOSURE_TERMS if len(t[1]) == 1)
        assert len(EXPOSURE_TERMS) == 20

    def test_about_half_exposed(self):
        """The exposure model assigns roughly half of the cohort."""
        w = generate_covariates(50_000, RngStream(4))
        assert np.mean(true_propensity(w)) == pytest.approx(0.5, abs=0.1)


class TestOutcomeModel:
    """Tests for outcome and counterfactual generation."""

    def test_consistency(self):
        """Y equals Y1 for exposed rows and Y0 otherwise."""
        cohort = generate_cohort(2000, get_scenario("1"), RngStream(5))
        a = cohort.dataset.column("A")
        y = cohort.dataset.column("Y")
        np.testing.assert_array_equal(y, a * cohort.y1 + (1 - a) * cohort.y0)

    def test_monotone_in_gamma(self):
        """With gamma > 0 the exposed counterfactual is never lower."""
        cohort = generate_cohort(2000, get_scenario("1"), RngStream(6))
        assert (cohort.y1 >= cohort.y0).all()

    def test_null_effect(self):
        """With gamma = 0 both counterfactuals coincide."""
        gen = np.random.default_rng(0)
        w = generate_covariates(500, RngStream(7))
        a = gen.binomial(1, 0.5, size=500).astype(float)
        eps = gen.uniform(size=500)
        _, y0, y1 = generate_outcome(w, a, eps, 0.0)
        np.testing.assert_array_equal(y0, y1)

    def test_linear_predictor_spot(self):
        """eta at W10 = 1, A = 1 is -1 + 0.26 + gamma."""
        w = np.zeros((1, 10))
        w[0, 9] = 1.0
        eta = outcome_linear_predictor(w, np.ones(1), 1.0)
        assert eta[0] == pytest.approx(0.26)

    def test_latents_exposed(self):
        """The oracle-only latents line up with the rows."""
        cohort = generate_cohort(100, get_scenario("1"), RngStream(8))
        frame = cohort.latent_frame()
        assert list(frame.columns) == ["eps_y", "ps", "y0", "y1"]
        assert len(frame) == 100

    def test_exchangeability_within_score_bins(self):
        """Within bins of the true score, Y0 has the same mean in both arms."""
        cohort = generate_cohort(100_000, get_scenario("1"), RngStream(19))
        a = cohort.dataset.column("A") == 1
        edges = np.quantile(cohort.ps, np.linspace(0.0, 1.0, 21))
        bins = np.clip(np.searchsorted(edges, cohort.ps, side="right") - 1, 0, 19)
        checked = 0
        for k in range(20):
            exposed = cohort.y0[(bins == k) & a]
            unexposed = cohort.y0[(bins == k) & ~a]
            if exposed.size < 30 or unexposed.size < 30:
                continue
            pooled = np.r_[exposed, unexposed].mean()
            variance = max(pooled * (1 - pooled), 1e-12)
            se = np.sqrt(variance * (1 / exposed.size + 1 / unexposed.size))
            assert abs(exposed.mean() - unexposed.mean()) < 4 * se
            checked += 1
        assert checked >= 15


class TestMissingness:
    """Tests for missingness injection."""

    def test_scenario_1_rate(self):
        """About 30% of W3 is missing and nothing else."""
        n = 20000
        cohort = generate_cohort(n, get_scenario("1"), RngStream(9))
        data = inject_missingness(cohort, get_scenario("1"), RngStream(10))
        rates = data.missing_indicators().column_rates()
        assert abs(rates["W3"] - 0.3) < 3 * np.sqrt(0.3 * 0.7 / n)
        assert all(rate == 0.0 for name, rate in rates.items() if name != "W3")
        assert data.missingness_summary()["pir"] == pytest.approx(0.30, abs=0.02)

    def test_observed_values_untouched(self):
        """Observed cells keep their generated values."""
        cohort = generate_cohort(500, get_scenario("6"), RngStream(11))
        data = inject_missingness(cohort, get_scenario("6"), RngStream(12))
        observed = ~data.missing
        np.testing.assert_array_equal(
            data.values[observed], cohort.dataset.values[observed]
        )

    def test_scenario_3_depends_on_outcome(self):
        """W4 missingness is expit(-0.7 + 1.5 Y)."""
        n = 40000
        cohort = generate_cohort(n, get_scenario("3"), RngStream(13))
        data = inject_missingness(cohort, get_scenario("3"), RngStream(14))
        y = data.column("Y") == 1
        m4 = data.missing[:, data.index_of("W4")]
        for rows, expected in ((y, expit(0.8)), (~y, expit(-0.7))):
            se = np.sqrt(expected * (1 - expected) / rows.sum())
            assert abs(m4[rows].mean() - expected) < 4 * se
        assert not data.missing[:, data.index_of("W3")].any()

    def test_scenario_6_missing_points(self):
        """Scenario 6 has about 3% missing data points."""
        cohort = generate_cohort(2000, get_scenario("6"), RngStream(15))
        data = inject_missingness(cohort, get_scenario("6"), RngStream(16))
        assert data.missingness_summary()["pmp"] == pytest.approx(0.03, abs=0.01)

    @pytest.mark.parametrize("scenario_id", sorted(SCENARIOS))
    def test_reference_missingness_rates(self, scenario_id):
        """Missing data points and incomplete records match the reference rates."""
        scenario = SCENARIOS[scenario_id]
        cohort = generate_cohort(20_000, scenario, RngStream(20, (0,)))
        data = inject_missingness(cohort, scenario, RngStream(20, (1,)))
        summary = data.missingness_summary()
        assert summary["pmp"] == pytest.approx(scenario.pmp, abs=0.01)
        assert summary["pir"] == pytest.approx(scenario.pir, abs=0.01)


@pytest.mark.slow
class TestTrueEffect:
    """Tests for the oracle ATT log odds ratio."""

    def test_gamma_one(self):
        """The marginal ATT log odds ratio is about 0.906 at gamma = 1."""
        truth = true_att_log_or(1.0, ExposureModel.NONLINEAR, 2_000_000, RngStream(17))
        assert truth == pytest.approx(0.906, abs=0.01)

    def test_gamma_minus_one(self):
        """The marginal ATT log odds ratio is about -0.926 at gamma = -1."""
        truth = true_att_log_or(-1.0, ExposureModel.NONLINEAR, 2_000_000, RngStream(18))
        assert truth == pytest.approx(-0.926, abs=0.01)
