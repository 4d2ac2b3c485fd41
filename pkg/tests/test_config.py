"""
Tests for study settings and provenance helpers.
"""

import sys
import os

# Add src to path for imports
sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

import json
from pathlib import Path

from config import Preset, Settings, SimulationConfig
from utils import __version__, provenance_header


class TestSettings:
    """Tests for the settings container."""

    def test_defaults(self):
        """Estimator defaults match the study configuration."""
        settings = Settings()
        assert settings.bagging.n_trees == 100
        assert settings.bagging.cp == 0.01
        assert settings.boosting.shrinkage == 0.0005
        assert settings.imputation.m == 5
        assert settings.estimation.truncation == (0.001, 0.999)
        assert settings.estimation.level == 0.90
        assert settings.simulation.n == 2000

    def test_presets(self):
        """desk and full differ in boosting length and replications."""
        desk = Settings().for_preset(Preset.DESK)
        full = Settings().for_preset(Preset.FULL)
        assert (desk.boosting.n_trees, desk.simulation.replications) == (5000, 500)
        assert (full.boosting.n_trees, full.simulation.replications) == (20000, 5000)
        assert full.boosting.eval_stride == 100

    def test_overrides(self):
        """Only the given values are replaced."""
        settings = Settings().with_overrides(n=300, m=3)
        assert settings.simulation.n == 300
        assert settings.imputation.m == 3
        assert settings.boosting.n_trees == Settings().boosting.n_trees

    def test_environment(self, monkeypatch):
        """PSMISS_* variables select preset, workers, output and log level."""
        monkeypatch.setenv("PSMISS_PRESET", "full")
        monkeypatch.setenv("PSMISS_N_JOBS", "4")
        monkeypatch.setenv("PSMISS_OUTPUT_DIR", "/tmp/psmiss-out")
        monkeypatch.setenv("PSMISS_LOG_LEVEL", "debug")
        settings = Settings.from_environment()
        assert settings.preset == Preset.FULL
        assert settings.simulation.n_jobs == 4
        assert settings.simulation.output_directory == Path("/tmp/psmiss-out")
        assert settings.log_level == "DEBUG"

    def test_unknown_preset_falls_back(self, monkeypatch):
        """An unknown preset name gives the desk preset."""
        monkeypatch.setenv("PSMISS_PRESET", "huge")
        assert Settings.from_environment().preset == Preset.DESK

    def test_simulation_environment_defaults(self, monkeypatch):
        """Without variables the worker count is 1 and output goes to results/."""
        monkeypatch.delenv("PSMISS_N_JOBS", raising=False)
        monkeypatch.delenv("PSMISS_OUTPUT_DIR", raising=False)
        config = SimulationConfig.from_environment()
        assert config.n_jobs == 1
        assert config.output_directory == Path("results")


class TestProvenanceHeader:
    """Tests for output-file provenance lines."""

    def test_lines(self):
        """Tool, command, seed and a JSON config echo, no timestamps."""
        lines = provenance_header("simulate", 7, {"n": 2000, "out": Path("results")})
        assert lines[0] == f"psmiss {__version__}"
        assert lines[1] == "command: simulate"
        assert lines[2] == "seed: 7"
        assert json.loads(lines[3].partition(": ")[2]) == {"n": 2000, "out": "results"}

    def test_stable(self):
        """Identical inputs give identical lines."""
        assert provenance_header("generate", 1, {"b": 1, "a": 2}) == provenance_header(
            "generate", 1, {"a": 2, "b": 1}
        )
