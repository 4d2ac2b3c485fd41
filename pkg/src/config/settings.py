"""
Study settings and configuration.

This module provides a centralized configuration system that:
- Loads overrides from environment variables
- Provides the estimator defaults used throughout the study
- Defines the desk-scale and full-scale simulation presets

Usage:
    from config import settings

    n_trees = settings.bagging.n_trees
    shrinkage = settings.boosting.shrinkage
"""

import os
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Optional, Tuple


class Preset(str, Enum):
    """Simulation scale presets."""

    DESK = "desk"
    FULL = "full"


@dataclass(frozen=True)
class BaggingConfig:
    """Bagged CART settings. Tree controls mirror rpart's defaults."""

    n_trees: int = 100
    min_split: int = 20
    min_bucket: int = 7
    cp: float = 0.01
    max_depth: int = 30
    max_surrogates: int = 5


@dataclass(frozen=True)
class BoostingConfig:
    """Boosted CART settings (gbm/twang conventions where the study is silent)."""

    n_trees: int = 5000
    shrinkage: float = 0.0005
    depth: int = 3
    min_leaf: int = 10
    bag_fraction: float = 0.5
    eval_stride: int = 25
    max_increment: float = 8.0


@dataclass(frozen=True)
class ImputationConfig:
    """Chained-equations settings (mice defaults)."""

    m: int = 5
    cycles: int = 5
    cart_min_bucket: int = 5
    cart_cp: float = 1e-4
    ridge: float = 1e-5


@dataclass(frozen=True)
class EstimationConfig:
    """Effect estimation settings."""

    truncation: Tuple[float, float] = (0.001, 0.999)
    caliper_mult: float = 0.2
    level: float = 0.90
    tol: float = 1e-8
    max_iter: int = 50
    ridge: float = 1e-8


@dataclass(frozen=True)
class SimulationConfig:
    """Monte Carlo driver settings."""

    n: int = 2000
    replications: int = 500
    n_oracle: int = 1_000_000
    failure_threshold: float = 0.01
    n_jobs: int = 1
    output_directory: Path = field(default_factory=lambda: Path("results"))

    @classmethod
    def from_environment(cls) -> "SimulationConfig":
        """Create configuration from environment variables."""
        output_dir_env = os.environ.get("PSMISS_OUTPUT_DIR")
        return cls(
            n_jobs=int(os.environ.get("PSMISS_N_JOBS", "1")),
            output_directory=Path(output_dir_env) if output_dir_env else Path("results"),
        )


@dataclass(frozen=True)
class Settings:
    """
    Main settings container.

    Aggregates every estimator and simulation default. Instances are
    immutable; use ``dataclasses.replace`` or ``for_preset`` to derive
    variants.

    Usage:
        from config import settings, Preset

        full = settings.for_preset(Preset.FULL)
        if full.boosting.n_trees > 10000:
            ...
    """

    preset: Preset = Preset.DESK
    bagging: BaggingConfig = field(default_factory=BaggingConfig)
    boosting: BoostingConfig = field(default_factory=BoostingConfig)
    imputation: ImputationConfig = field(default_factory=ImputationConfig)
    estimation: EstimationConfig = field(default_factory=EstimationConfig)
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    log_level: str = "INFO"

    @classmethod
    def from_environment(cls) -> "Settings":
        """Create settings from environment variables."""
        preset_str = os.environ.get("PSMISS_PRESET", "desk").lower()
        preset = (
            Preset(preset_str) if preset_str in [p.value for p in Preset] else Preset.DESK
        )
        base = cls(
            simulation=SimulationConfig.from_environment(),
            log_level=os.environ.get("PSMISS_LOG_LEVEL", "INFO").upper(),
        )
        return base.for_preset(preset)

    def for_preset(self, preset: Preset) -> "Settings":
        """Return a copy with the boosting and replication sizes of ``preset``."""
        if preset == Preset.FULL:
            boosting = replace(self.boosting, n_trees=20000, eval_stride=100)
            simulation = replace(self.simulation, replications=5000)
        else:
            boosting = replace(self.boosting, n_trees=5000, eval_stride=25)
            simulation = replace(self.simulation, replications=500)
        return replace(self, preset=preset, boosting=boosting, simulation=simulation)

    def with_overrides(
        self,
        n: Optional[int] = None,
        replications: Optional[int] = None,
        n_jobs: Optional[int] = None,
        boosting_trees: Optional[int] = None,
        eval_stride: Optional[int] = None,
        m: Optional[int] = None,
    ) -> "Settings":
        """Return a copy with selected scalar settings replaced."""
        simulation = self.simulation
        if n is not None:
            simulation = replace(simulation, n=n)
        if replications is not None:
            simulation = replace(simulation, replications=replications)
        if n_jobs is not None:
            simulation = replace(simulation, n_jobs=n_jobs)
        boosting = self.boosting
        if boosting_trees is not None:
            boosting = replace(boosting, n_trees=boosting_trees)
        if eval_stride is not None:
            boosting = replace(boosting, eval_stride=eval_stride)
        imputation = self.imputation
        if m is not None:
            imputation = replace(imputation, m=m)
        return replace(self, simulation=simulation, boosting=boosting, imputation=imputation)


# Global settings instance - loaded once at module import
settings = Settings.from_environment()
