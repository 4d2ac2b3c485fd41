"""
Configuration module for psmiss.

This module provides centralized configuration management with support for:
- Estimator defaults (bagging, boosting, imputation, effect estimation)
- Desk-scale and full-scale simulation presets
- Environment overrides for worker count, output directory and log level

Usage:
    from config import settings, Preset

    if settings.preset == Preset.DESK:
        iterations = settings.boosting.n_trees
"""

from .settings import (
    BaggingConfig,
    BoostingConfig,
    EstimationConfig,
    ImputationConfig,
    Preset,
    Settings,
    SimulationConfig,
    settings,
)

__all__ = [
    "BaggingConfig",
    "BoostingConfig",
    "EstimationConfig",
    "ImputationConfig",
    "Preset",
    "Settings",
    "SimulationConfig",
    "settings",
]
