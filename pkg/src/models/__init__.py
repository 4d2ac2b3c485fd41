"""
Data models for psmiss.

This module provides plain dataclasses and string enums shared by the
learners, estimators and the simulation harness.
"""

from .dataset import (
    ColumnKind,
    ColumnMeta,
    ColumnRole,
    Dataset,
    MissingPattern,
    complete_cases,
    missing_indicators,
)
from .estimates import (
    AttWeights,
    EffectEstimate,
    EstimationMode,
    MatchedSample,
    MissingHandling,
    PooledEstimate,
    PropensityScores,
    PsMethod,
)
from .report import METRIC_COLUMNS, EstimatorSpec, MetricsReport, MetricsRow, default_estimators
from .scenario import SCENARIOS, ExposureModel, Mechanism, ScenarioConfig, get_scenario

__all__ = [
    # Dataset models
    "ColumnKind",
    "ColumnMeta",
    "ColumnRole",
    "Dataset",
    "MissingPattern",
    "complete_cases",
    "missing_indicators",
    # Estimate models
    "AttWeights",
    "EffectEstimate",
    "EstimationMode",
    "MatchedSample",
    "MissingHandling",
    "PooledEstimate",
    "PropensityScores",
    "PsMethod",
    # Report models
    "METRIC_COLUMNS",
    "EstimatorSpec",
    "MetricsReport",
    "MetricsRow",
    "default_estimators",
    # Scenario models
    "SCENARIOS",
    "ExposureModel",
    "Mechanism",
    "ScenarioConfig",
    "get_scenario",
]
