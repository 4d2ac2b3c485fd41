"""
Exception types for psmiss.

Library code raises these; the CLI maps them to exit codes and the
simulation harness records them as per-replication failures.
"""

from typing import Optional


class PsMissError(ValueError):
    """Base class for all errors raised by psmiss."""


class EmptyResultError(PsMissError):
    """An operation produced no rows (e.g. no complete cases remain)."""


class SchemaError(PsMissError):
    """Column roles or names do not match what an operation requires."""


class CsvParseError(PsMissError):
    """A CSV cell could not be parsed."""

    def __init__(self, message: str, row: Optional[int] = None, column: Optional[str] = None):
        self.row = row
        self.column = column
        location = []
        if row is not None:
            location.append(f"row {row}")
        if column is not None:
            location.append(f"column '{column}'")
        suffix = f" ({', '.join(location)})" if location else ""
        super().__init__(f"{message}{suffix}")


class ColumnTypeError(PsMissError):
    """A binary column holds an observed value outside {0, 1}."""


class FactorizationError(PsMissError):
    """Cholesky factorization failed (matrix not positive definite)."""


class InvalidWeightsError(PsMissError):
    """Weights are negative, non-finite or sum to zero."""


class TargetNotBinaryError(PsMissError):
    """A classification target holds values outside {0, 1}."""


class DegenerateExposureError(PsMissError):
    """The exposure is constant (all 0 or all 1)."""


class EmptySampleError(PsMissError):
    """A sample or exposure group is empty."""


class DegenerateInputError(PsMissError):
    """Too few observations (or too little weight) for the statistic."""


class SeparationError(PsMissError):
    """Logistic fit hit complete or quasi-complete separation."""


class ConvergenceError(PsMissError):
    """An iterative fit did not converge."""


class EstimationError(PsMissError):
    """An effect estimate could not be produced (e.g. no matched pairs)."""


class PositivityError(PsMissError):
    """A (generalised) propensity score equals 0 or 1 on the support."""
