"""
Tabular data models.

Defines the rectangular Dataset with an explicit missingness mask, its
column metadata and the missing-indicator matrix. Every learner and
estimator in the package consumes this type.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from exceptions import ColumnTypeError, EmptyResultError, SchemaError


class ColumnKind(str, Enum):
    """Measurement type of a column."""

    BINARY = "binary"
    CONTINUOUS = "continuous"


class ColumnRole(str, Enum):
    """Analytic role of a column."""

    COVARIATE = "covariate"
    EXPOSURE = "exposure"
    OUTCOME = "outcome"
    AUXILIARY = "auxiliary"


@dataclass(frozen=True)
class ColumnMeta:
    """
    Metadata for a single column.

    Attributes:
        name: Column name, unique within a dataset
        kind: Binary (observed values in {0, 1}) or continuous
        role: Covariate, exposure, outcome or auxiliary
    """

    name: str
    kind: ColumnKind
    role: ColumnRole = ColumnRole.COVARIATE

    def to_dict(self) -> dict:
        """Convert to a schema-file entry."""
        return {"name": self.name, "kind": self.kind.value, "role": self.role.value}

    @classmethod
    def from_dict(cls, entry: dict) -> "ColumnMeta":
        """Create from a schema-file entry."""
        try:
            return cls(
                name=str(entry["name"]),
                kind=ColumnKind(entry["kind"]),
                role=ColumnRole(entry.get("role", ColumnRole.COVARIATE.value)),
            )
        except (KeyError, ValueError) as e:
            raise SchemaError(f"Invalid schema entry {entry!r}: {e}") from e


@dataclass(frozen=True)
class MissingPattern:
    """
    Missing-indicator matrix.

    Attributes:
        indicators: n x p integer matrix, 1 where the cell is missing
        names: Column names, in column order
    """

    indicators: np.ndarray
    names: Tuple[str, ...]

    def column_rates(self) -> Dict[str, float]:
        """Fraction of missing cells per column."""
        if self.indicators.shape[0] == 0:
            return {name: 0.0 for name in self.names}
        rates = self.indicators.mean(axis=0)
        return {name: float(rate) for name, rate in zip(self.names, rates)}


class Dataset:
    """
    Immutable rectangular table of numeric columns with a missingness mask.

    Missing cells hold NaN in ``values``; correctness relies only on
    ``missing``, which is True where a cell is missing. Arrays are
    read-only after construction.

    Attributes:
        columns: Column metadata, in column order
        values: n x p float64 matrix
        missing: n x p boolean matrix

    Example:
        data = Dataset(
            columns=[
                ColumnMeta("W1", ColumnKind.BINARY),
                ColumnMeta("A", ColumnKind.BINARY, ColumnRole.EXPOSURE),
            ],
            values=np.array([[1.0, 0.0], [0.0, 1.0]]),
        )
    """

    def __init__(
        self,
        columns: Sequence[ColumnMeta],
        values: np.ndarray,
        missing: Optional[np.ndarray] = None,
    ) -> None:
        self.columns: Tuple[ColumnMeta, ...] = tuple(columns)
        values = np.array(values, dtype=np.float64, copy=True)
        if values.ndim != 2:
            raise SchemaError(f"Dataset values must be 2-D, got shape {values.shape}")
        if values.shape[1] != len(self.columns):
            raise SchemaError(
                f"{values.shape[1]} value columns but {len(self.columns)} column definitions"
            )
        if missing is None:
            missing = np.isnan(values)
        missing = np.array(missing, dtype=bool, copy=True)
        if missing.shape != values.shape:
            raise SchemaError("Missingness mask shape differs from values shape")
        values[missing] = np.nan
        if np.isnan(values[~missing]).any():
            raise SchemaError("Observed cells must not hold NaN")

        self._validate_columns(values, missing)
        values.flags.writeable = False
        missing.flags.writeable = False
        self.values = values
        self.missing = missing
        self._index = {c.name: j for j, c in enumerate(self.columns)}

    def _validate_columns(self, values: np.ndarray, missing: np.ndarray) -> None:
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise SchemaError(f"Duplicate column names in {names}")
        exposures = [c for c in self.columns if c.role == ColumnRole.EXPOSURE]
        outcomes = [c for c in self.columns if c.role == ColumnRole.OUTCOME]
        if len(exposures) != 1:
            raise SchemaError(f"Exactly one exposure column required, found {len(exposures)}")
        if len(outcomes) > 1:
            raise SchemaError(f"At most one outcome column allowed, found {len(outcomes)}")
        for j, column in enumerate(self.columns):
            if column.kind != ColumnKind.BINARY:
                continue
            observed = values[~missing[:, j], j]
            bad = ~np.isin(observed, (0.0, 1.0))
            if bad.any():
                raise ColumnTypeError(
                    f"Binary column '{column.name}' holds non-binary value {observed[bad][0]!r}"
                )

    # ------------------------------------------------------------------
    # Shape and lookup
    # ------------------------------------------------------------------

    @property
    def n_rows(self) -> int:
        """Number of rows."""
        return int(self.values.shape[0])

    @property
    def n_cols(self) -> int:
        """Number of columns."""
        return int(self.values.shape[1])

    @property
    def names(self) -> List[str]:
        """Column names in order."""
        return [c.name for c in self.columns]

    def index_of(self, name: str) -> int:
        """Column position of ``name``."""
        try:
            return self._index[name]
        except KeyError as e:
            raise SchemaError(f"Unknown column '{name}'") from e

    def meta(self, name: str) -> ColumnMeta:
        """Metadata of column ``name``."""
        return self.columns[self.index_of(name)]

    def column(self, name: str) -> np.ndarray:
        """Values of column ``name`` (NaN where missing)."""
        return self.values[:, self.index_of(name)]

    def observed(self, name: str) -> np.ndarray:
        """Boolean vector, True where column ``name`` is observed."""
        return ~self.missing[:, self.index_of(name)]

    @property
    def exposure_name(self) -> str:
        """Name of the exposure column."""
        return next(c.name for c in self.columns if c.role == ColumnRole.EXPOSURE)

    @property
    def outcome_name(self) -> Optional[str]:
        """Name of the outcome column, if any."""
        return next((c.name for c in self.columns if c.role == ColumnRole.OUTCOME), None)

    @property
    def covariate_names(self) -> List[str]:
        """Names of covariate columns, in column order."""
        return [c.name for c in self.columns if c.role == ColumnRole.COVARIATE]

    def require_complete(self, names: Sequence[str]) -> np.ndarray:
        """Return the columns ``names`` as a matrix, raising if any cell is missing."""
        idx = [self.index_of(name) for name in names]
        if self.missing[:, idx].any():
            incomplete = [n for n, j in zip(names, idx) if self.missing[:, j].any()]
            raise SchemaError(f"Columns {incomplete} have missing cells")
        return self.values[:, idx]

    @property
    def has_missing(self) -> bool:
        """True if any cell is missing."""
        return bool(self.missing.any())

    # ------------------------------------------------------------------
    # Derivations
    # ------------------------------------------------------------------

    def take(self, rows: np.ndarray) -> "Dataset":
        """Return the rows at positions ``rows`` (repeats allowed), in that order."""
        rows = np.asarray(rows)
        return Dataset(self.columns, self.values[rows], self.missing[rows])

    def with_values(self, values: np.ndarray, missing: Optional[np.ndarray] = None) -> "Dataset":
        """Return a dataset with the same columns and new contents."""
        return Dataset(self.columns, values, missing)

    def complete_cases(self) -> "Dataset":
        """
        Rows with no missing cell, in original order.

        Raises:
            EmptyResultError: If every row has at least one missing cell
        """
        keep = ~self.missing.any(axis=1)
        if not keep.any():
            raise EmptyResultError("No complete rows remain")
        return self.take(np.flatnonzero(keep))

    def missing_indicators(self) -> MissingPattern:
        """Indicator matrix M with M[i, j] = 1 exactly where cell (i, j) is missing."""
        return MissingPattern(indicators=self.missing.astype(np.int8), names=tuple(self.names))

    def missingness_summary(self) -> Dict[str, float]:
        """
        Proportion of missing data points and of incomplete records.

        Returns:
            Dictionary with keys 'pmp' (over all cells) and 'pir' (over rows)
        """
        if self.n_rows == 0:
            return {"pmp": 0.0, "pir": 0.0}
        return {
            "pmp": float(self.missing.mean()),
            "pir": float(self.missing.any(axis=1).mean()),
        }

    # ------------------------------------------------------------------
    # Conversion
    # ------------------------------------------------------------------

    def to_frame(self) -> pd.DataFrame:
        """Convert to a DataFrame with NaN in missing cells."""
        return pd.DataFrame(np.array(self.values), columns=self.names)

    def schema(self) -> dict:
        """Schema-file representation of the column metadata."""
        return {"columns": [c.to_dict() for c in self.columns]}

    def equals(self, other: "Dataset") -> bool:
        """True if columns, mask and observed values are identical (bitwise)."""
        if self.columns != other.columns or self.values.shape != other.values.shape:
            return False
        if not np.array_equal(self.missing, other.missing):
            return False
        observed = ~self.missing
        return bool(
            np.array_equal(
                self.values[observed].view(np.int64), other.values[observed].view(np.int64)
            )
        )

    def __repr__(self) -> str:
        return f"Dataset(n_rows={self.n_rows}, columns={self.names})"


def complete_cases(data: Dataset) -> Dataset:
    """Rows of ``data`` with no missing cell (see ``Dataset.complete_cases``)."""
    return data.complete_cases()


def missing_indicators(data: Dataset) -> MissingPattern:
    """Missing-indicator matrix of ``data`` (see ``Dataset.missing_indicators``)."""
    return data.missing_indicators()
