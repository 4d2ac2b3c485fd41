"""
CSV dataset store.

Datasets are stored as CSV files with a header row, one row per record.
Missing cells are written as NA; empty fields and NA both read as missing.
Observed values are written with Python's shortest round-trip float
representation, so write followed by read reproduces every observed value
bit for bit. Lines starting with '#' before the header carry provenance
and are skipped on read.

Column roles and kinds live in a JSON schema file next to the table:

    {"columns": [{"name": "W1", "kind": "binary", "role": "covariate"}, ...]}
"""

import csv
import io
import json
import logging
import math
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from exceptions import CsvParseError, SchemaError
from models import ColumnKind, ColumnMeta, ColumnRole, Dataset

from .base import DatasetStore

logger = logging.getLogger(__name__)

MISSING_TOKENS = ("", "NA")


def _parse_cell(text: str, row: int, column: str) -> float:
    try:
        value = float(text)
    except ValueError as e:
        raise CsvParseError(f"Cannot parse {text!r} as a number", row=row, column=column) from e
    if not math.isfinite(value):
        raise CsvParseError(f"Non-finite value {text!r}", row=row, column=column)
    return value


def parse_dataset_csv(text: str) -> Tuple[List[str], np.ndarray, np.ndarray]:
    """
    Parse CSV text into (header, values, missing).

    Raises:
        CsvParseError: On a missing header, ragged rows or unparsable cells;
            ``row`` is the 1-based line number in the file
    """
    lines = text.splitlines(keepends=True)
    skipped = 0
    while skipped < len(lines) and lines[skipped].startswith("#"):
        skipped += 1
    reader = csv.reader(io.StringIO("".join(lines[skipped:])))
    try:
        header = [name.strip() for name in next(reader)]
    except StopIteration as e:
        raise CsvParseError("Missing header row", row=skipped + 1) from e
    if not header or any(not name for name in header):
        raise CsvParseError("Header row has empty column names", row=skipped + 1)
    if len(set(header)) != len(header):
        raise CsvParseError(f"Duplicate column names in header {header}", row=skipped + 1)

    values: List[List[float]] = []
    missing: List[List[bool]] = []
    for record in reader:
        line = skipped + reader.line_num
        if not record:
            continue
        if len(record) != len(header):
            raise CsvParseError(
                f"Expected {len(header)} fields, found {len(record)}", row=line
            )
        row_values = []
        row_missing = []
        for name, cell in zip(header, record):
            cell = cell.strip()
            if cell in MISSING_TOKENS:
                row_values.append(np.nan)
                row_missing.append(True)
            else:
                row_values.append(_parse_cell(cell, line, name))
                row_missing.append(False)
        values.append(row_values)
        missing.append(row_missing)

    shape = (len(values), len(header))
    value_matrix = np.array(values, dtype=np.float64).reshape(shape)
    missing_matrix = np.array(missing, dtype=bool).reshape(shape)
    return header, value_matrix, missing_matrix


def infer_schema(
    header: Sequence[str],
    values: np.ndarray,
    missing: np.ndarray,
    exposure: str = "A",
    outcome: Optional[str] = "Y",
    auxiliary: Sequence[str] = (),
) -> Tuple[ColumnMeta, ...]:
    """
    Column metadata from the data: a column is binary when every observed
    value is 0 or 1, continuous otherwise.

    Raises:
        SchemaError: If the exposure (or a named outcome) is not a column
    """
    if exposure not in header:
        raise SchemaError(f"Exposure column '{exposure}' not found in {list(header)}")
    if outcome is not None and outcome not in header:
        raise SchemaError(f"Outcome column '{outcome}' not found in {list(header)}")
    columns = []
    for j, name in enumerate(header):
        observed = values[~missing[:, j], j]
        binary = bool(np.isin(observed, (0.0, 1.0)).all())
        if name == exposure:
            role = ColumnRole.EXPOSURE
        elif name == outcome:
            role = ColumnRole.OUTCOME
        elif name in auxiliary:
            role = ColumnRole.AUXILIARY
        else:
            role = ColumnRole.COVARIATE
        columns.append(
            ColumnMeta(name, ColumnKind.BINARY if binary else ColumnKind.CONTINUOUS, role)
        )
    return tuple(columns)


def load_schema(path: Path) -> Tuple[ColumnMeta, ...]:
    """Read a JSON schema file."""
    try:
        document = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise SchemaError(f"Invalid schema file {path}: {e}") from e
    entries = document.get("columns") if isinstance(document, dict) else None
    if not isinstance(entries, list):
        raise SchemaError(f"Schema file {path} has no 'columns' list")
    return tuple(ColumnMeta.from_dict(entry) for entry in entries)


def save_schema(data: Dataset, path: Path) -> Path:
    """Write the schema of ``data`` as JSON."""
    path = Path(path)
    path.write_text(json.dumps(data.schema(), indent=2) + "\n", encoding="utf-8")
    return path


def _ordered_schema(header: Sequence[str], schema: Sequence[ColumnMeta]) -> List[ColumnMeta]:
    by_name = {column.name: column for column in schema}
    if set(by_name) != set(header):
        raise SchemaError(
            f"Schema columns {sorted(by_name)} do not match file columns {sorted(header)}"
        )
    return [by_name[name] for name in header]


def read_dataset_csv(
    path: Path,
    schema: Optional[Sequence[ColumnMeta]] = None,
    exposure: str = "A",
    outcome: Optional[str] = "Y",
) -> Dataset:
    """
    Read a dataset from a CSV file.

    Args:
        path: CSV file
        schema: Column metadata (inferred from the data if None)
        exposure: Exposure column for schema inference
        outcome: Outcome column for schema inference (None for no outcome)

    Raises:
        CsvParseError: On malformed content
        ColumnTypeError: If a binary column holds a value other than 0 or 1
        SchemaError: If the schema does not match the header
    """
    path = Path(path)
    header, values, missing = parse_dataset_csv(path.read_text(encoding="utf-8"))
    if schema is None:
        columns = infer_schema(header, values, missing, exposure, outcome)
    else:
        columns = tuple(_ordered_schema(header, schema))
    data = Dataset(columns, values, missing)
    logger.info(
        f"Loaded {data.n_rows} rows from {path.name}",
        extra={"columns": data.n_cols, "missing_cells": int(missing.sum())},
    )
    return data


def _format_cell(value: float, missing: bool) -> str:
    return "NA" if missing else repr(float(value))


def write_dataset_csv(data: Dataset, path: Path, header: Sequence[str] = ()) -> Path:
    """
    Write ``data`` as CSV with NA in missing cells.

    Args:
        data: Dataset to write
        path: Output file
        header: Provenance lines, each written as '# <line>'
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buffer = io.StringIO()
    for line in header:
        buffer.write(f"# {line}\n")
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(data.names)
    for i in range(data.n_rows):
        writer.writerow(
            [_format_cell(data.values[i, j], data.missing[i, j]) for j in range(data.n_cols)]
        )
    path.write_text(buffer.getvalue(), encoding="utf-8")
    logger.debug(f"Wrote {data.n_rows} rows to {path}")
    return path


def write_frame_csv(frame: pd.DataFrame, path: Path, header: Sequence[str] = ()) -> Path:
    """Write a DataFrame (latents, traces) with '#' provenance lines."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = "".join(f"# {line}\n" for line in header)
    path.write_text(lines + frame.to_csv(index=False, lineterminator="\n"), encoding="utf-8")
    return path


class CSVDatasetStore(DatasetStore):
    """
    Dataset store over a directory of CSV files.

    ``<name>.csv`` holds the table and ``<name>.schema.json`` its column
    metadata. Imputed sets are written as ``<stem>_imp<k>.csv`` (k = 1..m)
    plus ``<stem>_manifest.json``.

    Attributes:
        data_directory: Directory containing the files

    Example:
        store = CSVDatasetStore(Path("data"))
        data = store.load_dataset("scenario1")
        store.save_dataset(data.complete_cases(), "scenario1_cca")
    """

    def __init__(self, data_directory: Path) -> None:
        """
        Initialize the CSV dataset store.

        Args:
            data_directory: Directory for tables and schema files
        """
        self.data_directory = Path(data_directory)
        logger.info(
            "Initialized CSV dataset store",
            extra={"data_directory": str(self.data_directory)},
        )

    def _table_path(self, name: str) -> Path:
        path = Path(name)
        if path.suffix.lower() != ".csv":
            path = path.with_name(path.name + ".csv")
        return path if path.is_absolute() else self.data_directory / path

    def _schema_path(self, table: Path) -> Path:
        return table.with_name(table.stem + ".schema.json")

    def load_dataset(
        self,
        name: str,
        schema: Optional[Sequence[ColumnMeta]] = None,
        exposure: str = "A",
        outcome: Optional[str] = "Y",
    ) -> Dataset:
        """
        Load ``name`` from the store, using its schema file when present.

        Raises:
            FileNotFoundError: If the table does not exist
        """
        table = self._table_path(name)
        if not table.exists():
            raise FileNotFoundError(f"Dataset file not found: {table}")
        if schema is None and self._schema_path(table).exists():
            schema = load_schema(self._schema_path(table))
        return read_dataset_csv(table, schema, exposure, outcome)

    def save_dataset(self, data: Dataset, name: str, header: Sequence[str] = ()) -> Path:
        """Write the table and its schema file."""
        table = self._table_path(name)
        write_dataset_csv(data, table, header)
        save_schema(data, self._schema_path(table))
        logger.info(f"Saved {data.n_rows} rows to {table}")
        return table

    def save_imputed(
        self, datasets: Sequence[Dataset], stem: str, manifest: Dict[str, object]
    ) -> Path:
        """Write each completed dataset and a JSON manifest listing the files."""
        files = []
        for k, data in enumerate(datasets, start=1):
            table = self.save_dataset(data, f"{stem}_imp{k}")
            files.append(table.name)
        manifest_path = self.data_directory / f"{Path(stem).name}_manifest.json"
        document = dict(manifest)
        document["m"] = len(files)
        document["files"] = files
        manifest_path.write_text(
            json.dumps(document, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8"
        )
        logger.info(f"Saved {len(files)} imputed datasets", extra={"manifest": str(manifest_path)})
        return manifest_path

    def is_available(self) -> bool:
        """
        Check if the data directory exists.

        Returns:
            True if the directory exists
        """
        return self.data_directory.is_dir()

    def get_source_info(self) -> str:
        """
        Get a description of the store.

        Returns:
            Directory path and the CSV files it holds
        """
        if not self.is_available():
            return f"CSV dataset store: {self.data_directory} (missing)"
        tables = sorted(p.name for p in self.data_directory.glob("*.csv"))
        listing = "\n".join(f"  - {name}" for name in tables) or "  (no tables)"
        return f"CSV dataset store: {self.data_directory}\n{listing}"
