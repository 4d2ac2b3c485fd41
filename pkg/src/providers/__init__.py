"""
Dataset stores for psmiss.

This module provides an abstraction layer for reading and writing
datasets, imputed sets and generated cohorts:

- CSV files with a JSON schema (the only backend so far)

Usage:
    from providers import CSVDatasetStore

    store = CSVDatasetStore(Path("data"))
    data = store.load_dataset("cohort")
"""

from .base import DatasetStore
from .csv_provider import (
    CSVDatasetStore,
    infer_schema,
    load_schema,
    parse_dataset_csv,
    read_dataset_csv,
    save_schema,
    write_dataset_csv,
    write_frame_csv,
)

__all__ = [
    "DatasetStore",
    "CSVDatasetStore",
    "infer_schema",
    "load_schema",
    "parse_dataset_csv",
    "read_dataset_csv",
    "save_schema",
    "write_dataset_csv",
    "write_frame_csv",
]
