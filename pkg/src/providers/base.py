"""
Abstract base class for dataset stores.

This module defines the interface every dataset store implements, so the
CLI and the harness read and persist datasets the same way regardless of
the storage backend.
"""

from abc import ABC, abstractmethod
from pathlib import Path
from typing import Dict, Optional, Sequence

from models import ColumnMeta, Dataset


class DatasetStore(ABC):
    """
    Abstract base class for dataset stores.

    The store is responsible for:
    - Parsing stored tables into Dataset objects with their column schema
    - Writing datasets and imputed sets with a provenance header
    - Logging operations for debugging

    Loaders raise on malformed input rather than returning partial data.

    Example implementation:
        class ParquetDatasetStore(DatasetStore):
            def load_dataset(self, name, schema=None, exposure="A", outcome="Y"):
                frame = pd.read_parquet(self.root / f"{name}.parquet")
                ...
    """

    @abstractmethod
    def load_dataset(
        self,
        name: str,
        schema: Optional[Sequence[ColumnMeta]] = None,
        exposure: str = "A",
        outcome: Optional[str] = "Y",
    ) -> Dataset:
        """
        Load a dataset.

        Args:
            name: Dataset name or path
            schema: Column metadata; read from the stored schema or inferred if None
            exposure: Exposure column used when inferring the schema
            outcome: Outcome column used when inferring the schema

        Raises:
            CsvParseError: On malformed input, with its row and column
            SchemaError: If the schema does not match the stored columns
        """

    @abstractmethod
    def save_dataset(
        self, data: Dataset, name: str, header: Sequence[str] = ()
    ) -> Path:
        """
        Persist a dataset and its schema.

        Returns:
            Location of the written table
        """

    @abstractmethod
    def save_imputed(
        self, datasets: Sequence[Dataset], stem: str, manifest: Dict[str, object]
    ) -> Path:
        """
        Persist m completed datasets and a manifest describing them.

        Returns:
            Location of the manifest
        """

    def load_many(self, names: Sequence[str]) -> Dict[str, Dataset]:
        """
        Load several datasets by name.

        Returns:
            Mapping of name to Dataset, in the order given
        """
        return {name: self.load_dataset(name) for name in names}

    @abstractmethod
    def is_available(self) -> bool:
        """
        Check if the store location exists and is accessible.

        Returns:
            True if the store can be read, False otherwise
        """

    @abstractmethod
    def get_source_info(self) -> str:
        """
        Get a description of the store for logging/debugging.

        Returns:
            Human-readable description of the store
        """
