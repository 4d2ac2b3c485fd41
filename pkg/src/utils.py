"""
Utility functions for psmiss.
"""

import json
import logging
import sys
from typing import List, Mapping

__version__ = "0.1.0"


def configure_logging(level: str = "INFO") -> None:
    """
    Send log records to stderr.

    Args:
        level: Logging level name (e.g. INFO, DEBUG)
    """
    logging.basicConfig(
        stream=sys.stderr,
        level=getattr(logging, level.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        force=True,
    )


def provenance_header(command: str, seed: int, config: Mapping[str, object]) -> List[str]:
    """
    Provenance lines for output files: tool, version, command, seed and config.

    No timestamps are included, so identical runs produce identical files.

    Args:
        command: Subcommand name
        seed: Root seed
        config: Run configuration echo

    Returns:
        Lines without the leading '#'
    """
    return [
        f"psmiss {__version__}",
        f"command: {command}",
        f"seed: {seed}",
        f"config: {json.dumps(dict(config), sort_keys=True, default=str)}",
    ]
