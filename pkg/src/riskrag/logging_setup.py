"""Logging configuration for the command-line tools."""

import logging
from typing import Optional

from rich.console import Console
from rich.logging import RichHandler


def configure_logging(verbose: bool = False, level: Optional[str] = None) -> None:
    """Route package logs to stderr through rich; stdout stays reserved for results."""
    if level is None:
        level = "DEBUG" if verbose else "WARNING"
    handler = RichHandler(
        console=Console(stderr=True),
        show_path=False,
        rich_tracebacks=True,
        markup=False,
    )
    logging.basicConfig(level=level.upper(), format="%(message)s", datefmt="[%X]", handlers=[handler], force=True)
    # httpx logs every request at INFO
    logging.getLogger("httpx").setLevel(logging.WARNING if not verbose else logging.INFO)
