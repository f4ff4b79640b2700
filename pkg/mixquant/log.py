"""structlog setup for CLI processes.

Library modules only call ``structlog.get_logger()``; the CLI calls
``configure_logging`` once so events go to stderr at the requested level.
"""

from __future__ import annotations

import logging
import os
import sys

import structlog

LOG_ENV = "MIXQUANT_LOG"
LOG_FORMAT_ENV = "MIXQUANT_LOG_FORMAT"

_LEVELS = {
    "debug": logging.DEBUG,
    "info": logging.INFO,
    "warning": logging.WARNING,
    "error": logging.ERROR,
}


def resolve_level(value: str | None) -> int:
    if not value:
        return logging.WARNING
    level = _LEVELS.get(value.strip().lower())
    if level is None:
        raise ValueError(f"Unknown {LOG_ENV} level {value!r}; expected one of {sorted(_LEVELS)}")
    return level


def configure_logging(level: str | None = None) -> None:
    """Route structlog events to stderr, filtered by ``level`` or $MIXQUANT_LOG."""
    numeric = resolve_level(level if level is not None else os.environ.get(LOG_ENV))
    renderer: structlog.types.Processor
    if os.environ.get(LOG_FORMAT_ENV, "").lower() == "json":
        renderer = structlog.processors.JSONRenderer(sort_keys=True)
    else:
        renderer = structlog.dev.ConsoleRenderer(colors=False)

    structlog.configure(
        processors=[
            structlog.processors.add_log_level,
            structlog.processors.TimeStamper(fmt="iso"),
            renderer,
        ],
        wrapper_class=structlog.make_filtering_bound_logger(numeric),
        logger_factory=structlog.PrintLoggerFactory(file=sys.stderr),
        cache_logger_on_first_use=False,
    )
