"""Logging setup and structured event lines."""

import logging
from typing import Any

DEFAULT_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def configure_logging(level: str = "INFO", fmt: str = DEFAULT_FORMAT) -> None:
    """Configure root logging from the [logging] settings section.

    Args:
        level: Level name such as "DEBUG" or "INFO"
        fmt: logging format string
    """
    logging.basicConfig(level=level.upper(), format=fmt, force=True)


def format_event(event: str, session: str | None = None, **fields: Any) -> str:
    """Render one state transition as `event=... session=... key=value` text."""
    parts = [f"event={event}", f"session={session or '-'}"]
    parts.extend(f"{key}={value}" for key, value in fields.items())
    return " ".join(parts)


def log_event(
    logger: logging.Logger,
    event: str,
    session: str | None = None,
    *,
    level: int = logging.INFO,
    **fields: Any,
) -> None:
    if logger.isEnabledFor(level):
        logger.log(level, format_event(event, session, **fields))
