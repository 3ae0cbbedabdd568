"""Utilities package: logging helpers and interval statistics."""

from .log import configure_logging, log_event
from .stats import two_proportion_p_value, wilson_interval

__all__ = [
    "configure_logging",
    "log_event",
    "wilson_interval",
    "two_proportion_p_value",
]
