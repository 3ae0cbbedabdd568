"""Asyncio UDP gateway and its metrics endpoint."""

from .metrics import start_metrics_server
from .server import Gateway, run_gateway, serve

__all__ = ["Gateway", "run_gateway", "serve", "start_metrics_server"]
