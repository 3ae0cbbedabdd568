"""DNS cache-poisoning defenses: resolver engine, gateway and attack simulator."""

from .cli import main
from .core import ConfigManager, GatewayConfig, Resolver, ResolverSettings
from .sim import ExperimentConfig, run_experiment

__version__ = "0.1.0"

__all__ = [
    "main",
    "ConfigManager",
    "GatewayConfig",
    "Resolver",
    "ResolverSettings",
    "ExperimentConfig",
    "run_experiment",
]
