"""Core package: wire codec, entropy, sandwich antidote and resolver engine."""

from .cache import DnsCache
from .config import ConfigManager, GatewayConfig
from .exceptions import (
    AntidoteError,
    BindError,
    ConfigurationError,
    EntropyError,
    ResolverError,
    WireError,
)
from .resolver import Resolution, Resolver, ResolverSettings, Upstream

__all__ = [
    "ConfigManager",
    "GatewayConfig",
    "DnsCache",
    "Resolver",
    "Resolution",
    "ResolverSettings",
    "Upstream",
    "AntidoteError",
    "BindError",
    "ConfigurationError",
    "EntropyError",
    "ResolverError",
    "WireError",
]
