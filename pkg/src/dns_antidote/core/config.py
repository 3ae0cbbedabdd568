"""Configuration management for the gateway and the simulator."""

import dataclasses
import tomllib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .cache import CacheConfig
from .entropy import EntropyConfig, PrefixMode
from .exceptions import ConfigurationError
from .resolver import Endpoint, ResolverSettings, Upstream
from .sandwich import SandwichConfig
from .wire import RecordType

EXPERIMENT_HEADER = "antidote-sim v1"
DEFAULT_LISTEN = Endpoint("127.0.0.1", 5353)


def parse_endpoint(text: str, default_port: int = 53) -> Endpoint:
    """Parse `ADDR:PORT`, `[V6]:PORT` or a bare address.

    Raises:
        ConfigurationError: If the port is not a number in [0, 65535]
    """
    text = text.strip()
    host, port = text, str(default_port)
    if text.startswith("["):
        host, _, rest = text[1:].partition("]")
        if rest.startswith(":"):
            port = rest[1:]
    elif text.count(":") == 1:
        host, port = text.split(":")
    try:
        number = int(port)
    except ValueError:
        raise ConfigurationError(f"invalid port in '{text}'") from None
    if not host or not 0 <= number <= 65535:
        raise ConfigurationError(f"invalid endpoint '{text}'")
    return Endpoint(host, number)


@dataclass(frozen=True, slots=True)
class GatewayConfig:
    """Everything `serve` needs; file values first, command-line flags on top."""

    listen: Endpoint = DEFAULT_LISTEN
    upstreams: tuple[Upstream, ...] = ()
    resolver: ResolverSettings = field(default_factory=ResolverSettings)
    seed: int | None = None
    log_level: str = "INFO"
    metrics_port: int | None = None

    def validate(self) -> None:
        """Raises ConfigurationError when the gateway cannot run with this config."""
        if not self.upstreams:
            raise ConfigurationError("at least one upstream is required")
        for upstream in self.upstreams:
            if Endpoint(upstream.address, upstream.port) == self.listen:
                raise ConfigurationError(
                    f"listen address {self.listen.host}:{self.listen.port} "
                    "is also an upstream"
                )
        if self.metrics_port is not None and not 0 <= self.metrics_port <= 65535:
            raise ConfigurationError(f"metrics_port {self.metrics_port} out of range")
        self.resolver.validate()

    def with_overrides(
        self,
        *,
        listen: str | None = None,
        upstreams: list[str] | None = None,
        seed: int | None = None,
        log_level: str | None = None,
        metrics_port: int | None = None,
    ) -> "GatewayConfig":
        config = self
        if listen is not None:
            config = dataclasses.replace(config, listen=parse_endpoint(listen))
        if upstreams:
            parsed = tuple(_upstream(text) for text in upstreams)
            config = dataclasses.replace(config, upstreams=parsed)
        if seed is not None:
            config = dataclasses.replace(config, seed=seed)
        if log_level is not None:
            config = dataclasses.replace(config, log_level=log_level)
        if metrics_port is not None:
            config = dataclasses.replace(config, metrics_port=metrics_port)
        return config

    @classmethod
    def from_mapping(cls, data: dict[str, Any]) -> "GatewayConfig":
        """Build from a parsed gateway TOML document.

        Raises:
            ConfigurationError: On unknown keys or mistyped values
        """
        allowed = {
            "listen", "upstreams", "seed", "log_level", "metrics_port",
            "entropy", "sandwich", "cache", "resolver",
        }  # fmt: skip
        unknown = set(data) - allowed
        if unknown:
            raise ConfigurationError(f"unknown gateway keys {sorted(unknown)}")

        entropy = _section(EntropyConfig, data.get("entropy", {}), "entropy")
        resolver = _section(
            ResolverSettings,
            data.get("resolver", {}),
            "resolver",
            entropy=entropy,
            sandwich=_section(SandwichConfig, data.get("sandwich", {}), "sandwich"),
            cache=_section(CacheConfig, data.get("cache", {}), "cache"),
        )
        upstreams = tuple(_upstream(item) for item in data.get("upstreams", []))
        listen = data.get("listen")
        metrics_port = data.get("metrics_port")
        seed = data.get("seed")
        return cls(
            listen=parse_endpoint(listen) if listen else DEFAULT_LISTEN,
            upstreams=upstreams,
            resolver=resolver,
            seed=int(seed) if seed is not None else None,
            log_level=str(data.get("log_level", "INFO")),
            metrics_port=int(metrics_port) if metrics_port is not None else None,
        )


def _upstream(item: str | dict[str, Any]) -> Upstream:
    if isinstance(item, str):
        endpoint = parse_endpoint(item)
        return Upstream(endpoint.host, endpoint.port)
    if isinstance(item, dict):
        return _section(Upstream, item, "upstreams")
    raise ConfigurationError(f"invalid upstream entry {item!r}")


def _section[T](cls: type[T], table: dict[str, Any], name: str, **extra: Any) -> T:
    """Instantiate a settings dataclass from one TOML table."""
    if not isinstance(table, dict):
        raise ConfigurationError(f"[{name}] must be a table")
    names = {f.name for f in dataclasses.fields(cls)}  # type: ignore[arg-type]
    unknown = set(table) - names
    if unknown:
        raise ConfigurationError(f"unknown keys in [{name}]: {sorted(unknown)}")
    values: dict[str, Any] = {}
    try:
        for key, value in table.items():
            if isinstance(value, list):
                value = tuple(value)
            if key == "short_query_prefix_mode":
                value = PrefixMode(value)
            if key == "extension_qtypes":
                value = tuple(
                    RecordType[v.upper()] if isinstance(v, str) else int(v)
                    for v in value
                )
            values[key] = value
        return cls(**values, **extra)
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigurationError(f"invalid [{name}] table: {e}") from e


class ConfigManager:
    """Loads settings, gateway and experiment files from a config directory."""

    def __init__(self, config_dir: str | Path = "config") -> None:
        """Initialize configuration manager.

        Args:
            config_dir: Directory containing configuration files
        """
        self.config_dir = Path(config_dir)
        self._settings_config: dict[str, Any] | None = None
        self._gateway_config: dict[str, Any] | None = None

    @property
    def settings_config_path(self) -> Path:
        return self.config_dir / "settings.toml"

    @property
    def gateway_config_path(self) -> Path:
        return self.config_dir / "gateway.toml"

    @property
    def experiment_config_path(self) -> Path:
        return self.config_dir / "experiment.conf"

    def load_settings_config(self) -> dict[str, Any]:
        """Load application settings ([logging] and friends).

        Raises:
            ConfigurationError: If the file cannot be loaded
        """
        if self._settings_config is None:
            self._settings_config = self._load_toml_file(self.settings_config_path)
        return self._settings_config

    def logging_settings(self) -> tuple[str, str | None]:
        """(level, format) from the [logging] section."""
        section = self.load_settings_config().get("logging", {})
        return str(section.get("level", "INFO")), section.get("format")

    def load_gateway_config(self, path: str | Path | None = None) -> GatewayConfig:
        """Load and parse a gateway config; the default file may be absent.

        Raises:
            ConfigurationError: If an explicit path is missing or any file is invalid
        """
        if path is not None:
            return GatewayConfig.from_mapping(self._load_toml_file(Path(path), True))
        if self._gateway_config is None:
            self._gateway_config = self._load_toml_file(self.gateway_config_path)
        return GatewayConfig.from_mapping(self._gateway_config)

    def load_experiment_file(self, path: str | Path | None = None) -> dict[str, Any]:
        """Key/value body of an experiment file after its version header.

        Raises:
            ConfigurationError: If the header is missing or wrong, or the body
                is not valid TOML
        """
        file_path = Path(path) if path is not None else self.experiment_config_path
        if not file_path.exists():
            if path is not None:
                raise ConfigurationError(f"Experiment file {file_path} not found")
            return {}
        try:
            text = file_path.read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigurationError(f"Failed to read {file_path}: {e}") from e
        header, _, body = text.partition("\n")
        if header.strip() != EXPERIMENT_HEADER:
            raise ConfigurationError(
                f"{file_path}: first line must be '{EXPERIMENT_HEADER}', "
                f"got '{header.strip()}'"
            )
        try:
            return tomllib.loads(body)
        except tomllib.TOMLDecodeError as e:
            raise ConfigurationError(f"Failed to parse {file_path}: {e}") from e

    def _load_toml_file(
        self, file_path: Path, required: bool = False
    ) -> dict[str, Any]:
        """Load a TOML file and return its contents.

        Raises:
            ConfigurationError: If file cannot be loaded or parsed
        """
        if not file_path.exists():
            if required:
                raise ConfigurationError(f"Config file {file_path} not found")
            return {}

        try:
            with open(file_path, "rb") as f:
                return tomllib.load(f)
        except (OSError, tomllib.TOMLDecodeError) as e:
            raise ConfigurationError(f"Failed to load {file_path}: {e}") from e
