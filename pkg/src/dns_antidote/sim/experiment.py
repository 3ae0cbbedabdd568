"""Defense x attacker experiment grids and their CSV result table."""

from __future__ import annotations

import csv
import functools
import ipaddress
import itertools
import logging
from collections.abc import Callable, Iterable, Mapping
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, TextIO

from ..core.entropy import EntropyConfig
from ..core.exceptions import ConfigurationError
from ..utils.stats import wilson_interval
from .attacker import AttackerConfig, AttackStrategy
from .nat import NatMode
from .network import LatencyKind, LatencyModel, LinkConfig
from .trial import RESOLVER_ADDRESS, Defense, SimConfig, run_trial

logger = logging.getLogger(__name__)

RESULT_HEADER = (
    "defense",
    "attacker",
    "trials",
    "poisoned",
    "rate",
    "ci_lo",
    "ci_hi",
    "mean_spoofed_packets",
)
BASELINE_DEFENSE = "accept-first"
DEFAULT_DEFENSES = ("txid", "txid+spr", "txid+spr+0x20", "sandwich")
DEFAULT_ATTACKERS = tuple(strategy.value for strategy in AttackStrategy)
ANTIDOTE_POOL_SIZE = 2048


@functools.cache
def address_pool(size: int, network: str = "10.0.0.0/8") -> tuple[str, ...]:
    """The first `size` host addresses of `network`."""
    hosts = itertools.islice(ipaddress.ip_network(network).hosts(), size)
    return tuple(str(address) for address in hosts)


def defense_preset(
    name: str,
    *,
    txid_bits: int = 16,
    port_range: tuple[int, int] = (1024, 65535),
) -> Defense:
    """Named defense configuration.

    Raises:
        ConfigurationError: If the name is unknown
    """
    bare = EntropyConfig(
        txid_bits=txid_bits,
        spr_enabled=False,
        port_range=port_range,
        ip_pool=(RESOLVER_ADDRESS,),
        encode_0x20=False,
    )
    spr = EntropyConfig(
        txid_bits=txid_bits,
        port_range=port_range,
        ip_pool=(RESOLVER_ADDRESS,),
        encode_0x20=False,
    )
    full = EntropyConfig(
        txid_bits=txid_bits, port_range=port_range, ip_pool=(RESOLVER_ADDRESS,)
    )
    pooled = EntropyConfig(
        txid_bits=txid_bits,
        port_range=port_range,
        ip_pool=address_pool(ANTIDOTE_POOL_SIZE),
    )
    presets = {
        "accept-first": Defense(name, bare, accept_first=True),
        "txid": Defense(name, bare),
        "txid+spr": Defense(name, spr),
        "txid+spr+0x20": Defense(name, full),
        "nat-antidote": Defense(name, pooled),
        "sandwich": Defense(name, full, sandwich=True),
        "txid+spr/sequential-nat": Defense(name, spr, nat=NatMode.SEQUENTIAL_PORTS),
        "nat-antidote/masquerade": Defense(
            name, pooled, nat=NatMode.SINGLE_IP_MASQUERADE
        ),
    }
    try:
        return presets[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown defense '{name}'; choose from {sorted(presets)}"
        ) from None


def attacker_preset(
    name: str, *, packets_per_window: int = 16, rounds: int = 1
) -> AttackerConfig:
    try:
        strategy = AttackStrategy(name)
    except ValueError:
        raise ConfigurationError(
            f"unknown attacker '{name}'; choose from {list(DEFAULT_ATTACKERS)}"
        ) from None
    return AttackerConfig(
        strategy=strategy, packets_per_window=packets_per_window, rounds=rounds
    )


@dataclass(frozen=True, slots=True)
class ExperimentConfig:
    """One experiment grid.

    Trial i of every cell uses seed `seed + i`, so cells are paired.
    """

    defenses: tuple[str, ...] = DEFAULT_DEFENSES
    attackers: tuple[str, ...] = DEFAULT_ATTACKERS
    trials: int = 500
    seed: int = 0
    txid_bits: int = 8
    port_range: tuple[int, int] = (1024, 65535)
    packets_per_window: int = 16
    kaminsky_rounds: int = 1
    include_baseline: bool = True
    workers: int = 1
    sim: SimConfig = field(default_factory=SimConfig)

    def validate(self) -> None:
        if self.trials < 1:
            raise ConfigurationError("trials must be at least 1")
        if self.packets_per_window < 1 or self.kaminsky_rounds < 1:
            raise ConfigurationError("packets_per_window and kaminsky_rounds >= 1")
        if self.workers < 1:
            raise ConfigurationError("workers must be at least 1")
        for name in self.grid_defenses():
            self.defense(name)
        for name in self.attackers:
            attacker_preset(name)

    def grid_defenses(self) -> tuple[str, ...]:
        if self.include_baseline and BASELINE_DEFENSE not in self.defenses:
            return (BASELINE_DEFENSE, *self.defenses)
        return self.defenses

    def defense(self, name: str) -> Defense:
        return defense_preset(
            name, txid_bits=self.txid_bits, port_range=self.port_range
        )

    def attacker(self, name: str) -> AttackerConfig:
        return attacker_preset(
            name,
            packets_per_window=self.packets_per_window,
            rounds=self.kaminsky_rounds,
        )

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> ExperimentConfig:
        """Build from the key/value body of an experiment file.

        Raises:
            ConfigurationError: On unknown keys or mistyped values
        """
        unknown = set(data) - EXPERIMENT_KEYS
        if unknown:
            raise ConfigurationError(f"unknown experiment keys {sorted(unknown)}")
        latency = _value(data, "latency", float, 0.05)
        latency_high = _value(data, "latency_high", float, latency)
        kind = LatencyKind.FIXED if latency_high == latency else LatencyKind.UNIFORM
        sim = SimConfig(
            link=LinkConfig(
                latency=LatencyModel(kind, latency, latency_high),
                loss=_value(data, "loss", float, 0.0),
                reorder_prob=_value(data, "reorder_prob", float, 0.0),
                reorder_delay=_value(data, "reorder_delay", float, 0.02),
            ),
            case_preserving=_value(data, "case_preserving", bool, True),
            wildcard=_value(data, "wildcard", bool, False),
        )
        port_range = _value(data, "port_range", _port_range, (1024, 65535))
        config = cls(
            defenses=_value(data, "defenses", _names, DEFAULT_DEFENSES),
            attackers=_value(data, "attackers", _names, DEFAULT_ATTACKERS),
            trials=_value(data, "trials", int, 500),
            seed=_value(data, "seed", int, 0),
            txid_bits=_value(data, "txid_bits", int, 8),
            port_range=port_range,
            packets_per_window=_value(data, "packets_per_window", int, 16),
            kaminsky_rounds=_value(data, "kaminsky_rounds", int, 1),
            include_baseline=_value(data, "include_baseline", bool, True),
            workers=_value(data, "workers", int, 1),
            sim=sim,
        )
        config.validate()
        return config


EXPERIMENT_KEYS = frozenset(
    {
        "defenses",
        "attackers",
        "trials",
        "seed",
        "txid_bits",
        "port_range",
        "packets_per_window",
        "kaminsky_rounds",
        "include_baseline",
        "workers",
        "latency",
        "latency_high",
        "loss",
        "reorder_prob",
        "reorder_delay",
        "case_preserving",
        "wildcard",
    }
)


def _value[T](
    data: Mapping[str, Any], key: str, convert: Callable[[Any], T], default: T
) -> T:
    if key not in data:
        return default
    try:
        return convert(data[key])
    except (TypeError, ValueError) as e:
        raise ConfigurationError(f"experiment key '{key}': {e}") from e


def _names(value: Any) -> tuple[str, ...]:
    if isinstance(value, str):
        return (value,)
    return tuple(str(item) for item in value)


def _port_range(value: Any) -> tuple[int, int]:
    low, high = (int(port) for port in value)
    return low, high


@dataclass(frozen=True, slots=True)
class ResultRow:
    defense: str
    attacker: str
    trials: int
    poisoned: int
    mean_spoofed_packets: float

    @property
    def rate(self) -> float:
        return self.poisoned / self.trials

    @property
    def interval(self) -> tuple[float, float]:
        return wilson_interval(self.poisoned, self.trials)

    def as_record(self) -> tuple[str, ...]:
        low, high = self.interval
        return (
            self.defense,
            self.attacker,
            str(self.trials),
            str(self.poisoned),
            f"{self.rate:.6f}",
            f"{low:.6f}",
            f"{high:.6f}",
            f"{self.mean_spoofed_packets:.2f}",
        )


def run_cell(config: ExperimentConfig, defense: str, attacker: str) -> ResultRow:
    """All trials of one (defense, attacker) cell."""
    defense_cfg = config.defense(defense)
    attacker_cfg = config.attacker(attacker)
    poisoned = 0
    spoofed = 0
    for i in range(config.trials):
        outcome = run_trial(defense_cfg, attacker_cfg, config.seed + i, config.sim)
        poisoned += outcome.poisoned
        spoofed += outcome.spoofed_packets_sent
    row = ResultRow(defense, attacker, config.trials, poisoned, spoofed / config.trials)
    logger.info(
        "cell %s x %s: %d/%d poisoned", defense, attacker, poisoned, config.trials
    )
    return row


def run_experiment(config: ExperimentConfig) -> list[ResultRow]:
    """Run every cell of the grid, in grid order.

    With `workers > 1` cells run in separate processes; each cell is
    self-seeded, so the rows are the same as a serial run.
    """
    config.validate()
    cells = [(d, a) for d in config.grid_defenses() for a in config.attackers]
    if config.workers == 1:
        return [run_cell(config, d, a) for d, a in cells]
    with ProcessPoolExecutor(max_workers=config.workers) as pool:
        futures = [pool.submit(run_cell, config, d, a) for d, a in cells]
        return [future.result() for future in futures]


def write_results(rows: Iterable[ResultRow], out: TextIO) -> None:
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(RESULT_HEADER)
    for row in rows:
        writer.writerow(row.as_record())


def save_results(rows: Iterable[ResultRow], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        write_results(rows, f)
