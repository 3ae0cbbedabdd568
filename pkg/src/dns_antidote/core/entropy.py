"""Unilateral entropy mechanisms and the per-query entropy budget.

Every field an off-path spoofer must guess is drawn here: transaction ID,
source port, source address, destination (authority) address and the 0x20
letter-case mask. The budget reports how many bits each one contributes.
"""

from __future__ import annotations

import ipaddress
import math
import random
import string
from collections.abc import Collection, Mapping, Sequence
from dataclasses import dataclass
from enum import StrEnum

import numpy as np

from .exceptions import (
    ConfigurationError,
    EmptyPoolError,
    ExtendedNameTooLongError,
    InvalidProbabilityInputError,
    NameTooLongError,
)
from .wire import DnsName, RecordClass, name_equal_case_exact

DEFAULT_FIXED_PREFIX = "FixedRandomisationString"
DEFAULT_MIN_LETTERS = 12
DEFAULT_PORT_RANGE = (1024, 65535)
DEFAULT_DNS_PORT = 53

_LETTERS = frozenset(string.ascii_letters.encode("ascii"))
_UPPER = frozenset(string.ascii_uppercase.encode("ascii"))


class PrefixMode(StrEnum):
    """How the short-query extension picks its prefix label."""

    FIXED = "fixed"
    RANDOM = "random"


@dataclass(frozen=True, slots=True)
class EntropyConfig:
    """Which entropy mechanisms are on and the spaces they draw from."""

    randomize_txid: bool = True
    txid_bits: int = 16
    spr_enabled: bool = True
    port_range: tuple[int, int] = DEFAULT_PORT_RANGE
    fixed_port: int = 53000
    ip_pool: tuple[str, ...] = ("0.0.0.0",)
    dst_ip_candidates: tuple[str, ...] = ("192.0.2.53",)
    dst_port: int = DEFAULT_DNS_PORT
    encode_0x20: bool = True
    short_query_extension: bool = False
    short_query_prefix_mode: PrefixMode = PrefixMode.FIXED
    fixed_prefix: str = DEFAULT_FIXED_PREFIX
    min_letters: int = DEFAULT_MIN_LETTERS
    rng_seed: int | None = None

    def validate(self) -> None:
        """Check the config is usable for sending queries.

        Raises:
            ConfigurationError: If a pool, range or prefix is invalid
        """
        if not 0 <= self.txid_bits <= 16:
            raise ConfigurationError("txid_bits must be within [0, 16]")
        low, high = self.port_range
        if self.spr_enabled and not 1024 <= low <= high <= 65535:
            raise ConfigurationError(
                f"port_range {self.port_range} must be nonempty within [1024, 65535]"
            )
        if not 0 < self.fixed_port <= 65535:
            raise ConfigurationError(f"fixed_port {self.fixed_port} out of range")
        for label, pool in (
            ("ip_pool", self.ip_pool),
            ("dst_ip_candidates", self.dst_ip_candidates),
        ):
            if not pool:
                raise ConfigurationError(f"{label} must not be empty")
            if len(set(pool)) != len(pool):
                raise ConfigurationError(f"{label} addresses must be distinct")
            for address in pool:
                try:
                    ipaddress.ip_address(address)
                except ValueError as e:
                    raise ConfigurationError(f"{label}: {e}") from e
        prefix = self.fixed_prefix.encode("ascii", errors="replace")
        if not prefix or len(prefix) > 63 or not prefix.isalpha():
            raise ConfigurationError("fixed_prefix must be 1-63 ASCII letters")
        if self.min_letters < 0:
            raise ConfigurationError("min_letters must not be negative")


@dataclass(frozen=True, slots=True)
class ValidationTuple:
    """The per-query secret a forged response has to echo."""

    txid: int
    src_port: int
    src_ip: str
    dst_ip: str
    cased_qname: DnsName
    qtype: int
    qclass: int = RecordClass.IN
    dst_port: int = DEFAULT_DNS_PORT


@dataclass(frozen=True, slots=True)
class EntropyBudget:
    """Bits of unpredictability per query, by field."""

    txid_bits: float
    port_bits: float
    src_ip_bits: float
    dst_ip_bits: float
    case_bits: float

    @property
    def total_bits(self) -> float:
        return (
            self.txid_bits
            + self.port_bits
            + self.src_ip_bits
            + self.dst_ip_bits
            + self.case_bits
        )


def query_rng(seed: int | None, serial: int) -> random.Random:
    """Generator stream owned by one logical query.

    A seeded stream is derived from (seed, serial) so experiments replay exactly;
    without a seed the operating system's CSPRNG is used.
    """
    if seed is None:
        return random.SystemRandom()
    return random.Random(f"{seed}:{serial}")


def count_letters(name: DnsName) -> int:
    """Number of ASCII letters across all labels: l(d)."""
    return sum(1 for label in name.labels for byte in label if byte in _LETTERS)


def apply_0x20(name: DnsName, rng: random.Random) -> tuple[DnsName, tuple[bool, ...]]:
    """Randomly toggle letter case; mask[i] is True when letter i went uppercase."""
    mask: list[bool] = []
    labels: list[bytes] = []
    for label in name.labels:
        cased = bytearray(label)
        for index, byte in enumerate(cased):
            if byte in _LETTERS:
                upper = bool(rng.getrandbits(1))
                mask.append(upper)
                cased[index] = byte & ~0x20 if upper else byte | 0x20
        labels.append(bytes(cased))
    return DnsName(tuple(labels)), tuple(mask)


def case_mask(name: DnsName) -> tuple[bool, ...]:
    """Recover the 0x20 mask carried by a cased name."""
    return tuple(
        byte in _UPPER for label in name.labels for byte in label if byte in _LETTERS
    )


def validate_0x20(sent: DnsName, received: DnsName) -> bool:
    return name_equal_case_exact(sent, received)


def random_letters(rng: random.Random, length: int) -> str:
    return "".join(rng.choice(string.ascii_lowercase) for _ in range(length))


def pick_txid(rng: random.Random, bits: int = 16) -> int:
    return rng.getrandbits(bits) if bits else 0


def pick_source_port(cfg: EntropyConfig, rng: random.Random) -> int:
    """Random port from port_range under SPR, otherwise the fixed port."""
    if not cfg.spr_enabled:
        return cfg.fixed_port
    low, high = cfg.port_range
    if high < low:
        raise EmptyPoolError(f"empty port range {cfg.port_range}")
    return rng.randint(low, high)


def pick_source_ip(cfg: EntropyConfig, rng: random.Random) -> str:
    return _pick(cfg.ip_pool, rng, "source address pool")


def pick_dst_ip(cfg: EntropyConfig, rng: random.Random) -> str:
    return _pick(cfg.dst_ip_candidates, rng, "destination address pool")


def _pick(pool: Sequence[str], rng: random.Random, what: str) -> str:
    if not pool:
        raise EmptyPoolError(f"{what} is empty")
    if len(pool) == 1:
        return pool[0]
    return pool[rng.randrange(len(pool))]


def extend_short_query(
    name: DnsName, cfg: EntropyConfig, rng: random.Random | None = None
) -> DnsName:
    """Prepend a prefix label when the name has fewer than min_letters letters.

    Only meant for delegation-style queries, whose answer (NS plus glue of the
    enclosing zone) does not depend on the leftmost label.

    Raises:
        ExtendedNameTooLongError: If the extended name no longer fits on the wire
    """
    if not cfg.short_query_extension or count_letters(name) >= cfg.min_letters:
        return name
    if cfg.short_query_prefix_mode is PrefixMode.RANDOM:
        prefix = random_letters(rng or random.SystemRandom(), len(cfg.fixed_prefix))
    else:
        prefix = cfg.fixed_prefix
    try:
        return name.prepend(prefix.encode("ascii"))
    except NameTooLongError as e:
        raise ExtendedNameTooLongError(
            f"extending {name} by '{prefix}' exceeds 255 bytes"
        ) from e


def make_validation_tuple(
    name: DnsName,
    qtype: int,
    qclass: int,
    cfg: EntropyConfig,
    rng: random.Random,
    *,
    txid: int | None = None,
    dst_ports: Mapping[str, int] | None = None,
    extend_for: Collection[str] = (),
) -> ValidationTuple:
    """Draw a fresh tuple for one outbound query.

    Draw order is fixed (txid, port, source, destination, case) so a seeded
    stream always yields the same tuple.

    Args:
        name: Query name before extension and casing
        qtype: Query type
        qclass: Query class
        cfg: Entropy settings
        rng: The query's generator stream
        txid: Transaction ID to use when txid randomization is off
        dst_ports: Port per destination address; cfg.dst_port otherwise
        extend_for: Destination addresses the short-query extension applies to
    """
    if cfg.randomize_txid:
        chosen_txid = pick_txid(rng, cfg.txid_bits)
    else:
        chosen_txid = (txid or 0) & 0xFFFF
    src_port = pick_source_port(cfg, rng)
    src_ip = pick_source_ip(cfg, rng)
    dst_ip = pick_dst_ip(cfg, rng)
    if dst_ip in extend_for:
        name = extend_short_query(name, cfg, rng)
    if cfg.encode_0x20:
        name, _ = apply_0x20(name, rng)
    dst_port = (dst_ports or {}).get(dst_ip, cfg.dst_port)
    return ValidationTuple(
        chosen_txid, src_port, src_ip, dst_ip, name, qtype, qclass, dst_port
    )


def entropy_budget(cfg: EntropyConfig, name: DnsName) -> EntropyBudget:
    """Bits an attacker must guess for a query of `name` under `cfg`.

    Pool sizes that are not powers of two give fractional bits.
    """
    low, high = cfg.port_range
    effective = name
    if cfg.short_query_extension:
        try:
            effective = extend_short_query(name, cfg, random.Random(0))
        except ExtendedNameTooLongError:
            effective = name
    return EntropyBudget(
        txid_bits=float(cfg.txid_bits) if cfg.randomize_txid else 0.0,
        port_bits=math.log2(high - low + 1) if cfg.spr_enabled and high >= low else 0.0,
        src_ip_bits=math.log2(len(cfg.ip_pool)) if cfg.ip_pool else 0.0,
        dst_ip_bits=(
            math.log2(len(cfg.dst_ip_candidates)) if cfg.dst_ip_candidates else 0.0
        ),
        case_bits=float(count_letters(effective)) if cfg.encode_0x20 else 0.0,
    )


def spoof_success_probability(bits: float, n_spoofed: int) -> float:
    """Chance that at least one of n independent uniform guesses hits.

    1 - (1 - 2^-bits)^n, computed in log space.

    Raises:
        InvalidProbabilityInputError: If bits or n_spoofed is negative
    """
    if bits < 0 or n_spoofed < 0:
        raise InvalidProbabilityInputError(
            f"bits={bits} and n_spoofed={n_spoofed} must be non-negative"
        )
    if n_spoofed == 0:
        return 0.0
    per_packet = 2.0 ** -bits
    if per_packet >= 1.0:
        return 1.0
    probability = -math.expm1(n_spoofed * math.log1p(-per_packet))
    return min(1.0, max(0.0, probability))


def monte_carlo_spoof_success(
    bits: float, n_spoofed: int, trials: int = 1_000_000, seed: int = 0
) -> float:
    """Empirical estimate of spoof_success_probability by direct sampling.

    Integral bit counts draw an explicit secret and n guesses per trial from a
    space of 2^bits values; fractional counts fall back to per-guess Bernoulli
    draws with success 2^-bits.
    """
    if bits < 0 or n_spoofed < 0 or trials <= 0:
        raise InvalidProbabilityInputError("bits, n_spoofed and trials out of range")
    if n_spoofed == 0:
        return 0.0
    rng = np.random.default_rng(seed)
    chunk = max(1, 4_000_000 // n_spoofed)
    integral = float(bits).is_integer() and bits <= 62
    hits = 0
    for start in range(0, trials, chunk):
        size = min(chunk, trials - start)
        if integral:
            space = 2 ** int(bits)
            secret = rng.integers(0, space, size=size)
            guesses = rng.integers(0, space, size=(size, n_spoofed))
            hit = (guesses == secret[:, None]).any(axis=1)
        else:
            hit = (rng.random((size, n_spoofed)) < 2.0 ** -bits).any(axis=1)
        hits += int(np.count_nonzero(hit))
    return hits / trials
