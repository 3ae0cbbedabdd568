"""Off-path spoofing attacker strategies."""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field
from enum import StrEnum

from ..core.entropy import EntropyConfig, apply_0x20, extend_short_query
from ..core.resolver import Endpoint
from ..core.wire import (
    DnsHeader,
    DnsMessage,
    DnsName,
    Question,
    RecordClass,
    RecordType,
    ResourceRecord,
    encode_message,
)
from .network import SimNetwork

logger = logging.getLogger(__name__)

TUPLE_FIELDS = frozenset({"txid", "port", "src_ip", "dst_ip", "case"})


class AttackStrategy(StrEnum):
    BLIND_FLOOD = "blind-flood"
    BRUTE_FORCE_TXID = "brute-force-txid"
    KAMINSKY = "kaminsky"


@dataclass(frozen=True, slots=True)
class AttackerConfig:
    """What the attacker does and which tuple fields it is handed for free.

    `known_fields` models partial entropy loss (a leaky NAT, a predictable
    counter); the harness fills those fields in from the real query.
    """

    strategy: AttackStrategy = AttackStrategy.BLIND_FLOOD
    packets_per_window: int = 16
    known_fields: frozenset[str] = field(default_factory=frozenset)
    target_zone: str = "google.com"
    target_name: str = "www.google.com"
    poison_address: str = "6.6.6.6"
    kaminsky_digits: int = 8
    rounds: int = 1

    def __post_init__(self) -> None:
        unknown = self.known_fields - TUPLE_FIELDS
        if unknown:
            raise ValueError(f"unknown tuple fields {sorted(unknown)}")


@dataclass(frozen=True, slots=True)
class TupleHint:
    """Fields the attacker knows, in externally visible (post-NAT) form."""

    txid: int | None = None
    port: int | None = None
    src_ip: str | None = None
    dst_ip: str | None = None
    cased_qname: DnsName | None = None


def kaminsky_query_name(
    target_zone: str | DnsName, rng: random.Random, digits: int = 8
) -> DnsName:
    """`<random digits>.<target_zone>`: a fresh nonexistent name per attempt."""
    if isinstance(target_zone, str):
        target_zone = DnsName.from_text(target_zone)
    prefix = "".join(rng.choice("0123456789") for _ in range(digits))
    return target_zone.prepend(prefix.encode("ascii"))


class SpoofingAttacker:
    """Injects forged responses toward the resolver within one response window.

    The attacker knows the defense configuration but never sees packets in
    flight: every field outside `TupleHint` is guessed.
    """

    def __init__(
        self,
        network: SimNetwork,
        config: AttackerConfig,
        defense: EntropyConfig,
        rng: random.Random,
        *,
        resolver_addresses: tuple[str, ...],
    ) -> None:
        self.network = network
        self.config = config
        self.defense = defense
        self.rng = rng
        self.resolver_addresses = resolver_addresses
        self.packet_ids: set[int] = set()
        self.sent = 0

    def launch(
        self,
        qname: DnsName,
        qtype: int,
        hint: TupleHint,
        *,
        start: float,
        window: float,
        extend: bool = False,
    ) -> None:
        """Schedule forged answers arriving uniformly in [start, start + window).

        `extend` says whether the resolver applies the short-query extension to
        this query type; the attacker knows the defense configuration.
        """
        count = self.config.packets_per_window
        txids = self._txid_guesses(count, hint)
        if extend:
            qname = extend_short_query(qname, self.defense, self.rng)
        for txid in txids:
            response = self._forge(qname, qtype, txid, hint)
            dst = Endpoint(
                hint.src_ip or self._choice(self.resolver_addresses),
                hint.port if hint.port is not None else self._guess_port(),
            )
            src = Endpoint(
                hint.dst_ip or self._choice(self.defense.dst_ip_candidates),
                self.defense.dst_port,
            )
            arrival = start + self.rng.random() * window
            packet_id = self.network.send(
                src, dst, encode_message(response), arrival=arrival
            )
            self.packet_ids.add(packet_id)
            self.sent += 1

    def _txid_guesses(self, count: int, hint: TupleHint) -> list[int]:
        if hint.txid is not None:
            return [hint.txid] * count
        space = 1 << self.defense.txid_bits if self.defense.randomize_txid else 1 << 16
        if self.config.strategy is AttackStrategy.BRUTE_FORCE_TXID:
            if count <= space:
                return self.rng.sample(range(space), count)
            full = list(range(space))
            self.rng.shuffle(full)
            return (full * (count // space + 1))[:count]
        return [self.rng.randrange(space) for _ in range(count)]

    def _guess_port(self) -> int:
        if not self.defense.spr_enabled:
            return self.defense.fixed_port
        low, high = self.defense.port_range
        return self.rng.randint(low, high)

    def _choice(self, pool: tuple[str, ...]) -> str:
        return pool[0] if len(pool) == 1 else pool[self.rng.randrange(len(pool))]

    def _forge(
        self, name: DnsName, qtype: int, txid: int, hint: TupleHint
    ) -> DnsMessage:
        if hint.cased_qname is not None:
            cased = hint.cased_qname
        elif self.defense.encode_0x20:
            cased, _ = apply_0x20(name, self.rng)
        else:
            cased = name
        header = DnsHeader(txid=txid, qr=True, aa=True, rd=True)
        question = Question(cased, qtype, RecordClass.IN)
        zone = DnsName.from_text(self.config.target_zone)
        poison_ns = zone.prepend(b"ns1")
        answers: tuple[ResourceRecord, ...] = ()
        if qtype == RecordType.A:
            answers = (ResourceRecord.a(cased, self.config.poison_address, ttl=86400),)
        authority: tuple[ResourceRecord, ...] = ()
        additional: tuple[ResourceRecord, ...] = ()
        if self.config.strategy is AttackStrategy.KAMINSKY:
            authority = (ResourceRecord.ns(zone, poison_ns, ttl=86400),)
            additional = (
                ResourceRecord.a(poison_ns, self.config.poison_address, ttl=86400),
            )
        return DnsMessage(header, question, answers, authority, additional)
