"""One seeded attack trial against one defense configuration."""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field, replace

from ..core.cache import CacheEntry
from ..core.entropy import EntropyConfig, entropy_budget
from ..core.resolver import Resolver, ResolverSettings
from ..core.sandwich import SandwichConfig
from ..core.wire import DnsMessage, DnsName, Rcode, RecordType, ResourceRecord
from .attacker import (
    AttackerConfig,
    AttackStrategy,
    SpoofingAttacker,
    kaminsky_query_name,
)
from .authority import AuthoritySim, default_zone
from .host import ResolverHost
from .nat import NatMode, NatModel
from .network import LinkConfig, SimNetwork

logger = logging.getLogger(__name__)

RESOLVER_ADDRESS = "10.0.0.1"
AUTHENTIC_ADDRESS = "192.0.2.10"


@dataclass(frozen=True, slots=True)
class Defense:
    """A resolver configuration under test."""

    name: str
    entropy: EntropyConfig = field(
        default_factory=lambda: EntropyConfig(ip_pool=(RESOLVER_ADDRESS,))
    )
    sandwich: bool = False
    accept_first: bool = False
    nat: NatMode = NatMode.PASSTHROUGH

    def settings(self) -> ResolverSettings:
        return ResolverSettings(
            entropy=self.entropy,
            sandwich=SandwichConfig(enabled=self.sandwich),
            accept_first=self.accept_first,
        )


@dataclass(frozen=True, slots=True)
class SimConfig:
    """Network and authority behaviour shared by every trial.

    The default link gives a 100 ms authentic round trip; the attacker's
    packets land uniformly inside `attack_window` after the query is sent.
    """

    link: LinkConfig = field(default_factory=LinkConfig)
    attack_window: float = 0.1
    horizon: float = 30.0
    case_preserving: bool = True
    wildcard: bool = False


@dataclass(frozen=True, slots=True)
class AttackOutcome:
    poisoned: bool
    poisoned_key: str | None
    spoofed_packets_sent: int
    wall_events: int
    resolved: bool = False
    answer_correct: bool = False
    sandwiched: bool = False
    restarts: int = 0
    forged_cache_writes: int = 0


def granted_fields(defense: Defense, attacker: AttackerConfig) -> frozenset[str]:
    """Tuple fields the attacker does not have to guess."""
    granted = set(attacker.known_fields) | NatModel(defense.nat).exposed_fields
    if not defense.entropy.randomize_txid:
        granted.add("txid")
    return frozenset(granted)


def attack_name(attacker: AttackerConfig, rng: random.Random) -> DnsName:
    if attacker.strategy is AttackStrategy.KAMINSKY:
        return kaminsky_query_name(attacker.target_zone, rng, attacker.kaminsky_digits)
    return DnsName.from_text(attacker.target_name)


def effective_bits(defense: Defense, attacker: AttackerConfig) -> float:
    """Entropy left for the attacker to guess per forged packet (Normal mode)."""
    cfg = replace(defense.entropy, short_query_extension=False)
    budget = entropy_budget(cfg, attack_name(attacker, random.Random(0)))
    granted = granted_fields(defense, attacker)
    per_field = {
        "txid": budget.txid_bits,
        "port": budget.port_bits,
        "src_ip": budget.src_ip_bits,
        "dst_ip": budget.dst_ip_bits,
        "case": budget.case_bits,
    }
    return sum(bits for name, bits in per_field.items() if name not in granted)


def run_trial(
    defense: Defense,
    attacker: AttackerConfig,
    seed: int,
    sim: SimConfig | None = None,
) -> AttackOutcome:
    """Run one client query (or a Kaminsky query stream) under attack.

    Every random draw comes from streams derived from `seed`, so the same
    arguments always give the same outcome.
    """
    sim = sim or SimConfig()
    network = SimNetwork(random.Random(f"net:{seed}"), sim.link)
    nat = NatModel(defense.nat)
    resolver = Resolver(defense.settings(), seed=seed)
    entropy = resolver.entropy
    host = ResolverHost(network, resolver, nat)

    zone = attacker.target_zone
    authority = AuthoritySim(
        network,
        entropy.dst_ip_candidates,
        zone,
        default_zone(zone, {attacker.target_name: AUTHENTIC_ADDRESS}),
        wildcard=sim.wildcard,
        case_preserving=sim.case_preserving,
        port=entropy.dst_port,
    )
    spoofer = SpoofingAttacker(
        network,
        attacker,
        entropy,
        random.Random(f"attacker:{seed}"),
        resolver_addresses=nat.external_addresses(entropy.ip_pool),
    )

    forged: list[CacheEntry] = []

    def audit(entry: CacheEntry) -> None:
        provenance = entry.provenance
        if provenance is not None and provenance.tag in spoofer.packet_ids:
            forged.append(entry)

    resolver.cache.add_listener(audit)

    granted = granted_fields(defense, attacker)
    names_rng = random.Random(f"names:{seed}")
    rounds = attacker.rounds if attacker.strategy is AttackStrategy.KAMINSKY else 1
    resolved = correct = sandwiched = False
    restarts = 0
    for _ in range(rounds):
        qname = attack_name(attacker, names_rng)
        resolution = host.query(qname, RecordType.A)
        if not resolution.done:
            spoofer.launch(
                qname,
                RecordType.A,
                host.hint_for(resolution, granted),
                start=network.now,
                window=sim.attack_window,
            )
            deadline = network.now + sim.horizon
            network.run(until=deadline, stop=lambda r=resolution: r.done)
        answer = resolution.answer
        resolved = answer is not None
        sandwiched = sandwiched or resolution.sandwiched
        restarts += resolution.restarts
        truth = authority.answer(DnsMessage.make_query(qname, RecordType.A, 0))
        correct = answer is not None and _matches(answer.records, truth)
        if forged:
            break

    poisoned_key = forged[0].key.name.to_text() if forged else None
    if forged:
        logger.debug(
            "poisoned %s via %s (seed %d): %s",
            defense.name,
            attacker.strategy,
            seed,
            poisoned_key,
        )
    return AttackOutcome(
        poisoned=bool(forged),
        poisoned_key=poisoned_key,
        spoofed_packets_sent=spoofer.sent,
        wall_events=network.events_processed,
        resolved=resolved,
        answer_correct=correct,
        sandwiched=sandwiched,
        restarts=restarts,
        forged_cache_writes=len(forged),
    )


def _matches(records: tuple[ResourceRecord, ...], truth: DnsMessage) -> bool:
    if truth.rcode != Rcode.NOERROR:
        return not records
    return {r.rdata for r in records} == {r.rdata for r in truth.answers}
