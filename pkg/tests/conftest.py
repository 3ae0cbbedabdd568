"""Test configuration and shared fixtures."""

import random
from collections.abc import Callable

import pytest

from dns_antidote.core.cache import DnsCache
from dns_antidote.core.entropy import EntropyConfig
from dns_antidote.core.resolver import (
    OutboundQuery,
    Resolution,
    Resolver,
    ResolverSettings,
    Upstream,
)
from dns_antidote.core.sandwich import ResponseMeta, SandwichConfig
from dns_antidote.core.wire import DnsMessage, decode_message, encode_message
from dns_antidote.sim.authority import AuthoritySim, default_zone
from dns_antidote.sim.network import SimNetwork

AUTHORITY_ADDRESS = "192.0.2.53"
TRUE_ADDRESS = "192.0.2.10"

type Responder = Callable[[DnsMessage], DnsMessage]


def meta_for(outbound: OutboundQuery, tag: int | None = None) -> ResponseMeta:
    """Arrival metadata of a genuine reply to `outbound`."""
    return ResponseMeta(
        src_ip=outbound.remote.host,
        src_port=outbound.remote.port,
        dst_ip=outbound.local.host,
        dst_port=outbound.local.port,
        tag=tag,
    )


@pytest.fixture
def authority() -> AuthoritySim:
    """Authority for google.com with www pointing at TRUE_ADDRESS."""
    network = SimNetwork(random.Random(0))
    return AuthoritySim(
        network,
        [AUTHORITY_ADDRESS],
        "google.com",
        default_zone("google.com", {"www.google.com": TRUE_ADDRESS}),
    )


@pytest.fixture
def make_resolver() -> Callable[..., Resolver]:
    """Build a seeded resolver forwarding to AUTHORITY_ADDRESS."""

    def build(
        *,
        sandwich: SandwichConfig | None = None,
        entropy: EntropyConfig | None = None,
        cache: DnsCache | None = None,
        seed: int = 1,
        **settings: object,
    ) -> Resolver:
        resolver_settings = ResolverSettings(
            entropy=entropy or EntropyConfig(ip_pool=("10.0.0.1",)),
            sandwich=sandwich or SandwichConfig(settle_window=0.0),
            **settings,  # type: ignore[arg-type]
        )
        return Resolver(
            resolver_settings, [Upstream(AUTHORITY_ADDRESS)], cache=cache, seed=seed
        )

    return build


@pytest.fixture
def answer_all(
    authority: AuthoritySim,
) -> Callable[[Resolver, Resolution, float], list[OutboundQuery]]:
    """Answer every queued packet of a resolution from the authority, in order."""

    def run(
        resolver: Resolver,
        resolution: Resolution,
        now: float,
        responder: Responder | None = None,
    ) -> list[OutboundQuery]:
        respond = responder or authority.answer
        sent = resolution.take_outbound()
        for outbound in sent:
            response = respond(decode_message(outbound.payload))
            resolver.dispatch(encode_message(response), meta_for(outbound), now)
        return sent

    return run
