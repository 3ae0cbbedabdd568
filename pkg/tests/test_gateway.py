"""Integration tests for the UDP gateway and the metrics endpoint."""

import asyncio
import contextlib
from collections.abc import AsyncIterator
from dataclasses import replace
from typing import Any

import aiohttp
import dns.asyncquery
import dns.message
import dns.rcode
import pytest
from conftest import TRUE_ADDRESS

from dns_antidote.core.cache import CacheEntry, CacheKey
from dns_antidote.core.config import GatewayConfig
from dns_antidote.core.entropy import EntropyConfig
from dns_antidote.core.exceptions import BindError
from dns_antidote.core.metrics import Counters
from dns_antidote.core.resolver import Endpoint, ResolverSettings, Upstream
from dns_antidote.core.sandwich import SandwichConfig
from dns_antidote.core.wire import (
    DnsMessage,
    DnsName,
    RecordType,
    ResourceRecord,
    decode_message,
    encode_message,
)
from dns_antidote.gateway import Gateway, start_metrics_server
from dns_antidote.sim.authority import AuthoritySim

pytestmark = pytest.mark.integration

FORGED_ADDRESS = "6.6.6.6"


class ScriptedUpstream(asyncio.DatagramProtocol):
    """Answers from an AuthoritySim, one reply every 20 ms, in arrival order.

    With `spoof_first` the first query also gets a forged reply with a wrong
    txid, sent at once from a different socket.
    """

    def __init__(
        self,
        authority: AuthoritySim,
        *,
        spoof_first: bool = False,
        silent: bool = False,
    ) -> None:
        self.authority = authority
        self.spoof_first = spoof_first
        self.silent = silent
        self.queries: list[DnsName] = []
        self.sources: list[tuple[int, str, int]] = []
        self.transport: asyncio.DatagramTransport | None = None
        self.spoofer: asyncio.DatagramTransport | None = None
        self._next_send = 0.0

    def connection_made(self, transport: asyncio.BaseTransport) -> None:
        assert isinstance(transport, asyncio.DatagramTransport)
        self.transport = transport

    def datagram_received(self, data: bytes, addr: tuple[str | Any, int]) -> None:
        query = decode_message(data)
        assert query.question is not None
        self.queries.append(query.question.name)
        self.sources.append((query.header.txid, addr[0], addr[1]))
        if self.silent:
            return
        if self.spoof_first and len(self.queries) == 1 and self.spoofer is not None:
            name = query.question.name
            forged = DnsMessage.make_query(
                name, query.question.qtype, query.header.txid ^ 1
            ).make_response(answers=(ResourceRecord.a(name, FORGED_ADDRESS),))
            self.spoofer.sendto(encode_message(forged), addr)
        self._later(encode_message(self.authority.answer(query)), addr)

    def _later(self, payload: bytes, addr: tuple[str | Any, int]) -> None:
        loop = asyncio.get_running_loop()
        at = max(loop.time(), self._next_send) + 0.02
        self._next_send = at
        assert self.transport is not None
        loop.call_at(at, self.transport.sendto, payload, addr)


@contextlib.asynccontextmanager
async def running_gateway(
    authority: AuthoritySim,
    *,
    spoof_first: bool = False,
    silent: bool = False,
    **settings: Any,
) -> AsyncIterator[tuple[Gateway, ScriptedUpstream]]:
    loop = asyncio.get_running_loop()
    upstream = ScriptedUpstream(authority, spoof_first=spoof_first, silent=silent)
    upstream_transport, _ = await loop.create_datagram_endpoint(
        lambda: upstream, local_addr=("127.0.0.1", 0)
    )
    spoofer, _ = await loop.create_datagram_endpoint(
        asyncio.DatagramProtocol, local_addr=("127.0.0.1", 0)
    )
    upstream.spoofer = spoofer
    port = upstream_transport.get_extra_info("sockname")[1]
    config = GatewayConfig(
        listen=Endpoint("127.0.0.1", 0),
        upstreams=(Upstream("127.0.0.1", port),),
        resolver=ResolverSettings(
            entropy=EntropyConfig(ip_pool=("127.0.0.1",)),
            sandwich=SandwichConfig(settle_window=0.05),
            **settings,
        ),
        seed=5,
    )
    gateway = Gateway(config)
    await gateway.start()
    try:
        yield gateway, upstream
    finally:
        await gateway.stop(grace=0.0)
        spoofer.close()
        upstream_transport.close()


async def ask(
    gateway: Gateway, name: str, rdtype: str = "A", query_id: int | None = None
) -> dns.message.Message:
    host, port = gateway.listen_address
    query = dns.message.make_query(name, rdtype)
    if query_id is not None:
        query.id = query_id
    return await dns.asyncquery.udp(query, host, port=port, timeout=3.0)


def addresses(response: dns.message.Message) -> list[str]:
    return [rdata.address for rrset in response.answer for rdata in rrset]


class TestGateway:
    """Test cases for Gateway over real sockets."""

    def test_answer_then_cache(self, authority: AuthoritySim) -> None:
        """Test a forwarded answer and its cached repeat."""

        async def scenario() -> None:
            async with running_gateway(authority) as (gateway, upstream):
                first = await ask(gateway, "www.google.com")
                second = await ask(gateway, "WWW.google.com")

                assert first.rcode() == dns.rcode.NOERROR
                assert addresses(first) == [TRUE_ADDRESS]
                assert addresses(second) == [TRUE_ADDRESS]
                assert second.question[0].name.to_text() == "WWW.google.com."
                assert len(upstream.queries) == 1
                sent = upstream.queries[0].to_text()
                assert sent.lower() == "www.google.com"
                assert sent != sent.lower()
                assert gateway.counters["queries"] == 2
                assert gateway.counters["cache_hits"] == 1
                snapshot = gateway.metrics_snapshot()
                assert snapshot["queries"] == 2
                assert snapshot["servfail"] == 0

        asyncio.run(scenario())

    def test_nxdomain(self, authority: AuthoritySim) -> None:
        """Test a negative answer is relayed."""

        async def scenario() -> None:
            async with running_gateway(authority) as (gateway, _):
                response = await ask(gateway, "nope.google.com")
                assert response.rcode() == dns.rcode.NXDOMAIN

        asyncio.run(scenario())

    def test_spoof_triggers_sandwich(self, authority: AuthoritySim) -> None:
        """Test a forged reply escalates and the true answer still wins."""

        async def scenario() -> None:
            async with running_gateway(authority, spoof_first=True) as (
                gateway,
                upstream,
            ):
                writes: list[CacheEntry] = []
                gateway.resolver.cache.add_listener(writes.append)
                response = await ask(gateway, "www.google.com")

                assert addresses(response) == [TRUE_ADDRESS]
                assert gateway.counters["sandwich_activations"] == 1
                assert len(upstream.queries) == 4
                pre, mid, post = (n.folded().to_text() for n in upstream.queries[1:])
                assert mid == "www.google.com"
                assert pre.endswith(".google.com") and pre != post

                cached = [r for entry in writes for r in entry.records]
                assert FORGED_ADDRESS not in {
                    r.address for r in cached if r.rtype == RecordType.A
                }
                key = CacheKey.of(DnsName.from_text("www.google.com"), RecordType.A)
                entry = gateway.resolver.cache.get(key, gateway.loop.time())
                assert entry is not None
                assert [r.address for r in entry.records] == [TRUE_ADDRESS]

        asyncio.run(scenario())

    def test_upstream_tuples_are_fresh(self, authority: AuthoritySim) -> None:
        """Test each upstream query draws its own txid and source port."""

        async def scenario() -> None:
            async with running_gateway(authority) as (gateway, upstream):
                client_id = 0x1234
                for index in range(6):
                    await ask(gateway, f"host{index}.google.com", query_id=client_id)

                txids = [txid for txid, _, _ in upstream.sources]
                ports = [port for _, _, port in upstream.sources]
                assert len(upstream.sources) == 6
                assert len(set(txids)) == 6
                assert len(set(ports)) == 6
                assert txids != [client_id] * 6
                low, high = EntropyConfig().port_range
                assert all(low <= port <= high for port in ports)
                assert {host for _, host, _ in upstream.sources} == {"127.0.0.1"}

        asyncio.run(scenario())

    def test_silent_upstream_servfail(self, authority: AuthoritySim) -> None:
        """Test exhausted attempts are answered with SERVFAIL."""

        async def scenario() -> None:
            async with running_gateway(
                authority, silent=True, query_timeout=0.2, query_attempts=2
            ) as (gateway, upstream):
                response = await ask(gateway, "www.google.com")
                assert response.rcode() == dns.rcode.SERVFAIL
                assert len(upstream.queries) == 2
                assert gateway.counters["servfail"] == 1

        asyncio.run(scenario())

    def test_malformed_client_packet(self, authority: AuthoritySim) -> None:
        """Test garbage is counted and dropped without a reply."""

        async def scenario() -> None:
            loop = asyncio.get_running_loop()
            async with running_gateway(authority) as (gateway, _):
                client, _ = await loop.create_datagram_endpoint(
                    asyncio.DatagramProtocol,
                    remote_addr=tuple(gateway.listen_address),
                )
                client.sendto(b"\x01\x02\x03")
                await ask(gateway, "www.google.com")
                client.close()
                assert gateway.counters["malformed"] == 1

        asyncio.run(scenario())

    def test_listen_address_in_use(self, authority: AuthoritySim) -> None:
        """Test a second gateway on a taken port."""

        async def scenario() -> None:
            async with running_gateway(authority) as (gateway, _):
                clash = Gateway(replace(gateway.config, listen=gateway.listen_address))
                with pytest.raises(BindError, match="cannot bind"):
                    await clash.start()

        asyncio.run(scenario())


class TestMetricsServer:
    """Test cases for the /metrics endpoint."""

    def test_counter_dump(self) -> None:
        """Test GET /metrics returns every counter as text."""
        counters = Counters()
        counters.increment("queries", 3)

        async def scenario() -> tuple[int, str]:
            runner = await start_metrics_server(counters, "127.0.0.1", 0)
            try:
                host, port = runner.addresses[0][:2]
                async with aiohttp.ClientSession() as session:
                    url = f"http://{host}:{port}/metrics"
                    async with session.get(url) as response:
                        return response.status, await response.text()
            finally:
                await runner.cleanup()

        status, text = asyncio.run(scenario())
        assert status == 200
        assert "queries 3\n" in text
        assert "sandwich_activations 0\n" in text
