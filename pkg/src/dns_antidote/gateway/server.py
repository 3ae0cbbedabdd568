"""UDP forwarding gateway running the resolver engine on real sockets.

One listening socket serves clients. Upstream queries leave from per-endpoint
sockets that are opened and closed as the engine's pending table changes, so
a response can only arrive on the port its query was sent from.
"""

from __future__ import annotations

import asyncio
import contextlib
import ipaddress
import logging
import signal
import socket
from collections.abc import Coroutine
from dataclasses import replace
from typing import Any

from ..core.config import GatewayConfig
from ..core.exceptions import BindError, WireError
from ..core.metrics import Counters
from ..core.resolver import Endpoint, Resolution, Resolver
from ..core.sandwich import ResponseMeta
from ..core.wire import (
    DnsMessage,
    DnsName,
    Rcode,
    ResourceRecord,
    decode_message,
    encode_message,
)
from ..utils.log import log_event
from .metrics import start_metrics_server

logger = logging.getLogger(__name__)

WILDCARD_SOURCE = "0.0.0.0"


class ClientProtocol(asyncio.DatagramProtocol):
    def __init__(self, gateway: Gateway) -> None:
        self.gateway = gateway

    def datagram_received(self, data: bytes, addr: tuple[str | Any, int]) -> None:
        self.gateway.handle_client(data, (str(addr[0]), int(addr[1])))

    def error_received(self, exc: Exception) -> None:
        logger.warning("client socket error: %s", exc)


class UpstreamProtocol(asyncio.DatagramProtocol):
    def __init__(self, gateway: Gateway, local: Endpoint) -> None:
        self.gateway = gateway
        self.local = local

    def datagram_received(self, data: bytes, addr: tuple[str | Any, int]) -> None:
        peer = (str(addr[0]), int(addr[1]))
        self.gateway.handle_upstream(self.local, data, peer)

    def error_received(self, exc: Exception) -> None:
        logger.debug("upstream socket %s error: %s", self.local, exc)


def bindable_addresses(pool: tuple[str, ...]) -> tuple[str, ...]:
    """Addresses of `pool` this host can bind a UDP socket to."""
    usable = []
    for address in pool:
        family = (
            socket.AF_INET6
            if ipaddress.ip_address(address).version == 6
            else socket.AF_INET
        )
        try:
            with socket.socket(family, socket.SOCK_DGRAM) as trial_socket:
                trial_socket.bind((address, 0))
        except OSError as e:
            logger.warning("source address %s is not bindable: %s", address, e)
            continue
        usable.append(address)
    return tuple(usable)


class Gateway:
    """Accepts client queries and answers them through `Resolver`.

    The client's transaction ID and question are echoed unchanged; upstream
    tuples are drawn independently by the engine. A failed resolution is
    answered with SERVFAIL.

    Args:
        config: Validated gateway configuration
        counters: Shared counters; a private set is created otherwise
    """

    def __init__(self, config: GatewayConfig, counters: Counters | None = None) -> None:
        config.validate()
        self.config = config
        self.counters = counters or Counters()
        self.resolver = self._make_resolver(config.resolver.entropy.ip_pool)
        self.client_transport: asyncio.DatagramTransport | None = None
        self._sockets: dict[Endpoint, asyncio.DatagramTransport] = {}
        self._opening: dict[Endpoint, asyncio.Task[asyncio.DatagramTransport]] = {}
        self._waiters: dict[int, list[asyncio.Future[None]]] = {}
        self._timers: dict[int, asyncio.TimerHandle] = {}
        self._tasks: set[asyncio.Task[None]] = set()
        self._closing = False

    @property
    def loop(self) -> asyncio.AbstractEventLoop:
        return asyncio.get_running_loop()

    @property
    def listen_address(self) -> Endpoint:
        if self.client_transport is None:
            return self.config.listen
        host, port = self.client_transport.get_extra_info("sockname")[:2]
        return Endpoint(host, port)

    def metrics_snapshot(self) -> dict[str, int]:
        return self.counters.snapshot()

    async def start(self) -> None:
        """Check the source pool, then bind the client socket.

        Raises:
            BindError: If the listen address cannot be bound
        """
        pool = self.config.resolver.entropy.ip_pool
        usable = bindable_addresses(pool)
        if usable != pool:
            fallback = usable or (WILDCARD_SOURCE,)
            logger.warning(
                "source pool degraded from %d to %d address(es): %s",
                len(pool),
                len(fallback),
                ", ".join(fallback),
            )
            self.resolver = self._make_resolver(fallback)

        listen = self.config.listen
        try:
            transport, _ = await self.loop.create_datagram_endpoint(
                lambda: ClientProtocol(self), local_addr=(listen.host, listen.port)
            )
        except OSError as e:
            raise BindError(f"cannot bind {listen.host}:{listen.port}: {e}") from e
        self.client_transport = transport
        upstreams = ", ".join(f"{u.address}:{u.port}" for u in self.config.upstreams)
        logger.info(
            "gateway listening on %s:%d, forwarding to %s",
            *self.listen_address,
            upstreams,
        )

    async def stop(self, grace: float | None = None) -> None:
        """Stop taking queries and let in-flight resolutions finish.

        Waits until the last pending deadline (or `grace` seconds) before
        closing the upstream sockets.
        """
        self._closing = True
        if grace is None:
            now = self.loop.time()
            grace = 0.0
            for resolution in self.resolver.inflight():
                deadline = resolution.next_deadline
                if deadline is not None:
                    grace = max(grace, deadline - now)
        pending = [task for task in self._tasks if not task.done()]
        if pending:
            await asyncio.wait(pending, timeout=max(grace, 0.0) + 0.1)
        for task in list(self._tasks):
            task.cancel()
        if self.client_transport is not None:
            self.client_transport.close()
        for handle in self._timers.values():
            handle.cancel()
        self._timers.clear()
        for transport in self._sockets.values():
            transport.close()
        self._sockets.clear()
        logger.info("gateway stopped")

    # Client side

    def handle_client(self, data: bytes, addr: tuple[str, int]) -> None:
        if self._closing:
            return
        try:
            query = decode_message(data)
        except WireError as e:
            self.counters.increment("malformed")
            log_event(
                logger, "malformed_packet", level=logging.DEBUG, peer=addr[0], error=e
            )
            return
        if query.header.qr or query.question is None:
            self.counters.increment("malformed")
            return
        self._spawn(self._answer(query, addr))

    async def _answer(self, query: DnsMessage, addr: tuple[str, int]) -> None:
        assert query.question is not None
        question = query.question
        resolution = self.resolver.resolve(
            question.name, question.qtype, self.loop.time(), question.qclass
        )
        if not resolution.done:
            waiter: asyncio.Future[None] = self.loop.create_future()
            self._waiters.setdefault(resolution.serial, []).append(waiter)
            await self._pump(resolution)
            await waiter
        reply = self._reply(query, resolution)
        transport = self.client_transport
        if transport is not None and not transport.is_closing():
            transport.sendto(encode_message(reply), addr)

    def _reply(self, query: DnsMessage, resolution: Resolution) -> DnsMessage:
        assert query.question is not None
        answer = resolution.answer
        if answer is None:
            return query.make_response(Rcode.SERVFAIL, aa=False, ra=True)
        owner = query.question.name
        return query.make_response(
            answer.rcode,
            _recased(answer.records, owner),
            answer.authority if answer.rcode != Rcode.NOERROR else (),
            aa=False,
            ra=True,
        )

    # Upstream side

    def handle_upstream(
        self, local: Endpoint, data: bytes, addr: tuple[str, int]
    ) -> None:
        meta = ResponseMeta(
            src_ip=addr[0], src_port=addr[1], dst_ip=local.host, dst_port=local.port
        )
        resolution = self.resolver.dispatch(data, meta, self.loop.time())
        if resolution is not None:
            self._spawn(self._pump(resolution))

    async def _pump(self, resolution: Resolution) -> None:
        """Send queued packets, re-arm the timer and wake waiters when done."""
        for outbound in resolution.take_outbound():
            try:
                transport = await self._socket(outbound.local)
            except OSError as e:
                logger.warning("cannot open %s: %s", outbound.local, e)
                continue
            transport.sendto(outbound.payload, outbound.remote)
        self._arm(resolution)
        if resolution.done:
            for waiter in self._waiters.pop(resolution.serial, []):
                if not waiter.done():
                    waiter.set_result(None)
            self._close_idle_sockets()

    def _arm(self, resolution: Resolution) -> None:
        previous = self._timers.pop(resolution.serial, None)
        if previous is not None:
            previous.cancel()
        deadline = resolution.next_deadline
        if deadline is not None:
            self._timers[resolution.serial] = self.loop.call_at(
                deadline, self._expire, resolution
            )

    def _expire(self, resolution: Resolution) -> None:
        self._timers.pop(resolution.serial, None)
        self.resolver.handle_timeout(resolution, self.loop.time())
        self._spawn(self._pump(resolution))

    async def _socket(self, local: Endpoint) -> asyncio.DatagramTransport:
        transport = self._sockets.get(local)
        if transport is not None:
            return transport
        opening = self._opening.get(local)
        if opening is None:
            opening = self.loop.create_task(self._open(local))
            self._opening[local] = opening
            opening.add_done_callback(lambda _: self._opening.pop(local, None))
        return await opening

    async def _open(self, local: Endpoint) -> asyncio.DatagramTransport:
        transport, _ = await self.loop.create_datagram_endpoint(
            lambda: UpstreamProtocol(self, local), local_addr=(local.host, local.port)
        )
        self._sockets[local] = transport
        return transport

    def _close_idle_sockets(self) -> None:
        listening = self.resolver.listening()
        for local in [e for e in self._sockets if e not in listening]:
            self._sockets.pop(local).close()

    def _spawn(self, coro: Coroutine[Any, Any, None]) -> None:
        task = self.loop.create_task(coro)
        self._tasks.add(task)
        task.add_done_callback(self._task_done)

    def _task_done(self, task: asyncio.Task[None]) -> None:
        self._tasks.discard(task)
        if not task.cancelled() and task.exception() is not None:
            logger.error("gateway task failed", exc_info=task.exception())

    def _make_resolver(self, pool: tuple[str, ...]) -> Resolver:
        settings = self.config.resolver
        settings = replace(settings, entropy=replace(settings.entropy, ip_pool=pool))
        return Resolver(
            settings,
            self.config.upstreams,
            counters=self.counters,
            seed=self.config.seed,
        )


def _recased(
    records: tuple[ResourceRecord, ...], owner: DnsName
) -> tuple[ResourceRecord, ...]:
    """Answer owners that equal the question name take the client's spelling."""
    folded = owner.folded()
    return tuple(
        replace(record, name=owner) if record.name.folded() == folded else record
        for record in records
    )


async def run_gateway(config: GatewayConfig) -> None:
    """Serve until SIGINT/SIGTERM, then shut down gracefully."""
    gateway = Gateway(config)
    await gateway.start()
    runner = None
    if config.metrics_port is not None:
        runner = await start_metrics_server(
            gateway.counters, config.listen.host, config.metrics_port
        )
    stop = asyncio.Event()
    loop = asyncio.get_running_loop()
    for signum in (signal.SIGINT, signal.SIGTERM):
        with contextlib.suppress(NotImplementedError):
            loop.add_signal_handler(signum, stop.set)
    try:
        await stop.wait()
    finally:
        logger.info("shutting down")
        await gateway.stop()
        if runner is not None:
            await runner.cleanup()


def serve(config: GatewayConfig) -> None:
    """Blocking entry point used by the command line."""
    asyncio.run(run_gateway(config))
