"""Resolver engine attached to the simulated network."""

from __future__ import annotations

import logging
from collections.abc import Collection

from ..core.resolver import Endpoint, Resolution, Resolver
from ..core.sandwich import ResponseMeta
from ..core.wire import DnsName, RecordType
from .attacker import TupleHint
from .nat import NatModel
from .network import Datagram, SimNetwork

logger = logging.getLogger(__name__)


class ResolverHost:
    """Drives a `Resolver` with simulated packets and timers.

    Outbound queries pass through the NAT model; inbound datagrams are mapped
    back and handed to the engine with their packet id as the provenance tag.
    """

    def __init__(self, network: SimNetwork, resolver: Resolver, nat: NatModel) -> None:
        self.network = network
        self.resolver = resolver
        self.nat = nat
        self.dropped_at_nat = 0
        self._timers: dict[int, set[float]] = {}
        pool = resolver.entropy.ip_pool
        for address in {*pool, *nat.external_addresses(pool)}:
            network.attach(address, self)

    def query(self, qname: DnsName, qtype: int = RecordType.A) -> Resolution:
        resolution = self.resolver.resolve(qname, qtype, self.network.now)
        self._flush(resolution)
        return resolution

    def receive(self, datagram: Datagram, now: float) -> None:
        local = self.nat.inbound(datagram.dst)
        if local is None:
            self.dropped_at_nat += 1
            return
        meta = ResponseMeta(
            src_ip=datagram.src.host,
            src_port=datagram.src.port,
            dst_ip=local.host,
            dst_port=local.port,
            tag=datagram.packet_id,
        )
        resolution = self.resolver.dispatch(datagram.payload, meta, now)
        if resolution is not None:
            self._flush(resolution)

    def hint_for(self, resolution: Resolution, known: Collection[str]) -> TupleHint:
        """The current query's fields named in `known`, as seen outside the NAT."""
        tuples = resolution.active_tuples()
        if not tuples or not known:
            return TupleHint()
        tuple_ = tuples[0]
        external = self.nat.outbound(Endpoint(tuple_.src_ip, tuple_.src_port))
        return TupleHint(
            txid=tuple_.txid if "txid" in known else None,
            port=external.port if "port" in known else None,
            src_ip=external.host if "src_ip" in known else None,
            dst_ip=tuple_.dst_ip if "dst_ip" in known else None,
            cased_qname=tuple_.cased_qname if "case" in known else None,
        )

    def _flush(self, resolution: Resolution) -> None:
        for outbound in resolution.take_outbound():
            source = self.nat.outbound(outbound.local)
            self.network.send(source, outbound.remote, outbound.payload)
        deadline = resolution.next_deadline
        if deadline is None:
            self._timers.pop(resolution.serial, None)
            return
        armed = self._timers.setdefault(resolution.serial, set())
        if deadline not in armed:
            armed.add(deadline)
            self.network.schedule(deadline, lambda: self._expire(resolution))

    def _expire(self, resolution: Resolution) -> None:
        self.resolver.handle_timeout(resolution, self.network.now)
        self._flush(resolution)
