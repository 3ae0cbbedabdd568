"""Simulated authoritative server for one zone."""

from __future__ import annotations

import logging
from collections.abc import Iterable, Sequence

from ..core.cache import CacheKey
from ..core.exceptions import WireError
from ..core.resolver import Endpoint
from ..core.wire import (
    DnsMessage,
    DnsName,
    Question,
    Rcode,
    RecordType,
    ResourceRecord,
    decode_message,
    encode_message,
)
from .network import Datagram, SimNetwork

logger = logging.getLogger(__name__)

WILDCARD_ADDRESS = "192.0.2.250"


def default_zone(
    origin: str, hosts: dict[str, str] | None = None, ttl: int = 3600
) -> list[ResourceRecord]:
    """SOA, NS ns1.<origin> with glue, and A records for `hosts` (name -> address)."""
    apex = DnsName.from_text(origin)
    ns = apex.prepend(b"ns1")
    records = [
        ResourceRecord.soa(apex, ns, apex.prepend(b"hostmaster"), minimum=300, ttl=ttl),
        ResourceRecord.ns(apex, ns, ttl=ttl),
        ResourceRecord.a(ns, "192.0.2.1", ttl=ttl),
    ]
    for host, address in (hosts or {}).items():
        records.append(ResourceRecord.a(DnsName.from_text(host), address, ttl=ttl))
    return records


class AuthoritySim:
    """Authority answering from static zone data.

    When `case_preserving` the echoed question is byte-identical to the
    received one; otherwise it is lowercased, as a non-compliant server would.
    Names below an NS record other than the apex get a referral; `wildcard`
    synthesizes an address for every nonexistent name.
    """

    def __init__(
        self,
        network: SimNetwork,
        addresses: Sequence[str],
        origin: str,
        records: Iterable[ResourceRecord],
        *,
        wildcard: bool = False,
        case_preserving: bool = True,
        port: int = 53,
    ) -> None:
        self.network = network
        self.origin = DnsName.from_text(origin)
        self.wildcard = wildcard
        self.case_preserving = case_preserving
        self.port = port
        self.queries_received = 0
        self._rrsets: dict[CacheKey, list[ResourceRecord]] = {}
        self._names: set[DnsName] = set()
        for record in records:
            key = CacheKey.of(record.name, record.rtype, record.rclass)
            self._rrsets.setdefault(key, []).append(record)
            self._names.add(record.name.folded())
        for address in addresses:
            network.attach(address, self)

    def receive(self, datagram: Datagram, now: float) -> None:
        try:
            query = decode_message(datagram.payload)
        except WireError:
            return
        if query.header.qr or query.question is None:
            return
        self.queries_received += 1
        response = self.answer(query)
        self.network.send(
            Endpoint(datagram.dst.host, self.port),
            datagram.src,
            encode_message(response),
        )

    def answer(self, query: DnsMessage) -> DnsMessage:
        assert query.question is not None
        question = query.question
        if not self.case_preserving:
            query = DnsMessage(
                query.header,
                Question(question.name.folded(), question.qtype, question.qclass),
            )
        name = question.name.folded()

        if not name.is_subdomain_of(self.origin):
            return query.make_response(Rcode.REFUSED, aa=False)

        cut = self._delegation_for(name)
        if cut is not None:
            ns_records = tuple(self._rrsets[CacheKey.of(cut, RecordType.NS)])
            glue = tuple(
                record
                for ns in ns_records
                for record in self._rrsets.get(CacheKey.of(ns.target, RecordType.A), [])
            )
            return query.make_response(authority=ns_records, additional=glue, aa=False)

        exact = self._rrsets.get(CacheKey.of(name, question.qtype, question.qclass))
        if exact:
            return query.make_response(answers=tuple(_renamed(exact, question.name)))
        if name in self._names:
            return query.make_response(authority=self._soa())
        if self.wildcard and question.qtype == RecordType.A:
            synthesized = ResourceRecord.a(question.name, WILDCARD_ADDRESS)
            return query.make_response(answers=(synthesized,))
        return query.make_response(Rcode.NXDOMAIN, authority=self._soa())

    def _delegation_for(self, name: DnsName) -> DnsName | None:
        labels = name.labels
        for start in range(len(labels) - len(self.origin.labels)):
            candidate = DnsName(labels[start:])
            if CacheKey.of(candidate, RecordType.NS) in self._rrsets:
                return candidate
        return None

    def _soa(self) -> tuple[ResourceRecord, ...]:
        return tuple(self._rrsets.get(CacheKey.of(self.origin, RecordType.SOA), []))


def _renamed(
    records: Iterable[ResourceRecord], owner: DnsName
) -> list[ResourceRecord]:
    """Answer records carry the owner name with the query's case."""
    return [
        ResourceRecord(owner, r.rtype, r.rclass, r.ttl, r.rdata) for r in records
    ]
