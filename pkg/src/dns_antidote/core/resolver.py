"""Forwarding resolver engine.

The engine is transport-free: it turns client questions into outbound query
packets, consumes upstream datagrams and timer expiries, and decides what is
accepted and cached. The simulator and the UDP gateway both drive this same
code, so every answer that reaches the cache took the same validation path.
"""

from __future__ import annotations

import itertools
import logging
import random
import threading
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field, replace
from enum import StrEnum
from typing import NamedTuple

from ..utils.log import log_event
from .cache import AcceptPath, CacheConfig, CacheKey, DnsCache, Provenance
from .entropy import EntropyConfig, ValidationTuple, make_validation_tuple, query_rng
from .exceptions import (
    ConfigurationError,
    ResolverError,
    RetriesExhaustedError,
    UpstreamTimeoutError,
    WireError,
)
from .metrics import Counters
from .sandwich import (
    Accept,
    Classification,
    Continue,
    PendingQuery,
    ResponseMeta,
    Restart,
    SandwichConfig,
    SandwichSession,
    SandwichVerdict,
    TupleField,
    build_sandwich,
    classify_response,
    detect_forgery,
    in_bailiwick,
    on_sandwich_response,
    on_sandwich_timeout,
    zone_of,
)
from .wire import (
    DnsMessage,
    DnsName,
    Question,
    Rcode,
    RecordClass,
    RecordType,
    ResourceRecord,
    decode_message,
    encode_message,
)

logger = logging.getLogger(__name__)


class Endpoint(NamedTuple):
    host: str
    port: int


@dataclass(frozen=True, slots=True)
class Upstream:
    """A server queries are forwarded to.

    `extend_short_queries` marks servers that answer delegation queries (parent
    zone authorities), for which the short-query extension is safe.
    """

    address: str
    port: int = 53
    extend_short_queries: bool = False


@dataclass(frozen=True, slots=True)
class ResolverSettings:
    entropy: EntropyConfig = field(default_factory=EntropyConfig)
    sandwich: SandwichConfig = field(default_factory=SandwichConfig)
    cache: CacheConfig = field(default_factory=CacheConfig)
    query_timeout: float = 2.0
    query_attempts: int = 3
    accept_first: bool = False
    extension_qtypes: tuple[int, ...] = (RecordType.NS,)

    def validate(self) -> None:
        """Raises ConfigurationError when any part is unusable."""
        self.entropy.validate()
        sandwich = self.sandwich
        if sandwich.detection_threshold < 1:
            raise ConfigurationError("detection_threshold must be at least 1")
        if not 1 <= sandwich.prefix_len <= 63:
            raise ConfigurationError("prefix_len must be within [1, 63]")
        if sandwich.retries < 0 or sandwich.deadline <= 0 or sandwich.settle_window < 0:
            raise ConfigurationError("sandwich retries/deadline/settle_window invalid")
        if self.cache.max_entries < 1 or self.cache.max_ttl < 0:
            raise ConfigurationError("cache max_entries/max_ttl invalid")
        if self.query_timeout <= 0 or self.query_attempts < 1:
            raise ConfigurationError("query_timeout/query_attempts invalid")


@dataclass(frozen=True, slots=True)
class OutboundQuery:
    local: Endpoint
    remote: Endpoint
    payload: bytes
    role: str
    session: str | None = None


@dataclass(frozen=True, slots=True)
class Answer:
    rcode: int
    records: tuple[ResourceRecord, ...] = ()
    authority: tuple[ResourceRecord, ...] = ()
    from_cache: bool = False


class ResolutionState(StrEnum):
    PENDING = "pending"
    ANSWERED = "answered"
    FAILED = "failed"


class _Retired(NamedTuple):
    txid: int
    port: int
    ip: str
    name: DnsName


class Resolution:
    """One logical resolution task, from client question to answer or failure."""

    def __init__(
        self, serial: int, question: Question, rng: random.Random, now: float
    ) -> None:
        self.serial = serial
        self.question = question
        self.key = CacheKey.of(question.name, question.qtype, question.qclass)
        self.rng = rng
        self.started_at = now
        self.state = ResolutionState.PENDING
        self.answer: Answer | None = None
        self.error: ResolverError | None = None
        self.pending: PendingQuery | None = None
        self.session: SandwichSession | None = None
        self.held: tuple[DnsMessage, ResponseMeta] | None = None
        self.hold_until: float | None = None
        self.restarts = 0
        self.sessions = 0
        self.provenance: Provenance | None = None
        self._retired: set[_Retired] = set()
        self._outbox: list[OutboundQuery] = []

    @property
    def done(self) -> bool:
        return self.state is not ResolutionState.PENDING

    @property
    def sandwiched(self) -> bool:
        return self.sessions > 0

    @property
    def next_deadline(self) -> float | None:
        if self.done:
            return None
        deadlines = []
        if self.hold_until is not None:
            deadlines.append(self.hold_until)
        if self.session is not None:
            deadlines.append(self.session.deadline)
        elif self.pending is not None:
            deadlines.append(self.pending.deadline)
        return min(deadlines) if deadlines else None

    def take_outbound(self) -> list[OutboundQuery]:
        """Packets to send, in order; the list is handed over once."""
        outbox, self._outbox = self._outbox, []
        return outbox

    def active_tuples(self) -> list[ValidationTuple]:
        if self.done:
            return []
        if self.session is not None:
            return [sub.tuple for sub in self.session.subqueries]
        return [self.pending.tuple] if self.pending is not None else []

    def claims(self, response: DnsMessage) -> bool:
        """Whether a response names one of this resolution's questions."""
        if response.question is None:
            return False
        folded = response.question.name.folded()
        names = [t.cased_qname.folded() for t in self.active_tuples()]
        names.extend(retired.name for retired in self._retired)
        return folded in names

    def claims_txid(self, txid: int) -> bool:
        return any(t.txid == txid for t in self.active_tuples())

    def retire(self, tuple_: ValidationTuple) -> None:
        self._retired.add(
            _Retired(
                tuple_.txid,
                tuple_.src_port,
                tuple_.src_ip,
                tuple_.cased_qname.folded(),
            )
        )

    def is_retired(self, response: DnsMessage, meta: ResponseMeta) -> bool:
        if response.question is None:
            return False
        retired = _Retired(
            response.header.txid,
            meta.dst_port,
            meta.dst_ip,
            response.question.name.folded(),
        )
        return retired in self._retired


class Resolver:
    """Forwarding resolver: cache, entropy-hardened dispatch, sandwich escalation.

    Args:
        settings: Resolver settings
        upstreams: Servers to forward to; defaults to the entropy config's
            destination candidates on its dst_port
        cache: Shared cache; a private one is created otherwise
        counters: Shared counters; a private set is created otherwise
        seed: Seed for per-query generator streams; OS randomness when None
    """

    def __init__(
        self,
        settings: ResolverSettings | None = None,
        upstreams: Sequence[Upstream] | None = None,
        *,
        cache: DnsCache | None = None,
        counters: Counters | None = None,
        seed: int | None = None,
    ) -> None:
        settings = settings or ResolverSettings()
        entropy = settings.entropy
        if upstreams is None:
            upstreams = [
                Upstream(address, entropy.dst_port)
                for address in entropy.dst_ip_candidates
            ]
        if not upstreams:
            raise ConfigurationError("at least one upstream is required")
        addresses = tuple(u.address for u in upstreams)
        entropy = replace(entropy, dst_ip_candidates=addresses)
        settings = replace(settings, entropy=entropy)
        settings.validate()

        self.settings = settings
        self.upstreams = {u.address: u for u in upstreams}
        self.cache = cache or DnsCache(settings.cache)
        self.counters = counters or Counters()
        self.seed = seed if seed is not None else entropy.rng_seed
        self._serials = itertools.count(1)
        self._txids = itertools.count(1)
        self._inflight: dict[CacheKey, Resolution] = {}
        self._listeners: dict[Endpoint, dict[int, Resolution]] = {}
        self._lock = threading.Lock()

    @property
    def entropy(self) -> EntropyConfig:
        return self.settings.entropy

    def listening(self) -> set[Endpoint]:
        """Local endpoints with at least one outstanding query."""
        with self._lock:
            return {endpoint for endpoint, owners in self._listeners.items() if owners}

    def inflight(self) -> list[Resolution]:
        return list(self._inflight.values())

    def resolve(
        self,
        qname: DnsName,
        qtype: int,
        now: float,
        qclass: int = RecordClass.IN,
    ) -> Resolution:
        """Start (or join) the resolution of a question.

        A fresh cache entry answers immediately with no packets to send; a
        question already in flight returns the existing resolution.
        """
        self.counters.increment("queries")
        question = Question(qname, qtype, qclass)
        key = CacheKey.of(qname, qtype, qclass)

        entry = self.cache.get(key, now)
        if entry is not None:
            self.counters.increment("cache_hits")
            serial = next(self._serials)
            resolution = Resolution(serial, question, random.Random(0), now)
            resolution.state = ResolutionState.ANSWERED
            resolution.answer = Answer(entry.rcode, entry.records, from_cache=True)
            resolution.provenance = entry.provenance
            return resolution

        with self._lock:
            joined = self._inflight.get(key)
            if joined is not None:
                return joined
            serial = next(self._serials)
            rng = query_rng(self.seed, serial)
            resolution = Resolution(serial, question, rng, now)
            self._inflight[key] = resolution
        self._send_normal(resolution, now)
        return resolution

    def dispatch(
        self, payload: bytes, meta: ResponseMeta, now: float
    ) -> Resolution | None:
        """Feed one upstream datagram; returns the resolution it was routed to."""
        try:
            response = decode_message(payload)
        except WireError as e:
            self.counters.increment("malformed")
            log_event(logger, "malformed_packet", level=logging.DEBUG, error=e)
            return None

        with self._lock:
            local = Endpoint(meta.dst_ip, meta.dst_port)
            owners = list(self._listeners.get(local, {}).values())
        target = next((r for r in owners if r.claims(response)), None)
        if target is None:
            txid = response.header.txid
            target = next((r for r in owners if r.claims_txid(txid)), None)
        if target is None:
            self.counters.increment("unsolicited")
            return None

        self._handle(target, response, meta, now)
        return target

    def handle_timeout(self, resolution: Resolution, now: float) -> None:
        """Process whatever deadline of `resolution` has passed by `now`."""
        if resolution.done:
            return
        if resolution.hold_until is not None and now >= resolution.hold_until:
            held = resolution.held
            resolution.held = None
            resolution.hold_until = None
            if held is not None:
                self._accept(resolution, held[0], held[1], now, AcceptPath.NORMAL)
                return

        if resolution.session is not None:
            verdict = on_sandwich_timeout(resolution.session, now)
            if isinstance(verdict, Restart):
                self._restart(resolution, now, verdict)
            return

        pending = resolution.pending
        if pending is None or now < pending.deadline or resolution.held is not None:
            return
        self._unregister(resolution, pending.tuple)
        resolution.retire(pending.tuple)
        if pending.attempt >= self.settings.query_attempts:
            self._fail(
                resolution,
                UpstreamTimeoutError(
                    f"no answer for {resolution.question.name} after "
                    f"{pending.attempt} attempts"
                ),
            )
            return
        self._send_normal(
            resolution,
            now,
            attempt=pending.attempt + 1,
            mismatches=pending.mismatch_count,
        )

    # Normal mode

    def _send_normal(
        self,
        resolution: Resolution,
        now: float,
        *,
        attempt: int = 1,
        mismatches: int = 0,
    ) -> None:
        question = resolution.question
        extend_for: tuple[str, ...] = ()
        if (
            self.entropy.short_query_extension
            and question.qtype in self.settings.extension_qtypes
        ):
            extend_for = tuple(
                a for a, u in self.upstreams.items() if u.extend_short_queries
            )
        tuple_ = make_validation_tuple(
            question.name,
            question.qtype,
            question.qclass,
            self.entropy,
            resolution.rng,
            txid=next(self._txids),
            dst_ports={a: u.port for a, u in self.upstreams.items()},
            extend_for=extend_for,
        )
        resolution.pending = PendingQuery(
            key=resolution.key,
            tuple=tuple_,
            deadline=now + self.settings.query_timeout,
            mismatch_count=mismatches,
            attempt=attempt,
        )
        self._emit(resolution, tuple_, "normal")

    def _handle(
        self,
        resolution: Resolution,
        response: DnsMessage,
        meta: ResponseMeta,
        now: float,
    ) -> None:
        if resolution.done:
            return
        if resolution.is_retired(response, meta):
            logger.debug("discarding retired-query response for #%d", resolution.serial)
            return
        if resolution.session is not None:
            self._handle_sandwich(resolution, response, meta, now)
        else:
            self._handle_normal(resolution, response, meta, now)

    def _handle_normal(
        self,
        resolution: Resolution,
        response: DnsMessage,
        meta: ResponseMeta,
        now: float,
    ) -> None:
        pending = resolution.pending
        if pending is None:
            return
        if self.settings.accept_first:
            self._accept(resolution, response, meta, now, AcceptPath.ACCEPT_FIRST)
            return

        sandwich = self.settings.sandwich
        verdict = classify_response(pending.tuple, response, meta)
        if not verdict.matched:
            self.counters.increment("mismatched_responses")
            logger.debug(
                "mismatch for #%d: %s", resolution.serial, verdict.describe()
            )
            if sandwich.enabled and detect_forgery(
                pending, verdict, sandwich.detection_threshold
            ):
                self._escalate(resolution, now, verdict)
            return

        if not sandwich.enabled:
            self._accept(resolution, response, meta, now, AcceptPath.NORMAL)
            return
        if resolution.held is not None:
            # Two tuple-valid answers to one query: one of them is forged.
            duplicate = Classification(frozenset({TupleField.DUPLICATE}))
            self.counters.increment("mismatched_responses")
            detect_forgery(pending, duplicate, sandwich.detection_threshold)
            self._escalate(resolution, now, duplicate)
            return
        if sandwich.settle_window > 0:
            resolution.held = (response, meta)
            resolution.hold_until = now + sandwich.settle_window
            return
        self._accept(resolution, response, meta, now, AcceptPath.NORMAL)

    # Sandwich mode

    def _escalate(
        self, resolution: Resolution, now: float, cause: Classification
    ) -> None:
        pending = resolution.pending
        assert pending is not None
        log_event(
            logger,
            "forgery_detected",
            qname=resolution.question.name,
            serial=resolution.serial,
            mismatches=pending.mismatch_count,
            cause=cause.describe(),
        )
        self.counters.increment("sandwich_activations")
        pending.escalate()
        resolution.held = None
        resolution.hold_until = None
        self._unregister(resolution, pending.tuple)
        resolution.retire(pending.tuple)
        self._start_session(resolution, now, self.settings.sandwich.retries)

    def _start_session(
        self, resolution: Resolution, now: float, retries_left: int
    ) -> None:
        session = build_sandwich(
            resolution.question,
            self.entropy,
            self.settings.sandwich,
            resolution.rng,
            now=now,
            retries_left=retries_left,
            dst_ports={a: u.port for a, u in self.upstreams.items()},
        )
        resolution.session = session
        resolution.sessions += 1
        for sub in session.subqueries:
            self._emit(resolution, sub.tuple, sub.role, session.session_id)

    def _handle_sandwich(
        self,
        resolution: Resolution,
        response: DnsMessage,
        meta: ResponseMeta,
        now: float,
    ) -> None:
        session = resolution.session
        assert session is not None
        verdict: SandwichVerdict = on_sandwich_response(session, response, meta)
        if isinstance(verdict, Continue):
            return
        if isinstance(verdict, Accept):
            # Provenance follows the packet that carried the answer.
            mid_meta = replace(meta, tag=session.mid_tag)
            self._accept(
                resolution,
                verdict.answer,
                mid_meta,
                now,
                AcceptPath.SANDWICH,
                session.session_id,
            )
            return
        if verdict.mismatch:
            self.counters.increment("mismatched_responses")
        self._restart(resolution, now, verdict)

    def _restart(self, resolution: Resolution, now: float, verdict: Restart) -> None:
        session = resolution.session
        assert session is not None
        self.counters.increment("sandwich_restarts")
        resolution.restarts += 1
        for sub in session.subqueries:
            self._unregister(resolution, sub.tuple)
            resolution.retire(sub.tuple)
        log_event(
            logger,
            "sandwich_restart",
            session.session_id,
            reason=verdict.reason.replace(" ", "_"),
            retries_left=session.retries_left,
        )
        if session.retries_left <= 0:
            log_event(
                logger, "sandwich_failed", session.session_id, level=logging.WARNING,
                qname=resolution.question.name,
            )
            self._fail(
                resolution,
                RetriesExhaustedError(
                    f"sandwich for {resolution.question.name} failed after "
                    f"{resolution.sessions} sessions"
                ),
            )
            return
        self._start_session(resolution, now, session.retries_left - 1)

    # Completion

    def _accept(
        self,
        resolution: Resolution,
        response: DnsMessage,
        meta: ResponseMeta,
        now: float,
        path: AcceptPath,
        session: str | None = None,
    ) -> None:
        provenance = Provenance(path, resolution.serial, meta.tag, session)
        if path is AcceptPath.SANDWICH or resolution.pending is None:
            sent = resolution.question.name
        else:
            sent = resolution.pending.tuple.cased_qname
        answer = self._cache_response(resolution, response, sent, now, provenance)
        resolution.provenance = provenance
        resolution.answer = answer
        resolution.state = ResolutionState.ANSWERED
        self.counters.increment("accepted")
        self._finish(resolution)

    def _fail(self, resolution: Resolution, error: ResolverError) -> None:
        resolution.error = error
        resolution.state = ResolutionState.FAILED
        self.counters.increment("servfail")
        logger.info("resolution #%d failed: %s", resolution.serial, error)
        self._finish(resolution)

    def _finish(self, resolution: Resolution) -> None:
        with self._lock:
            stale = [e for e, o in self._listeners.items() if resolution.serial in o]
            for local in stale:
                owners = self._listeners[local]
                del owners[resolution.serial]
                if not owners:
                    del self._listeners[local]
            if self._inflight.get(resolution.key) is resolution:
                del self._inflight[resolution.key]

    def _cache_response(
        self,
        resolution: Resolution,
        response: DnsMessage,
        sent: DnsName,
        now: float,
        provenance: Provenance,
    ) -> Answer:
        question = resolution.question
        zone = zone_of(question.name, self.settings.sandwich.zone_cuts)
        extended = len(sent.labels) != len(question.name.labels)

        if extended:
            # Referral for the extended name: NS and glue of the original apply.
            records = tuple(
                r
                for r in (*response.answers, *response.authority)
                if r.rtype == question.qtype and r.name.folded() == resolution.key.name
            )
            rcode = Rcode.NOERROR if records else response.rcode
        else:
            records = response.answers
            rcode = response.rcode

        if rcode == Rcode.NXDOMAIN:
            soas = [r for r in response.authority if r.rtype == RecordType.SOA]
            if soas:
                ttl = min(
                    soas[0].soa_minimum,
                    soas[0].ttl,
                    self.settings.cache.negative_ttl_cap,
                )
                self.cache.put(
                    resolution.key, (), now, ttl, rcode=rcode, provenance=provenance
                )
            return Answer(rcode, (), response.authority)

        if rcode == Rcode.NOERROR and records:
            self.cache.put(
                resolution.key,
                records,
                now,
                min(r.ttl for r in records),
                provenance=provenance,
            )
            extras = in_bailiwick((*response.authority, *response.additional), zone)
            for key, rrset in _group_rrsets(extras):
                if key != resolution.key:
                    self.cache.put(
                        key,
                        rrset,
                        now,
                        min(r.ttl for r in rrset),
                        provenance=provenance,
                    )
        return Answer(rcode, records, response.authority)

    # Pending table

    def _emit(
        self,
        resolution: Resolution,
        tuple_: ValidationTuple,
        role: str,
        session: str | None = None,
    ) -> None:
        local = Endpoint(tuple_.src_ip, tuple_.src_port)
        with self._lock:
            self._listeners.setdefault(local, {})[resolution.serial] = resolution
        query = DnsMessage.make_query(
            tuple_.cased_qname, tuple_.qtype, tuple_.txid, qclass=tuple_.qclass
        )
        resolution._outbox.append(
            OutboundQuery(
                local=local,
                remote=Endpoint(tuple_.dst_ip, tuple_.dst_port),
                payload=encode_message(query),
                role=role,
                session=session,
            )
        )

    def _unregister(self, resolution: Resolution, tuple_: ValidationTuple) -> None:
        local = Endpoint(tuple_.src_ip, tuple_.src_port)
        still_used = any(
            Endpoint(t.src_ip, t.src_port) == local
            for t in resolution.active_tuples()
            if t is not tuple_
        )
        if still_used:
            return
        with self._lock:
            owners = self._listeners.get(local)
            if owners is not None:
                owners.pop(resolution.serial, None)
                if not owners:
                    del self._listeners[local]


def _group_rrsets(
    records: Iterable[ResourceRecord],
) -> list[tuple[CacheKey, tuple[ResourceRecord, ...]]]:
    groups: dict[CacheKey, list[ResourceRecord]] = {}
    for record in records:
        key = CacheKey.of(record.name, record.rtype, record.rclass)
        groups.setdefault(key, []).append(record)
    return [(key, tuple(rrset)) for key, rrset in groups.items()]
