"""Forgery detection and the sandwich antidote.

Normal mode sends one query and checks every response against its validation
tuple. Once enough mismatches show up the resolution escalates: the original
query is re-sent between two guard queries for random, nonexistent names in
the same zone, and the answer is accepted only if all three responses validate
and arrive in the order the queries were sent.
"""

from __future__ import annotations

import logging
import random
from collections.abc import Mapping
from dataclasses import dataclass, field, replace
from enum import StrEnum

from ..utils.log import log_event
from .cache import CacheKey
from .entropy import (
    EntropyConfig,
    ValidationTuple,
    make_validation_tuple,
    random_letters,
)
from .wire import (
    DnsMessage,
    DnsName,
    Question,
    Rcode,
    ResourceRecord,
    name_equal_case_exact,
    name_equal_case_insensitive,
)

logger = logging.getLogger(__name__)


class QueryMode(StrEnum):
    NORMAL = "normal"
    SANDWICH = "sandwich"


class TupleField(StrEnum):
    """A validation check a response can fail."""

    NOT_RESPONSE = "qr"
    TXID = "txid"
    PORT = "port"
    LOCAL_IP = "local_ip"
    SOURCE = "src"
    QUESTION = "question"
    NAME = "name"
    CASE = "case"
    DUPLICATE = "duplicate"


class SubQueryRole(StrEnum):
    PRE = "pre"
    MID = "mid"
    POST = "post"


class Expectation(StrEnum):
    NXDOMAIN = "nxdomain"
    ANSWER = "answer"


class SubQueryStatus(StrEnum):
    OUTSTANDING = "outstanding"
    VALIDATED = "validated"
    FAILED = "failed"


SEND_ORDER = (SubQueryRole.PRE, SubQueryRole.MID, SubQueryRole.POST)


@dataclass(frozen=True, slots=True)
class SandwichConfig:
    enabled: bool = True
    detection_threshold: int = 1
    prefix_len: int = 12
    retries: int = 3
    deadline: float = 2.0
    settle_window: float = 0.2
    zone_cuts: tuple[str, ...] = ()


@dataclass(frozen=True, slots=True)
class ResponseMeta:
    """Where a response came from and which local socket received it.

    `tag` is an opaque packet identifier the caller may attach for provenance
    auditing; validation never looks at it.
    """

    src_ip: str
    src_port: int
    dst_ip: str
    dst_port: int
    tag: int | None = None


@dataclass(frozen=True, slots=True)
class Classification:
    """Match when `failed` is empty, otherwise Mismatch on the listed fields."""

    failed: frozenset[TupleField] = frozenset()

    @property
    def matched(self) -> bool:
        return not self.failed

    def describe(self) -> str:
        return "match" if self.matched else "+".join(sorted(self.failed))


@dataclass(slots=True)
class PendingQuery:
    key: CacheKey
    tuple: ValidationTuple
    deadline: float
    mode: QueryMode = QueryMode.NORMAL
    mismatch_count: int = 0
    attempt: int = 1

    def escalate(self) -> None:
        """Normal -> Sandwich; the mode never goes back within a resolution."""
        self.mode = QueryMode.SANDWICH


@dataclass(slots=True)
class SubQuery:
    role: SubQueryRole
    tuple: ValidationTuple
    expected: Expectation
    status: SubQueryStatus = SubQueryStatus.OUTSTANDING

    @property
    def name(self) -> DnsName:
        return self.tuple.cased_qname


@dataclass(slots=True)
class SandwichSession:
    session_id: str
    zone: DnsName
    pre: SubQuery
    mid: SubQuery
    post: SubQuery
    deadline: float
    retries_left: int
    arrivals: list[SubQueryRole] = field(default_factory=list)
    mid_response: DnsMessage | None = None
    mid_tag: int | None = None

    @property
    def send_order(self) -> tuple[SubQueryRole, ...]:
        return SEND_ORDER

    @property
    def subqueries(self) -> tuple[SubQuery, SubQuery, SubQuery]:
        return self.pre, self.mid, self.post

    def route(self, response: DnsMessage) -> SubQuery | None:
        """Sub-query a response claims to answer, by name first, then by txid."""
        if response.question is not None:
            for sub in self.subqueries:
                if name_equal_case_insensitive(sub.name, response.question.name):
                    return sub
        for sub in self.subqueries:
            if sub.tuple.txid == response.header.txid:
                return sub
        return None


@dataclass(frozen=True, slots=True)
class Continue:
    pass


@dataclass(frozen=True, slots=True)
class Accept:
    answer: DnsMessage


@dataclass(frozen=True, slots=True)
class Restart:
    reason: str
    anomaly: bool = False
    mismatch: bool = False


type SandwichVerdict = Continue | Accept | Restart


def classify_response(
    expected: ValidationTuple, response: DnsMessage, meta: ResponseMeta
) -> Classification:
    """Compare a response and its arrival metadata to the tuple that was sent."""
    failed: set[TupleField] = set()
    if not response.header.qr:
        failed.add(TupleField.NOT_RESPONSE)
    if response.header.txid != expected.txid:
        failed.add(TupleField.TXID)
    if meta.dst_port != expected.src_port:
        failed.add(TupleField.PORT)
    if meta.dst_ip != expected.src_ip:
        failed.add(TupleField.LOCAL_IP)
    if (meta.src_ip, meta.src_port) != (expected.dst_ip, expected.dst_port):
        failed.add(TupleField.SOURCE)
    question = response.question
    if question is None:
        failed.add(TupleField.QUESTION)
    else:
        if (question.qtype, question.qclass) != (expected.qtype, expected.qclass):
            failed.add(TupleField.QUESTION)
        if not name_equal_case_insensitive(question.name, expected.cased_qname):
            failed.add(TupleField.NAME)
        elif not name_equal_case_exact(question.name, expected.cased_qname):
            failed.add(TupleField.CASE)
    return Classification(frozenset(failed))


def detect_forgery(
    pending: PendingQuery, event: Classification, threshold: int
) -> bool:
    """Count a mismatch; True once the count reaches the detection threshold."""
    if not event.matched:
        pending.mismatch_count += 1
    return pending.mismatch_count >= threshold


def zone_of(name: DnsName, zone_cuts: tuple[str, ...] = ()) -> DnsName:
    """Zone the guard names are built under.

    The longest configured zone cut strictly above `name` wins; otherwise the
    name minus its leftmost label.
    """
    best: DnsName | None = None
    for cut in zone_cuts:
        zone = DnsName.from_text(cut)
        if len(zone.labels) < len(name.labels) and name.is_subdomain_of(zone):
            if best is None or len(zone.labels) > len(best.labels):
                best = zone
    return best if best is not None else name.parent()


def in_bailiwick(
    records: tuple[ResourceRecord, ...], zone: DnsName
) -> tuple[ResourceRecord, ...]:
    return tuple(record for record in records if record.name.is_subdomain_of(zone))


def build_sandwich(
    question: Question,
    entropy: EntropyConfig,
    config: SandwichConfig,
    rng: random.Random,
    *,
    now: float,
    retries_left: int | None = None,
    dst_ports: Mapping[str, int] | None = None,
) -> SandwichSession:
    """Build the pre/mid/post sub-queries for one sandwich session.

    Each sub-query gets its own freshly drawn tuple; the guard names are two
    distinct lowercase prefixes of prefix_len letters under the original's zone.
    """
    zone = zone_of(question.name, config.zone_cuts)
    pre_prefix = random_letters(rng, config.prefix_len)
    post_prefix = random_letters(rng, config.prefix_len)
    while post_prefix == pre_prefix:
        post_prefix = random_letters(rng, config.prefix_len)

    def sub(role: SubQueryRole, name: DnsName, expected: Expectation) -> SubQuery:
        tuple_ = make_validation_tuple(
            name, question.qtype, question.qclass, entropy, rng, dst_ports=dst_ports
        )
        return SubQuery(role, tuple_, expected)

    nx = Expectation.NXDOMAIN
    pre = sub(SubQueryRole.PRE, zone.prepend(pre_prefix.encode()), nx)
    mid = sub(SubQueryRole.MID, question.name, Expectation.ANSWER)
    post = sub(SubQueryRole.POST, zone.prepend(post_prefix.encode()), nx)
    session = SandwichSession(
        session_id=f"{rng.getrandbits(32):08x}",
        zone=zone,
        pre=pre,
        mid=mid,
        post=post,
        deadline=now + config.deadline,
        retries_left=config.retries if retries_left is None else retries_left,
    )
    log_event(
        logger,
        "sandwich_build",
        session.session_id,
        qname=question.name,
        zone=zone,
        retries_left=session.retries_left,
    )
    return session


def on_sandwich_response(
    session: SandwichSession, response: DnsMessage, meta: ResponseMeta
) -> SandwichVerdict:
    """Advance a session with one response routed to it."""
    sub = session.route(response)
    if sub is None:
        return Restart("unroutable response", mismatch=True)

    verdict = classify_response(sub.tuple, response, meta)
    if not verdict.matched:
        sub.status = SubQueryStatus.FAILED
        return Restart(f"{sub.role} mismatch {verdict.describe()}", mismatch=True)
    if sub.status is SubQueryStatus.VALIDATED:
        return Restart(f"{sub.role} answered twice", mismatch=True)

    if sub.expected is Expectation.NXDOMAIN:
        if response.rcode != Rcode.NXDOMAIN:
            sub.status = SubQueryStatus.FAILED
            exists = response.rcode == Rcode.NOERROR and bool(response.answers)
            reason = "guard name exists" if exists else f"guard rcode {response.rcode}"
            log_event(
                logger,
                "sandwich_anomaly",
                session.session_id,
                level=logging.WARNING,
                role=sub.role,
                reason=reason.replace(" ", "_"),
            )
            return Restart(reason, anomaly=True)
    elif response.rcode != Rcode.NOERROR or not in_bailiwick(
        response.answers, session.zone
    ):
        sub.status = SubQueryStatus.FAILED
        return Restart(f"mid rcode {response.rcode} without in-zone answer")
    else:
        session.mid_response = replace(
            response,
            answers=in_bailiwick(response.answers, session.zone),
            authority=in_bailiwick(response.authority, session.zone),
            additional=in_bailiwick(response.additional, session.zone),
        )
        session.mid_tag = meta.tag

    sub.status = SubQueryStatus.VALIDATED
    session.arrivals.append(sub.role)
    if tuple(session.arrivals) != SEND_ORDER[: len(session.arrivals)]:
        return Restart(f"out of order {'>'.join(session.arrivals)}")
    if len(session.arrivals) < len(SEND_ORDER):
        return Continue()

    assert session.mid_response is not None
    log_event(logger, "sandwich_accept", session.session_id, qname=session.mid.name)
    return Accept(session.mid_response)


def on_sandwich_timeout(session: SandwichSession, now: float) -> SandwichVerdict:
    if now >= session.deadline:
        return Restart("deadline expired")
    return Continue()
