"""DNS message wire format.

Names are emitted uncompressed and label bytes are written exactly as stored, so
a query name's letter case survives encode/decode end to end. Compression
pointers are accepted on input, including inside NS, CNAME and SOA rdata, which
is stored expanded so that re-encoding is canonical.
"""

from __future__ import annotations

import ipaddress
import struct
from dataclasses import dataclass, replace
from enum import IntEnum

from .exceptions import (
    CountMismatchError,
    FieldRangeError,
    LabelTooLongError,
    NameTooLongError,
    PointerLoopError,
    TooManyRecordsError,
    TruncatedPacketError,
    WireError,
)

MAX_LABEL_LENGTH = 63
MAX_NAME_LENGTH = 255
HEADER_LENGTH = 12
_MAX_COUNT = 0xFFFF

_HEADER = struct.Struct("!HHHHHH")
_QUESTION_TAIL = struct.Struct("!HH")
_RR_TAIL = struct.Struct("!HHIH")
_SOA_TAIL = struct.Struct("!IIIII")


class RecordType(IntEnum):
    """Record types the toolkit interprets; any other value is carried opaquely."""

    A = 1
    NS = 2
    CNAME = 5
    SOA = 6
    TXT = 16
    AAAA = 28
    ANY = 255


class RecordClass(IntEnum):
    IN = 1
    CH = 3
    ANY = 255


class Rcode(IntEnum):
    NOERROR = 0
    FORMERR = 1
    SERVFAIL = 2
    NXDOMAIN = 3
    NOTIMP = 4
    REFUSED = 5


_NAME_RDATA_TYPES = frozenset({RecordType.NS, RecordType.CNAME})


@dataclass(frozen=True, slots=True)
class DnsName:
    """A domain name as an ordered tuple of raw labels, case preserved.

    Dataclass equality is case-exact; use name_equal_case_insensitive (or compare
    folded() names) for DNS semantics.
    """

    labels: tuple[bytes, ...] = ()

    def __post_init__(self) -> None:
        for label in self.labels:
            if not label:
                raise WireError("empty label inside a name")
            if len(label) > MAX_LABEL_LENGTH:
                raise NameTooLongError(
                    f"label of {len(label)} bytes exceeds {MAX_LABEL_LENGTH}"
                )
        if self.wire_length > MAX_NAME_LENGTH:
            raise NameTooLongError(
                f"name of {self.wire_length} bytes exceeds {MAX_NAME_LENGTH}"
            )

    @classmethod
    def from_text(cls, text: str) -> DnsName:
        """Parse a dotted name; a trailing dot is optional and "." is the root."""
        stripped = text[:-1] if text.endswith(".") else text
        if not stripped:
            return cls(())
        return cls(tuple(part.encode("latin-1") for part in stripped.split(".")))

    def to_text(self) -> str:
        if not self.labels:
            return "."
        return ".".join(label.decode("latin-1") for label in self.labels)

    def __str__(self) -> str:
        return self.to_text()

    @property
    def wire_length(self) -> int:
        return sum(len(label) + 1 for label in self.labels) + 1

    @property
    def is_root(self) -> bool:
        return not self.labels

    def folded(self) -> DnsName:
        """Return the name with ASCII letters lowercased; other bytes untouched."""
        return DnsName(tuple(label.lower() for label in self.labels))

    def parent(self) -> DnsName:
        return DnsName(self.labels[1:])

    def prepend(self, label: bytes) -> DnsName:
        return DnsName((label, *self.labels))

    def is_subdomain_of(self, zone: DnsName) -> bool:
        """Case-insensitive suffix test; every name is a subdomain of itself."""
        if len(zone.labels) > len(self.labels):
            return False
        if not zone.labels:
            return True
        tail = self.labels[-len(zone.labels):]
        return tuple(label.lower() for label in tail) == zone.folded().labels

    def to_wire(self) -> bytes:
        parts = bytearray()
        for label in self.labels:
            parts.append(len(label))
            parts += label
        parts.append(0)
        return bytes(parts)


def name_equal_case_insensitive(a: DnsName, b: DnsName) -> bool:
    """Compare names folding ASCII letters only; non-ASCII bytes compare exactly."""
    return a.folded().labels == b.folded().labels


def name_equal_case_exact(a: DnsName, b: DnsName) -> bool:
    return a.labels == b.labels


@dataclass(frozen=True, slots=True)
class DnsHeader:
    """Header fields; section counts are derived from the message sections."""

    txid: int
    qr: bool = False
    opcode: int = 0
    aa: bool = False
    tc: bool = False
    rd: bool = False
    ra: bool = False
    z: int = 0
    rcode: int = Rcode.NOERROR

    def flags_word(self) -> int:
        return (
            (int(self.qr) << 15)
            | ((self.opcode & 0xF) << 11)
            | (int(self.aa) << 10)
            | (int(self.tc) << 9)
            | (int(self.rd) << 8)
            | (int(self.ra) << 7)
            | ((self.z & 0x7) << 4)
            | (self.rcode & 0xF)
        )

    @classmethod
    def from_flags_word(cls, txid: int, word: int) -> DnsHeader:
        return cls(
            txid=txid,
            qr=bool(word & 0x8000),
            opcode=(word >> 11) & 0xF,
            aa=bool(word & 0x0400),
            tc=bool(word & 0x0200),
            rd=bool(word & 0x0100),
            ra=bool(word & 0x0080),
            z=(word >> 4) & 0x7,
            rcode=word & 0xF,
        )


@dataclass(frozen=True, slots=True)
class Question:
    name: DnsName
    qtype: int
    qclass: int = RecordClass.IN


@dataclass(frozen=True, slots=True)
class ResourceRecord:
    """A resource record; rdata holds uncompressed wire bytes."""

    name: DnsName
    rtype: int
    rclass: int
    ttl: int
    rdata: bytes

    @classmethod
    def a(cls, name: DnsName, address: str, ttl: int = 300) -> ResourceRecord:
        packed = ipaddress.IPv4Address(address).packed
        return cls(name, RecordType.A, RecordClass.IN, ttl, packed)

    @classmethod
    def ns(cls, name: DnsName, target: DnsName, ttl: int = 300) -> ResourceRecord:
        return cls(name, RecordType.NS, RecordClass.IN, ttl, target.to_wire())

    @classmethod
    def cname(cls, name: DnsName, target: DnsName, ttl: int = 300) -> ResourceRecord:
        return cls(name, RecordType.CNAME, RecordClass.IN, ttl, target.to_wire())

    @classmethod
    def soa(
        cls,
        name: DnsName,
        mname: DnsName,
        rname: DnsName,
        *,
        serial: int = 1,
        refresh: int = 3600,
        retry: int = 600,
        expire: int = 86400,
        minimum: int = 300,
        ttl: int = 300,
    ) -> ResourceRecord:
        rdata = (
            mname.to_wire()
            + rname.to_wire()
            + _SOA_TAIL.pack(serial, refresh, retry, expire, minimum)
        )
        return cls(name, RecordType.SOA, RecordClass.IN, ttl, rdata)

    @property
    def address(self) -> str:
        if self.rtype != RecordType.A or len(self.rdata) != 4:
            raise WireError(f"record type {self.rtype} carries no IPv4 address")
        return str(ipaddress.IPv4Address(self.rdata))

    @property
    def target(self) -> DnsName:
        if self.rtype not in _NAME_RDATA_TYPES:
            raise WireError(f"record type {self.rtype} carries no target name")
        name, _ = _read_name(self.rdata, 0)
        return name

    @property
    def soa_minimum(self) -> int:
        if self.rtype != RecordType.SOA or len(self.rdata) < _SOA_TAIL.size:
            raise WireError("not an SOA record")
        return int(_SOA_TAIL.unpack_from(self.rdata, len(self.rdata) - 20)[4])


@dataclass(frozen=True, slots=True)
class DnsMessage:
    header: DnsHeader
    question: Question | None = None
    answers: tuple[ResourceRecord, ...] = ()
    authority: tuple[ResourceRecord, ...] = ()
    additional: tuple[ResourceRecord, ...] = ()

    @property
    def qdcount(self) -> int:
        return 0 if self.question is None else 1

    @property
    def ancount(self) -> int:
        return len(self.answers)

    @property
    def nscount(self) -> int:
        return len(self.authority)

    @property
    def arcount(self) -> int:
        return len(self.additional)

    @property
    def rcode(self) -> int:
        return self.header.rcode

    @classmethod
    def make_query(
        cls,
        name: DnsName,
        qtype: int,
        txid: int,
        *,
        qclass: int = RecordClass.IN,
        rd: bool = True,
    ) -> DnsMessage:
        return cls(DnsHeader(txid=txid, rd=rd), Question(name, qtype, qclass))

    def make_response(
        self,
        rcode: int = Rcode.NOERROR,
        answers: tuple[ResourceRecord, ...] = (),
        authority: tuple[ResourceRecord, ...] = (),
        additional: tuple[ResourceRecord, ...] = (),
        *,
        aa: bool = True,
        ra: bool = False,
    ) -> DnsMessage:
        """Build a response echoing this query's txid and question byte for byte."""
        header = replace(self.header, qr=True, aa=aa, ra=ra, rcode=rcode)
        return DnsMessage(header, self.question, answers, authority, additional)


def encode_message(message: DnsMessage) -> bytes:
    """Encode a message to wire format with uncompressed names.

    Raises:
        TooManyRecordsError: If a section has more than 65535 records
        FieldRangeError: If a header, question or record field does not fit its
            wire width
        WireError: If an rdata field exceeds 65535 bytes
    """
    for section in (message.answers, message.authority, message.additional):
        if len(section) > _MAX_COUNT:
            raise TooManyRecordsError(f"section of {len(section)} records")

    header = message.header
    _check_width("txid", header.txid, 16)
    _check_width("opcode", header.opcode, 4)
    _check_width("z", header.z, 3)
    _check_width("rcode", header.rcode, 4)
    out = bytearray(
        _HEADER.pack(
            header.txid,
            header.flags_word(),
            message.qdcount,
            message.ancount,
            message.nscount,
            message.arcount,
        )
    )
    if message.question is not None:
        _check_width("qtype", message.question.qtype, 16)
        _check_width("qclass", message.question.qclass, 16)
        out += message.question.name.to_wire()
        out += _QUESTION_TAIL.pack(message.question.qtype, message.question.qclass)
    for record in (*message.answers, *message.authority, *message.additional):
        if len(record.rdata) > 0xFFFF:
            raise WireError(f"rdata of {len(record.rdata)} bytes")
        _check_width("rtype", record.rtype, 16)
        _check_width("rclass", record.rclass, 16)
        _check_width("ttl", record.ttl, 32)
        out += record.name.to_wire()
        out += _RR_TAIL.pack(record.rtype, record.rclass, record.ttl, len(record.rdata))
        out += record.rdata
    return bytes(out)


def _check_width(field: str, value: int, bits: int) -> None:
    if not 0 <= value < 1 << bits:
        raise FieldRangeError(f"{field}={value} does not fit in {bits} bits")


def decode_message(data: bytes, *, strict: bool = False) -> DnsMessage:
    """Decode a wire-format message.

    Args:
        data: Raw UDP payload
        strict: Reject bytes left over after the declared sections

    Returns:
        The decoded message, label case preserved

    Raises:
        TruncatedPacketError: If the buffer ends inside a field
        PointerLoopError: If compression pointers cycle
        LabelTooLongError: If a label uses a reserved length type
        CountMismatchError: If counts disagree with the body
    """
    if len(data) < HEADER_LENGTH:
        raise TruncatedPacketError(f"{len(data)} bytes is shorter than a header")
    txid, flags, qdcount, ancount, nscount, arcount = _HEADER.unpack_from(data, 0)
    header = DnsHeader.from_flags_word(txid, flags)
    if qdcount > 1:
        raise CountMismatchError(f"{qdcount} questions; only one is supported")

    offset = HEADER_LENGTH
    question = None
    if qdcount == 1:
        if offset >= len(data):
            raise CountMismatchError("question declared but packet ends")
        name, offset = _read_name(data, offset)
        qtype, qclass = _unpack(_QUESTION_TAIL, data, offset)
        offset += _QUESTION_TAIL.size
        question = Question(name, qtype, qclass)

    sections: list[tuple[ResourceRecord, ...]] = []
    for count in (ancount, nscount, arcount):
        records = []
        for _ in range(count):
            if offset >= len(data):
                raise CountMismatchError("header declares more records than present")
            record, offset = _read_record(data, offset)
            records.append(record)
        sections.append(tuple(records))

    if strict and offset != len(data):
        raise CountMismatchError(f"{len(data) - offset} trailing bytes")
    return DnsMessage(header, question, sections[0], sections[1], sections[2])


def _unpack(layout: struct.Struct, data: bytes, offset: int) -> tuple[int, ...]:
    if offset + layout.size > len(data):
        raise TruncatedPacketError(f"need {layout.size} bytes at offset {offset}")
    return layout.unpack_from(data, offset)


def _read_name(data: bytes, offset: int) -> tuple[DnsName, int]:
    labels: list[bytes] = []
    position = offset
    resume: int | None = None
    visited: set[int] = set()
    wire_length = 1

    while True:
        if position >= len(data):
            raise TruncatedPacketError("name runs past the end of the packet")
        length = data[position]
        kind = length & 0xC0
        if kind == 0xC0:
            if position + 1 >= len(data):
                raise TruncatedPacketError("compression pointer cut short")
            target = ((length & 0x3F) << 8) | data[position + 1]
            if resume is None:
                resume = position + 2
            if target in visited:
                raise PointerLoopError(f"pointer loop through offset {target}")
            visited.add(target)
            position = target
            continue
        if kind:
            raise LabelTooLongError(f"reserved label type 0x{length:02x}")
        if length == 0:
            position += 1
            break
        end = position + 1 + length
        if end > len(data):
            raise TruncatedPacketError("label runs past the end of the packet")
        wire_length += length + 1
        if wire_length > MAX_NAME_LENGTH:
            raise NameTooLongError("decoded name exceeds 255 bytes")
        labels.append(data[position + 1:end])
        position = end

    return DnsName(tuple(labels)), position if resume is None else resume


def _read_record(data: bytes, offset: int) -> tuple[ResourceRecord, int]:
    name, offset = _read_name(data, offset)
    rtype, rclass, ttl, rdlength = _unpack(_RR_TAIL, data, offset)
    offset += _RR_TAIL.size
    end = offset + rdlength
    if end > len(data):
        raise TruncatedPacketError("rdata runs past the end of the packet")

    if rtype in _NAME_RDATA_TYPES:
        target, after = _read_name(data, offset)
        _check_rdata_end(after, end)
        rdata = target.to_wire()
    elif rtype == RecordType.SOA:
        mname, after = _read_name(data, offset)
        rname, after = _read_name(data, after)
        if after + _SOA_TAIL.size > end:
            raise TruncatedPacketError("SOA rdata cut short")
        _check_rdata_end(after + _SOA_TAIL.size, end)
        rdata = mname.to_wire() + rname.to_wire() + data[after:end]
    else:
        rdata = data[offset:end]
    return ResourceRecord(name, rtype, rclass, ttl, rdata), end


def _check_rdata_end(consumed: int, declared: int) -> None:
    if consumed != declared:
        raise CountMismatchError(
            f"rdata length declares {declared}, content ends at {consumed}"
        )
