"""Tests for the DNS wire codec."""

import random

import dns.message
import dns.rdatatype
import dns.rrset
import pytest

from dns_antidote.core.exceptions import (
    CountMismatchError,
    FieldRangeError,
    NameTooLongError,
    PointerLoopError,
    TooManyRecordsError,
    TruncatedPacketError,
    WireError,
)
from dns_antidote.core.wire import (
    DnsHeader,
    DnsMessage,
    DnsName,
    Question,
    Rcode,
    RecordType,
    ResourceRecord,
    decode_message,
    encode_message,
    name_equal_case_exact,
    name_equal_case_insensitive,
)

LABEL_BYTES = b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789-_"


def random_name(rng: random.Random) -> DnsName:
    labels = tuple(
        bytes(rng.choice(LABEL_BYTES) for _ in range(rng.randint(1, 12)))
        for _ in range(rng.randint(0, 4))
    )
    return DnsName(labels)


def random_record(rng: random.Random) -> ResourceRecord:
    name = random_name(rng)
    ttl = rng.getrandbits(32)
    kind = rng.randrange(6)
    if kind == 0:
        return ResourceRecord.a(name, f"192.0.2.{rng.randrange(256)}", ttl=ttl)
    if kind == 1:
        return ResourceRecord.ns(name, random_name(rng), ttl=ttl)
    if kind == 2:
        return ResourceRecord.cname(name, random_name(rng), ttl=ttl)
    if kind == 3:
        return ResourceRecord.soa(
            name,
            random_name(rng),
            random_name(rng),
            serial=rng.getrandbits(32),
            minimum=rng.getrandbits(32),
            ttl=ttl,
        )
    rtype = RecordType.TXT if kind == 4 else rng.choice((99, 257, 0xFF00))
    rdata = rng.randbytes(rng.randint(0, 24))
    return ResourceRecord(name, rtype, rng.getrandbits(16), ttl, rdata)


def random_message(rng: random.Random) -> DnsMessage:
    header = DnsHeader(
        txid=rng.getrandbits(16),
        qr=rng.random() < 0.5,
        opcode=rng.getrandbits(4),
        aa=rng.random() < 0.5,
        tc=rng.random() < 0.5,
        rd=rng.random() < 0.5,
        ra=rng.random() < 0.5,
        z=rng.getrandbits(3),
        rcode=rng.getrandbits(4),
    )
    question = None
    if rng.random() < 0.9:
        question = Question(random_name(rng), rng.getrandbits(16), rng.getrandbits(16))

    def section() -> tuple[ResourceRecord, ...]:
        return tuple(random_record(rng) for _ in range(rng.randint(0, 3)))

    return DnsMessage(header, question, section(), section(), section())


def mutated(rng: random.Random, data: bytes) -> bytes:
    """Flip, insert, delete or cut bytes a few times."""
    buffer = bytearray(data)
    for _ in range(rng.randint(1, 4)):
        choice = rng.randrange(4)
        if choice == 0 and buffer:
            buffer[rng.randrange(len(buffer))] = rng.getrandbits(8)
        elif choice == 1:
            buffer.insert(rng.randint(0, len(buffer)), rng.getrandbits(8))
        elif choice == 2 and buffer:
            del buffer[rng.randrange(len(buffer))]
        else:
            buffer = buffer[: rng.randint(0, len(buffer))]
    return bytes(buffer)


class TestDnsName:
    """Test cases for DnsName."""

    def test_from_text_and_back(self) -> None:
        """Test parsing keeps every label and its case."""
        name = DnsName.from_text("WwW.GooGle.CoM.")
        assert name.labels == (b"WwW", b"GooGle", b"CoM")
        assert name.to_text() == "WwW.GooGle.CoM"

    def test_root(self) -> None:
        """Test the root name."""
        assert DnsName.from_text(".").is_root
        assert DnsName().to_text() == "."

    def test_long_label_rejected(self) -> None:
        """Test a 64-byte label is refused."""
        with pytest.raises(NameTooLongError, match="label of 64 bytes"):
            DnsName((b"a" * 64, b"com"))

    def test_long_name_rejected(self) -> None:
        """Test the 255-byte wire limit."""
        with pytest.raises(NameTooLongError, match="exceeds 255"):
            DnsName((b"a" * 63,) * 4)

    def test_empty_label_rejected(self) -> None:
        """Test an empty label inside a name."""
        with pytest.raises(WireError, match="empty label"):
            DnsName.from_text("www..com")

    def test_subdomain(self) -> None:
        """Test case-insensitive suffix matching."""
        name = DnsName.from_text("WWW.Google.com")
        assert name.is_subdomain_of(DnsName.from_text("google.COM"))
        assert name.is_subdomain_of(name)
        assert not name.is_subdomain_of(DnsName.from_text("oogle.com"))


class TestNameEquality:
    """Test cases for case-sensitive and case-insensitive comparison."""

    @pytest.mark.parametrize(
        ("a", "b", "insensitive", "exact"),
        [
            ("WwW.GooGle.CoM", "www.google.com", True, False),
            ("a9.com", "a9.com", True, True),
            ("a9.com", "A9.com", True, False),
            ("a9.com", "b9.com", False, False),
        ],
    )
    def test_equality(self, a: str, b: str, insensitive: bool, exact: bool) -> None:
        """Test both comparisons against hand-checked pairs."""
        left, right = DnsName.from_text(a), DnsName.from_text(b)
        assert name_equal_case_insensitive(left, right) is insensitive
        assert name_equal_case_exact(left, right) is exact

    def test_non_ascii_bytes_compare_exactly(self) -> None:
        """Test only ASCII letters are folded."""
        assert not name_equal_case_insensitive(
            DnsName((b"\xc4x",)), DnsName((b"\xe4x",))
        )


class TestEncode:
    """Test cases for encode_message."""

    def test_query_bytes(self) -> None:
        """Test a query for a9.com against a hand-encoded packet."""
        query = DnsMessage.make_query(DnsName.from_text("a9.com"), RecordType.A, 0x1234)
        expected = (
            b"\x12\x34\x01\x00\x00\x01\x00\x00\x00\x00\x00\x00"
            b"\x02a9\x03com\x00\x00\x01\x00\x01"
        )
        data = encode_message(query)
        assert len(data) == 24
        assert data == expected

    def test_case_preserved_on_wire(self) -> None:
        """Test label bytes are written exactly as stored."""
        query = DnsMessage.make_query(DnsName.from_text("wWw.GoOgle.cOm"), 1, 7)
        assert b"\x03wWw\x06GoOgle\x03cOm\x00" in encode_message(query)

    def test_counts_follow_sections(self) -> None:
        """Test header counts equal section lengths."""
        name = DnsName.from_text("www.google.com")
        message = DnsMessage.make_query(name, RecordType.A, 1).make_response(
            answers=(ResourceRecord.a(name, "192.0.2.1"),),
            additional=(ResourceRecord.a(name, "192.0.2.2"),),
        )
        data = encode_message(message)
        assert data[4:12] == b"\x00\x01\x00\x01\x00\x00\x00\x01"

    def test_too_many_records(self) -> None:
        """Test a section count overflowing 16 bits."""
        name = DnsName.from_text("a9.com")
        record = ResourceRecord.a(name, "192.0.2.1")
        message = DnsMessage(DnsHeader(txid=1), answers=(record,) * 0x10000)
        with pytest.raises(TooManyRecordsError):
            encode_message(message)

    @pytest.mark.parametrize(
        ("header", "field"),
        [
            (DnsHeader(txid=0x10000), "txid"),
            (DnsHeader(txid=-1), "txid"),
            (DnsHeader(txid=1, opcode=16), "opcode"),
            (DnsHeader(txid=1, z=8), "z"),
            (DnsHeader(txid=1, rcode=16), "rcode"),
        ],
    )
    def test_header_field_out_of_range(self, header: DnsHeader, field: str) -> None:
        """Test header fields wider than their slot are refused, not masked."""
        with pytest.raises(FieldRangeError, match=f"^{field}="):
            encode_message(DnsMessage(header))

    def test_question_type_out_of_range(self) -> None:
        """Test a qtype that does not fit 16 bits."""
        question = Question(DnsName.from_text("a9.com"), 0x10000)
        with pytest.raises(FieldRangeError, match="qtype"):
            encode_message(DnsMessage(DnsHeader(txid=1), question))

    @pytest.mark.parametrize(
        ("ttl", "rtype", "field"),
        [(-1, RecordType.A, "ttl"), (1 << 32, RecordType.A, "ttl"), (0, -5, "rtype")],
    )
    def test_record_field_out_of_range(self, ttl: int, rtype: int, field: str) -> None:
        """Test bad ttl and rtype raise the codec's error instead of struct.error."""
        record = ResourceRecord(DnsName.from_text("a9.com"), rtype, 1, ttl, b"\x00" * 4)
        with pytest.raises(FieldRangeError, match=f"^{field}="):
            encode_message(DnsMessage(DnsHeader(txid=1), answers=(record,)))

    def test_widest_values_accepted(self) -> None:
        """Test the largest in-range values still encode and decode."""
        name = DnsName.from_text("a9.com")
        header = DnsHeader(txid=0xFFFF, opcode=15, z=7, rcode=15)
        record = ResourceRecord(name, 0xFFFF, 0xFFFF, (1 << 32) - 1, b"")
        message = DnsMessage(header, Question(name, 0xFFFF, 0xFFFF), (record,))
        assert decode_message(encode_message(message), strict=True) == message

    def test_dnspython_reads_our_response(self) -> None:
        """Test an independent decoder agrees with the encoding."""
        name = DnsName.from_text("WwW.GooGle.CoM")
        query = DnsMessage.make_query(name, RecordType.A, 0xBEEF)
        response = query.make_response(
            answers=(ResourceRecord.a(name, "192.0.2.10", ttl=60),)
        )
        parsed = dns.message.from_wire(encode_message(response))
        assert parsed.id == 0xBEEF
        assert parsed.question[0].name.to_text() == "WwW.GooGle.CoM."
        rrset = parsed.answer[0]
        assert rrset.rdtype == dns.rdatatype.A
        assert rrset.ttl == 60
        assert [rdata.address for rdata in rrset] == ["192.0.2.10"]


class TestDecode:
    """Test cases for decode_message."""

    def test_round_trip_preserves_case(self) -> None:
        """Test decode(encode(m)) == m for a full response."""
        apex = DnsName.from_text("GooGle.com")
        name = apex.prepend(b"wWw")
        message = DnsMessage(
            DnsHeader(txid=42, qr=True, aa=True, rd=True, rcode=Rcode.NOERROR),
            Question(name, RecordType.A),
            answers=(ResourceRecord.a(name, "192.0.2.10"),),
            authority=(ResourceRecord.ns(apex, apex.prepend(b"ns1")),),
            additional=(ResourceRecord.a(apex.prepend(b"ns1"), "192.0.2.1"),),
        )
        assert decode_message(encode_message(message)) == message

    def test_dnspython_compressed_response(self) -> None:
        """Test compression pointers written by dnspython, rdata included."""
        query = dns.message.make_query("www.google.com", "A")
        response = dns.message.make_response(query)
        target = "web.google.com."
        cname = dns.rrset.from_text("www.google.com.", 300, "IN", "CNAME", target)
        response.answer.append(cname)
        response.authority.append(
            dns.rrset.from_text("google.com.", 300, "IN", "NS", "ns1.google.com.")
        )
        decoded = decode_message(response.to_wire())

        assert decoded.header.txid == query.id
        assert decoded.answers[0].target == DnsName.from_text("web.google.com")
        assert decoded.authority[0].target == DnsName.from_text("ns1.google.com")

    def test_short_buffer(self) -> None:
        """Test an 11-byte buffer."""
        with pytest.raises(TruncatedPacketError, match="shorter than a header"):
            decode_message(b"\x00" * 11)

    def test_pointer_loop(self) -> None:
        """Test a compression pointer aimed at itself."""
        header = b"\x00\x01\x00\x00\x00\x01\x00\x00\x00\x00\x00\x00"
        data = header + b"\xc0\x0c\x00\x01\x00\x01"
        with pytest.raises(PointerLoopError):
            decode_message(data)

    def test_count_mismatch(self) -> None:
        """Test a header announcing more answers than present."""
        data = bytearray(
            encode_message(DnsMessage.make_query(DnsName.from_text("a9.com"), 1, 1))
        )
        data[7] = 1
        with pytest.raises(CountMismatchError):
            decode_message(bytes(data))

    def test_trailing_bytes(self) -> None:
        """Test trailing garbage is only rejected in strict mode."""
        data = encode_message(
            DnsMessage.make_query(DnsName.from_text("a9.com"), 1, 1)
        ) + b"\x00\x00"
        assert decode_message(data).question is not None
        with pytest.raises(CountMismatchError, match="trailing"):
            decode_message(data, strict=True)

    @pytest.mark.parametrize("cut", range(12, 24))
    def test_truncated_query_never_crashes(self, cut: int) -> None:
        """Test every truncation of a query fails with a WireError."""
        data = encode_message(DnsMessage.make_query(DnsName.from_text("a9.com"), 1, 1))
        with pytest.raises(WireError):
            decode_message(data[:cut])


class TestCodecProperties:
    """Seeded property and fuzz checks over generated packets."""

    def test_round_trip_generated_messages(self) -> None:
        """Test decode(encode(m)) == m for 10,000 generated messages."""
        rng = random.Random(20240601)
        for _ in range(10_000):
            message = random_message(rng)
            assert decode_message(encode_message(message), strict=True) == message

    def test_case_survives_generated_names(self) -> None:
        """Test every label byte of a generated question name is kept verbatim."""
        rng = random.Random(7)
        for _ in range(1_000):
            name = random_name(rng)
            query = DnsMessage.make_query(name, RecordType.A, rng.getrandbits(16))
            decoded = decode_message(encode_message(query))
            assert decoded.question is not None
            assert decoded.question.name.labels == name.labels

    @pytest.mark.slow
    def test_fuzzed_buffers_raise_only_wire_errors(self) -> None:
        """Test 100,000 random and mutated buffers either decode or raise WireError."""
        rng = random.Random(99)
        seeds = [encode_message(random_message(rng)) for _ in range(200)]
        decoded = 0
        for index in range(100_000):
            if index % 2:
                data = rng.randbytes(rng.randint(0, 96))
            else:
                data = mutated(rng, rng.choice(seeds))
            strict = rng.random() < 0.5
            try:
                decode_message(data, strict=strict)
            except WireError:
                continue
            decoded += 1
        assert decoded > 0
