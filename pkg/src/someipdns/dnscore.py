"""DNS wire codec for the handful of record types service discovery needs.

Names are kept as absolute dotted strings. Decoding preserves case so that
signed data can be checked for canonical form; comparisons elsewhere go
through :func:`normalize_name`.
"""

from __future__ import annotations

import dataclasses
import enum
import ipaddress
import struct
import typing

from .namespace import normalize_name
from .wire import L4Protocol, ServiceDescription

EDNS_UDP_SIZE = 4096


class DnsError(ValueError):
    pass


class Truncated(DnsError):
    pass


class IdMismatch(DnsError):
    pass


class FormErr(DnsError):
    pass


class DuplicateParamKey(DnsError):
    pass


class MissingIdentityParam(DnsError):
    pass


class UnsupportedUsage(DnsError):
    pass


class UnsupportedSelector(DnsError):
    pass


class UnsupportedMatching(DnsError):
    pass


class RRType(enum.IntEnum):
    A = 1
    NS = 2
    SOA = 6
    OPT = 41
    DS = 43
    RRSIG = 46
    DNSKEY = 48
    TLSA = 52
    SVCB = 64


class RRClass(enum.IntEnum):
    IN = 1


class Rcode(enum.IntEnum):
    NOERROR = 0
    FORMERR = 1
    SERVFAIL = 2
    NXDOMAIN = 3
    NOTIMP = 4
    REFUSED = 5


class SvcParamKey(enum.IntEnum):
    MANDATORY = 0
    ALPN = 1
    NO_DEFAULT_ALPN = 2
    PORT = 3
    IPV4HINT = 4
    # private-use range 65280-65534
    PROTOCOL = 65280
    INSTANCE = 65281
    MAJOR = 65282
    MINOR = 65283


# --- names ------------------------------------------------------------------


def name_to_wire(name: str) -> bytes:
    """Uncompressed wire form; case is preserved."""
    name = name.strip()
    if name in ("", "."):
        return b"\x00"
    if not name.endswith("."):
        name += "."
    out = bytearray()
    for label in name[:-1].split("."):
        raw = label.encode("ascii")
        if not 0 < len(raw) < 64:
            raise DnsError(f"bad label {label!r} in {name!r}")
        out.append(len(raw))
        out += raw
    out.append(0)
    if len(out) > 255:
        raise DnsError(f"name too long: {name!r}")
    return bytes(out)


def canonical_name_wire(name: str) -> bytes:
    return name_to_wire(normalize_name(name))


def read_name(buf: bytes, pos: int, allow_compression: bool = True) -> typing.Tuple[str, int]:
    """Decode a name at ``pos``; returns (name, offset after the name)."""
    labels = []
    end = None
    jumps = 0
    total = 0
    while True:
        if pos >= len(buf):
            raise Truncated("name runs past end of buffer")
        n = buf[pos]
        if n & 0xC0 == 0xC0:
            if not allow_compression:
                raise FormErr("compression pointer not allowed here")
            if pos + 1 >= len(buf):
                raise Truncated("truncated compression pointer")
            target = ((n & 0x3F) << 8) | buf[pos + 1]
            if end is None:
                end = pos + 2
            if target >= pos or jumps > 64:
                raise FormErr("bad compression pointer")
            jumps += 1
            pos = target
            continue
        if n & 0xC0:
            raise FormErr(f"unsupported label type 0x{n:02x}")
        pos += 1
        if n == 0:
            break
        if pos + n > len(buf):
            raise Truncated("label runs past end of buffer")
        raw = buf[pos : pos + n]
        if b"." in raw or any(b > 0x7E or b < 0x21 for b in raw):
            raise FormErr(f"unsupported label bytes {raw!r}")
        labels.append(raw.decode("ascii"))
        total += n + 1
        if total > 254:
            raise FormErr("name too long")
        pos += n
    name = ".".join(labels) + "." if labels else "."
    return name, (end if end is not None else pos)


def label_count(name: str) -> int:
    """RRSIG label count: the root is 0 and a leading ``*`` is not counted."""
    name = normalize_name(name)
    if name == ".":
        return 0
    return name.count(".") - (1 if name.startswith("*.") else 0)


def is_subdomain(name: str, zone: str) -> bool:
    name, zone = normalize_name(name), normalize_name(zone)
    return zone == "." or name == zone or name.endswith("." + zone)


def parent_name(name: str) -> str:
    name = normalize_name(name)
    if name == ".":
        raise DnsError("root has no parent")
    _, _, rest = name.partition(".")
    return rest or "."


# --- record sets ------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class ResourceRecordSet:
    owner: str
    rrtype: RRType
    ttl: int
    rdatas: typing.Tuple[bytes, ...]
    rrclass: RRClass = RRClass.IN

    def __post_init__(self):
        object.__setattr__(self, "rrtype", RRType(self.rrtype))
        object.__setattr__(self, "rdatas", tuple(bytes(r) for r in self.rdatas))
        if not 0 <= self.ttl <= 0xFFFFFFFF:
            raise DnsError(f"ttl {self.ttl} out of range")

    def canonical(self) -> ResourceRecordSet:
        """Lowercased owner, rdatas sorted and deduplicated by wire form."""
        return dataclasses.replace(
            self, owner=normalize_name(self.owner), rdatas=tuple(sorted(set(self.rdatas)))
        )

    @property
    def key(self) -> typing.Tuple[str, RRType]:
        return normalize_name(self.owner), self.rrtype


@dataclasses.dataclass(frozen=True)
class SignedRRset:
    rrset: ResourceRecordSet
    rrsigs: typing.Tuple[bytes, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "rrsigs", tuple(self.rrsigs))


# --- SVCB -------------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class SvcbServiceRecord:
    """SVCB ServiceMode record describing one service instance endpoint."""

    port: int
    ipv4hint: ipaddress.IPv4Address
    protocol: L4Protocol
    service_id: int
    instance: int
    major: int
    minor: int
    priority: int = 1
    target: str = "."

    def __post_init__(self):
        object.__setattr__(self, "ipv4hint", ipaddress.IPv4Address(self.ipv4hint))
        object.__setattr__(self, "protocol", L4Protocol(self.protocol))
        if not 1 <= self.priority <= 0xFFFF:
            raise DnsError("ServiceMode priority must be 1..65535")
        # service_id travels in the owner name, not in the rdata
        ServiceDescription(self.service_id, self.instance, self.major, self.minor)

    @property
    def description(self) -> ServiceDescription:
        return ServiceDescription(self.service_id, self.instance, self.major, self.minor)

    def params(self) -> typing.Dict[int, bytes]:
        return {
            SvcParamKey.PORT: struct.pack("!H", self.port),
            SvcParamKey.IPV4HINT: self.ipv4hint.packed,
            SvcParamKey.PROTOCOL: bytes([self.protocol]),
            SvcParamKey.INSTANCE: struct.pack("!H", self.instance),
            SvcParamKey.MAJOR: bytes([self.major]),
            SvcParamKey.MINOR: struct.pack("!I", self.minor),
        }


def encode_svcb_params(
    priority: int, target: str, params: typing.Iterable[typing.Tuple[int, bytes]]
) -> bytes:
    params = list(params)
    keys = [k for k, _ in params]
    if len(set(keys)) != len(keys):
        raise DuplicateParamKey(f"duplicate SvcParamKeys in {keys}")
    out = bytearray(struct.pack("!H", priority))
    out += canonical_name_wire(target)
    for key, value in sorted(params):
        if len(value) > 0xFFFF:
            raise DnsError("SvcParamValue too long")
        out += struct.pack("!HH", key, len(value)) + value
    return bytes(out)


def decode_svcb_params(rdata: bytes) -> typing.Tuple[int, str, typing.Dict[int, bytes]]:
    if len(rdata) < 3:
        raise Truncated("SVCB rdata too short")
    (priority,) = struct.unpack_from("!H", rdata)
    target, pos = read_name(rdata, 2, allow_compression=False)
    params: typing.Dict[int, bytes] = {}
    last = -1
    while pos < len(rdata):
        if pos + 4 > len(rdata):
            raise Truncated("truncated SvcParam header")
        key, length = struct.unpack_from("!HH", rdata, pos)
        pos += 4
        if pos + length > len(rdata):
            raise Truncated("truncated SvcParamValue")
        if key == last:
            raise DuplicateParamKey(f"key {key} repeated")
        if key < last:
            raise FormErr("SvcParamKeys not in ascending order")
        last = key
        params[key] = rdata[pos : pos + length]
        pos += length
    return priority, target, params


def encode_svcb_rdata(rec: SvcbServiceRecord) -> bytes:
    return encode_svcb_params(rec.priority, rec.target, rec.params().items())


def decode_svcb_rdata(rdata: bytes, service_id: int) -> SvcbServiceRecord:
    """Decode-for-discovery: every identity parameter must be present.

    ``service_id`` comes from the query name; it is not part of the rdata.
    """
    priority, target, params = decode_svcb_params(rdata)
    if priority == 0:
        raise FormErr("AliasMode SVCB records are not service records")
    required = {
        SvcParamKey.PORT: 2,
        SvcParamKey.IPV4HINT: 4,
        SvcParamKey.PROTOCOL: 1,
        SvcParamKey.INSTANCE: 2,
        SvcParamKey.MAJOR: 1,
        SvcParamKey.MINOR: 4,
    }
    for key, size in required.items():
        if key not in params:
            raise MissingIdentityParam(f"SVCB record lacks {key.name.lower()}")
        if len(params[key]) != size:
            raise FormErr(f"{key.name.lower()} must be {size} bytes")
    try:
        return SvcbServiceRecord(
            port=struct.unpack("!H", params[SvcParamKey.PORT])[0],
            ipv4hint=ipaddress.IPv4Address(params[SvcParamKey.IPV4HINT]),
            protocol=L4Protocol(params[SvcParamKey.PROTOCOL][0]),
            service_id=service_id,
            instance=struct.unpack("!H", params[SvcParamKey.INSTANCE])[0],
            major=params[SvcParamKey.MAJOR][0],
            minor=struct.unpack("!I", params[SvcParamKey.MINOR])[0],
            priority=priority,
            target=target,
        )
    except ValueError as exc:
        raise FormErr(str(exc)) from None


# --- TLSA -------------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class TlsaCertRecord:
    cert_data: bytes
    usage: int = 3
    selector: int = 0
    matching_type: int = 0

    def __post_init__(self):
        _check_tlsa(self.usage, self.selector, self.matching_type)


def _check_tlsa(usage: int, selector: int, matching: int) -> None:
    if usage != 3:
        raise UnsupportedUsage(f"TLSA usage {usage}, only DANE-EE (3) supported")
    if selector != 0:
        raise UnsupportedSelector(f"TLSA selector {selector}, only full certificate (0)")
    if matching != 0:
        raise UnsupportedMatching(f"TLSA matching type {matching}, only exact (0)")


def encode_tlsa_rdata(rec: TlsaCertRecord) -> bytes:
    return bytes([rec.usage, rec.selector, rec.matching_type]) + rec.cert_data


def decode_tlsa_rdata(rdata: bytes) -> TlsaCertRecord:
    if len(rdata) < 4:
        raise Truncated("TLSA rdata too short")
    _check_tlsa(rdata[0], rdata[1], rdata[2])
    return TlsaCertRecord(bytes(rdata[3:]))


def tlsa_owner(port: int, protocol: L4Protocol, service_name: str) -> str:
    return f"_{port}._{L4Protocol(protocol).name.lower()}.{normalize_name(service_name)}"


# --- DNSSEC rdata -----------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class DnskeyRdata:
    flags: int
    protocol: int
    algorithm: int
    public_key: bytes

    ZONE = 0x0100
    SEP = 0x0001
    REVOKE = 0x0080

    def to_wire(self) -> bytes:
        return struct.pack("!HBB", self.flags, self.protocol, self.algorithm) + self.public_key

    @classmethod
    def from_wire(cls, rdata: bytes) -> DnskeyRdata:
        if len(rdata) < 4:
            raise Truncated("DNSKEY rdata too short")
        flags, proto, alg = struct.unpack_from("!HBB", rdata)
        return cls(flags, proto, alg, bytes(rdata[4:]))


@dataclasses.dataclass(frozen=True)
class DsRdata:
    key_tag: int
    algorithm: int
    digest_type: int
    digest: bytes

    def to_wire(self) -> bytes:
        return struct.pack("!HBB", self.key_tag, self.algorithm, self.digest_type) + self.digest

    @classmethod
    def from_wire(cls, rdata: bytes) -> DsRdata:
        if len(rdata) < 5:
            raise Truncated("DS rdata too short")
        tag, alg, dtype = struct.unpack_from("!HBB", rdata)
        return cls(tag, alg, dtype, bytes(rdata[4:]))


@dataclasses.dataclass(frozen=True)
class RrsigRdata:
    type_covered: int
    algorithm: int
    labels: int
    original_ttl: int
    expiration: int
    inception: int
    key_tag: int
    signer: str
    signature: bytes

    _FIXED: typing.ClassVar[struct.Struct] = struct.Struct("!HBBIIIH")

    def header_wire(self) -> bytes:
        """RDATA without the signature, signer name as given."""
        return (
            self._FIXED.pack(
                self.type_covered,
                self.algorithm,
                self.labels,
                self.original_ttl,
                self.expiration,
                self.inception,
                self.key_tag,
            )
            + name_to_wire(self.signer)
        )

    def to_wire(self) -> bytes:
        return self.header_wire() + self.signature

    @classmethod
    def from_wire(cls, rdata: bytes) -> RrsigRdata:
        if len(rdata) < cls._FIXED.size + 1:
            raise Truncated("RRSIG rdata too short")
        fixed = cls._FIXED.unpack_from(rdata)
        signer, pos = read_name(rdata, cls._FIXED.size, allow_compression=False)
        return cls(*fixed, signer, bytes(rdata[pos:]))


@dataclasses.dataclass(frozen=True)
class SoaRdata:
    mname: str
    rname: str
    serial: int
    refresh: int = 3600
    retry: int = 600
    expire: int = 86400
    minimum: int = 300

    def to_wire(self) -> bytes:
        return (
            canonical_name_wire(self.mname)
            + canonical_name_wire(self.rname)
            + struct.pack("!IIIII", self.serial, self.refresh, self.retry, self.expire, self.minimum)
        )

    @classmethod
    def from_wire(cls, rdata: bytes) -> SoaRdata:
        mname, pos = read_name(rdata, 0, allow_compression=False)
        rname, pos = read_name(rdata, pos, allow_compression=False)
        if len(rdata) - pos != 20:
            raise FormErr("bad SOA rdata length")
        return cls(mname, rname, *struct.unpack_from("!IIIII", rdata, pos))


# --- messages ---------------------------------------------------------------

_HEADER = struct.Struct("!HHHHHH")
_QR, _AA, _TC, _RD, _RA, _AD, _CD = 0x8000, 0x0400, 0x0200, 0x0100, 0x0080, 0x0020, 0x0010
_DO = 0x8000


@dataclasses.dataclass(frozen=True)
class Question:
    name: str
    rrtype: int
    rrclass: int = RRClass.IN


@dataclasses.dataclass(frozen=True)
class ResourceRecord:
    name: str
    rrtype: int
    rrclass: int
    ttl: int
    rdata: bytes


@dataclasses.dataclass
class DnsMessage:
    id: int
    response: bool = False
    opcode: int = 0
    authoritative: bool = False
    truncated: bool = False
    recursion_desired: bool = True
    recursion_available: bool = False
    authentic_data: bool = False
    checking_disabled: bool = False
    rcode: int = Rcode.NOERROR
    questions: typing.List[Question] = dataclasses.field(default_factory=list)
    answers: typing.List[ResourceRecord] = dataclasses.field(default_factory=list)
    authority: typing.List[ResourceRecord] = dataclasses.field(default_factory=list)
    additional: typing.List[ResourceRecord] = dataclasses.field(default_factory=list)
    edns: bool = True
    dnssec_ok: bool = True

    def to_wire(self) -> bytes:
        flags = (self.opcode & 0xF) << 11 | (self.rcode & 0xF)
        for bit, on in (
            (_QR, self.response),
            (_AA, self.authoritative),
            (_TC, self.truncated),
            (_RD, self.recursion_desired),
            (_RA, self.recursion_available),
            (_AD, self.authentic_data),
            (_CD, self.checking_disabled),
        ):
            if on:
                flags |= bit
        additional = list(self.additional)
        if self.edns:
            additional.append(
                ResourceRecord(".", RRType.OPT, EDNS_UDP_SIZE, _DO if self.dnssec_ok else 0, b"")
            )
        out = bytearray(
            _HEADER.pack(
                self.id,
                flags,
                len(self.questions),
                len(self.answers),
                len(self.authority),
                len(additional),
            )
        )
        for q in self.questions:
            out += name_to_wire(q.name) + struct.pack("!HH", q.rrtype, q.rrclass)
        for rr in (*self.answers, *self.authority, *additional):
            out += name_to_wire(rr.name)
            out += struct.pack("!HHIH", rr.rrtype, rr.rrclass, rr.ttl, len(rr.rdata))
            out += rr.rdata
        return bytes(out)

    @classmethod
    def from_wire(cls, buf: bytes) -> DnsMessage:
        buf = bytes(buf)
        if len(buf) < _HEADER.size:
            raise Truncated(f"DNS header needs 12 bytes, got {len(buf)}")
        mid, flags, qd, an, ns, ar = _HEADER.unpack_from(buf)
        msg = cls(
            id=mid,
            response=bool(flags & _QR),
            opcode=(flags >> 11) & 0xF,
            authoritative=bool(flags & _AA),
            truncated=bool(flags & _TC),
            recursion_desired=bool(flags & _RD),
            recursion_available=bool(flags & _RA),
            authentic_data=bool(flags & _AD),
            checking_disabled=bool(flags & _CD),
            rcode=flags & 0xF,
            edns=False,
            dnssec_ok=False,
        )
        pos = _HEADER.size
        for _ in range(qd):
            name, pos = read_name(buf, pos)
            if pos + 4 > len(buf):
                raise Truncated("truncated question")
            rrtype, rrclass = struct.unpack_from("!HH", buf, pos)
            pos += 4
            msg.questions.append(Question(name, rrtype, rrclass))
        sections = ((msg.answers, an), (msg.authority, ns), (msg.additional, ar))
        for section, count in sections:
            for _ in range(count):
                name, pos = read_name(buf, pos)
                if pos + 10 > len(buf):
                    raise Truncated("truncated resource record header")
                rrtype, rrclass, ttl, rdlen = struct.unpack_from("!HHIH", buf, pos)
                pos += 10
                if pos + rdlen > len(buf):
                    raise Truncated("truncated rdata")
                rdata = buf[pos : pos + rdlen]
                pos += rdlen
                if rrtype == RRType.OPT:
                    if section is not msg.additional or msg.edns or name != ".":
                        raise FormErr("misplaced OPT record")
                    msg.edns = True
                    msg.dnssec_ok = bool(ttl & _DO)
                    continue
                section.append(ResourceRecord(name, rrtype, rrclass, ttl, rdata))
        if pos != len(buf):
            raise FormErr("trailing bytes after DNS message")
        return msg


def encode_dns_query(name: str, rrtype: int, id: int, dnssec_ok: bool = True) -> bytes:
    if not name.endswith("."):
        raise DnsError(f"query name must be absolute: {name!r}")
    msg = DnsMessage(id=id, questions=[Question(name, int(rrtype))], dnssec_ok=dnssec_ok)
    return msg.to_wire()


def group_rrsets(records: typing.Iterable[ResourceRecord]) -> typing.List[SignedRRset]:
    """Collect records into RRsets and attach the RRSIGs that cover them."""
    sets: typing.Dict[typing.Tuple[str, int], typing.List[ResourceRecord]] = {}
    sigs: typing.Dict[typing.Tuple[str, int], typing.List[bytes]] = {}
    for rr in records:
        if rr.rrclass != RRClass.IN:
            raise FormErr(f"unsupported class {rr.rrclass}")
        owner = normalize_name(rr.name)
        if rr.rrtype == RRType.RRSIG:
            if len(rr.rdata) < 2:
                raise Truncated("RRSIG without type covered")
            covered = struct.unpack_from("!H", rr.rdata)[0]
            sigs.setdefault((owner, covered), []).append(rr.rdata)
        else:
            sets.setdefault((owner, rr.rrtype), []).append(rr)
    out = []
    for (owner, rrtype), rrs in sets.items():
        try:
            rrtype = RRType(rrtype)
        except ValueError:
            raise FormErr(f"unsupported record type {rrtype}") from None
        rrset = ResourceRecordSet(
            rrs[0].name, rrtype, min(r.ttl for r in rrs), tuple(r.rdata for r in rrs)
        )
        out.append(SignedRRset(rrset, tuple(sigs.get((owner, rrtype), ()))))
    return out


@dataclasses.dataclass(frozen=True)
class DnsResponse:
    rrsets: typing.Tuple[SignedRRset, ...]
    rcode: Rcode
    authenticated: bool
    message: DnsMessage

    def find(self, owner: str, rrtype: int) -> typing.Optional[SignedRRset]:
        key = (normalize_name(owner), rrtype)
        for s in self.rrsets:
            if s.rrset.key == key:
                return s
        return None


def decode_dns_response(buf: bytes, expected_id: typing.Optional[int] = None) -> DnsResponse:
    msg = DnsMessage.from_wire(buf)
    if not msg.response:
        raise FormErr("not a response")
    if expected_id is not None and msg.id != expected_id:
        raise IdMismatch(f"response id {msg.id} != query id {expected_id}")
    try:
        rcode = Rcode(msg.rcode)
    except ValueError:
        raise FormErr(f"unknown rcode {msg.rcode}") from None
    return DnsResponse(tuple(group_rrsets(msg.answers)), rcode, msg.authentic_data, msg)


def rrset_records(signed: SignedRRset) -> typing.List[ResourceRecord]:
    rrset = signed.rrset
    records = [
        ResourceRecord(rrset.owner, rrset.rrtype, rrset.rrclass, rrset.ttl, rd)
        for rd in rrset.rdatas
    ]
    records += [
        ResourceRecord(rrset.owner, RRType.RRSIG, rrset.rrclass, rrset.ttl, sig)
        for sig in signed.rrsigs
    ]
    return records
