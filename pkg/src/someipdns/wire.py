"""SOME/IP-SD message codec.

A message is a 16-byte SOME/IP header (service 0xFFFF, method 0x8100)
followed by the SD payload::

    flags(1) reserved(3) entries_len(4) entries... options_len(4) options...

Every entry is 16 bytes::

    type(1) idx1(1) idx2(1) nopts(1) service(2) instance(2) major(1) ttl(3) word(4)

where ``word`` is the minor version for Find/Offer entries and
``reserved(2) eventgroup(2)`` for Subscribe/SubscribeAck entries.
Everything is big-endian.
"""

from __future__ import annotations

import dataclasses
import enum
import ipaddress
import struct
import typing

SD_SERVICE = 0xFFFF
SD_METHOD = 0x8100
SD_CLIENT = 0x0000
SOMEIP_PROTOCOL_VERSION = 0x01
SD_INTERFACE_VERSION = 0x01
SOMEIP_NOTIFICATION = 0x02

FLAG_REBOOT = 0x80
FLAG_UNICAST = 0x40

ENTRY_SIZE = 16
MAX_CONFIG_ITEM = 255
MAX_OPTIONS = 255

_SOMEIP_HEADER = struct.Struct("!HHIHHBBBB")
_SD_HEADER = struct.Struct("!B3xI")
_ENTRY = struct.Struct("!BBBBHHB3s4s")
_OPTION_HEADER = struct.Struct("!HBB")
_IPV4_ENDPOINT = struct.Struct("!4sxBH")


class Wildcard(enum.Enum):
    WILDCARD = "*"

    def __repr__(self) -> str:
        return "WILDCARD"


WILDCARD = Wildcard.WILDCARD

# wire encodings for "any"
INSTANCE_ANY = 0xFFFF
MAJOR_ANY = 0xFF
MINOR_ANY = 0xFFFFFFFF

Field = typing.Union[int, Wildcard]


class SdError(ValueError):
    """Base class for SD codec errors."""


class Truncated(SdError):
    pass


class UnknownEntryType(SdError):
    pass


class UnknownOptionType(SdError):
    pass


class DanglingOptionRef(SdError):
    pass


class OversizedOption(SdError):
    pass


class TooManyOptions(SdError):
    pass


class MalformedMessage(SdError):
    """Structurally invalid content that is neither truncated nor dangling."""


class InvalidEntry(SdError):
    pass


class EntryType(enum.IntEnum):
    FIND = 0x00
    OFFER = 0x01
    SUBSCRIBE = 0x06
    SUBSCRIBE_ACK = 0x07

    @property
    def is_eventgroup(self) -> bool:
        return self in (EntryType.SUBSCRIBE, EntryType.SUBSCRIBE_ACK)


class L4Protocol(enum.IntEnum):
    TCP = 0x06
    UDP = 0x11


class OptionType(enum.IntEnum):
    CONFIGURATION = 0x01
    IPV4_ENDPOINT = 0x04


def _check_field(name: str, value: Field, limit: int) -> None:
    if value is WILDCARD:
        return
    if isinstance(value, bool) or not isinstance(value, int):
        raise TypeError(f"{name} must be int or WILDCARD, got {value!r}")
    if not 0 <= value < limit:
        raise ValueError(f"{name}=0x{value:x} out of range (max 0x{limit - 1:x})")


@dataclasses.dataclass(frozen=True)
class ServiceDescription:
    """Service identity as carried in find/offer entries.

    Concrete values must stay below the all-ones "any" encoding of each
    field, otherwise they would be indistinguishable from WILDCARD on the
    wire.
    """

    service_id: int
    instance_id: Field = WILDCARD
    major_version: Field = WILDCARD
    minor_version: Field = WILDCARD

    def __post_init__(self):
        if self.service_id is WILDCARD:
            raise ValueError("service_id can not be wildcarded")
        _check_field("service_id", self.service_id, 0xFFFF)
        _check_field("instance_id", self.instance_id, INSTANCE_ANY)
        _check_field("major_version", self.major_version, MAJOR_ANY)
        _check_field("minor_version", self.minor_version, MINOR_ANY)

    @property
    def is_concrete(self) -> bool:
        return WILDCARD not in (self.instance_id, self.major_version, self.minor_version)

    def matches(self, other: ServiceDescription) -> bool:
        """True if ``other`` is covered by this (possibly wildcarded) pattern."""
        pairs = (
            (self.service_id, other.service_id),
            (self.instance_id, other.instance_id),
            (self.major_version, other.major_version),
            (self.minor_version, other.minor_version),
        )
        return all(mine is WILDCARD or mine == theirs for mine, theirs in pairs)

    def __str__(self) -> str:
        def fmt(v, w):
            return "*" if v is WILDCARD else f"0x{v:0{w}x}"

        return (
            f"service={fmt(self.service_id, 4)} instance={fmt(self.instance_id, 4)}"
            f" major={fmt(self.major_version, 2)} minor={fmt(self.minor_version, 8)}"
        )


@dataclasses.dataclass(frozen=True)
class EndpointInfo:
    ip: ipaddress.IPv4Address
    l4_protocol: L4Protocol
    port: int

    def __post_init__(self):
        if not isinstance(self.ip, ipaddress.IPv4Address):
            object.__setattr__(self, "ip", ipaddress.IPv4Address(self.ip))
        object.__setattr__(self, "l4_protocol", L4Protocol(self.l4_protocol))
        if not 1 <= self.port <= 0xFFFF:
            raise ValueError(f"port {self.port} out of range")

    @property
    def address(self) -> typing.Tuple[str, int]:
        return str(self.ip), self.port


@dataclasses.dataclass(frozen=True)
class ConfigOption:
    """Ordered key/value items, encoded DNS-TXT style as ``key=value`` strings."""

    items: typing.Tuple[typing.Tuple[str, bytes], ...] = ()

    def __post_init__(self):
        items = tuple((str(k), bytes(v)) for k, v in self.items)
        object.__setattr__(self, "items", items)
        keys = [k for k, _ in items]
        if len(set(keys)) != len(keys):
            raise ValueError(f"duplicate keys in configuration option: {keys}")
        for key, _ in items:
            if not key or "=" in key or not key.isascii():
                raise ValueError(f"invalid configuration key {key!r}")

    @classmethod
    def from_dict(cls, mapping: typing.Mapping[str, bytes]) -> ConfigOption:
        return cls(tuple(mapping.items()))

    def get(self, key: str, default: typing.Optional[bytes] = None) -> typing.Optional[bytes]:
        for k, v in self.items:
            if k == key:
                return v
        return default

    def __contains__(self, key: str) -> bool:
        return self.get(key) is not None


Option = typing.Union[EndpointInfo, ConfigOption]


@dataclasses.dataclass(frozen=True)
class SdEntry:
    kind: EntryType
    service: ServiceDescription
    ttl_seconds: int = 0
    eventgroup_id: typing.Optional[int] = None
    option_refs: typing.Tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "kind", EntryType(self.kind))
        object.__setattr__(self, "option_refs", tuple(self.option_refs))
        if not 0 <= self.ttl_seconds <= 0xFFFFFF:
            raise ValueError(f"ttl {self.ttl_seconds} does not fit 24 bits")
        if self.kind.is_eventgroup:
            if self.eventgroup_id is None or not 0 <= self.eventgroup_id <= 0xFFFF:
                raise ValueError("eventgroup entries need a 16-bit eventgroup_id")
            if self.service.minor_version is not WILDCARD:
                raise ValueError("eventgroup entries carry no minor version")
        elif self.eventgroup_id is not None:
            raise ValueError("find/offer entries carry no eventgroup")

    @property
    def is_nack(self) -> bool:
        return self.kind is EntryType.SUBSCRIBE_ACK and self.ttl_seconds == 0


@dataclasses.dataclass(frozen=True)
class SdMessage:
    session_id: int = 1
    reboot_flag: bool = False
    unicast_flag: bool = True
    entries: typing.Tuple[SdEntry, ...] = ()
    options: typing.Tuple[Option, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        object.__setattr__(self, "options", tuple(self.options))
        if not 0 <= self.session_id <= 0xFFFF:
            raise ValueError(f"session_id {self.session_id} out of range")

    def options_of(self, entry: SdEntry) -> typing.List[Option]:
        return [self.options[i] for i in entry.option_refs]

    def encode(self) -> bytes:
        return encode_sd_message(self)

    @classmethod
    def decode(cls, buf: bytes) -> SdMessage:
        return decode_sd_message(buf)


class SessionCounter:
    """Per-sender session id: 1..0xFFFF, wrapping to 1; reboot flag until first wrap."""

    def __init__(self):
        self._next = 1
        self.reboot = True

    def next(self) -> typing.Tuple[int, bool]:
        value, reboot = self._next, self.reboot
        if self._next == 0xFFFF:
            self._next = 1
            self.reboot = False
        else:
            self._next += 1
        return value, reboot


def _wire_field(value: Field, any_value: int) -> int:
    return any_value if value is WILDCARD else value


def _from_wire(value: int, any_value: int) -> Field:
    return WILDCARD if value == any_value else value


def _runs(refs: typing.Tuple[int, ...]) -> typing.List[typing.Tuple[int, int]]:
    runs: typing.List[typing.List[int]] = []
    for idx in refs:
        if runs and idx == runs[-1][0] + runs[-1][1] and runs[-1][1] < 15:
            runs[-1][1] += 1
        else:
            runs.append([idx, 1])
    if len(runs) > 2:
        raise InvalidEntry(f"option refs {refs} do not fit two index runs")
    while len(runs) < 2:
        runs.append([0, 0])
    return [(a, b) for a, b in runs]


def _check_entry_options(entry: SdEntry, options: typing.Sequence[Option]) -> None:
    endpoints = sum(isinstance(options[i], EndpointInfo) for i in entry.option_refs)
    if entry.kind is EntryType.FIND and endpoints:
        raise InvalidEntry("find entries reference no endpoint options")
    if entry.kind in (EntryType.OFFER, EntryType.SUBSCRIBE) and not endpoints:
        raise InvalidEntry(f"{entry.kind.name} entries need an endpoint option")


def _encode_entry(entry: SdEntry) -> bytes:
    (i1, n1), (i2, n2) = _runs(entry.option_refs)
    svc = entry.service
    if entry.kind.is_eventgroup:
        word = struct.pack("!HH", 0, entry.eventgroup_id)
    else:
        word = struct.pack("!I", _wire_field(svc.minor_version, MINOR_ANY))
    return _ENTRY.pack(
        entry.kind,
        i1,
        i2,
        (n1 << 4) | n2,
        svc.service_id,
        _wire_field(svc.instance_id, INSTANCE_ANY),
        _wire_field(svc.major_version, MAJOR_ANY),
        entry.ttl_seconds.to_bytes(3, "big"),
        word,
    )


def _encode_option(option: Option) -> bytes:
    if isinstance(option, EndpointInfo):
        body = _IPV4_ENDPOINT.pack(option.ip.packed, option.l4_protocol, option.port)
        otype = OptionType.IPV4_ENDPOINT
    elif isinstance(option, ConfigOption):
        parts = []
        for key, value in option.items:
            item = key.encode("ascii") + b"=" + value
            if len(item) > MAX_CONFIG_ITEM:
                raise OversizedOption(f"configuration item {key!r} is {len(item)} bytes")
            parts.append(bytes([len(item)]) + item)
        body = b"".join(parts) + b"\x00"
        otype = OptionType.CONFIGURATION
    else:
        raise TypeError(f"unsupported option {option!r}")
    # the length field counts the reserved byte plus the body
    return _OPTION_HEADER.pack(len(body) + 1, otype, 0) + body


def encode_sd_message(msg: SdMessage) -> bytes:
    if len(msg.options) > MAX_OPTIONS:
        raise TooManyOptions(f"{len(msg.options)} options")
    for entry in msg.entries:
        for idx in entry.option_refs:
            if not 0 <= idx < len(msg.options):
                raise DanglingOptionRef(f"option index {idx} beyond {len(msg.options)}")
        _check_entry_options(entry, msg.options)

    entries = b"".join(_encode_entry(e) for e in msg.entries)
    options = b"".join(_encode_option(o) for o in msg.options)
    flags = (FLAG_REBOOT if msg.reboot_flag else 0) | (FLAG_UNICAST if msg.unicast_flag else 0)
    payload = (
        _SD_HEADER.pack(flags, len(entries))
        + entries
        + struct.pack("!I", len(options))
        + options
    )
    header = _SOMEIP_HEADER.pack(
        SD_SERVICE,
        SD_METHOD,
        len(payload) + 8,
        SD_CLIENT,
        msg.session_id,
        SOMEIP_PROTOCOL_VERSION,
        SD_INTERFACE_VERSION,
        SOMEIP_NOTIFICATION,
        0,
    )
    return header + payload


def _take(buf: memoryview, pos: int, size: int) -> memoryview:
    if pos + size > len(buf):
        raise Truncated(f"need {size} bytes at offset {pos}, have {len(buf) - pos}")
    return buf[pos : pos + size]


def _decode_entry(raw: bytes) -> SdEntry:
    etype, i1, i2, nopts, sid, inst, major, ttl, word = _ENTRY.unpack(raw)
    try:
        kind = EntryType(etype)
    except ValueError:
        raise UnknownEntryType(f"entry type 0x{etype:02x}") from None
    n1, n2 = nopts >> 4, nopts & 0x0F
    if (n1 == 0 and i1) or (n2 == 0 and i2):
        raise MalformedMessage("option index set without count")
    refs = tuple(range(i1, i1 + n1)) + tuple(range(i2, i2 + n2))
    if kind.is_eventgroup:
        reserved, eventgroup = struct.unpack("!HH", word)
        if reserved:
            raise MalformedMessage("reserved bits set in eventgroup entry")
        minor: Field = WILDCARD
    else:
        eventgroup = None
        minor = _from_wire(int.from_bytes(word, "big"), MINOR_ANY)
    if sid == 0xFFFF:
        raise MalformedMessage("service id 0xFFFF is reserved")
    service = ServiceDescription(
        sid, _from_wire(inst, INSTANCE_ANY), _from_wire(major, MAJOR_ANY), minor
    )
    return SdEntry(kind, service, int.from_bytes(ttl, "big"), eventgroup, refs)


def _decode_config(body: bytes) -> ConfigOption:
    items = []
    pos = 0
    while True:
        if pos >= len(body):
            raise Truncated("configuration option lacks terminator")
        n = body[pos]
        pos += 1
        if n == 0:
            break
        if pos + n > len(body):
            raise Truncated("configuration item overruns option")
        item = body[pos : pos + n]
        pos += n
        key, sep, value = item.partition(b"=")
        if not sep or not key:
            raise MalformedMessage(f"configuration item without key: {item!r}")
        try:
            items.append((key.decode("ascii"), value))
        except UnicodeDecodeError:
            raise MalformedMessage("non-ASCII configuration key") from None
    if pos != len(body):
        raise MalformedMessage("trailing bytes after configuration terminator")
    try:
        return ConfigOption(tuple(items))
    except ValueError as exc:
        raise MalformedMessage(str(exc)) from None


def _decode_options(buf: memoryview) -> typing.List[Option]:
    options: typing.List[Option] = []
    pos = 0
    while pos < len(buf):
        length, otype, reserved = _OPTION_HEADER.unpack(_take(buf, pos, _OPTION_HEADER.size))
        if length < 1:
            raise MalformedMessage("option length below 1")
        body = bytes(_take(buf, pos + _OPTION_HEADER.size, length - 1))
        pos += _OPTION_HEADER.size + length - 1
        if reserved:
            raise MalformedMessage("reserved option byte set")
        if otype == OptionType.IPV4_ENDPOINT:
            if len(body) != _IPV4_ENDPOINT.size or body[4]:
                raise MalformedMessage("bad IPv4 endpoint option")
            ip, proto, port = _IPV4_ENDPOINT.unpack(body)
            try:
                options.append(EndpointInfo(ipaddress.IPv4Address(ip), L4Protocol(proto), port))
            except ValueError as exc:
                raise MalformedMessage(str(exc)) from None
        elif otype == OptionType.CONFIGURATION:
            options.append(_decode_config(body))
        else:
            raise UnknownOptionType(f"option type 0x{otype:02x}")
    return options


def decode_sd_message(buf: bytes) -> SdMessage:
    view = memoryview(bytes(buf))
    sid, mid, length, client, session, pv, iv, mt, rc = _SOMEIP_HEADER.unpack(
        _take(view, 0, _SOMEIP_HEADER.size)
    )
    if (sid, mid) != (SD_SERVICE, SD_METHOD):
        raise MalformedMessage(f"not an SD message: 0x{sid:04x}/0x{mid:04x}")
    if (client, pv, iv, mt, rc) != (
        SD_CLIENT,
        SOMEIP_PROTOCOL_VERSION,
        SD_INTERFACE_VERSION,
        SOMEIP_NOTIFICATION,
        0,
    ):
        raise MalformedMessage("unexpected SOME/IP header values")
    if length < 8:
        raise MalformedMessage(f"SOME/IP length {length} below 8")
    end = 8 + length
    if end > len(view):
        raise Truncated(f"SOME/IP length {length} exceeds buffer")
    if end < len(view):
        raise MalformedMessage("trailing bytes after SOME/IP message")

    pos = _SOMEIP_HEADER.size
    flags, entries_len = _SD_HEADER.unpack(_take(view, pos, _SD_HEADER.size))
    if flags & ~(FLAG_REBOOT | FLAG_UNICAST):
        raise MalformedMessage(f"unknown SD flags 0x{flags:02x}")
    if bytes(view[pos + 1 : pos + 4]) != b"\x00\x00\x00":
        raise MalformedMessage("reserved SD header bytes set")
    pos += _SD_HEADER.size
    if entries_len % ENTRY_SIZE:
        raise MalformedMessage(f"entries length {entries_len} not a multiple of {ENTRY_SIZE}")
    raw_entries = _take(view, pos, entries_len)
    pos += entries_len
    (options_len,) = struct.unpack("!I", _take(view, pos, 4))
    pos += 4
    raw_options = _take(view, pos, options_len)
    if pos + options_len != len(view):
        raise MalformedMessage("SD lengths disagree with SOME/IP length")

    entries = [
        _decode_entry(bytes(raw_entries[i : i + ENTRY_SIZE]))
        for i in range(0, entries_len, ENTRY_SIZE)
    ]
    options = _decode_options(raw_options)
    if len(options) > MAX_OPTIONS:
        raise TooManyOptions(f"{len(options)} options")
    for entry in entries:
        for idx in entry.option_refs:
            if idx >= len(options):
                raise DanglingOptionRef(f"option index {idx} beyond {len(options)}")
        try:
            _check_entry_options(entry, options)
        except InvalidEntry as exc:
            raise MalformedMessage(str(exc)) from None

    return SdMessage(
        session_id=session,
        reboot_flag=bool(flags & FLAG_REBOOT),
        unicast_flag=bool(flags & FLAG_UNICAST),
        entries=tuple(entries),
        options=tuple(options),
    )
