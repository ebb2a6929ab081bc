"""Signing authoritative nameserver and validating caching stub resolver.

The authoritative side turns a service catalog into a signed zone: SVCB
records at all six query names of every instance plus one TLSA record per
instance. The resolver side validates answers up to a trust anchor before
caching them, and keeps serving cached answers while the upstream is gone.
"""

from __future__ import annotations

import dataclasses
import enum
import json
import logging
import os
import socket
import socketserver
import threading
import time
import typing

from cryptography import x509
from cryptography.hazmat.primitives.asymmetric import ed25519

from . import dnscore
from .dnscore import (
    DnsMessage,
    Question,
    Rcode,
    ResourceRecordSet,
    RRType,
    SignedRRset,
    SoaRdata,
    SvcbServiceRecord,
    TlsaCertRecord,
    encode_svcb_rdata,
    encode_tlsa_rdata,
    is_subdomain,
    rrset_records,
    tlsa_owner,
)
from .dnssec import (
    Bogus,
    KeyRole,
    TrustAnchor,
    ZoneMaterial,
    ZoneSigningKey,
    sign_rrset,
    validate_chain,
)
from .namespace import DEFAULT_PARENT, enumerate_valid_names, normalize_name, to_query_name
from .transport import Address, BindFailure
from .wire import EndpointInfo, L4Protocol, ServiceDescription

log = logging.getLogger(__name__)

DEFAULT_TTL = 3600
DEFAULT_VALIDITY = 30 * 86400
DEFAULT_AUTHORITATIVE_PORT = 5300
DEFAULT_STUB_PORT = 5301


class ZoneError(ValueError):
    pass


class DuplicateInstance(ZoneError):
    pass


class InvalidCertificate(ZoneError):
    pass


class UpstreamTimeout(Exception):
    pass


@dataclasses.dataclass(frozen=True)
class ServiceCatalogEntry:
    description: ServiceDescription
    endpoint: EndpointInfo
    certificate: bytes
    eventgroups: typing.Tuple[int, ...] = ()
    priority: int = 1

    def __post_init__(self):
        object.__setattr__(self, "eventgroups", tuple(self.eventgroups))
        if not self.description.is_concrete:
            raise ValueError(f"catalog entry {self.description} must be concrete")

    def svcb(self) -> SvcbServiceRecord:
        d = self.description
        return SvcbServiceRecord(
            port=self.endpoint.port,
            ipv4hint=self.endpoint.ip,
            protocol=self.endpoint.l4_protocol,
            service_id=d.service_id,
            instance=d.instance_id,
            major=d.major_version,
            minor=d.minor_version,
            priority=self.priority,
        )

    def tlsa_name(self, parent: str = DEFAULT_PARENT) -> str:
        return tlsa_owner(
            self.endpoint.port, self.endpoint.l4_protocol, str(to_query_name(self.description, parent))
        )


def check_certificate(cert_data: bytes) -> None:
    try:
        cert = x509.load_der_x509_certificate(cert_data)
        key = cert.public_key()
    except ValueError as exc:
        raise InvalidCertificate(str(exc)) from None
    if not isinstance(key, ed25519.Ed25519PublicKey):
        raise InvalidCertificate(f"certificate key is {type(key).__name__}, not Ed25519")


# --- zones ------------------------------------------------------------------


@dataclasses.dataclass
class SignedZone:
    origin: str
    ksk: ZoneSigningKey
    zsk: ZoneSigningKey
    rrsets: typing.Dict[typing.Tuple[str, RRType], SignedRRset]
    inception: int
    expiration: int

    @property
    def anchor(self) -> TrustAnchor:
        return TrustAnchor.from_key(self.ksk)

    def lookup(self, name: str, rrtype: int) -> typing.Optional[SignedRRset]:
        return self.rrsets.get((normalize_name(name), rrtype))

    def names(self) -> typing.Set[str]:
        return {owner for owner, _ in self.rrsets}

    def signatures(self) -> int:
        return sum(len(s.rrsigs) for s in self.rrsets.values())

    def put(self, rrset: ResourceRecordSet) -> SignedRRset:
        rrset = rrset.canonical()
        key = self.ksk if rrset.rrtype == RRType.DNSKEY else self.zsk
        sig = sign_rrset(rrset, key, self.inception, self.expiration)
        signed = SignedRRset(rrset, (sig,))
        self.rrsets[rrset.key] = signed
        return signed

    def add_delegation(self, child: SignedZone, ttl: int = DEFAULT_TTL) -> None:
        """Publish the child's KSK digest as a signed DS set."""
        if not is_subdomain(child.origin, self.origin) or child.origin == self.origin:
            raise ZoneError(f"{child.origin} is not below {self.origin}")
        ds = child.ksk.ds().to_wire()
        self.put(ResourceRecordSet(child.origin, RRType.DS, ttl, (ds,)))


def _zone_keys(origin: str, keys) -> typing.Tuple[ZoneSigningKey, ZoneSigningKey]:
    if keys is None:
        return (
            ZoneSigningKey.generate(origin, KeyRole.KSK),
            ZoneSigningKey.generate(origin, KeyRole.ZSK),
        )
    ksk, zsk = keys
    return ksk, zsk


def build_zone(
    catalog: typing.Sequence[ServiceCatalogEntry],
    parent: str = DEFAULT_PARENT,
    keys: typing.Optional[typing.Tuple[ZoneSigningKey, ZoneSigningKey]] = None,
    now: typing.Optional[int] = None,
    ttl: int = DEFAULT_TTL,
    validity: int = DEFAULT_VALIDITY,
) -> SignedZone:
    """Sign a zone at ``parent`` publishing every catalog entry.

    Instances that answer the same wildcard name share one SVCB RRset.
    """
    origin = normalize_name(parent)
    now = int(time.time()) if now is None else int(now)
    ksk, zsk = _zone_keys(origin, keys)
    zone = SignedZone(origin, ksk, zsk, {}, now - 3600, now + validity)

    seen = set()
    svcb: typing.Dict[str, typing.List[bytes]] = {}
    tlsa: typing.Dict[str, bytes] = {}
    for entry in catalog:
        ident = (entry.description.service_id, entry.description.instance_id)
        if ident in seen:
            raise DuplicateInstance(f"service 0x{ident[0]:04x} instance 0x{ident[1]:04x} listed twice")
        seen.add(ident)
        check_certificate(entry.certificate)
        rdata = encode_svcb_rdata(entry.svcb())
        for qname in enumerate_valid_names(entry.description, origin):
            svcb.setdefault(str(qname), []).append(rdata)
        tlsa[entry.tlsa_name(origin)] = encode_tlsa_rdata(TlsaCertRecord(entry.certificate))

    soa = SoaRdata(f"ns.{origin}", f"hostmaster.{origin}", now & 0xFFFFFFFF, minimum=ttl)
    zone.put(ResourceRecordSet(origin, RRType.SOA, ttl, (soa.to_wire(),)))
    zone.put(
        ResourceRecordSet(origin, RRType.DNSKEY, ttl, (ksk.dnskey.to_wire(), zsk.dnskey.to_wire()))
    )
    for owner, rdatas in svcb.items():
        zone.put(ResourceRecordSet(owner, RRType.SVCB, ttl, tuple(rdatas)))
    for owner, rdata in tlsa.items():
        zone.put(ResourceRecordSet(owner, RRType.TLSA, ttl, (rdata,)))
    return zone


# --- authoritative server ---------------------------------------------------


def _error_response(query: DnsMessage, rcode: Rcode) -> bytes:
    return DnsMessage(
        id=query.id,
        response=True,
        opcode=query.opcode,
        recursion_desired=query.recursion_desired,
        rcode=rcode,
        questions=list(query.questions[:1]),
        edns=query.edns,
        dnssec_ok=query.dnssec_ok,
    ).to_wire()


def _formerr(buf: bytes) -> typing.Optional[bytes]:
    if len(buf) < 12:
        return None
    mid = int.from_bytes(buf[:2], "big")
    return DnsMessage(id=mid, response=True, rcode=Rcode.FORMERR, edns=False).to_wire()


class AuthoritativeServer:
    """Answers from one or more signed zones; stateless per query."""

    def __init__(self, zones: typing.Iterable[SignedZone]):
        self.zones = {z.origin: z for z in zones}

    def _zone_for(self, qname: str, qtype: int) -> typing.Optional[SignedZone]:
        best = None
        for origin, zone in self.zones.items():
            if not is_subdomain(qname, origin):
                continue
            if qtype == RRType.DS and origin == qname:
                # DS lives on the parent side of the cut
                continue
            if best is None or len(origin) > len(best.origin):
                best = zone
        return best

    def handle(self, buf: bytes) -> typing.Optional[bytes]:
        try:
            query = DnsMessage.from_wire(buf)
        except dnscore.DnsError:
            return _formerr(buf)
        if query.response:
            return None
        if query.opcode != 0:
            return _error_response(query, Rcode.NOTIMP)
        if len(query.questions) != 1:
            return _error_response(query, Rcode.FORMERR)
        q = query.questions[0]
        qname = normalize_name(q.name)
        zone = self._zone_for(qname, q.rrtype)
        if zone is None:
            return _error_response(query, Rcode.REFUSED)
        answer = zone.lookup(qname, q.rrtype)
        reply = DnsMessage(
            id=query.id,
            response=True,
            authoritative=True,
            recursion_desired=query.recursion_desired,
            questions=[Question(q.name, q.rrtype, q.rrclass)],
            edns=query.edns,
            dnssec_ok=query.dnssec_ok,
        )
        if answer is not None:
            reply.answers = rrset_records(answer) if query.dnssec_ok else rrset_records(
                SignedRRset(answer.rrset)
            )
        elif qname not in zone.names():
            reply.rcode = Rcode.NXDOMAIN
        return reply.to_wire()


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        data, sock = self.request
        reply = self.server.dns_handler(data)
        if reply is not None:
            sock.sendto(reply, self.client_address)


class _Server(socketserver.ThreadingUDPServer):
    daemon_threads = True


class UdpResponder:
    """Runs a ``bytes -> bytes | None`` handler on a UDP socket in a thread."""

    def __init__(self, handler: typing.Callable[[bytes], typing.Optional[bytes]], address: Address):
        try:
            self._server = _Server(address, _Handler)
        except OSError as exc:
            raise BindFailure(f"can not bind {address}: {exc}") from exc
        self._server.dns_handler = handler
        self.address: Address = self._server.server_address
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()

    def close(self) -> None:
        self._server.shutdown()
        self._server.server_close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def serve_authoritative(
    zone: typing.Union[SignedZone, AuthoritativeServer],
    address: Address = ("127.0.0.1", DEFAULT_AUTHORITATIVE_PORT),
) -> UdpResponder:
    server = zone if isinstance(zone, AuthoritativeServer) else AuthoritativeServer([zone])
    return UdpResponder(server.handle, address)


def attach_inproc(network, address: Address, handler) -> typing.Any:
    """Bind ``handler`` on an in-process network; replies go back to the sender."""
    sock = None

    def receive(data: bytes, src: Address) -> None:
        reply = handler(data)
        if reply is not None:
            sock.send(reply, src)

    sock = network.bind(address, receive)
    return sock


# --- upstreams --------------------------------------------------------------


class InProcUpstream:
    """Direct calls into an authoritative server; ``severed`` simulates an outage."""

    def __init__(self, server: AuthoritativeServer):
        self.server = server
        self.severed = False

    def exchange(self, query: bytes, timeout: float) -> bytes:
        if self.severed:
            raise UpstreamTimeout("upstream unreachable")
        reply = self.server.handle(query)
        if reply is None:
            raise UpstreamTimeout("no reply")
        return reply


class UdpUpstream:
    def __init__(self, address: Address):
        self.address = address

    def exchange(self, query: bytes, timeout: float) -> bytes:
        qid = int.from_bytes(query[:2], "big")
        with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as s:
            s.settimeout(timeout)
            deadline = time.monotonic() + timeout
            try:
                s.sendto(query, self.address)
                while True:
                    s.settimeout(max(deadline - time.monotonic(), 1e-3))
                    data, src = s.recvfrom(65535)
                    if src == self.address and data[:2] == qid.to_bytes(2, "big"):
                        return data
            except (socket.timeout, OSError) as exc:
                raise UpstreamTimeout(f"{self.address}: {exc}") from None


# --- validating resolver ----------------------------------------------------


class ResolveStatus(enum.Enum):
    SECURE = "Secure"
    NOT_FOUND = "NotFound"
    BOGUS = "Bogus"


@dataclasses.dataclass(frozen=True)
class Resolution:
    status: ResolveStatus
    rrset: typing.Optional[SignedRRset] = None
    detail: str = ""
    from_cache: bool = False


@dataclasses.dataclass(frozen=True)
class CacheEntry:
    rrset: SignedRRset
    inserted_at: float
    ttl: float

    def fresh(self, now: float) -> bool:
        return now <= self.inserted_at + self.ttl

    def due_for_refresh(self, now: float) -> bool:
        return now >= self.inserted_at + 0.75 * self.ttl


class ValidatingResolver:
    """Validating, caching stub resolver anchored at one trust anchor."""

    def __init__(
        self,
        upstream,
        anchor: TrustAnchor,
        timeout: float = 1.0,
        clock: typing.Callable[[], float] = time.time,
    ):
        self.upstream = upstream
        self.anchor = anchor
        self.timeout = timeout
        self.clock = clock
        self.upstream_queries = 0
        self._cache: typing.Dict[typing.Tuple[str, int], CacheEntry] = {}
        self._lock = threading.RLock()
        self._next_id = 0

    # cache ----------------------------------------------------------------

    def cached(self, name: str, rrtype: int) -> typing.Optional[CacheEntry]:
        with self._lock:
            return self._cache.get((normalize_name(name), int(rrtype)))

    def cache_entries(self) -> typing.List[CacheEntry]:
        with self._lock:
            return list(self._cache.values())

    def flush(self) -> None:
        with self._lock:
            self._cache.clear()

    def _store(self, signed: SignedRRset, now: float, ttl: float) -> None:
        with self._lock:
            self._cache[signed.rrset.key] = CacheEntry(signed, now, ttl)

    # upstream -------------------------------------------------------------

    def _query(self, name: str, rrtype: int) -> dnscore.DnsResponse:
        with self._lock:
            self._next_id = (self._next_id + 1) & 0xFFFF
            qid = self._next_id
            self.upstream_queries += 1
        wire = dnscore.encode_dns_query(normalize_name(name), rrtype, qid)
        reply = self.upstream.exchange(wire, self.timeout)
        try:
            return dnscore.decode_dns_response(reply, qid)
        except dnscore.DnsError as exc:
            raise UpstreamTimeout(f"unusable upstream reply: {exc}") from None

    def _fetch_rrset(self, name: str, rrtype: int, now: float) -> typing.Optional[SignedRRset]:
        entry = self.cached(name, rrtype)
        if entry is not None and entry.fresh(now):
            return entry.rrset
        resp = self._query(name, rrtype)
        if resp.rcode != Rcode.NOERROR:
            return None
        return resp.find(name, rrtype)

    def _supporting(
        self, signed: SignedRRset, now: float
    ) -> typing.Dict[str, ZoneMaterial]:
        """Fetch DNSKEY/DS material from the signer up to the anchor zone."""
        support: typing.Dict[str, ZoneMaterial] = {}
        current = signed
        for _ in range(16):
            signers = set()
            for raw in current.rrsigs:
                try:
                    signers.add(normalize_name(dnscore.RrsigRdata.from_wire(raw).signer))
                except dnscore.DnsError:
                    continue
            zones = [z for z in signers if z not in support]
            if not zones:
                break
            zone = zones[0]
            if not is_subdomain(zone, self.anchor.zone):
                break
            dnskey = self._fetch_rrset(zone, RRType.DNSKEY, now)
            if dnskey is None:
                break
            if zone == self.anchor.zone:
                support[zone] = ZoneMaterial(dnskey.rrset, dnskey.rrsigs)
                break
            ds = self._fetch_rrset(zone, RRType.DS, now)
            support[zone] = ZoneMaterial(
                dnskey.rrset,
                dnskey.rrsigs,
                ds.rrset if ds else None,
                ds.rrsigs if ds else (),
            )
            if ds is None:
                break
            current = ds
        return support

    def _fetch_and_validate(self, name: str, rrtype: int, now: float) -> Resolution:
        resp = self._query(name, rrtype)
        if resp.rcode == Rcode.NXDOMAIN:
            return Resolution(ResolveStatus.NOT_FOUND, detail="NXDOMAIN")
        if resp.rcode != Rcode.NOERROR:
            return Resolution(ResolveStatus.BOGUS, detail=f"upstream {resp.rcode.name}")
        signed = resp.find(name, rrtype)
        if signed is None:
            return Resolution(ResolveStatus.NOT_FOUND, detail="no data")
        support = self._supporting(signed, now)
        result = validate_chain(signed.rrset, signed.rrsigs, support, self.anchor, int(now))
        if isinstance(result, Bogus):
            log.warning("bogus %s/%s: %s %s", name, rrtype, result.reason.value, result.detail)
            return Resolution(ResolveStatus.BOGUS, detail=f"{result.reason.value}: {result.detail}")
        ttl = min(signed.rrset.ttl, max(result.expires - now, 0))
        self._store(signed, now, ttl)
        # key material validated on the way is as trustworthy as the answer
        for material in support.values():
            self._store(SignedRRset(material.dnskey, material.dnskey_sigs), now, min(material.dnskey.ttl, ttl))
            if material.ds is not None:
                self._store(SignedRRset(material.ds, material.ds_sigs), now, min(material.ds.ttl, ttl))
        return Resolution(ResolveStatus.SECURE, signed)

    def resolve(self, name: str, rrtype: int, now: typing.Optional[float] = None) -> Resolution:
        """Answer from cache when fresh, otherwise fetch and validate.

        Raises :class:`UpstreamTimeout` only when nothing usable is cached.
        """
        now = self.clock() if now is None else now
        entry = self.cached(name, rrtype)
        if entry is not None and entry.fresh(now):
            if not entry.due_for_refresh(now):
                return Resolution(ResolveStatus.SECURE, entry.rrset, from_cache=True)
            try:
                refreshed = self._fetch_and_validate(name, rrtype, now)
            except UpstreamTimeout:
                return Resolution(ResolveStatus.SECURE, entry.rrset, from_cache=True)
            if refreshed.status is ResolveStatus.BOGUS:
                # never let bogus data displace validated data
                return Resolution(ResolveStatus.SECURE, entry.rrset, from_cache=True)
            if refreshed.status is ResolveStatus.NOT_FOUND:
                with self._lock:
                    self._cache.pop((normalize_name(name), int(rrtype)), None)
            return refreshed
        return self._fetch_and_validate(name, rrtype, now)

    def warm(self, names: typing.Iterable[typing.Tuple[str, int]], now=None) -> typing.List[Resolution]:
        return [self.resolve(n, t, now) for n, t in names]


class StubService:
    """DNS front end of a :class:`ValidatingResolver`.

    Secure answers carry AD; bogus answers become SERVFAIL; when the
    upstream is unreachable and nothing is cached the query is dropped so
    clients see a timeout rather than a false negative.
    """

    def __init__(self, resolver: ValidatingResolver):
        self.resolver = resolver

    def handle(self, buf: bytes) -> typing.Optional[bytes]:
        try:
            query = DnsMessage.from_wire(buf)
        except dnscore.DnsError:
            return _formerr(buf)
        if query.response:
            return None
        if query.opcode != 0:
            return _error_response(query, Rcode.NOTIMP)
        if len(query.questions) != 1:
            return _error_response(query, Rcode.FORMERR)
        q = query.questions[0]
        try:
            res = self.resolver.resolve(q.name, q.rrtype)
        except UpstreamTimeout:
            return None
        reply = DnsMessage(
            id=query.id,
            response=True,
            recursion_desired=query.recursion_desired,
            recursion_available=True,
            questions=[q],
            edns=query.edns,
            dnssec_ok=query.dnssec_ok,
        )
        if res.status is ResolveStatus.SECURE:
            reply.authentic_data = True
            reply.answers = rrset_records(res.rrset) if query.dnssec_ok else rrset_records(
                SignedRRset(res.rrset.rrset)
            )
        elif res.status is ResolveStatus.NOT_FOUND:
            reply.rcode = Rcode.NXDOMAIN
        else:
            reply.rcode = Rcode.SERVFAIL
        return reply.to_wire()


# --- catalog files ----------------------------------------------------------


def _int(value) -> int:
    return int(value, 0) if isinstance(value, str) else int(value)


@dataclasses.dataclass
class Catalog:
    entries: typing.List[ServiceCatalogEntry]
    parent: str = DEFAULT_PARENT
    ttl: int = DEFAULT_TTL
    keys: typing.Dict[typing.Tuple[int, int], str] = dataclasses.field(default_factory=dict)


def load_catalog(path: typing.Union[str, os.PathLike]) -> Catalog:
    """Read a JSON catalog; certificate and key paths are relative to it.

    Example::

        {"parent": "service.", "ttl": 3600,
         "services": [{"id": "0x0001", "instance": 2, "major": 1, "minor": 2,
                       "ip": "10.0.0.5", "port": 30509, "protocol": "udp",
                       "eventgroups": [1], "certificate": "pub.pem",
                       "key": "pub.key"}]}
    """
    from .auth import load_certificate

    base = os.path.dirname(os.path.abspath(path))
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    entries = []
    keys = {}
    for svc in doc.get("services", []):
        desc = ServiceDescription(
            _int(svc["id"]), _int(svc["instance"]), _int(svc["major"]), _int(svc["minor"])
        )
        endpoint = EndpointInfo(svc["ip"], L4Protocol[svc.get("protocol", "udp").upper()], _int(svc["port"]))
        with open(os.path.join(base, svc["certificate"]), "rb") as fh:
            cert = load_certificate(fh.read())
        entries.append(
            ServiceCatalogEntry(
                desc,
                endpoint,
                cert,
                tuple(_int(e) for e in svc.get("eventgroups", ())),
                _int(svc.get("priority", 1)),
            )
        )
        if "key" in svc:
            keys[(desc.service_id, desc.instance_id)] = os.path.join(base, svc["key"])
    return Catalog(entries, normalize_name(doc.get("parent", DEFAULT_PARENT)), _int(doc.get("ttl", DEFAULT_TTL)), keys)
