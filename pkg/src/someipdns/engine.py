"""Publisher and subscriber engines for the four discovery variants.

``SOMEIP_SD`` and ``SOMEIP_SD_AUTH`` discover through multicast find/offer.
``DNSSEC`` and ``DNSSEC_DANE`` look the service up as an SVCB record at a
validating resolver and never announce. The ``*_AUTH``/``*_DANE`` variants
add a nonce challenge to Subscribe and expect a signature in the
SubscribeAck; ``DNSSEC_DANE`` fetches the publisher certificate from a
TLSA record while the subscription is in flight.

Engines are callback driven on an :class:`~someipdns.transport.EventLoop`
and only talk to each other through the network.
"""

from __future__ import annotations

import dataclasses
import enum
import logging
import random
import time
import typing

from cryptography.hazmat.primitives.asymmetric import ed25519

from . import auth, dnscore
from .dnscore import Rcode, RRType, TlsaCertRecord
from .namespace import DEFAULT_PARENT, to_query_name
from .transport import Address, EventLoop, TransportClosed
from .wire import (
    WILDCARD,
    ConfigOption,
    EndpointInfo,
    EntryType,
    L4Protocol,
    SdEntry,
    SdError,
    SdMessage,
    ServiceDescription,
    SessionCounter,
)

log = logging.getLogger(__name__)


class VariantMode(enum.Enum):
    SOMEIP_SD = "someip-sd"
    SOMEIP_SD_AUTH = "someip-sd-auth"
    DNSSEC = "dnssec"
    DNSSEC_DANE = "dnssec-dane"

    @property
    def uses_dns(self) -> bool:
        return self in (VariantMode.DNSSEC, VariantMode.DNSSEC_DANE)

    @property
    def authenticated(self) -> bool:
        return self in (VariantMode.SOMEIP_SD_AUTH, VariantMode.DNSSEC_DANE)


@dataclasses.dataclass
class EngineConfig:
    sd_port: int = 30490
    multicast_group: Address = ("224.244.224.245", 30490)
    # seconds; drawn uniformly before SD starts announcing or finding
    initial_delay: typing.Tuple[float, float] = (0.010, 0.100)
    cyclic_period: float = 1.0
    offer_ttl: int = 3
    find_retries: int = 2
    find_interval: float = 0.5
    # None mirrors a stack with the find->offer scattering delay turned off
    request_response_delay: typing.Optional[typing.Tuple[float, float]] = None
    resolver: Address = ("127.0.0.1", 5301)
    parent_domain: str = DEFAULT_PARENT
    dns_timeout: float = 1.0
    dns_retries: int = 2
    subscribe_ttl: int = 3
    subscribe_timeout: float = 1.0
    verify_timeout: float = 2.0
    nonce_bytes: int = auth.DEFAULT_NONCE_BYTES


class EngineError(Exception):
    pass


class DiscoveryTimeout(EngineError):
    pass


class ResolveFailure(EngineError):
    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason


class AuthFailure(EngineError):
    pass


class SubscriptionRejected(EngineError):
    pass


class SubscriptionTimeout(EngineError):
    pass


class SubscriberPhase(enum.Enum):
    INIT = "Init"
    DISCOVERING = "Discovering"
    SUBSCRIBING = "Subscribing"
    AWAIT_ACK = "AwaitAck"
    AWAIT_TLSA = "AwaitTlsa"
    CONNECTED = "Connected"
    FAILED = "Failed"


class PublisherPhase(enum.Enum):
    INIT = "Init"
    ANNOUNCING = "Announcing"
    LISTENING = "Listening"
    SERVING = "Serving"


@dataclasses.dataclass
class TimingProbe:
    discovery_start: typing.Optional[float] = None
    discovery_end: typing.Optional[float] = None
    subscribe_sent: typing.Optional[float] = None
    connected: typing.Optional[float] = None

    @property
    def discovery_latency(self) -> typing.Optional[float]:
        if self.discovery_start is None or self.discovery_end is None:
            return None
        return self.discovery_end - self.discovery_start

    @property
    def subscription_latency(self) -> typing.Optional[float]:
        if self.subscribe_sent is None or self.connected is None:
            return None
        return self.connected - self.subscribe_sent


@dataclasses.dataclass
class ConnectionReport:
    mode: VariantMode
    phase: SubscriberPhase
    probe: TimingProbe
    error: typing.Optional[EngineError] = None
    endpoint: typing.Optional[EndpointInfo] = None
    service: typing.Optional[ServiceDescription] = None
    initial_delay: float = 0.0
    verify_time: typing.Optional[float] = None

    @property
    def connected(self) -> bool:
        return self.phase is SubscriberPhase.CONNECTED


def _match(pattern: ServiceDescription, desc: ServiceDescription) -> bool:
    return pattern.matches(desc)


def _eventgroup_service(desc: ServiceDescription) -> ServiceDescription:
    return ServiceDescription(desc.service_id, desc.instance_id, desc.major_version, WILDCARD)


class _Engine:
    def __init__(self, loop: EventLoop, network, mode: VariantMode, config, rng):
        self.loop = loop
        self.network = network
        self.mode = mode
        self.config = config or EngineConfig()
        self.rng = rng or random.Random()
        self.session = SessionCounter()
        self.events: typing.List[typing.Tuple[float, str, str]] = []

    def _log(self, name: str, detail: str = "") -> None:
        self.events.append((self.loop.time(), name, detail))

    def _message(self, entries, options, unicast=True) -> bytes:
        session, reboot = self.session.next()
        return SdMessage(session, reboot, unicast, tuple(entries), tuple(options)).encode()

    @staticmethod
    def _decode(data: bytes) -> typing.Optional[SdMessage]:
        try:
            return SdMessage.decode(data)
        except SdError as exc:
            log.debug("dropping undecodable SD datagram: %s", exc)
            return None


class Publisher(_Engine):
    """Offers one service instance and acknowledges subscriptions."""

    def __init__(
        self,
        loop: EventLoop,
        network,
        mode: VariantMode,
        entry,
        private_key: typing.Optional[ed25519.Ed25519PrivateKey] = None,
        config: typing.Optional[EngineConfig] = None,
        rng: typing.Optional[random.Random] = None,
    ):
        super().__init__(loop, network, mode, config, rng)
        self.entry = entry
        self.description: ServiceDescription = entry.description
        self.private_key = private_key
        self.phase = PublisherPhase.INIT
        self.offers_sent: typing.List[float] = []
        self.sign_times: typing.List[float] = []
        self.subscribers: typing.Dict[typing.Tuple[int, EndpointInfo], int] = {}
        self.started_at: typing.Optional[float] = None
        self.initial_delay: typing.Optional[float] = None
        self._sd = None
        self._data = None
        self._timer = None

    @property
    def sd_address(self) -> Address:
        return (str(self.entry.endpoint.ip), self.config.sd_port)

    def start(self) -> Publisher:
        if self.mode.authenticated and self.private_key is None:
            raise auth.KeyUnavailable("authenticated modes need a publisher key")
        self.started_at = self.loop.time()
        self._sd = self.network.bind(self.sd_address, self._on_sd)
        self._data = self.network.bind(self.entry.endpoint.address, self._on_data)
        if self.mode.uses_dns:
            # the zone announces for us
            self.phase = PublisherPhase.LISTENING
        else:
            self._sd.join(self.config.multicast_group)
            self.phase = PublisherPhase.ANNOUNCING
            self.initial_delay = self.rng.uniform(*self.config.initial_delay)
            self._timer = self.loop.call_later(self.initial_delay, self._cyclic_offer)
        self._log("start", self.mode.value)
        return self

    def stop(self) -> None:
        if self._timer is not None:
            self._timer.cancel()
        for sock in (self._sd, self._data):
            if sock is not None:
                sock.close()

    def _offer_message(self, unicast: bool) -> bytes:
        entry = SdEntry(EntryType.OFFER, self.description, self.config.offer_ttl, None, (0,))
        return self._message([entry], [self.entry.endpoint], unicast)

    def _cyclic_offer(self) -> None:
        try:
            self._sd.send(self._offer_message(False), self.config.multicast_group)
        except TransportClosed:
            return
        self.offers_sent.append(self.loop.time())
        self._log("offer", "multicast")
        self._timer = self.loop.call_later(self.config.cyclic_period, self._cyclic_offer)

    def _unicast_offer(self, dst: Address) -> None:
        self._sd.send(self._offer_message(True), dst)
        self.offers_sent.append(self.loop.time())
        self._log("offer", f"unicast {dst[0]}:{dst[1]}")

    def _on_data(self, data: bytes, src: Address) -> None:
        pass

    def _on_sd(self, data: bytes, src: Address) -> None:
        msg = self._decode(data)
        if msg is None:
            return
        for entry in msg.entries:
            if entry.kind is EntryType.FIND and not self.mode.uses_dns:
                if _match(entry.service, self.description):
                    self._log("find", f"{src[0]}:{src[1]}")
                    delay = self.config.request_response_delay
                    if delay is None:
                        self._unicast_offer(src)
                    else:
                        self.loop.call_later(self.rng.uniform(*delay), self._unicast_offer, src)
            elif entry.kind is EntryType.SUBSCRIBE:
                self._on_subscribe(msg, entry, src)

    def _on_subscribe(self, msg: SdMessage, entry: SdEntry, src: Address) -> None:
        if not _eventgroup_service(entry.service).matches(_eventgroup_service(self.description)):
            return
        options = msg.options_of(entry)
        endpoint = next((o for o in options if isinstance(o, EndpointInfo)), None)
        config = next((o for o in options if isinstance(o, ConfigOption)), None)
        self._log("subscribe", f"eventgroup=0x{entry.eventgroup_id:04x}")

        def ack(ttl: int, extra: typing.Sequence[ConfigOption] = ()) -> None:
            reply = SdEntry(
                EntryType.SUBSCRIBE_ACK,
                _eventgroup_service(self.description),
                ttl,
                entry.eventgroup_id,
                tuple(range(len(extra))),
            )
            self._sd.send(self._message([reply], extra), src)
            self._log("ack" if ttl else "nack", f"eventgroup=0x{entry.eventgroup_id:04x}")

        if entry.eventgroup_id not in self.entry.eventgroups or endpoint is None:
            ack(0)
            return
        key = (entry.eventgroup_id, endpoint)
        if entry.ttl_seconds == 0:
            self.subscribers.pop(key, None)
            return
        extra: typing.List[ConfigOption] = []
        if self.mode.authenticated:
            raw = config.get(auth.NONCE_KEY) if config else None
            if raw is None:
                ack(0)
                return
            try:
                challenge = auth.AuthChallenge.from_option_value(raw)
            except ValueError:
                ack(0)
                return
            t0 = time.perf_counter()
            response = auth.sign_challenge(challenge, self.private_key, self.description)
            self.sign_times.append(time.perf_counter() - t0)
            extra.append(auth.signature_option(response))
        self.subscribers[key] = entry.ttl_seconds
        self.phase = PublisherPhase.SERVING
        ack(entry.ttl_seconds, extra)

    def deliver_event(self, payload: bytes, eventgroup: typing.Optional[int] = None) -> int:
        """Send ``payload`` to every subscribed endpoint; returns the send count."""
        sent = 0
        for (group, endpoint) in sorted(self.subscribers, key=lambda k: (k[0], k[1].address)):
            if eventgroup is not None and group != eventgroup:
                continue
            self._data.send(payload, endpoint.address)
            sent += 1
        self._log("publish", f"{len(payload)} bytes to {sent}")
        return sent


class Subscriber(_Engine):
    """Discovers ``desired`` and subscribes to ``eventgroup``; one-shot."""

    def __init__(
        self,
        loop: EventLoop,
        network,
        mode: VariantMode,
        desired: ServiceDescription,
        eventgroup: int,
        config: typing.Optional[EngineConfig] = None,
        address: Address = ("127.0.0.1", 0),
        trusted_certificate: typing.Optional[bytes] = None,
        rng: typing.Optional[random.Random] = None,
    ):
        super().__init__(loop, network, mode, config, rng)
        if mode is VariantMode.SOMEIP_SD_AUTH and trusted_certificate is None:
            raise ValueError("SOMEIP_SD_AUTH needs a pre-deployed publisher certificate")
        self.desired = desired
        self.eventgroup = eventgroup
        self.address = address
        self.trusted_certificate = trusted_certificate
        self.phase = SubscriberPhase.INIT
        self.probe = TimingProbe()
        self.error: typing.Optional[EngineError] = None
        self.endpoint: typing.Optional[EndpointInfo] = None
        self.service: typing.Optional[ServiceDescription] = None
        self.payloads: typing.List[bytes] = []
        self.verify_time: typing.Optional[float] = None
        self.initial_delay = 0.0
        self.challenges = auth.ChallengeTable()
        self._publisher_sd: typing.Optional[Address] = None
        self._sd_active = False
        self._sd = None
        self._dns = None
        self._data = None
        self._timers: typing.List[typing.Any] = []
        self._dns_pending: typing.Dict[int, typing.Tuple[str, int, int]] = {}
        self._dns_ids = iter(range(1, 1 << 16))
        self._tlsa: typing.Optional[TlsaCertRecord] = None
        self._pending_ack: typing.Optional[typing.Tuple[SdMessage, SdEntry]] = None

    # lifecycle ------------------------------------------------------------

    @property
    def done(self) -> bool:
        return self.phase in (SubscriberPhase.CONNECTED, SubscriberPhase.FAILED)

    @property
    def report(self) -> ConnectionReport:
        return ConnectionReport(
            self.mode,
            self.phase,
            self.probe,
            self.error,
            self.endpoint,
            self.service,
            self.initial_delay,
            self.verify_time,
        )

    def _later(self, delay: float, callback, *args):
        handle = self.loop.call_later(delay, callback, *args)
        self._timers.append(handle)
        return handle

    def start(self) -> Subscriber:
        self._sd = self.network.bind(self.address, self._on_sd)
        self.address = self._sd.address
        self.phase = SubscriberPhase.DISCOVERING
        self.probe.discovery_start = self.loop.time()
        self._log("start", self.mode.value)
        if self.mode.uses_dns:
            self._dns = self.network.bind((self.address[0], 0), self._on_dns)
            self._query(str(to_query_name(self.desired, self.config.parent_domain)), RRType.SVCB)
        else:
            self.initial_delay = self.rng.uniform(*self.config.initial_delay)
            self._later(self.initial_delay, self._sd_startup)
        return self

    def close(self) -> None:
        for t in self._timers:
            t.cancel()
        for sock in (self._sd, self._dns, self._data):
            if sock is not None:
                sock.close()

    def _fail(self, error: EngineError) -> None:
        if self.done:
            return
        self.phase = SubscriberPhase.FAILED
        self.error = error
        self._log("failed", f"{type(error).__name__}: {error}")
        for t in self._timers:
            t.cancel()

    # SOME/IP-SD discovery --------------------------------------------------

    def _sd_startup(self) -> None:
        self._sd_active = True
        self._sd.join(self.config.multicast_group)
        self._send_find(0)

    def _send_find(self, attempt: int) -> None:
        if self.phase is not SubscriberPhase.DISCOVERING:
            return
        if attempt >= self.config.find_retries:
            self._fail(DiscoveryTimeout(f"no offer for {self.desired}"))
            return
        find = SdEntry(EntryType.FIND, self.desired, self.config.offer_ttl)
        self._sd.send(self._message([find], [], True), self.config.multicast_group)
        self._log("find", f"attempt {attempt + 1}")
        self._later(self.config.find_interval, self._send_find, attempt + 1)

    def _on_sd(self, data: bytes, src: Address) -> None:
        if self.done:
            return
        msg = self._decode(data)
        if msg is None:
            return
        for entry in msg.entries:
            if entry.kind is EntryType.OFFER:
                self._on_offer(msg, entry, src)
            elif entry.kind is EntryType.SUBSCRIBE_ACK:
                self._on_ack(msg, entry, src)

    def _on_offer(self, msg: SdMessage, entry: SdEntry, src: Address) -> None:
        if self.mode.uses_dns or not self._sd_active:
            return
        if self.phase is not SubscriberPhase.DISCOVERING or entry.ttl_seconds == 0:
            return
        if not entry.service.is_concrete or not self.desired.matches(entry.service):
            return
        endpoint = next((o for o in msg.options_of(entry) if isinstance(o, EndpointInfo)), None)
        if endpoint is None:
            return
        self._discovered(entry.service, endpoint, src)

    def _discovered(self, service: ServiceDescription, endpoint: EndpointInfo, sd: Address) -> None:
        self.probe.discovery_end = self.loop.time()
        self.service = service
        self.endpoint = endpoint
        self._publisher_sd = sd
        self._log("discovered", f"{endpoint.ip}:{endpoint.port}/{endpoint.l4_protocol.name}")
        self._subscribe()

    # DNS discovery ----------------------------------------------------------

    def _query(self, name: str, rrtype: int, attempt: int = 0) -> None:
        qid = next(self._dns_ids)
        self._dns_pending[qid] = (name, rrtype, attempt)
        wire = dnscore.encode_dns_query(name, rrtype, qid)
        self._dns.send(wire, self.config.resolver)
        self._log("dns-query", f"{RRType(rrtype).name} {name}")
        self._later(self.config.dns_timeout, self._dns_timeout, qid)

    def _dns_timeout(self, qid: int) -> None:
        pending = self._dns_pending.pop(qid, None)
        if pending is None or self.done:
            return
        name, rrtype, attempt = pending
        if attempt + 1 < self.config.dns_retries:
            self._query(name, rrtype, attempt + 1)
        elif rrtype == RRType.SVCB:
            self._fail(DiscoveryTimeout(f"resolver did not answer for {name}"))
        else:
            self._fail(ResolveFailure("Timeout", name))

    def _on_dns(self, data: bytes, src: Address) -> None:
        if self.done or src != tuple(self.config.resolver):
            return
        try:
            resp = dnscore.decode_dns_response(data)
        except dnscore.DnsError:
            return
        pending = self._dns_pending.pop(resp.message.id, None)
        if pending is None:
            return
        name, rrtype, _ = pending
        if resp.rcode == Rcode.SERVFAIL:
            self._fail(ResolveFailure("Bogus", f"{RRType(rrtype).name} {name}"))
            return
        if resp.rcode != Rcode.NOERROR:
            self._fail(ResolveFailure("NotFound", f"{RRType(rrtype).name} {name}: {resp.rcode.name}"))
            return
        if not resp.authenticated:
            self._fail(ResolveFailure("Insecure", f"{RRType(rrtype).name} {name} lacks AD"))
            return
        found = resp.find(name, rrtype)
        if rrtype == RRType.SVCB:
            self._on_svcb(found)
        else:
            self._on_tlsa(found)

    def _on_svcb(self, found) -> None:
        records = []
        for rdata in found.rrset.rdatas if found else ():
            try:
                rec = dnscore.decode_svcb_rdata(rdata, self.desired.service_id)
            except dnscore.DnsError:
                continue
            if self.desired.matches(rec.description):
                records.append(rec)
        if not records:
            self._fail(ResolveFailure("NotFound", f"no usable SVCB record for {self.desired}"))
            return
        rec = min(records, key=lambda r: (r.priority, r.instance))
        endpoint = EndpointInfo(rec.ipv4hint, rec.protocol, rec.port)
        self._discovered(rec.description, endpoint, (str(rec.ipv4hint), self.config.sd_port))

    def _on_tlsa(self, found) -> None:
        try:
            self._tlsa = dnscore.decode_tlsa_rdata(found.rrset.rdatas[0]) if found else None
        except dnscore.DnsError as exc:
            self._fail(ResolveFailure("Bogus", f"unusable TLSA: {exc}"))
            return
        if self._tlsa is None:
            self._fail(ResolveFailure("NotFound", "no TLSA record"))
            return
        self._log("tlsa", f"{len(self._tlsa.cert_data)} byte certificate")
        if self._pending_ack is not None:
            msg, entry = self._pending_ack
            self._pending_ack = None
            self._verify_ack(msg, entry, self._tlsa.cert_data)

    # subscription -----------------------------------------------------------

    def _subscribe(self) -> None:
        self.phase = SubscriberPhase.SUBSCRIBING
        self._data = self.network.bind((self.address[0], 0), self._on_data)
        data_ip, data_port = self._data.address
        options: typing.List[typing.Any] = [EndpointInfo(data_ip, L4Protocol.UDP, data_port)]
        if self.mode.authenticated:
            challenge = auth.make_challenge(self.rng, self.loop.time(), self.config.nonce_bytes)
            self.challenges.issue(self.service, challenge)
            options.append(auth.nonce_option(challenge))
        entry = SdEntry(
            EntryType.SUBSCRIBE,
            _eventgroup_service(self.service),
            self.config.subscribe_ttl,
            self.eventgroup,
            tuple(range(len(options))),
        )
        wire = self._message([entry], options, True)
        self.probe.subscribe_sent = self.loop.time()
        self._sd.send(wire, self._publisher_sd)
        self.phase = SubscriberPhase.AWAIT_ACK
        self._log("subscribe", f"eventgroup=0x{self.eventgroup:04x}")
        if self.mode is VariantMode.DNSSEC_DANE:
            name = dnscore.tlsa_owner(
                self.endpoint.port,
                self.endpoint.l4_protocol,
                str(to_query_name(self.service, self.config.parent_domain)),
            )
            self._query(name, RRType.TLSA)
        self._later(self.config.subscribe_timeout, self._subscribe_timeout)

    def _subscribe_timeout(self) -> None:
        if self.phase is SubscriberPhase.AWAIT_ACK:
            self._fail(SubscriptionTimeout("no SubscribeAck"))

    def _on_ack(self, msg: SdMessage, entry: SdEntry, src: Address) -> None:
        if self.phase is not SubscriberPhase.AWAIT_ACK:
            return
        if entry.eventgroup_id != self.eventgroup:
            return
        if not _eventgroup_service(entry.service).matches(_eventgroup_service(self.service)):
            return
        if entry.is_nack:
            self._fail(SubscriptionRejected(f"eventgroup 0x{self.eventgroup:04x} refused"))
            return
        if not self.mode.authenticated:
            self._connected()
        elif self.mode is VariantMode.SOMEIP_SD_AUTH:
            self._verify_ack(msg, entry, self.trusted_certificate)
        elif self._tlsa is not None:
            self._verify_ack(msg, entry, self._tlsa.cert_data)
        else:
            self._pending_ack = (msg, entry)
            self.phase = SubscriberPhase.AWAIT_TLSA
            self._log("await-tlsa")
            self._later(self.config.verify_timeout, self._verify_timeout)

    def _verify_timeout(self) -> None:
        if self.phase is SubscriberPhase.AWAIT_TLSA:
            self._fail(AuthFailure("certificate did not arrive in time"))

    def _verify_ack(self, msg: SdMessage, entry: SdEntry, cert: bytes) -> None:
        challenge = self.challenges.consume(self.service)
        if challenge is None:
            self._fail(AuthFailure("no outstanding challenge"))
            return
        config = next((o for o in msg.options_of(entry) if isinstance(o, ConfigOption)), None)
        raw = config.get(auth.SIG_KEY) if config else None
        if raw is None:
            self._fail(AuthFailure("SubscribeAck carries no signature"))
            return
        try:
            response = auth.AuthResponse.from_option_value(raw)
        except ValueError as exc:
            self._fail(AuthFailure(str(exc)))
            return
        t0 = time.perf_counter()
        verdict = auth.verify_response(response, challenge, cert, self.service)
        self.verify_time = time.perf_counter() - t0
        if not verdict.ok:
            self._fail(AuthFailure(f"{verdict.reason.value} {verdict.detail}".strip()))
            return
        self._connected()

    def _connected(self) -> None:
        self.probe.connected = self.loop.time()
        self.phase = SubscriberPhase.CONNECTED
        self._log("connected")
        for t in self._timers:
            t.cancel()

    def _on_data(self, data: bytes, src: Address) -> None:
        if self.phase is SubscriberPhase.CONNECTED and self.endpoint is not None:
            if src == self.endpoint.address:
                self.payloads.append(data)


def run_publisher(
    mode: VariantMode,
    entry,
    loop: EventLoop,
    network,
    private_key=None,
    config: typing.Optional[EngineConfig] = None,
    rng: typing.Optional[random.Random] = None,
) -> Publisher:
    """Start a publisher; its ``events`` list is the event stream."""
    return Publisher(loop, network, mode, entry, private_key, config, rng).start()


def run_subscriber(
    mode: VariantMode,
    desired: ServiceDescription,
    eventgroup: int,
    loop: EventLoop,
    network,
    config: typing.Optional[EngineConfig] = None,
    address: Address = ("127.0.0.1", 0),
    trusted_certificate: typing.Optional[bytes] = None,
    rng: typing.Optional[random.Random] = None,
    timeout: float = 5.0,
) -> ConnectionReport:
    """Drive one subscriber until Connected or Failed, then close it."""
    sub = Subscriber(
        loop, network, mode, desired, eventgroup, config, address, trusted_certificate, rng
    ).start()
    try:
        if not loop.run_until(lambda: sub.done, timeout):
            sub._fail(DiscoveryTimeout(f"gave up after {timeout} s in {sub.phase.value}"))
        return sub.report
    finally:
        sub.close()


def deliver_event(publisher: Publisher, payload: bytes, eventgroup: typing.Optional[int] = None) -> int:
    return publisher.deliver_event(payload, eventgroup)
