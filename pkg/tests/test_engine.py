import dataclasses
import random

import pytest

from conftest import TABLE1, TABLE1_ENDPOINT, seeded_key
from someipdns import dnscore
from someipdns.engine import (
    AuthFailure,
    DiscoveryTimeout,
    EngineConfig,
    Publisher,
    ResolveFailure,
    SubscriberPhase,
    SubscriptionRejected,
    VariantMode,
    run_subscriber,
)
from someipdns.dnscore import RRType, SignedRRset
from someipdns.transport import EventLoop, InProcNetwork, VirtualClock
from someipdns.wire import WILDCARD, EndpointInfo, EntryType, L4Protocol, SdEntry, SdMessage, ServiceDescription
from world import World

ALL_MODES = list(VariantMode)


def sd_messages(world, src_ip=None):
    out = []
    for d in world.network.trace:
        if d.dst[1] != world.config.sd_port and d.src[1] != world.config.sd_port:
            continue
        if src_ip is not None and d.src[0] != src_ip:
            continue
        try:
            out.append((d, SdMessage.decode(d.data)))
        except Exception:
            pass
    return out


@pytest.mark.parametrize("mode", ALL_MODES, ids=lambda m: m.value)
def test_connects_with_table1_endpoint(mode):
    w = World(mode)
    sub = w.connect()
    assert sub.phase is SubscriberPhase.CONNECTED, sub.error
    assert sub.endpoint == TABLE1_ENDPOINT
    assert sub.endpoint.l4_protocol is L4Protocol.UDP
    assert sub.service == TABLE1
    assert sub.report.probe.discovery_latency is not None
    assert sub.report.probe.subscription_latency is not None


def test_first_offer_inside_initial_delay_window():
    for seed in range(20):
        w = World(VariantMode.SOMEIP_SD, seed=seed)
        w.loop.run_for(0.2)
        first = w.publisher.offers_sent[0] - w.publisher.started_at
        assert 0.010 <= first <= 0.100


def test_cyclic_offers_repeat():
    w = World(VariantMode.SOMEIP_SD)
    w.loop.run_for(3.5)
    gaps = [b - a for a, b in zip(w.publisher.offers_sent, w.publisher.offers_sent[1:])]
    assert len(w.publisher.offers_sent) == 4
    assert all(g == pytest.approx(1.0) for g in gaps)


@pytest.mark.parametrize("mode", [VariantMode.DNSSEC, VariantMode.DNSSEC_DANE], ids=lambda m: m.value)
def test_dns_modes_send_no_offers(mode):
    w = World(mode)
    w.connect()
    w.loop.run_for(5.0)
    assert w.publisher.offers_sent == []
    offers = [m for _, m in sd_messages(w) if any(e.kind is EntryType.OFFER for e in m.entries)]
    assert offers == []


def test_sd_discovery_waits_for_initial_delay():
    w = World(VariantMode.SOMEIP_SD, seed=3)
    sub = w.connect()
    assert sub.probe.discovery_latency >= sub.initial_delay >= 0.010


def test_auth_ack_carries_signature():
    w = World(VariantMode.SOMEIP_SD_AUTH)
    sub = w.connect()
    assert sub.phase is SubscriberPhase.CONNECTED
    acks = [
        m for d, m in sd_messages(w, "10.0.0.5")
        if any(e.kind is EntryType.SUBSCRIBE_ACK for e in m.entries)
    ]
    assert len(acks) == 1
    assert acks[0].options[0].get("sig")
    subs = [m for _, m in sd_messages(w, "10.0.0.10") if any(e.kind is EntryType.SUBSCRIBE for e in m.entries)]
    assert len(subs[0].options[1].get("nonce")) == 8
    assert len(w.publisher.sign_times) == 1
    assert sub.verify_time is not None


def test_unauthenticated_ack_has_no_signature():
    w = World(VariantMode.SOMEIP_SD)
    w.connect()
    acks = [m for _, m in sd_messages(w, "10.0.0.5") if any(e.kind is EntryType.SUBSCRIBE_ACK for e in m.entries)]
    assert acks and all(not m.options for m in acks)


@pytest.mark.parametrize("mode", [VariantMode.SOMEIP_SD_AUTH, VariantMode.DNSSEC_DANE], ids=lambda m: m.value)
def test_wrong_publisher_key_fails_auth(mode):
    w = World(mode, signing_key=seeded_key(1234))
    sub = w.connect()
    assert sub.phase is SubscriberPhase.FAILED
    assert isinstance(sub.error, AuthFailure)


def _tamper_tlsa(zone):
    name = next(owner for owner, t in zone.rrsets if t == RRType.TLSA)
    signed = zone.rrsets[(name, RRType.TLSA)]
    rdata = bytearray(signed.rrset.rdatas[0])
    rdata[-10] ^= 0x01
    rrset = dataclasses.replace(signed.rrset, rdatas=(bytes(rdata),))
    zone.rrsets[(name, RRType.TLSA)] = SignedRRset(rrset, signed.rrsigs)


def test_tampered_tlsa_is_bogus():
    w = World(VariantMode.DNSSEC_DANE, tamper=_tamper_tlsa)
    sub = w.connect()
    assert sub.phase is SubscriberPhase.FAILED
    assert isinstance(sub.error, ResolveFailure) and sub.error.reason == "Bogus"


def test_tampered_tlsa_does_not_affect_plain_dnssec():
    w = World(VariantMode.DNSSEC, tamper=_tamper_tlsa)
    assert w.connect().phase is SubscriberPhase.CONNECTED


def test_unknown_service_not_found_over_dns():
    w = World(VariantMode.DNSSEC)
    sub = w.connect(desired=ServiceDescription(9, 9, 9, 9))
    assert isinstance(sub.error, ResolveFailure) and sub.error.reason == "NotFound"


def test_resolver_unreachable_times_out():
    w = World(VariantMode.DNSSEC)
    w.network.sever("10.0.0.53")
    sub = w.connect()
    assert isinstance(sub.error, DiscoveryTimeout)
    queries = [d for d in w.network.trace if d.dst == ("10.0.0.53", 5301)]
    assert len(queries) == w.config.dns_retries


@pytest.mark.parametrize("mode", ALL_MODES, ids=lambda m: m.value)
def test_unknown_eventgroup_nacked(mode):
    w = World(mode)
    sub = w.connect(eventgroup=0x0099)
    assert isinstance(sub.error, SubscriptionRejected)


def test_no_publisher_discovery_timeout():
    loop = EventLoop(VirtualClock())
    net = InProcNetwork(loop)
    report = run_subscriber(VariantMode.SOMEIP_SD, TABLE1, 1, loop, net, address=("10.0.0.10", 0), rng=random.Random(0))
    assert isinstance(report.error, DiscoveryTimeout)
    finds = [d for d in net.trace if d.dst == ("224.244.224.245", 30490)]
    assert len(finds) == EngineConfig().find_retries


def test_authenticated_publisher_needs_key():
    w = World(VariantMode.SOMEIP_SD)
    with pytest.raises(Exception):
        Publisher(w.loop, w.network, VariantMode.SOMEIP_SD_AUTH, w.entry, None, w.config).start()


def test_wildcard_desired_finds_concrete_instance():
    w = World(VariantMode.SOMEIP_SD)
    sub = w.connect(desired=ServiceDescription(1, WILDCARD, WILDCARD, WILDCARD))
    assert sub.phase is SubscriberPhase.CONNECTED and sub.service == TABLE1


@pytest.mark.parametrize("count", [0, 1, 3])
@pytest.mark.parametrize("mode", [VariantMode.SOMEIP_SD, VariantMode.DNSSEC_DANE], ids=lambda m: m.value)
def test_event_delivery(mode, count):
    w = World(mode)
    subs = []
    for _ in range(count):
        s = w.connect()
        assert s.phase is SubscriberPhase.CONNECTED
        subs.append(s)
    assert w.publisher.deliver_event(b"payload") == count
    w.loop.run_for(0.1)
    assert [s.payloads for s in subs] == [[b"payload"]] * count


def test_event_delivery_filters_by_eventgroup():
    w = World(VariantMode.SOMEIP_SD)
    w.connect()
    assert w.publisher.deliver_event(b"x", eventgroup=0x0002) == 0


def test_unsubscribe_with_ttl_zero():
    w = World(VariantMode.SOMEIP_SD)
    sub = w.connect()
    assert len(w.publisher.subscribers) == 1
    stop = SdEntry(EntryType.SUBSCRIBE, ServiceDescription(1, 2, 1, WILDCARD), 0, 1, (0,))
    ip, port = sub._data.address
    msg = SdMessage(1, True, True, (stop,), (EndpointInfo(ip, L4Protocol.UDP, port),))
    sub._sd.send(msg.encode(), w.publisher.sd_address)
    w.loop.run_for(0.1)
    assert w.publisher.subscribers == {}


def _trace(mode, seed):
    w = World(mode, seed=seed)
    w.connect()
    w.publisher.deliver_event(b"e")
    w.loop.run_for(2.0)
    return [(d.time, d.src, d.dst, d.data, d.delivered) for d in w.network.trace]


@pytest.mark.parametrize("mode", ALL_MODES, ids=lambda m: m.value)
def test_seeded_runs_are_identical(mode):
    assert _trace(mode, 5) == _trace(mode, 5)


def test_different_seeds_differ():
    assert _trace(VariantMode.SOMEIP_SD, 1) != _trace(VariantMode.SOMEIP_SD, 2)


def test_dns_queries_are_decodable():
    w = World(VariantMode.DNSSEC_DANE)
    w.connect()
    qs = [dnscore.DnsMessage.from_wire(d.data) for d in w.network.trace if d.dst == ("10.0.0.53", 5301)]
    types = [q.questions[0].rrtype for q in qs]
    assert types == [RRType.SVCB, RRType.TLSA]
