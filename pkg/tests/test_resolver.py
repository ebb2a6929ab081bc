import concurrent.futures
import dataclasses
import json

import dns.flags
import dns.message
import dns.query
import dns.rcode
import dns.rdatatype
import pytest

import chain
import gen
from conftest import NOW, TABLE1, TABLE1_ENDPOINT, seeded_key, zone_keys
from someipdns import auth, dnscore, resolver
from someipdns.dnscore import DnsMessage, Rcode, RRType, decode_svcb_rdata
from someipdns.namespace import enumerate_valid_names
from someipdns.resolver import ResolveStatus, UpstreamTimeout
from someipdns.wire import ServiceDescription

GRAY = "_someip.minor0x00000002.id0x0001.service."


def ask(server, name, rrtype, qid=1, dnssec_ok=True):
    reply = server.handle(dnscore.encode_dns_query(name, rrtype, qid, dnssec_ok))
    return dnscore.decode_dns_response(reply, qid)


class TamperingUpstream(resolver.InProcUpstream):
    """Flips one bit of every RRSIG signature it relays."""

    def __init__(self, server, rrtype=RRType.SVCB):
        super().__init__(server)
        self.rrtype = rrtype
        self.active = True

    def exchange(self, query, timeout):
        reply = DnsMessage.from_wire(super().exchange(query, timeout))
        if self.active:
            reply.answers = [
                dataclasses.replace(rr, rdata=gen.flip_bit(rr.rdata, len(rr.rdata) * 8 - 3))
                if rr.rrtype == RRType.RRSIG and int.from_bytes(rr.rdata[:2], "big") == self.rrtype
                else rr
                for rr in reply.answers
            ]
        return reply.to_wire()


def make_resolver(zone, upstream=None):
    upstream = upstream or resolver.InProcUpstream(resolver.AuthoritativeServer([zone]))
    return resolver.ValidatingResolver(upstream, zone.anchor, clock=lambda: NOW)


# --- zone -------------------------------------------------------------------


def test_one_entry_zone_shape(table1_zone):
    svcb = {o for o, t in table1_zone.rrsets if t == RRType.SVCB}
    tlsa = {o for o, t in table1_zone.rrsets if t == RRType.TLSA}
    assert svcb == {str(n) for n in enumerate_valid_names(TABLE1)}
    assert tlsa == {"_30509._udp._someip.minor0x00000002.major0x01.instance0x0002.id0x0001.service."}
    service_sigs = sum(len(s.rrsigs) for (o, t), s in table1_zone.rrsets.items() if t in (RRType.SVCB, RRType.TLSA))
    assert service_sigs == 7
    # apex SOA and DNSKEY are signed too
    assert table1_zone.signatures() == 9


def test_two_instances_aggregate(certificate):
    a = resolver.ServiceCatalogEntry(TABLE1, TABLE1_ENDPOINT, certificate, (1,))
    b = resolver.ServiceCatalogEntry(ServiceDescription(1, 3, 1, 2), TABLE1_ENDPOINT, certificate, (1,))
    zone = resolver.build_zone([a, b], now=NOW)
    assert len(zone.lookup("_someip.id0x0001.service.", RRType.SVCB).rrset.rdatas) == 2
    assert len(zone.lookup("_someip.major0x01.id0x0001.service.", RRType.SVCB).rrset.rdatas) == 2
    assert len(zone.lookup("_someip.instance0x0002.id0x0001.service.", RRType.SVCB).rrset.rdatas) == 1


def test_empty_catalog_apex_only():
    zone = resolver.build_zone([], now=NOW)
    assert set(zone.rrsets) == {("service.", RRType.SOA), ("service.", RRType.DNSKEY)}


def test_duplicate_instance(table1_entry):
    with pytest.raises(resolver.DuplicateInstance):
        resolver.build_zone([table1_entry, table1_entry], now=NOW)


def test_invalid_certificate():
    bad = resolver.ServiceCatalogEntry(TABLE1, TABLE1_ENDPOINT, b"not a certificate", (1,))
    with pytest.raises(resolver.InvalidCertificate):
        resolver.build_zone([bad], now=NOW)


# --- authoritative ----------------------------------------------------------


def test_authoritative_answers_six_names(table1_zone):
    server = resolver.AuthoritativeServer([table1_zone])
    for name in enumerate_valid_names(TABLE1):
        resp = ask(server, str(name), RRType.SVCB)
        found = resp.find(str(name), RRType.SVCB)
        rec = decode_svcb_rdata(found.rrset.rdatas[0], 1)
        assert (rec.port, str(rec.ipv4hint), rec.instance, rec.major, rec.minor) == (30509, "10.0.0.5", 2, 1, 2)
        assert len(found.rrsigs) == 1


def test_authoritative_gray_row_nxdomain(table1_zone):
    assert ask(resolver.AuthoritativeServer([table1_zone]), GRAY, RRType.SVCB).rcode == Rcode.NXDOMAIN


def test_authoritative_errors(table1_zone):
    server = resolver.AuthoritativeServer([table1_zone])
    reply = server.handle(b"\x12\x34" + b"\x01\x00\x00\x01\x00\x00\x00\x00\x00\x00\x07")
    assert DnsMessage.from_wire(reply).rcode == Rcode.FORMERR
    assert server.handle(b"\x00") is None
    assert ask(server, "example.", RRType.SVCB).rcode == Rcode.REFUSED
    # existing name, other type: NODATA
    resp = ask(server, "_someip.id0x0001.service.", RRType.TLSA)
    assert resp.rcode == Rcode.NOERROR and not resp.rrsets


def test_authoritative_without_do_omits_rrsig(table1_zone):
    resp = ask(resolver.AuthoritativeServer([table1_zone]), "_someip.id0x0001.service.", RRType.SVCB, dnssec_ok=False)
    assert resp.rrsets[0].rrsigs == ()


def test_udp_responder_with_dnspython(table1_zone):
    with resolver.serve_authoritative(table1_zone, ("127.0.0.1", 0)) as responder:
        host, port = responder.address
        q = dns.message.make_query("_someip.instance0x0002.id0x0001.service.", "SVCB", want_dnssec=True)
        r = dns.query.udp(q, host, port=port, timeout=2)
        assert r.rcode() == dns.rcode.NOERROR
        assert {rrset.rdtype for rrset in r.answer} == {dns.rdatatype.SVCB, dns.rdatatype.RRSIG}
        q = dns.message.make_query(GRAY, "SVCB")
        assert dns.query.udp(q, host, port=port, timeout=2).rcode() == dns.rcode.NXDOMAIN


def test_bind_failure(table1_zone):
    with resolver.serve_authoritative(table1_zone, ("127.0.0.1", 0)) as first:
        with pytest.raises(OSError):
            resolver.UdpResponder(lambda b: None, first.address).close()


# --- validating resolver ----------------------------------------------------


def test_resolve_then_cache_hit(table1_zone):
    res = make_resolver(table1_zone)
    first = res.resolve("_someip.id0x0001.service.", RRType.SVCB)
    assert first.status is ResolveStatus.SECURE and not first.from_cache
    before = res.upstream_queries
    assert before > 0
    second = res.resolve("_someip.id0x0001.service.", RRType.SVCB)
    assert second.from_cache and second.rrset == first.rrset
    assert res.upstream_queries == before


def test_key_material_cached(table1_zone):
    res = make_resolver(table1_zone)
    res.resolve("_someip.id0x0001.service.", RRType.SVCB)
    before = res.upstream_queries
    res.resolve("_someip.major0x01.id0x0001.service.", RRType.SVCB)
    # only the answer itself, DNSKEY comes from cache
    assert res.upstream_queries == before + 1


def test_offline_warm_cache(table1_zone):
    upstream = resolver.InProcUpstream(resolver.AuthoritativeServer([table1_zone]))
    res = make_resolver(table1_zone, upstream)
    names = [(str(n), RRType.SVCB) for n in enumerate_valid_names(TABLE1)]
    assert all(r.status is ResolveStatus.SECURE for r in res.warm(names))
    upstream.severed = True
    for name, rrtype in names:
        assert res.resolve(name, rrtype).status is ResolveStatus.SECURE
    with pytest.raises(UpstreamTimeout):
        res.resolve("_30509._udp._someip.minor0x00000002.major0x01.instance0x0002.id0x0001.service.", RRType.TLSA)


def test_tampered_rrsig_bogus_not_cached(table1_zone):
    upstream = TamperingUpstream(resolver.AuthoritativeServer([table1_zone]))
    res = make_resolver(table1_zone, upstream)
    result = res.resolve("_someip.id0x0001.service.", RRType.SVCB)
    assert result.status is ResolveStatus.BOGUS and result.rrset is None
    assert res.cached("_someip.id0x0001.service.", RRType.SVCB) is None


def test_every_cache_entry_revalidates(table1_zone):
    from someipdns.dnssec import Secure, ZoneMaterial, validate_chain

    res = make_resolver(table1_zone)
    res.warm([(str(n), RRType.SVCB) for n in enumerate_valid_names(TABLE1)])
    key = table1_zone.lookup("service.", RRType.DNSKEY)
    support = {"service.": ZoneMaterial(key.rrset, key.rrsigs)}
    for entry in res.cache_entries():
        signed = entry.rrset
        assert isinstance(validate_chain(signed.rrset, signed.rrsigs, support, table1_zone.anchor, NOW), Secure)


def test_ttl_expiry_refetches(table1_zone):
    res = make_resolver(table1_zone)
    name = "_someip.id0x0001.service."
    res.resolve(name, RRType.SVCB, now=NOW)
    entry = res.cached(name, RRType.SVCB)
    before = res.upstream_queries
    res.resolve(name, RRType.SVCB, now=NOW + entry.ttl * 0.5)
    assert res.upstream_queries == before
    res.resolve(name, RRType.SVCB, now=NOW + entry.ttl + 1)
    assert res.upstream_queries > before
    assert res.cached(name, RRType.SVCB).inserted_at == NOW + entry.ttl + 1


def test_refresh_after_three_quarters(table1_zone):
    upstream = resolver.InProcUpstream(resolver.AuthoritativeServer([table1_zone]))
    res = make_resolver(table1_zone, upstream)
    name = "_someip.id0x0001.service."
    res.resolve(name, RRType.SVCB, now=NOW)
    ttl = res.cached(name, RRType.SVCB).ttl
    before = res.upstream_queries
    upstream.severed = True
    result = res.resolve(name, RRType.SVCB, now=NOW + 0.8 * ttl)
    assert result.status is ResolveStatus.SECURE and result.from_cache
    assert res.upstream_queries == before + 1
    upstream.severed = False
    refreshed = res.resolve(name, RRType.SVCB, now=NOW + 0.8 * ttl)
    assert not refreshed.from_cache


def test_bogus_refresh_keeps_cached(table1_zone):
    upstream = TamperingUpstream(resolver.AuthoritativeServer([table1_zone]))
    upstream.active = False
    res = make_resolver(table1_zone, upstream)
    name = "_someip.id0x0001.service."
    good = res.resolve(name, RRType.SVCB, now=NOW)
    upstream.active = True
    ttl = res.cached(name, RRType.SVCB).ttl
    again = res.resolve(name, RRType.SVCB, now=NOW + 0.9 * ttl)
    assert again.status is ResolveStatus.SECURE and again.rrset == good.rrset


def test_not_found(table1_zone):
    res = make_resolver(table1_zone)
    assert res.resolve(GRAY, RRType.SVCB).status is ResolveStatus.NOT_FOUND
    assert res.resolve("_someip.id0x0001.service.", RRType.TLSA).status is ResolveStatus.NOT_FOUND


def test_two_zone_resolution(table1_entry):
    zones = chain.build_chain(table1_entry)
    server = resolver.AuthoritativeServer([zones.parent, zones.child])
    # DS for the child cut comes from the parent
    ds = ask(server, chain.CHILD, RRType.DS).find(chain.CHILD, RRType.DS)
    assert ds is not None and ds.rrsigs
    res = resolver.ValidatingResolver(resolver.InProcUpstream(server), zones.anchor, clock=lambda: NOW)
    assert res.resolve(zones.leaf_name, RRType.SVCB).status is ResolveStatus.SECURE
    assert res.cached(chain.CHILD, RRType.DS) is not None


def test_wrong_anchor_bogus(table1_zone):
    other = resolver.build_zone([], now=NOW, keys=zone_keys("service.", 555))
    res = resolver.ValidatingResolver(
        resolver.InProcUpstream(resolver.AuthoritativeServer([table1_zone])), other.anchor, clock=lambda: NOW
    )
    assert res.resolve("_someip.id0x0001.service.", RRType.SVCB).status is ResolveStatus.BOGUS


def test_concurrent_resolves(table1_zone):
    res = make_resolver(table1_zone)
    names = [str(n) for n in enumerate_valid_names(TABLE1)] * 5
    with concurrent.futures.ThreadPoolExecutor(8) as pool:
        results = list(pool.map(lambda n: res.resolve(n, RRType.SVCB), names))
    assert all(r.status is ResolveStatus.SECURE for r in results)


# --- stub front end ---------------------------------------------------------


def stub_ask(stub, name, rrtype):
    reply = stub.handle(dnscore.encode_dns_query(name, rrtype, 9))
    return None if reply is None else dnscore.decode_dns_response(reply, 9)


def test_stub_sets_ad(table1_zone):
    resp = stub_ask(resolver.StubService(make_resolver(table1_zone)), "_someip.id0x0001.service.", RRType.SVCB)
    assert resp.rcode == Rcode.NOERROR and resp.authenticated and resp.rrsets


def test_stub_servfail_on_bogus(table1_zone):
    upstream = TamperingUpstream(resolver.AuthoritativeServer([table1_zone]))
    resp = stub_ask(resolver.StubService(make_resolver(table1_zone, upstream)), "_someip.id0x0001.service.", RRType.SVCB)
    assert resp.rcode == Rcode.SERVFAIL and not resp.authenticated and not resp.rrsets


def test_stub_nxdomain(table1_zone):
    resp = stub_ask(resolver.StubService(make_resolver(table1_zone)), GRAY, RRType.SVCB)
    assert resp.rcode == Rcode.NXDOMAIN


def test_stub_drops_when_offline_and_cold(table1_zone):
    upstream = resolver.InProcUpstream(resolver.AuthoritativeServer([table1_zone]))
    upstream.severed = True
    assert stub_ask(resolver.StubService(make_resolver(table1_zone, upstream)), GRAY, RRType.SVCB) is None


def test_stub_over_udp_end_to_end(table1_zone):
    with resolver.serve_authoritative(table1_zone, ("127.0.0.1", 0)) as auth_server:
        res = resolver.ValidatingResolver(resolver.UdpUpstream(auth_server.address), table1_zone.anchor, clock=lambda: NOW)
        with resolver.UdpResponder(resolver.StubService(res).handle, ("127.0.0.1", 0)) as stub:
            q = dns.message.make_query("_someip.id0x0001.service.", "SVCB", want_dnssec=True)
            r = dns.query.udp(q, stub.address[0], port=stub.address[1], timeout=3)
            assert r.flags & dns.flags.AD


def test_udp_upstream_timeout():
    with resolver.UdpResponder(lambda b: None, ("127.0.0.1", 0)) as silent:
        with pytest.raises(UpstreamTimeout):
            resolver.UdpUpstream(silent.address).exchange(dnscore.encode_dns_query("a.", RRType.SVCB, 1), 0.2)


# --- catalog ----------------------------------------------------------------


def test_load_catalog(tmp_path):
    key = seeded_key(3)
    cert = auth.make_certificate(key, "pub")
    from cryptography import x509
    from cryptography.hazmat.primitives import serialization

    (tmp_path / "pub.pem").write_bytes(x509.load_der_x509_certificate(cert).public_bytes(serialization.Encoding.PEM))
    (tmp_path / "catalog.json").write_text(
        json.dumps(
            {
                "parent": "Tier-X.oem",
                "ttl": 600,
                "services": [
                    {
                        "id": "0x0001",
                        "instance": 2,
                        "major": 1,
                        "minor": 2,
                        "ip": "10.0.0.5",
                        "port": 30509,
                        "protocol": "udp",
                        "eventgroups": ["0x0001"],
                        "certificate": "pub.pem",
                        "key": "pub.key",
                    }
                ],
            }
        )
    )
    catalog = resolver.load_catalog(tmp_path / "catalog.json")
    assert catalog.parent == "tier-x.oem." and catalog.ttl == 600
    entry = catalog.entries[0]
    assert entry.description == TABLE1 and entry.endpoint == TABLE1_ENDPOINT
    assert entry.certificate == cert and entry.eventgroups == (1,)
    assert catalog.keys[(1, 2)] == str(tmp_path / "pub.key")
    zone = resolver.build_zone(catalog.entries, catalog.parent, ttl=catalog.ttl, now=NOW)
    assert zone.lookup("_someip.id0x0001.tier-x.oem.", RRType.SVCB).rrset.ttl == 600
