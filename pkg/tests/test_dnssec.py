import dataclasses

import dns.dnssec
import dns.rdata
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import chain
import gen
from conftest import NOW, zone_keys
from someipdns import dnssec
from someipdns.dnscore import DnskeyRdata, ResourceRecordSet, RrsigRdata, RRType
from someipdns.dnssec import (
    Bogus,
    BogusReason,
    KeyRole,
    Secure,
    TrustAnchor,
    ZoneMaterial,
    ZoneSigningKey,
    key_tag,
    sign_rrset,
    validate_chain,
)


@pytest.fixture(scope="module")
def two_zones(table1_entry):
    return chain.build_chain(table1_entry)


def test_key_tag_matches_dnspython():
    for seed in range(10):
        ksk, zsk = zone_keys("service.", seed * 2)
        for key in (ksk, zsk):
            wire = key.dnskey.to_wire()
            theirs = dns.rdata.from_wire("IN", "DNSKEY", wire, 0, len(wire))
            assert key_tag(wire) == dns.dnssec.key_id(theirs)
            assert key.key_tag == key_tag(wire)


def test_ds_matches_dnspython():
    ksk, _ = zone_keys("service.", 4)
    wire = ksk.dnskey.to_wire()
    theirs = dns.dnssec.make_ds("service.", dns.rdata.from_wire("IN", "DNSKEY", wire, 0, len(wire)), "SHA256")
    assert ksk.ds().to_wire() == theirs.to_wire()


def test_key_flags():
    ksk, zsk = zone_keys("service.", 8)
    assert ksk.dnskey.flags == 257 and zsk.dnskey.flags == 256
    assert ksk.dnskey.algorithm == 15


def test_sign_verify_table1(table1_zone):
    leaf = table1_zone.lookup("_someip.id0x0001.service.", RRType.SVCB)
    dnskey = table1_zone.lookup("service.", RRType.DNSKEY).rrset
    assert chain.dnspython_valid(leaf.rrset, leaf.rrsigs, "service.", dnskey)
    support = {"service.": ZoneMaterial(dnskey, table1_zone.lookup("service.", RRType.DNSKEY).rrsigs)}
    assert isinstance(validate_chain(leaf.rrset, leaf.rrsigs, support, table1_zone.anchor, NOW), Secure)


def test_flip_rdata_byte(table1_zone):
    leaf = table1_zone.lookup("_someip.id0x0001.service.", RRType.SVCB)
    dnskey = table1_zone.lookup("service.", RRType.DNSKEY)
    rdata = bytearray(leaf.rrset.rdatas[0])
    rdata[-1] ^= 0x01
    bad = dataclasses.replace(leaf.rrset, rdatas=(bytes(rdata),))
    support = {"service.": ZoneMaterial(dnskey.rrset, dnskey.rrsigs)}
    result = validate_chain(bad, leaf.rrsigs, support, table1_zone.anchor, NOW)
    assert result == Bogus(BogusReason.SIGNATURE_INVALID, result.detail)
    assert not chain.dnspython_valid(bad, leaf.rrsigs, "service.", dnskey.rrset)


def test_wrong_key_same_algorithm(table1_zone):
    leaf = table1_zone.lookup("_someip.id0x0001.service.", RRType.SVCB)
    _, other_zsk = zone_keys("service.", 999)
    # same tag as the real ZSK would be a collision; a foreign key fails by tag or signature
    sig = sign_rrset(leaf.rrset, other_zsk, NOW - 10, NOW + 10)
    dnskey = table1_zone.lookup("service.", RRType.DNSKEY)
    support = {"service.": ZoneMaterial(dnskey.rrset, dnskey.rrsigs)}
    result = validate_chain(leaf.rrset, (sig,), support, table1_zone.anchor, NOW)
    assert isinstance(result, Bogus)
    assert result.reason in (BogusReason.KEY_TAG_MISMATCH, BogusReason.SIGNATURE_INVALID)


def test_forged_key_tag_still_rejected(table1_zone):
    leaf = table1_zone.lookup("_someip.id0x0001.service.", RRType.SVCB)
    _, other_zsk = zone_keys("service.", 999)
    sig = RrsigRdata.from_wire(sign_rrset(leaf.rrset, other_zsk, NOW - 10, NOW + 10))
    forged = dataclasses.replace(sig, key_tag=table1_zone.zsk.key_tag).to_wire()
    dnskey = table1_zone.lookup("service.", RRType.DNSKEY)
    support = {"service.": ZoneMaterial(dnskey.rrset, dnskey.rrsigs)}
    result = validate_chain(leaf.rrset, (forged,), support, table1_zone.anchor, NOW)
    assert result.reason is BogusReason.SIGNATURE_INVALID


def test_two_zone_chain_secure(two_zones):
    leaf = two_zones.leaf()
    result = validate_chain(leaf.rrset, leaf.rrsigs, two_zones.support(), two_zones.anchor, NOW)
    assert isinstance(result, Secure)
    assert result.expires == two_zones.child.expiration
    # each link independently, with dnspython
    sup = two_zones.support()
    assert chain.dnspython_valid(leaf.rrset, leaf.rrsigs, chain.CHILD, sup[chain.CHILD].dnskey)
    assert chain.dnspython_valid(sup[chain.CHILD].ds, sup[chain.CHILD].ds_sigs, chain.PARENT, sup[chain.PARENT].dnskey)
    assert chain.dnspython_valid(sup[chain.CHILD].dnskey, sup[chain.CHILD].dnskey_sigs, chain.CHILD, sup[chain.CHILD].dnskey)


def test_expired(two_zones):
    leaf = two_zones.leaf()
    later = two_zones.child.expiration + 1
    result = validate_chain(leaf.rrset, leaf.rrsigs, two_zones.support(), two_zones.anchor, later)
    assert isinstance(result, Bogus) and result.reason is BogusReason.EXPIRED


def test_not_yet_valid(two_zones):
    leaf = two_zones.leaf()
    earlier = two_zones.child.inception - 1
    result = validate_chain(leaf.rrset, leaf.rrsigs, two_zones.support(), two_zones.anchor, earlier)
    assert isinstance(result, Bogus) and result.reason is BogusReason.NOT_YET_VALID


def test_leaf_expiration_in_past(two_zones):
    leaf = two_zones.leaf()
    sig = sign_rrset(leaf.rrset, two_zones.child.zsk, NOW - 100, NOW - 50)
    result = validate_chain(leaf.rrset, (sig,), two_zones.support(), two_zones.anchor, NOW)
    assert result.reason is BogusReason.EXPIRED


def test_ds_digest_altered(two_zones):
    leaf = two_zones.leaf()
    bad = dataclasses.replace(two_zones.anchor, ds_digest=gen.flip_bit(two_zones.anchor.ds_digest, 5))
    result = validate_chain(leaf.rrset, leaf.rrsigs, two_zones.support(), bad, NOW)
    assert isinstance(result, Bogus) and result.reason is BogusReason.BROKEN_DELEGATION


def test_missing_delegation(two_zones):
    leaf = two_zones.leaf()
    support = dict(two_zones.support())
    support[chain.CHILD] = dataclasses.replace(support[chain.CHILD], ds=None, ds_sigs=())
    result = validate_chain(leaf.rrset, leaf.rrsigs, support, two_zones.anchor, NOW)
    assert result.reason is BogusReason.BROKEN_DELEGATION
    del support[chain.CHILD]
    result = validate_chain(leaf.rrset, leaf.rrsigs, support, two_zones.anchor, NOW)
    assert result.reason is BogusReason.BROKEN_DELEGATION


def test_child_key_signing_own_ds_rejected(two_zones):
    # a DS set signed by the child instead of the parent must not be trusted
    leaf = two_zones.leaf()
    support = dict(two_zones.support())
    ds = support[chain.CHILD].ds
    forged = sign_rrset(ds, two_zones.child.zsk, NOW - 10, NOW + 10)
    support[chain.CHILD] = dataclasses.replace(support[chain.CHILD], ds_sigs=(forged,))
    assert isinstance(validate_chain(leaf.rrset, leaf.rrsigs, support, two_zones.anchor, NOW), Bogus)


def test_zsk_cannot_sign_dnskey_set(two_zones):
    leaf = two_zones.leaf()
    support = dict(two_zones.support())
    material = support[chain.CHILD]
    by_zsk = sign_rrset(material.dnskey, two_zones.child.zsk, NOW - 10, NOW + 10)
    support[chain.CHILD] = dataclasses.replace(material, dnskey_sigs=(by_zsk,))
    assert isinstance(validate_chain(leaf.rrset, leaf.rrsigs, support, two_zones.anchor, NOW), Bogus)


def test_outside_anchor(two_zones):
    leaf = two_zones.leaf()
    other = TrustAnchor.from_key(zone_keys("other.", 1)[0])
    result = validate_chain(leaf.rrset, leaf.rrsigs, two_zones.support(), other, NOW)
    assert result.reason is BogusReason.BROKEN_DELEGATION


def test_uppercase_signer_rejected(two_zones):
    leaf = two_zones.leaf()
    sig = RrsigRdata.from_wire(leaf.rrsigs[0])
    upper = dataclasses.replace(sig, signer="Vehicle.service.").to_wire()
    assert isinstance(validate_chain(leaf.rrset, (upper,), two_zones.support(), two_zones.anchor, NOW), Bogus)


def test_no_signatures(two_zones):
    leaf = two_zones.leaf()
    assert isinstance(validate_chain(leaf.rrset, (), two_zones.support(), two_zones.anchor, NOW), Bogus)


def test_any_valid_signature_suffices(two_zones):
    leaf = two_zones.leaf()
    junk = gen.flip_bit(leaf.rrsigs[0], len(leaf.rrsigs[0]) * 8 - 1)
    result = validate_chain(leaf.rrset, (junk,) + leaf.rrsigs, two_zones.support(), two_zones.anchor, NOW)
    assert isinstance(result, Secure)


def test_revoked_key_not_usable():
    ksk, zsk = zone_keys("service.", 50)
    revoked = DnskeyRdata(ksk.dnskey.flags | DnskeyRdata.REVOKE, 3, 15, ksk.dnskey.public_key)
    rrset = ResourceRecordSet("service.", RRType.DNSKEY, 60, (revoked.to_wire(), zsk.dnskey.to_wire())).canonical()
    sig = sign_rrset(rrset, ksk, NOW - 10, NOW + 10)
    anchor = TrustAnchor("service.", key_tag(revoked.to_wire()), 15, 2, dnssec.make_ds("service.", revoked.to_wire()).digest)
    result = validate_chain(rrset, (sig,), {"service.": ZoneMaterial(rrset, (sig,))}, anchor, NOW)
    assert isinstance(result, Bogus)


def test_sign_rejects_out_of_zone():
    _, zsk = zone_keys("service.", 2)
    with pytest.raises(dnssec.KeyUnusable):
        sign_rrset(ResourceRecordSet("other.", RRType.SVCB, 60, (b"\x00",)), zsk, NOW, NOW + 1)
    with pytest.raises(ValueError):
        sign_rrset(ResourceRecordSet("a.service.", RRType.SVCB, 60, (b"\x00",)), zsk, NOW, NOW)


def test_signatures_deterministic(two_zones):
    leaf = two_zones.leaf()
    a = sign_rrset(leaf.rrset, two_zones.child.zsk, NOW, NOW + 10)
    b = sign_rrset(leaf.rrset, two_zones.child.zsk, NOW, NOW + 10)
    assert a == b


def test_anchor_text_round_trip(two_zones):
    anchor = two_zones.anchor
    assert TrustAnchor.from_text(anchor.to_text()) == anchor
    assert anchor.to_text().startswith("service. DS ")


def test_generated_keys_distinct():
    a = ZoneSigningKey.generate("service.", KeyRole.ZSK)
    b = ZoneSigningKey.generate("service.", KeyRole.ZSK)
    assert a.dnskey.public_key != b.dnskey.public_key


@settings(max_examples=150, deadline=None)
@given(st.randoms(use_true_random=False))
def test_soundness_against_dnspython(table1_zone, rng):
    """Secure only if dnspython independently accepts the leaf signature."""
    entry_zone = table1_zone
    leaf = entry_zone.lookup("_someip.id0x0001.service.", RRType.SVCB)
    dnskey = entry_zone.lookup("service.", RRType.DNSKEY)
    sig = leaf.rrsigs[0]
    if rng.random() < 0.7:
        sig = gen.flip_bit(sig, rng.randrange(len(sig) * 8))
    rrset = leaf.rrset
    if rng.random() < 0.3:
        rrset = dataclasses.replace(rrset, rdatas=(gen.flip_bit(rrset.rdatas[0], rng.randrange(len(rrset.rdatas[0]) * 8)),))
    ours = validate_chain(rrset, (sig,), {"service.": ZoneMaterial(dnskey.rrset, dnskey.rrsigs)}, entry_zone.anchor, NOW)
    if isinstance(ours, Secure):
        assert chain.dnspython_valid(rrset, (sig,), "service.", dnskey.rrset)


def test_determinism(two_zones):
    leaf = two_zones.leaf()
    results = {validate_chain(leaf.rrset, leaf.rrsigs, two_zones.support(), two_zones.anchor, NOW) for _ in range(3)}
    assert len(results) == 1
