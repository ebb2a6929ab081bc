"""Zone signing and chain-of-trust validation (Ed25519 only).

Validation never raises for bad data: it returns :class:`Bogus` with a
reason. Time is always passed in explicitly as POSIX seconds.
"""

from __future__ import annotations

import dataclasses
import enum
import hashlib
import struct
import typing

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric import ed25519

from .dnscore import (
    DnsError,
    DnskeyRdata,
    DsRdata,
    RRClass,
    RRType,
    ResourceRecordSet,
    RrsigRdata,
    canonical_name_wire,
    is_subdomain,
    label_count,
    parent_name,
)
from .namespace import normalize_name

ALGORITHM_ED25519 = 15
DIGEST_SHA256 = 2
DNSKEY_PROTOCOL = 3


class KeyUnusable(ValueError):
    pass


class KeyRole(enum.Enum):
    ZSK = 0x0100
    KSK = 0x0101


def key_tag(dnskey_rdata: bytes) -> int:
    """Key tag checksum over DNSKEY RDATA (RFC 4034 appendix B)."""
    acc = 0
    for i, b in enumerate(dnskey_rdata):
        acc += b if i & 1 else b << 8
    acc += (acc >> 16) & 0xFFFF
    return acc & 0xFFFF


@dataclasses.dataclass(frozen=True)
class ZoneSigningKey:
    zone: str
    role: KeyRole
    private_key: ed25519.Ed25519PrivateKey = dataclasses.field(repr=False)
    algorithm: int = ALGORITHM_ED25519

    @classmethod
    def generate(cls, zone: str, role: KeyRole = KeyRole.ZSK) -> ZoneSigningKey:
        return cls(normalize_name(zone), role, ed25519.Ed25519PrivateKey.generate())

    @classmethod
    def from_seed(cls, zone: str, role: KeyRole, seed: bytes) -> ZoneSigningKey:
        """Deterministic key from a 32-byte seed (tests and reproducible zones)."""
        return cls(normalize_name(zone), role, ed25519.Ed25519PrivateKey.from_private_bytes(seed))

    @property
    def flags(self) -> int:
        return self.role.value

    @property
    def public_key(self) -> bytes:
        return self.private_key.public_key().public_bytes(
            serialization.Encoding.Raw, serialization.PublicFormat.Raw
        )

    @property
    def dnskey(self) -> DnskeyRdata:
        return DnskeyRdata(self.flags, DNSKEY_PROTOCOL, self.algorithm, self.public_key)

    @property
    def key_tag(self) -> int:
        return key_tag(self.dnskey.to_wire())

    def ds(self, digest_type: int = DIGEST_SHA256) -> DsRdata:
        return make_ds(self.zone, self.dnskey.to_wire(), digest_type)


def make_ds(owner: str, dnskey_rdata: bytes, digest_type: int = DIGEST_SHA256) -> DsRdata:
    if digest_type != DIGEST_SHA256:
        raise ValueError(f"unsupported DS digest type {digest_type}")
    key = DnskeyRdata.from_wire(dnskey_rdata)
    digest = hashlib.sha256(canonical_name_wire(owner) + dnskey_rdata).digest()
    return DsRdata(key_tag(dnskey_rdata), key.algorithm, digest_type, digest)


@dataclasses.dataclass(frozen=True)
class TrustAnchor:
    zone: str
    key_tag: int
    algorithm: int
    digest_alg: int
    ds_digest: bytes

    def __post_init__(self):
        object.__setattr__(self, "zone", normalize_name(self.zone))

    @classmethod
    def from_key(cls, key: ZoneSigningKey) -> TrustAnchor:
        ds = key.ds()
        return cls(key.zone, ds.key_tag, ds.algorithm, ds.digest_type, ds.digest)

    @property
    def ds(self) -> DsRdata:
        return DsRdata(self.key_tag, self.algorithm, self.digest_alg, self.ds_digest)

    def to_text(self) -> str:
        return f"{self.zone} DS {self.key_tag} {self.algorithm} {self.digest_alg} {self.ds_digest.hex()}"

    @classmethod
    def from_text(cls, text: str) -> TrustAnchor:
        """Parse ``<zone> [IN] DS <tag> <alg> <digest type> <hex digest>``."""
        fields = text.split()
        fields = [f for f in fields if f.upper() not in ("IN", "DS")]
        if len(fields) < 5:
            raise ValueError(f"can not parse trust anchor {text!r}")
        zone, tag, alg, dtype = fields[:4]
        return cls(zone, int(tag), int(alg), int(dtype), bytes.fromhex("".join(fields[4:])))


def signed_data(rrset: ResourceRecordSet, rrsig: RrsigRdata) -> bytes:
    """The byte string an RRSIG signs: RRSIG header then canonical records."""
    owner = canonical_name_wire(rrset.owner)
    head = struct.pack("!HHI", rrset.rrtype, rrset.rrclass, rrsig.original_ttl)
    out = bytearray(rrsig.header_wire())
    for rdata in sorted(set(rrset.rdatas)):
        out += owner + head + struct.pack("!H", len(rdata)) + rdata
    return bytes(out)


def sign_rrset(
    rrset: ResourceRecordSet,
    key: ZoneSigningKey,
    inception: int,
    expiration: int,
) -> bytes:
    """Return RRSIG RDATA covering ``rrset``, valid over [inception, expiration]."""
    if expiration <= inception:
        raise ValueError("empty validity interval")
    if key.algorithm != ALGORITHM_ED25519:
        raise KeyUnusable(f"algorithm {key.algorithm} not supported")
    if not is_subdomain(rrset.owner, key.zone):
        raise KeyUnusable(f"{key.zone} key can not sign {rrset.owner}")
    header = RrsigRdata(
        type_covered=rrset.rrtype,
        algorithm=key.algorithm,
        labels=label_count(rrset.owner),
        original_ttl=rrset.ttl,
        expiration=expiration & 0xFFFFFFFF,
        inception=inception & 0xFFFFFFFF,
        key_tag=key.key_tag,
        signer=key.zone,
        signature=b"",
    )
    signature = key.private_key.sign(signed_data(rrset, header))
    return dataclasses.replace(header, signature=signature).to_wire()


# --- validation -------------------------------------------------------------


class BogusReason(enum.Enum):
    SIGNATURE_INVALID = "SignatureInvalid"
    EXPIRED = "Expired"
    NOT_YET_VALID = "NotYetValid"
    KEY_TAG_MISMATCH = "KeyTagMismatch"
    BROKEN_DELEGATION = "BrokenDelegation"


@dataclasses.dataclass(frozen=True)
class Secure:
    # earliest signature expiration along the chain, for cache lifetimes
    expires: int

    @property
    def is_secure(self) -> bool:
        return True


@dataclasses.dataclass(frozen=True)
class Bogus:
    reason: BogusReason
    detail: str = ""

    @property
    def is_secure(self) -> bool:
        return False


ValidationResult = typing.Union[Secure, Bogus]


@dataclasses.dataclass(frozen=True)
class ZoneMaterial:
    """Records needed to trust one zone's keys.

    ``ds``/``ds_sigs`` come from the parent zone and are unused for the
    anchored zone itself.
    """

    dnskey: ResourceRecordSet
    dnskey_sigs: typing.Tuple[bytes, ...]
    ds: typing.Optional[ResourceRecordSet] = None
    ds_sigs: typing.Tuple[bytes, ...] = ()


class _BogusError(Exception):
    def __init__(self, reason: BogusReason, detail: str):
        super().__init__(detail)
        self.reason = reason
        self.detail = detail


def _verify_one(
    rrset: ResourceRecordSet,
    sig: RrsigRdata,
    keys: typing.Sequence[DnskeyRdata],
    now: int,
) -> None:
    if sig.type_covered != rrset.rrtype:
        raise _BogusError(BogusReason.SIGNATURE_INVALID, "RRSIG covers another type")
    if sig.algorithm != ALGORITHM_ED25519:
        raise _BogusError(BogusReason.SIGNATURE_INVALID, f"algorithm {sig.algorithm}")
    if sig.labels != label_count(rrset.owner):
        raise _BogusError(BogusReason.SIGNATURE_INVALID, "label count mismatch")
    if sig.signer != normalize_name(sig.signer):
        raise _BogusError(BogusReason.SIGNATURE_INVALID, "signer name not canonical")
    if rrset.ttl > sig.original_ttl:
        raise _BogusError(BogusReason.SIGNATURE_INVALID, "ttl above original ttl")
    candidates = [
        k
        for k in keys
        if key_tag(k.to_wire()) == sig.key_tag and k.algorithm == sig.algorithm
    ]
    if not candidates:
        raise _BogusError(BogusReason.KEY_TAG_MISMATCH, f"no DNSKEY with tag {sig.key_tag}")
    if now > sig.expiration:
        raise _BogusError(BogusReason.EXPIRED, f"expired at {sig.expiration}")
    if now < sig.inception:
        raise _BogusError(BogusReason.NOT_YET_VALID, f"valid from {sig.inception}")
    data = signed_data(rrset, sig)
    for key in candidates:
        if len(key.public_key) != 32:
            continue
        try:
            ed25519.Ed25519PublicKey.from_public_bytes(key.public_key).verify(sig.signature, data)
            return
        except (InvalidSignature, ValueError):
            continue
    raise _BogusError(BogusReason.SIGNATURE_INVALID, "signature does not verify")


def _verify_rrset(
    rrset: ResourceRecordSet,
    rrsigs: typing.Sequence[bytes],
    keys_for: typing.Callable[[str], typing.Tuple[typing.List[DnskeyRdata], int]],
    now: int,
    zone_hint: typing.Optional[str] = None,
) -> int:
    """Accept if any RRSIG verifies; return the earliest relevant expiration."""
    if not rrsigs:
        raise _BogusError(BogusReason.SIGNATURE_INVALID, f"no RRSIG for {rrset.owner}")
    first: typing.Optional[_BogusError] = None
    for raw in rrsigs:
        try:
            try:
                sig = RrsigRdata.from_wire(raw)
            except DnsError as exc:
                raise _BogusError(BogusReason.SIGNATURE_INVALID, f"malformed RRSIG: {exc}")
            signer = normalize_name(sig.signer)
            if zone_hint is not None and signer != zone_hint:
                raise _BogusError(BogusReason.SIGNATURE_INVALID, f"unexpected signer {signer}")
            if not is_subdomain(rrset.owner, signer):
                raise _BogusError(BogusReason.SIGNATURE_INVALID, f"signer {signer} not an ancestor")
            keys, chain_expiry = keys_for(signer)
            _verify_one(rrset, sig, keys, now)
            return min(sig.expiration, chain_expiry)
        except _BogusError as exc:
            first = first or exc
    assert first is not None
    raise first


def validate_chain(
    rrset: ResourceRecordSet,
    rrsigs: typing.Sequence[bytes],
    supporting: typing.Mapping[str, ZoneMaterial],
    anchor: TrustAnchor,
    now: int,
) -> ValidationResult:
    """Walk anchor DS -> KSK -> ZSK -> RRSIG for ``rrset``.

    ``supporting`` maps each zone cut between the anchor and the signer to
    its DNSKEY set and (below the anchor) its DS set from the parent.
    """
    support = {normalize_name(z): m for z, m in supporting.items()}
    trusted: typing.Dict[str, typing.Tuple[typing.List[DnskeyRdata], int]] = {}

    def keys_for(zone: str, depth: int = 0) -> typing.Tuple[typing.List[DnskeyRdata], int]:
        if zone in trusted:
            return trusted[zone]
        if depth > 16:
            raise _BogusError(BogusReason.BROKEN_DELEGATION, "delegation chain too deep")
        if not is_subdomain(zone, anchor.zone):
            raise _BogusError(BogusReason.BROKEN_DELEGATION, f"{zone} outside anchor {anchor.zone}")
        material = support.get(zone)
        if material is None:
            raise _BogusError(BogusReason.BROKEN_DELEGATION, f"no DNSKEY material for {zone}")
        if material.dnskey.key != (zone, RRType.DNSKEY):
            raise _BogusError(BogusReason.BROKEN_DELEGATION, f"DNSKEY set not owned by {zone}")

        expiry = 0xFFFFFFFF
        if zone == anchor.zone:
            ds_list = [anchor.ds]
        else:
            if material.ds is None or material.ds.key != (zone, RRType.DS):
                raise _BogusError(BogusReason.BROKEN_DELEGATION, f"no DS set for {zone}")
            parent = parent_name(zone)
            while parent not in support and parent != anchor.zone and parent != ".":
                parent = parent_name(parent)
            expiry = _verify_rrset(
                material.ds,
                material.ds_sigs,
                lambda z: keys_for(z, depth + 1),
                now,
                zone_hint=parent,
            )
            try:
                ds_list = [DsRdata.from_wire(r) for r in material.ds.rdatas]
            except DnsError as exc:
                raise _BogusError(BogusReason.BROKEN_DELEGATION, f"malformed DS: {exc}")

        try:
            keys = [DnskeyRdata.from_wire(r) for r in material.dnskey.rdatas]
        except DnsError as exc:
            raise _BogusError(BogusReason.BROKEN_DELEGATION, f"malformed DNSKEY: {exc}")
        entry_keys = []
        for key in keys:
            if key.protocol != DNSKEY_PROTOCOL or not key.flags & DnskeyRdata.ZONE:
                continue
            if key.flags & DnskeyRdata.REVOKE:
                continue
            wire = key.to_wire()
            for ds in ds_list:
                if ds.digest_type != DIGEST_SHA256:
                    continue
                if (ds.key_tag, ds.algorithm) != (key_tag(wire), key.algorithm):
                    continue
                if make_ds(zone, wire).digest == ds.digest:
                    entry_keys.append(key)
        if not entry_keys:
            raise _BogusError(BogusReason.BROKEN_DELEGATION, f"no DNSKEY of {zone} matches its DS")

        usable = [
            k
            for k in keys
            if k.protocol == DNSKEY_PROTOCOL
            and k.flags & DnskeyRdata.ZONE
            and not k.flags & DnskeyRdata.REVOKE
        ]
        # the DNSKEY set must be signed by a DS-designated key
        exp = _verify_rrset(
            material.dnskey,
            material.dnskey_sigs,
            lambda z: (entry_keys, 0xFFFFFFFF),
            now,
            zone_hint=zone,
        )
        trusted[zone] = (usable, min(expiry, exp))
        return trusted[zone]

    try:
        if rrset.rrclass != RRClass.IN:
            raise _BogusError(BogusReason.SIGNATURE_INVALID, "unsupported class")
        expires = _verify_rrset(rrset, rrsigs, keys_for, now)
    except _BogusError as exc:
        return Bogus(exc.reason, exc.detail)
    return Secure(expires)
