"""Publisher authentication by nonce challenge-response.

The subscriber sends a random nonce in the Subscribe configuration option,
the publisher signs it together with the service identity, and the
subscriber checks the signature against the certificate it got from a
validated TLSA record (or a pre-deployed copy).
"""

from __future__ import annotations

import base64
import binascii
import dataclasses
import datetime
import enum
import secrets
import struct
import typing

from cryptography import x509
from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric import ed25519
from cryptography.x509.oid import NameOID

from .dnscore import TlsaCertRecord
from .wire import ConfigOption, ServiceDescription

DOMAIN_TAG = b"someip-dane-v1"
NONCE_KEY = "nonce"
SIG_KEY = "sig"
DEFAULT_NONCE_BYTES = 4
SIGNATURE_SIZE = 64


class AuthError(Exception):
    pass


class RngFailure(AuthError):
    pass


class KeyUnavailable(AuthError):
    pass


class RejectReason(enum.Enum):
    BAD_SIGNATURE = "BadSignature"
    CERTIFICATE_PARSE_ERROR = "CertificateParseError"
    SCHEME_MISMATCH = "SchemeMismatch"


@dataclasses.dataclass(frozen=True)
class Authentic:
    @property
    def ok(self) -> bool:
        return True


@dataclasses.dataclass(frozen=True)
class Reject:
    reason: RejectReason
    detail: str = ""

    @property
    def ok(self) -> bool:
        return False


Verdict = typing.Union[Authentic, Reject]


@dataclasses.dataclass(frozen=True)
class AuthChallenge:
    nonce: int
    issued_at: float = 0.0
    size: int = DEFAULT_NONCE_BYTES

    def __post_init__(self):
        if not 0 <= self.nonce < 1 << (8 * self.size):
            raise ValueError(f"nonce does not fit {self.size} bytes")

    @property
    def nonce_bytes(self) -> bytes:
        return self.nonce.to_bytes(self.size, "big")

    def to_option_value(self) -> bytes:
        return self.nonce_bytes.hex().encode("ascii")

    @classmethod
    def from_option_value(cls, value: bytes, issued_at: float = 0.0) -> AuthChallenge:
        text = value.decode("ascii", errors="replace")
        if not text or len(text) % 2 or text != text.lower():
            raise ValueError(f"bad nonce encoding {value!r}")
        try:
            raw = bytes.fromhex(text)
        except ValueError:
            raise ValueError(f"bad nonce encoding {value!r}") from None
        return cls(int.from_bytes(raw, "big"), issued_at, len(raw))


@dataclasses.dataclass(frozen=True)
class AuthResponse:
    signature: bytes

    def to_option_value(self) -> bytes:
        return base64.b64encode(self.signature).rstrip(b"=")

    @classmethod
    def from_option_value(cls, value: bytes) -> AuthResponse:
        padded = value + b"=" * (-len(value) % 4)
        try:
            return cls(base64.b64decode(padded, validate=True))
        except binascii.Error:
            raise ValueError(f"bad signature encoding {value!r}") from None


def make_challenge(
    rng: typing.Optional[typing.Any] = None,
    now: float = 0.0,
    size: int = DEFAULT_NONCE_BYTES,
) -> AuthChallenge:
    """Draw a nonce; ``rng`` needs ``getrandbits`` (defaults to the OS CSPRNG)."""
    try:
        value = (rng or secrets.SystemRandom()).getrandbits(8 * size)
    except (OSError, NotImplementedError) as exc:
        raise RngFailure(str(exc)) from exc
    return AuthChallenge(value, now, size)


def challenge_message(challenge: AuthChallenge, context: ServiceDescription) -> bytes:
    if not context.is_concrete:
        raise ValueError("signing context must be a concrete service description")
    return (
        DOMAIN_TAG
        + struct.pack(
            "!HHBI",
            context.service_id,
            context.instance_id,
            context.major_version,
            context.minor_version,
        )
        + challenge.nonce_bytes
    )


def sign_challenge(
    challenge: AuthChallenge,
    private_key: typing.Optional[ed25519.Ed25519PrivateKey],
    context: ServiceDescription,
) -> AuthResponse:
    if private_key is None:
        raise KeyUnavailable("publisher has no signing key")
    return AuthResponse(private_key.sign(challenge_message(challenge, context)))


def _public_key_of(cert_data: bytes) -> ed25519.Ed25519PublicKey:
    cert = x509.load_der_x509_certificate(cert_data)
    return cert.public_key()


def verify_response(
    resp: AuthResponse,
    challenge: AuthChallenge,
    tlsa: typing.Union[TlsaCertRecord, bytes],
    context: ServiceDescription,
) -> Verdict:
    cert_data = tlsa.cert_data if isinstance(tlsa, TlsaCertRecord) else tlsa
    try:
        public_key = _public_key_of(cert_data)
    except ValueError as exc:
        return Reject(RejectReason.CERTIFICATE_PARSE_ERROR, str(exc))
    if not isinstance(public_key, ed25519.Ed25519PublicKey):
        return Reject(RejectReason.SCHEME_MISMATCH, type(public_key).__name__)
    if len(resp.signature) != SIGNATURE_SIZE:
        return Reject(RejectReason.BAD_SIGNATURE, f"{len(resp.signature)}-byte signature")
    try:
        public_key.verify(resp.signature, challenge_message(challenge, context))
    except InvalidSignature:
        return Reject(RejectReason.BAD_SIGNATURE)
    return Authentic()


def make_certificate(
    private_key: ed25519.Ed25519PrivateKey,
    common_name: str,
    not_before: typing.Optional[datetime.datetime] = None,
    days: int = 365,
) -> bytes:
    """Minimal self-signed X.509 v3 certificate (DER) for ``private_key``."""
    not_before = not_before or datetime.datetime(2024, 1, 1, tzinfo=datetime.timezone.utc)
    name = x509.Name([x509.NameAttribute(NameOID.COMMON_NAME, common_name)])
    raw_public = private_key.public_key().public_bytes(
        serialization.Encoding.Raw, serialization.PublicFormat.Raw
    )
    # derived from the key so the certificate is reproducible
    serial = int.from_bytes(raw_public[:8], "big") >> 1 or 1
    cert = (
        x509.CertificateBuilder()
        .subject_name(name)
        .issuer_name(name)
        .public_key(private_key.public_key())
        .serial_number(serial)
        .not_valid_before(not_before)
        .not_valid_after(not_before + datetime.timedelta(days=days))
        .add_extension(x509.BasicConstraints(ca=False, path_length=None), critical=True)
        .sign(private_key, None)
    )
    return cert.public_bytes(serialization.Encoding.DER)


def load_certificate(data: bytes) -> bytes:
    """Accept PEM or DER, return DER."""
    if data.lstrip().startswith(b"-----BEGIN"):
        cert = x509.load_pem_x509_certificate(data)
        return cert.public_bytes(serialization.Encoding.DER)
    x509.load_der_x509_certificate(data)
    return bytes(data)


def load_private_key(data: bytes) -> ed25519.Ed25519PrivateKey:
    key = serialization.load_pem_private_key(data, password=None)
    if not isinstance(key, ed25519.Ed25519PrivateKey):
        raise KeyUnavailable(f"expected an Ed25519 key, got {type(key).__name__}")
    return key


def nonce_option(challenge: AuthChallenge) -> ConfigOption:
    return ConfigOption(((NONCE_KEY, challenge.to_option_value()),))


def signature_option(resp: AuthResponse) -> ConfigOption:
    return ConfigOption(((SIG_KEY, resp.to_option_value()),))


class ChallengeTable:
    """Outstanding one-shot challenges keyed by service instance."""

    def __init__(self):
        self._pending: typing.Dict[typing.Hashable, AuthChallenge] = {}

    def issue(self, key: typing.Hashable, challenge: AuthChallenge) -> AuthChallenge:
        self._pending[key] = challenge
        return challenge

    def pending(self, key: typing.Hashable) -> typing.Optional[AuthChallenge]:
        return self._pending.get(key)

    def consume(self, key: typing.Hashable) -> typing.Optional[AuthChallenge]:
        return self._pending.pop(key, None)

    def __len__(self) -> int:
        return len(self._pending)

