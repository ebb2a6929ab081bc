import random

import pytest
from cryptography.hazmat.primitives.asymmetric import ed25519

from someipdns import auth, resolver
from someipdns.dnssec import KeyRole, ZoneSigningKey
from someipdns.wire import EndpointInfo, L4Protocol, ServiceDescription

# fixed signing time so zones and validation are reproducible
NOW = 1_800_000_000

TABLE1 = ServiceDescription(0x0001, 0x0002, 0x01, 0x00000002)
TABLE1_ENDPOINT = EndpointInfo("10.0.0.5", L4Protocol.UDP, 30509)


def seeded_key(seed: int) -> ed25519.Ed25519PrivateKey:
    return ed25519.Ed25519PrivateKey.from_private_bytes(random.Random(seed).randbytes(32))


def zone_keys(origin: str, seed: int):
    return (
        ZoneSigningKey.from_seed(origin, KeyRole.KSK, random.Random(seed).randbytes(32)),
        ZoneSigningKey.from_seed(origin, KeyRole.ZSK, random.Random(seed + 1).randbytes(32)),
    )


@pytest.fixture(scope="session")
def publisher_key():
    return seeded_key(7)


@pytest.fixture(scope="session")
def certificate(publisher_key):
    return auth.make_certificate(publisher_key, "publisher")


@pytest.fixture(scope="session")
def table1_entry(certificate):
    return resolver.ServiceCatalogEntry(TABLE1, TABLE1_ENDPOINT, certificate, (0x0001,))


@pytest.fixture(scope="session")
def table1_zone(table1_entry):
    return resolver.build_zone([table1_entry], "service.", zone_keys("service.", 100), now=NOW)


# (label, verdict, detail) rows filled in by test_acceptance
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label, verdict, detail in sorted(ACCEPTANCE, key=lambda r: int(r[0].split()[0].rstrip("abc"))):
        terminalreporter.write_line(f"{verdict} {label}{': ' + detail if detail else ''}")
