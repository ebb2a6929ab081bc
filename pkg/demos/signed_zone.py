"""
A signed zone and a validating resolver
=======================================

"""

from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey

from someipdns import EndpointInfo, L4Protocol, ServiceDescription, enumerate_valid_names
from someipdns import auth, dnscore, resolver
from someipdns.dnscore import RRType

# the publisher's Ed25519 key and its self-signed certificate
key = Ed25519PrivateKey.generate()
cert = auth.make_certificate(key, "publisher")

service = ServiceDescription(0x0001, 0x0002, 0x01, 0x00000002)
entry = resolver.ServiceCatalogEntry(service, EndpointInfo("10.0.0.5", L4Protocol.UDP, 30509), cert, (1,))

# every valid name gets an SVCB record, plus one TLSA record for the endpoint
zone = resolver.build_zone([entry], "service.")
for (owner, rrtype), signed in sorted(zone.rrsets.items()):
    print(f"{RRType(rrtype).name:7} {owner}")
print("trust anchor:", zone.anchor.to_text())

# the resolver only trusts what chains up to the anchor
upstream = resolver.InProcUpstream(resolver.AuthoritativeServer([zone]))
res = resolver.ValidatingResolver(upstream, zone.anchor)
for name in enumerate_valid_names(service):
    result = res.resolve(str(name), RRType.SVCB)
    rec = dnscore.decode_svcb_rdata(result.rrset.rrset.rdatas[0], service.service_id)
    print(result.status.value, name, f"{rec.ipv4hint}:{rec.port}")

# a second lookup is served from the cache
before = res.upstream_queries
res.resolve(str(next(iter(enumerate_valid_names(service)))), RRType.SVCB)
print("upstream queries for the repeat:", res.upstream_queries - before)
