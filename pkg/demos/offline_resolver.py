"""
Discovery while the backend is unreachable
==========================================

"""

import random

from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey

from someipdns import EndpointInfo, L4Protocol, ServiceDescription, auth, enumerate_valid_names, resolver
from someipdns.dnscore import RRType
from someipdns.engine import EngineConfig, Publisher, VariantMode, run_subscriber
from someipdns.transport import EventLoop, InProcNetwork, VirtualClock

service = ServiceDescription(0x0001, 0x0002, 0x01, 0x00000002)
key = Ed25519PrivateKey.generate()
entry = resolver.ServiceCatalogEntry(
    service, EndpointInfo("10.0.0.5", L4Protocol.UDP, 30509), auth.make_certificate(key, "publisher"), (1,)
)
zone = resolver.build_zone([entry], "service.")
upstream = resolver.InProcUpstream(resolver.AuthoritativeServer([zone]))
res = resolver.ValidatingResolver(upstream, zone.anchor)

# fill the cache while the authoritative server is reachable
names = [(str(n), RRType.SVCB) for n in enumerate_valid_names(service)] + [(entry.tlsa_name(), RRType.TLSA)]
print([r.status.value for r in res.warm(names)])

# then cut the link
upstream.severed = True

loop = EventLoop(VirtualClock())
net = InProcNetwork(loop)
config = EngineConfig(resolver=("10.0.0.53", 5301))
resolver.attach_inproc(net, config.resolver, resolver.StubService(res).handle)
Publisher(loop, net, VariantMode.DNSSEC_DANE, entry, key, config).start()
report = run_subscriber(VariantMode.DNSSEC_DANE, service, 1, loop, net, config, ("10.0.0.10", 0), rng=random.Random(0))
print(report.phase.value, report.endpoint)

# names that were never cached can not be answered
try:
    res.resolve("_someip.id0x0002.service.", RRType.SVCB)
except resolver.UpstreamTimeout as exc:
    print("uncached name:", exc)
