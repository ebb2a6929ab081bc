"""
Discovery and subscription in the four modes
============================================

Everything runs on a simulated network with a virtual clock, so the times
below are protocol delays only.
"""

import random

from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey

from someipdns import EndpointInfo, L4Protocol, ServiceDescription, auth, resolver
from someipdns.engine import EngineConfig, Publisher, VariantMode, run_subscriber
from someipdns.transport import EventLoop, InProcNetwork, VirtualClock

service = ServiceDescription(0x0001, 0x0002, 0x01, 0x00000002)
key = Ed25519PrivateKey.generate()
cert = auth.make_certificate(key, "publisher")
entry = resolver.ServiceCatalogEntry(service, EndpointInfo("10.0.0.5", L4Protocol.UDP, 30509), cert, (1,))

for mode in VariantMode:
    loop = EventLoop(VirtualClock())
    net = InProcNetwork(loop, latency=0.0002)
    config = EngineConfig(resolver=("10.0.0.53", 5301))

    # DNS modes need the signed zone and a stub resolver on the network
    if mode.uses_dns:
        zone = resolver.build_zone([entry], "service.")
        res = resolver.ValidatingResolver(resolver.InProcUpstream(resolver.AuthoritativeServer([zone])), zone.anchor)
        resolver.attach_inproc(net, config.resolver, resolver.StubService(res).handle)

    publisher = Publisher(loop, net, mode, entry, key, config, random.Random(1)).start()
    trusted = cert if mode is VariantMode.SOMEIP_SD_AUTH else None
    report = run_subscriber(mode, service, 1, loop, net, config, ("10.0.0.10", 0), trusted, random.Random(2))

    probe = report.probe
    print(f"{mode.value:15} {report.phase.value:10} discovery {probe.discovery_latency * 1e3:7.2f} ms"
          f"  subscription {probe.subscription_latency * 1e3:5.2f} ms  datagrams {len(net.trace)}")

    # the publisher pushes an event to its subscriber
    publisher.deliver_event(b"speed=42")
