"""Command line entry points: nameserver, resolver, bench, keygen."""

from __future__ import annotations

import argparse
import logging
import os
import signal
import sys
import threading
import typing

from cryptography import x509
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric import ed25519

from . import auth, bench, resolver
from .dnssec import KeyRole, TrustAnchor, ZoneSigningKey
from .engine import VariantMode


def parse_address(text: str) -> typing.Tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected addr:port, got {text!r}")
    try:
        return host or "127.0.0.1", int(port)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad port in {text!r}") from None


def _load_or_create_key(path: typing.Optional[str], zone: str, role: KeyRole) -> ZoneSigningKey:
    if path and os.path.exists(path):
        with open(path, "rb") as fh:
            return ZoneSigningKey(zone, role, auth.load_private_key(fh.read()))
    key = ZoneSigningKey.generate(zone, role)
    if path:
        _write_private_key(path, key.private_key)
    return key


def _write_private_key(path: str, key: ed25519.Ed25519PrivateKey) -> None:
    pem = key.private_bytes(
        serialization.Encoding.PEM,
        serialization.PrivateFormat.PKCS8,
        serialization.NoEncryption(),
    )
    fd = os.open(path, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o600)
    with os.fdopen(fd, "wb") as fh:
        fh.write(pem)


def _wait_forever() -> None:
    stop = threading.Event()
    signal.signal(signal.SIGTERM, lambda *_: stop.set())
    try:
        stop.wait()
    except KeyboardInterrupt:
        pass


def cmd_nameserver(args) -> int:
    catalog = resolver.load_catalog(args.zone)
    ksk = _load_or_create_key(args.ksk, catalog.parent, KeyRole.KSK)
    zsk = _load_or_create_key(args.zsk, catalog.parent, KeyRole.ZSK)
    zone = resolver.build_zone(catalog.entries, catalog.parent, (ksk, zsk), ttl=catalog.ttl)
    anchor = zone.anchor.to_text()
    if args.anchor_out:
        with open(args.anchor_out, "w", encoding="utf-8") as fh:
            fh.write(anchor + "\n")
    with resolver.serve_authoritative(zone, args.listen) as responder:
        print(f"serving {zone.origin} ({len(zone.rrsets)} RRsets) on {responder.address[0]}:{responder.address[1]}")
        print(f"trust anchor: {anchor}", flush=True)
        if args.once:
            return 0
        _wait_forever()
    return 0


def cmd_resolver(args) -> int:
    text = args.anchor
    if os.path.exists(text):
        with open(text, "r", encoding="utf-8") as fh:
            text = fh.read().strip()
    anchor = TrustAnchor.from_text(text)
    res = resolver.ValidatingResolver(resolver.UdpUpstream(args.upstream), anchor, timeout=args.timeout)
    stub = resolver.StubService(res)
    with resolver.UdpResponder(stub.handle, args.listen) as responder:
        print(f"validating resolver for {anchor.zone} on {responder.address[0]}:{responder.address[1]}", flush=True)
        if args.once:
            return 0
        _wait_forever()
    return 0


def cmd_bench(args) -> int:
    variants = [VariantMode(v) for v in args.variant]
    config = bench.BenchConfig(seed=args.seed, transport=args.transport)
    samples: typing.List[bench.BenchSample] = []
    for variant in variants:
        samples += bench.run_benchmark(variant, args.samples, config)
    if args.out == "-":
        bench.write_csv(samples, sys.stdout)
    else:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            bench.write_csv(samples, fh)
    failed = bench.failures(samples)
    print(bench.format_summary(bench.summarize(samples)), file=sys.stderr)
    if failed:
        print(f"{failed} sample(s) failed or timed out and were excluded", file=sys.stderr)
    return 0


def cmd_keygen(args) -> int:
    key = ed25519.Ed25519PrivateKey.generate()
    _write_private_key(args.key, key)
    cert = auth.make_certificate(key, args.name)
    pem = x509.load_der_x509_certificate(cert).public_bytes(serialization.Encoding.PEM)
    with open(args.cert, "wb") as fh:
        fh.write(pem)
    print(f"wrote {args.key} and {args.cert}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="someipdns", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    ns = sub.add_parser("nameserver", help="serve a signed zone built from a catalog")
    ns.add_argument("--zone", required=True, help="catalog file (JSON)")
    ns.add_argument("--listen", type=parse_address, default=("127.0.0.1", resolver.DEFAULT_AUTHORITATIVE_PORT))
    ns.add_argument("--ksk", help="PEM key-signing key; created if missing")
    ns.add_argument("--zsk", help="PEM zone-signing key; created if missing")
    ns.add_argument("--anchor-out", help="write the DS trust anchor here")
    ns.add_argument("--once", action="store_true", help=argparse.SUPPRESS)
    ns.set_defaults(func=cmd_nameserver)

    rs = sub.add_parser("resolver", help="validating caching stub resolver")
    rs.add_argument("--anchor", required=True, help="DS text '<zone> DS <tag> <alg> <dtype> <hex>' or a file holding it")
    rs.add_argument("--upstream", type=parse_address, required=True)
    rs.add_argument("--listen", type=parse_address, default=("127.0.0.1", resolver.DEFAULT_STUB_PORT))
    rs.add_argument("--timeout", type=float, default=1.0)
    rs.add_argument("--once", action="store_true", help=argparse.SUPPRESS)
    rs.set_defaults(func=cmd_resolver)

    bn = sub.add_parser("bench", help="discovery/subscription latency benchmark")
    bn.add_argument("--variant", action="append", required=True, choices=[v.value for v in VariantMode])
    bn.add_argument("--samples", type=int, default=50)
    bn.add_argument("--out", default="results.csv")
    bn.add_argument("--seed", type=int, default=0)
    bn.add_argument("--transport", choices=("udp", "inproc"), default="inproc")
    bn.set_defaults(func=cmd_bench)

    kg = sub.add_parser("keygen", help="create a publisher key and self-signed certificate")
    kg.add_argument("--key", required=True)
    kg.add_argument("--cert", required=True)
    kg.add_argument("--name", default="publisher")
    kg.set_defaults(func=cmd_keygen)
    return parser


def main(argv: typing.Optional[typing.Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
