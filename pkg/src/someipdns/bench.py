"""Discovery and subscription latency benchmark over the four variants.

One publisher persists for the whole run; every sample starts a fresh
subscriber. In DNS variants the SVCB and TLSA answers are resolved into the
validating resolver's cache before the first sample.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import random
import typing

import numpy as np
from cryptography.hazmat.primitives.asymmetric import ed25519

from . import auth, resolver
from .dnscore import RRType
from .engine import (
    EngineConfig,
    Publisher,
    Subscriber,
    SubscriberPhase,
    VariantMode,
)
from .namespace import enumerate_valid_names
from .transport import Datagram, EventLoop, InProcNetwork, MonotonicClock, UdpNetwork
from .wire import EndpointInfo, L4Protocol, ServiceDescription

CSV_COLUMNS = (
    "VARIANT",
    "RUN_INDEX",
    "DISCOVERY_LATENCY",
    "SUBSCRIPTION_LATENCY",
    "SIGN_TIME",
    "VERIFY_TIME",
    "STATUS",
)


class BenchError(Exception):
    pass


class SetupFailure(BenchError):
    pass


class EmptyInput(BenchError):
    pass


@dataclasses.dataclass(frozen=True)
class BenchSample:
    variant: VariantMode
    run_index: int
    discovery_latency: float  # ms
    subscription_latency: float  # ms
    sign_time: typing.Optional[float] = None  # ms
    verify_time: typing.Optional[float] = None  # ms
    status: str = "ok"

    @property
    def ok(self) -> bool:
        return self.status == "ok"


@dataclasses.dataclass
class BenchConfig:
    seed: int = 0
    transport: str = "inproc"
    # one-way bus delay for the in-process transport, seconds
    latency: float = 0.0002
    sample_timeout: float = 3.0
    engine: EngineConfig = dataclasses.field(default_factory=EngineConfig)
    service: ServiceDescription = ServiceDescription(0x0001, 0x0002, 0x01, 0x00000002)
    eventgroup: int = 0x0001


def _ms(seconds: typing.Optional[float]) -> float:
    return float("nan") if seconds is None else seconds * 1000.0


class BenchHarness:
    """Owns the network, publisher and (for DNS variants) resolver stack."""

    def __init__(self, variant: VariantMode, config: typing.Optional[BenchConfig] = None):
        self.variant = variant
        self.config = config or BenchConfig()
        self.rng = random.Random(self.config.seed)
        self.loop = EventLoop(MonotonicClock())
        cfg = dataclasses.replace(self.config.engine)
        if self.config.transport == "inproc":
            self.network = InProcNetwork(self.loop, latency=self.config.latency)
            self.publisher_ip, self.subscriber_ip, self.resolver_ip = "10.0.0.5", "10.0.0.10", "10.0.0.53"
            cfg.resolver = (self.resolver_ip, resolver.DEFAULT_STUB_PORT)
        elif self.config.transport == "udp":
            self.network = UdpNetwork(self.loop)
            self.network.capture = []
            self.publisher_ip = self.subscriber_ip = self.resolver_ip = "127.0.0.1"
        else:
            raise SetupFailure(f"unknown transport {self.config.transport!r}")
        self.engine_config = cfg
        self._closers: typing.List[typing.Callable[[], None]] = []
        try:
            self._setup()
        except OSError as exc:
            self.close()
            raise SetupFailure(str(exc)) from exc

    @property
    def trace(self) -> typing.List[Datagram]:
        if isinstance(self.network, InProcNetwork):
            return self.network.trace
        return self.network.capture

    def _setup(self) -> None:
        seed = self.rng.getrandbits(256).to_bytes(32, "big")
        self.publisher_key = ed25519.Ed25519PrivateKey.from_private_bytes(seed)
        self.certificate = auth.make_certificate(self.publisher_key, "publisher")
        port = 30509
        self.entry = resolver.ServiceCatalogEntry(
            self.config.service,
            EndpointInfo(self.publisher_ip, L4Protocol.UDP, port),
            self.certificate,
            (self.config.eventgroup,),
        )
        if self.variant.uses_dns:
            self._setup_dns()
        self.publisher = Publisher(
            self.loop,
            self.network,
            self.variant,
            self.entry,
            self.publisher_key,
            self.engine_config,
            random.Random(self.rng.getrandbits(64)),
        ).start()
        self._closers.append(self.publisher.stop)

    def _setup_dns(self) -> None:
        self.zone = resolver.build_zone([self.entry], self.engine_config.parent_domain)
        server = resolver.AuthoritativeServer([self.zone])
        if isinstance(self.network, InProcNetwork):
            upstream = resolver.InProcUpstream(server)
        else:
            responder = resolver.serve_authoritative(server, ("127.0.0.1", 0))
            self._closers.append(responder.close)
            upstream = resolver.UdpUpstream(responder.address)
        self.resolver = resolver.ValidatingResolver(upstream, self.zone.anchor)
        names = [(str(n), RRType.SVCB) for n in enumerate_valid_names(self.entry.description, self.zone.origin)]
        names.append((self.entry.tlsa_name(self.zone.origin), RRType.TLSA))
        for res in self.resolver.warm(names):
            if res.status is not resolver.ResolveStatus.SECURE:
                raise SetupFailure(f"could not pre-resolve: {res.status} {res.detail}")
        stub = resolver.StubService(self.resolver)
        if isinstance(self.network, InProcNetwork):
            sock = resolver.attach_inproc(
                self.network, (self.resolver_ip, resolver.DEFAULT_STUB_PORT), stub.handle
            )
            self._closers.append(sock.close)
        else:
            responder = resolver.UdpResponder(stub.handle, ("127.0.0.1", 0))
            self._closers.append(responder.close)
            self.engine_config.resolver = responder.address

    def sample(self, run_index: int) -> BenchSample:
        signs_before = len(self.publisher.sign_times)
        sub = Subscriber(
            self.loop,
            self.network,
            self.variant,
            self.config.service,
            self.config.eventgroup,
            self.engine_config,
            (self.subscriber_ip, 0),
            self.certificate if self.variant is VariantMode.SOMEIP_SD_AUTH else None,
            random.Random(self.rng.getrandbits(64)),
        )
        sub.start()
        try:
            finished = self.loop.run_until(lambda: sub.done, self.config.sample_timeout)
        finally:
            sub.close()
        signs = self.publisher.sign_times[signs_before:]
        if not finished:
            status = "timeout"
        elif sub.phase is SubscriberPhase.FAILED:
            status = f"failed:{type(sub.error).__name__}"
        else:
            status = "ok"
        probe = sub.probe
        return BenchSample(
            self.variant,
            run_index,
            _ms(probe.discovery_latency),
            _ms(probe.subscription_latency),
            _ms(signs[-1]) if signs else None,
            _ms(sub.verify_time) if sub.verify_time is not None else None,
            status,
        )

    def run(self, samples: int) -> typing.List[BenchSample]:
        out = []
        for i in range(samples):
            out.append(self.sample(i))
            # let stray datagrams drain so samples do not interact
            self.loop.run_for(0.001)
        return out

    def close(self) -> None:
        while self._closers:
            self._closers.pop()()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def run_benchmark(
    variant: VariantMode, samples: int = 50, config: typing.Optional[BenchConfig] = None
) -> typing.List[BenchSample]:
    with BenchHarness(variant, config) as harness:
        return harness.run(samples)


# --- reporting ---------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class FiveNumberSummary:
    count: int
    minimum: float
    q1: float
    median: float
    q3: float
    maximum: float
    outliers: typing.Tuple[float, ...] = ()

    @property
    def iqr(self) -> float:
        return self.q3 - self.q1


def five_number_summary(values: typing.Sequence[float]) -> FiveNumberSummary:
    data = np.asarray([v for v in values if v == v], dtype=float)
    if data.size == 0:
        raise EmptyInput("no samples to summarize")
    q1, median, q3 = np.percentile(data, [25, 50, 75])
    lo, hi = q1 - 1.5 * (q3 - q1), q3 + 1.5 * (q3 - q1)
    outliers = tuple(float(v) for v in np.sort(data) if v < lo or v > hi)
    return FiveNumberSummary(
        int(data.size),
        float(data.min()),
        float(q1),
        float(median),
        float(q3),
        float(data.max()),
        outliers,
    )


def summarize(
    samples: typing.Sequence[BenchSample],
) -> typing.Dict[VariantMode, typing.Dict[str, FiveNumberSummary]]:
    """Per-variant summaries of each latency column; failed samples are excluded."""
    if not samples:
        raise EmptyInput("no samples")
    out: typing.Dict[VariantMode, typing.Dict[str, FiveNumberSummary]] = {}
    for variant in dict.fromkeys(s.variant for s in samples):
        rows = [s for s in samples if s.variant is variant and s.ok]
        if not rows:
            continue
        columns = {
            "discovery_latency": [s.discovery_latency for s in rows],
            "subscription_latency": [s.subscription_latency for s in rows],
            "sign_time": [s.sign_time for s in rows if s.sign_time is not None],
            "verify_time": [s.verify_time for s in rows if s.verify_time is not None],
        }
        out[variant] = {k: five_number_summary(v) for k, v in columns.items() if v}
    return out


def failures(samples: typing.Sequence[BenchSample]) -> int:
    return sum(not s.ok for s in samples)


def write_csv(samples: typing.Sequence[BenchSample], fh: typing.TextIO) -> None:
    writer = csv.writer(fh)
    writer.writerow(CSV_COLUMNS)
    for s in samples:
        writer.writerow(
            [
                s.variant.value,
                s.run_index,
                f"{s.discovery_latency:.6f}",
                f"{s.subscription_latency:.6f}",
                "" if s.sign_time is None else f"{s.sign_time:.6f}",
                "" if s.verify_time is None else f"{s.verify_time:.6f}",
                s.status,
            ]
        )


def read_csv(fh: typing.TextIO) -> typing.List[BenchSample]:
    def opt(value: str) -> typing.Optional[float]:
        return float(value) if value else None

    rows = []
    for row in csv.DictReader(fh):
        rows.append(
            BenchSample(
                VariantMode(row["VARIANT"]),
                int(row["RUN_INDEX"]),
                float(row["DISCOVERY_LATENCY"]),
                float(row["SUBSCRIPTION_LATENCY"]),
                opt(row["SIGN_TIME"]),
                opt(row["VERIFY_TIME"]),
                row["STATUS"],
            )
        )
    return rows


def format_summary(summary: typing.Mapping[VariantMode, typing.Mapping[str, FiveNumberSummary]]) -> str:
    buf = io.StringIO()
    header = f"{'variant':<16}{'metric':<22}{'n':>4}{'min':>10}{'q1':>10}{'median':>10}{'q3':>10}{'max':>10}{'outl':>6}"
    buf.write(header + "\n")
    buf.write("-" * len(header) + "\n")
    for variant, metrics in summary.items():
        for metric, s in metrics.items():
            buf.write(
                f"{variant.value:<16}{metric:<22}{s.count:>4}{s.minimum:>10.3f}{s.q1:>10.3f}"
                f"{s.median:>10.3f}{s.q3:>10.3f}{s.maximum:>10.3f}{len(s.outliers):>6}\n"
            )
    return buf.getvalue()
