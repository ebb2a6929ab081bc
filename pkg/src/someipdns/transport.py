"""Single-threaded event loop plus two datagram networks.

:class:`InProcNetwork` is a deterministic bus with injectable latency and
loss that records every datagram it carries. :class:`UdpNetwork` uses real
sockets (unicast and IPv4 multicast) and needs a real clock.
"""

from __future__ import annotations

import dataclasses
import heapq
import ipaddress
import itertools
import random
import selectors
import socket
import struct
import time
import typing

Address = typing.Tuple[str, int]
Receiver = typing.Callable[[bytes, Address], None]


class TransportClosed(RuntimeError):
    pass


class BindFailure(OSError):
    pass


class VirtualClock:
    """Time only moves when the loop has nothing due."""

    real = False

    def __init__(self, start: float = 0.0):
        self._now = start

    def now(self) -> float:
        return self._now

    def wait(self, seconds: float) -> None:
        if seconds > 0:
            self._now += seconds


class MonotonicClock:
    real = True

    def now(self) -> float:
        return time.perf_counter()

    def wait(self, seconds: float) -> None:
        if seconds > 0:
            time.sleep(seconds)


class Handle:
    __slots__ = ("when", "callback", "args", "cancelled")

    def __init__(self, when, callback, args):
        self.when = when
        self.callback = callback
        self.args = args
        self.cancelled = False

    def cancel(self) -> None:
        self.cancelled = True


class EventLoop:
    def __init__(self, clock=None):
        self.clock = clock or MonotonicClock()
        self._timers: typing.List[typing.Tuple[float, int, Handle]] = []
        self._seq = itertools.count()
        self._selector: typing.Optional[selectors.DefaultSelector] = None

    def time(self) -> float:
        return self.clock.now()

    def call_at(self, when: float, callback, *args) -> Handle:
        handle = Handle(when, callback, args)
        heapq.heappush(self._timers, (when, next(self._seq), handle))
        return handle

    def call_later(self, delay: float, callback, *args) -> Handle:
        return self.call_at(self.time() + max(delay, 0.0), callback, *args)

    def call_soon(self, callback, *args) -> Handle:
        return self.call_at(self.time(), callback, *args)

    def add_reader(self, sock: socket.socket, callback) -> None:
        if not self.clock.real:
            raise RuntimeError("real sockets need a real clock")
        if self._selector is None:
            self._selector = selectors.DefaultSelector()
        self._selector.register(sock, selectors.EVENT_READ, callback)

    def remove_reader(self, sock: socket.socket) -> None:
        if self._selector is not None:
            try:
                self._selector.unregister(sock)
            except (KeyError, ValueError):
                pass

    def _pop_due(self) -> typing.Optional[Handle]:
        now = self.time()
        while self._timers:
            when, _, handle = self._timers[0]
            if handle.cancelled:
                heapq.heappop(self._timers)
                continue
            if when <= now:
                heapq.heappop(self._timers)
                return handle
            return None
        return None

    def _next_deadline(self) -> typing.Optional[float]:
        while self._timers and self._timers[0][2].cancelled:
            heapq.heappop(self._timers)
        return self._timers[0][0] if self._timers else None

    def run_once(self, max_wait: float) -> None:
        handle = self._pop_due()
        if handle is not None:
            handle.callback(*handle.args)
            if self._selector is not None and self._selector.get_map():
                self._poll(0)
            return
        deadline = self._next_deadline()
        wait = max_wait if deadline is None else min(max_wait, deadline - self.time())
        wait = max(wait, 0.0)
        if self._selector is not None and self._selector.get_map():
            self._poll(wait)
        else:
            self.clock.wait(wait)

    def _poll(self, wait: float) -> None:
        for key, _ in self._selector.select(wait):
            key.data(key.fileobj)

    def run_until(self, predicate: typing.Callable[[], bool], timeout: float) -> bool:
        deadline = self.time() + timeout
        while not predicate():
            now = self.time()
            if now >= deadline:
                return predicate()
            if not self.clock.real and self._next_deadline() is None:
                # nothing can ever happen again
                self.clock.wait(deadline - now)
                return predicate()
            self.run_once(deadline - now)
        return True

    def run_for(self, duration: float) -> None:
        self.run_until(lambda: False, duration)


@dataclasses.dataclass(frozen=True)
class Datagram:
    time: float
    src: Address
    dst: Address
    data: bytes
    delivered: bool


def is_multicast(ip: str) -> bool:
    return ipaddress.IPv4Address(ip).is_multicast


class InProcSocket:
    def __init__(self, network: InProcNetwork, address: Address, receiver: Receiver):
        self.network = network
        self.address = address
        self.receiver = receiver
        self.groups: typing.Set[Address] = set()
        self.closed = False

    def send(self, data: bytes, dst: Address) -> None:
        if self.closed:
            raise TransportClosed(f"socket {self.address} closed")
        self.network._send(self.address, dst, bytes(data))

    def join(self, group: Address) -> None:
        self.groups.add(group)
        self.network._groups.setdefault(group, set()).add(self)

    def close(self) -> None:
        if not self.closed:
            self.closed = True
            self.network._unbind(self)


class InProcNetwork:
    """Datagram bus for nodes inside one process.

    Addresses are plain ``(ip, port)`` tuples; nothing checks they exist on
    the host. ``trace`` keeps every datagram offered to the bus.
    """

    def __init__(
        self,
        loop: EventLoop,
        latency: float = 0.0,
        drop_rate: float = 0.0,
        rng: typing.Optional[random.Random] = None,
    ):
        self.loop = loop
        self.latency = latency
        self.drop_rate = drop_rate
        self.rng = rng or random.Random(0)
        self.trace: typing.List[Datagram] = []
        self._sockets: typing.Dict[Address, InProcSocket] = {}
        self._groups: typing.Dict[Address, typing.Set[InProcSocket]] = {}
        self._severed: typing.Set[str] = set()
        self._ports = itertools.count(40000)

    def bind(self, address: Address, receiver: Receiver) -> InProcSocket:
        ip, port = address
        if port == 0:
            port = next(self._ports)
            while (ip, port) in self._sockets:
                port = next(self._ports)
        address = (ip, port)
        if address in self._sockets:
            raise BindFailure(f"{address} already bound")
        sock = InProcSocket(self, address, receiver)
        self._sockets[address] = sock
        return sock

    def _unbind(self, sock: InProcSocket) -> None:
        self._sockets.pop(sock.address, None)
        for members in self._groups.values():
            members.discard(sock)

    def sever(self, ip: str) -> None:
        """Drop all traffic to and from ``ip``."""
        self._severed.add(ip)

    def restore(self, ip: str) -> None:
        self._severed.discard(ip)

    def _send(self, src: Address, dst: Address, data: bytes) -> None:
        dropped = (
            src[0] in self._severed
            or dst[0] in self._severed
            or (self.drop_rate > 0 and self.rng.random() < self.drop_rate)
        )
        self.trace.append(Datagram(self.loop.time(), src, dst, data, not dropped))
        if dropped:
            return
        if is_multicast(dst[0]):
            targets = sorted(
                (s for s in self._groups.get(dst, ()) if s.address != src),
                key=lambda s: s.address,
            )
        else:
            sock = self._sockets.get(dst)
            targets = [sock] if sock else []
        for sock in targets:
            self.loop.call_later(self.latency, self._deliver, sock, data, src)

    @staticmethod
    def _deliver(sock: InProcSocket, data: bytes, src: Address) -> None:
        if not sock.closed:
            sock.receiver(data, src)


class UdpSocket:
    def __init__(self, network: UdpNetwork, sock: socket.socket, receiver: Receiver):
        self.network = network
        self.sock = sock
        self.receiver = receiver
        self.address: Address = sock.getsockname()
        self.closed = False
        self._group_socks: typing.List[socket.socket] = []
        network.loop.add_reader(sock, self._on_readable)

    def _on_readable(self, sock: socket.socket) -> None:
        try:
            data, src = sock.recvfrom(65535)
        except (BlockingIOError, InterruptedError):
            return
        except OSError:
            return
        self.receiver(data, src)

    def send(self, data: bytes, dst: Address) -> None:
        if self.closed:
            raise TransportClosed(f"socket {self.address} closed")
        if self.network.capture is not None:
            self.network.capture.append(
                Datagram(self.network.loop.time(), self.address, dst, bytes(data), True)
            )
        self.sock.sendto(data, dst)

    def join(self, group: Address) -> None:
        """Receive datagrams sent to ``group`` through an extra bound socket."""
        ip, port = group
        s = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        s.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        if hasattr(socket, "SO_REUSEPORT"):
            s.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEPORT, 1)
        s.bind(("", port))
        mreq = struct.pack(
            "4s4s", socket.inet_aton(ip), socket.inet_aton(self.network.interface)
        )
        s.setsockopt(socket.IPPROTO_IP, socket.IP_ADD_MEMBERSHIP, mreq)
        s.setblocking(False)
        self._group_socks.append(s)
        self.network.loop.add_reader(s, self._on_group_readable)

    def _on_group_readable(self, sock: socket.socket) -> None:
        try:
            data, src = sock.recvfrom(65535)
        except OSError:
            return
        if src == self.address:
            return
        self.receiver(data, src)

    def close(self) -> None:
        if self.closed:
            return
        self.closed = True
        for s in (self.sock, *self._group_socks):
            self.network.loop.remove_reader(s)
            s.close()


class UdpNetwork:
    """Real UDP sockets; multicast leaves through ``interface``.

    Setting ``capture`` to a list records every datagram sent through
    sockets of this network.
    """

    def __init__(self, loop: EventLoop, interface: str = "127.0.0.1"):
        if not loop.clock.real:
            raise ValueError("UdpNetwork needs a real clock")
        self.loop = loop
        self.interface = interface
        self.capture: typing.Optional[typing.List[Datagram]] = None

    def bind(self, address: Address, receiver: Receiver) -> UdpSocket:
        s = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        # lets a unicast socket share its port with a multicast listener
        s.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            s.bind(address)
        except OSError as exc:
            s.close()
            raise BindFailure(f"can not bind {address}: {exc}") from exc
        s.setsockopt(socket.IPPROTO_IP, socket.IP_MULTICAST_IF, socket.inet_aton(self.interface))
        s.setsockopt(socket.IPPROTO_IP, socket.IP_MULTICAST_LOOP, 1)
        s.setblocking(False)
        return UdpSocket(self, s, receiver)
