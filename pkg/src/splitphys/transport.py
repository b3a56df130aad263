"""Datagram transports: a deterministic simulated network and real UDP sockets.

Both expose ``send(dest, datagram, now)`` and ``poll_recv(now)``. Simulated
time is whatever the caller passes as ``now`` (seconds).
"""

from __future__ import annotations

import heapq
import itertools
import logging
import queue
import random
import socket
import threading
import zlib
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Hashable, Optional

log = logging.getLogger(__name__)

MAX_DATAGRAM = 65507
UDP_IP_OVERHEAD = 28


class DatagramTooLarge(ValueError):
    pass


@dataclass
class SimulatedLink:
    latency_ms: float = 0.0
    jitter_ms: float = 0.0
    loss: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.loss <= 1.0:
            raise ValueError("loss must be within [0, 1]")
        if self.latency_ms < 0 or self.jitter_ms < 0:
            raise ValueError("latency and jitter must be non-negative")


@dataclass
class _Path:
    link: SimulatedLink
    rng: random.Random


@dataclass
class TraceEntry:
    sent: float
    src: Hashable
    dst: Hashable
    size: int
    deliver_at: Optional[float]  # None when dropped


class SimulatedNetwork:
    """In-process network with per-direction latency, jitter and loss.

    Each (src, dst) path draws from its own RNG seeded from the link seed and
    the endpoint names, so runs replay exactly for a fixed scenario script.
    """

    def __init__(self, default: Optional[SimulatedLink] = None, trace: bool = False):
        self.default = default or SimulatedLink()
        self._links: dict[tuple, SimulatedLink] = {}
        self._paths: dict[tuple, _Path] = {}
        self._inbox: dict[Hashable, list] = defaultdict(list)
        self._endpoints: dict[Hashable, "SimEndpoint"] = {}
        self._counter = itertools.count()
        self.trace: Optional[list[TraceEntry]] = [] if trace else None
        self.dropped = 0

    def endpoint(self, address: Hashable) -> "SimEndpoint":
        if address in self._endpoints:
            raise ValueError(f"address {address!r} already bound")
        ep = SimEndpoint(self, address)
        self._endpoints[address] = ep
        return ep

    def set_link(self, src: Hashable, dst: Hashable, link: SimulatedLink, both_ways: bool = False):
        self._links[(src, dst)] = link
        self._paths.pop((src, dst), None)
        if both_ways:
            self.set_link(dst, src, link)

    def _path(self, src, dst) -> _Path:
        key = (src, dst)
        p = self._paths.get(key)
        if p is None:
            link = self._links.get(key, self.default)
            seed = zlib.crc32(f"{link.seed}|{src!r}|{dst!r}".encode())
            p = self._paths[key] = _Path(link, random.Random(seed))
        return p

    def _send(self, src, dst, datagram: bytes, now: float):
        if len(datagram) > MAX_DATAGRAM:
            raise DatagramTooLarge(f"{len(datagram)} byte datagram exceeds {MAX_DATAGRAM}")
        p = self._path(src, dst)
        link = p.link
        deliver = None
        if not (link.loss > 0.0 and p.rng.random() < link.loss):
            delay = link.latency_ms
            if link.jitter_ms > 0.0:
                delay += p.rng.uniform(0.0, link.jitter_ms)
            deliver = now + delay / 1000.0
            heapq.heappush(self._inbox[dst], (deliver, next(self._counter), src, datagram))
        else:
            self.dropped += 1
        if self.trace is not None:
            self.trace.append(TraceEntry(now, src, dst, len(datagram), deliver))

    def _poll(self, address, now: float) -> list[tuple[Hashable, bytes]]:
        box = self._inbox.get(address)
        out = []
        while box and box[0][0] <= now:
            _, _, src, data = heapq.heappop(box)
            out.append((src, data))
        return out

    def pending(self) -> int:
        return sum(len(b) for b in self._inbox.values())


class SimEndpoint:
    def __init__(self, net: SimulatedNetwork, address: Hashable):
        self.net = net
        self.address = address
        self.bytes_sent = 0
        self.datagrams_sent = 0
        self.bytes_received = 0

    def send(self, dest: Hashable, datagram: bytes, now: float):
        self.bytes_sent += len(datagram)
        self.datagrams_sent += 1
        self.net._send(self.address, dest, datagram, now)

    def poll_recv(self, now: float) -> list[tuple[Hashable, bytes]]:
        got = self.net._poll(self.address, now)
        for _, d in got:
            self.bytes_received += len(d)
        return got

    def close(self):
        self.net._endpoints.pop(self.address, None)


class UdpEndpoint:
    """Real UDP socket with a background reader feeding a thread-safe queue."""

    def __init__(self, host: str = "127.0.0.1", port: int = 0):
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.sock.bind((host, port))
        self.sock.settimeout(0.1)
        self.address = self.sock.getsockname()
        self.bytes_sent = 0
        self.datagrams_sent = 0
        self.bytes_received = 0
        self._queue: "queue.Queue[tuple]" = queue.Queue()
        self._send_lock = threading.Lock()
        self._closed = threading.Event()
        self._reader = threading.Thread(target=self._read_loop, name=f"udp-{self.address[1]}", daemon=True)
        self._reader.start()

    def _read_loop(self):
        while not self._closed.is_set():
            try:
                data, addr = self.sock.recvfrom(MAX_DATAGRAM + 1)
            except socket.timeout:
                continue
            except OSError:
                break
            self._queue.put((addr, data))

    def send(self, dest, datagram: bytes, now: float = 0.0):
        if len(datagram) > MAX_DATAGRAM:
            raise DatagramTooLarge(f"{len(datagram)} byte datagram exceeds {MAX_DATAGRAM}")
        with self._send_lock:
            self.sock.sendto(datagram, dest)
            self.bytes_sent += len(datagram)
            self.datagrams_sent += 1

    def poll_recv(self, now: float = 0.0) -> list[tuple]:
        out = []
        while True:
            try:
                item = self._queue.get_nowait()
            except queue.Empty:
                break
            self.bytes_received += len(item[1])
            out.append(item)
        return out

    def close(self):
        self._closed.set()
        self.sock.close()
        self._reader.join(timeout=1.0)


@dataclass
class _Bucket:
    bytes: int = 0
    msgs: int = 0


@dataclass
class BandwidthMeter:
    """Per-connection outbound byte counter in fixed time buckets.

    ``bytes`` are datagram-layer bytes (envelope included); on-wire figures add
    ``header_overhead`` per datagram for the UDP/IPv4 headers.
    """

    resolution: float = 1.0
    header_overhead: int = UDP_IP_OVERHEAD
    buckets: dict = field(default_factory=lambda: defaultdict(_Bucket))

    def record(self, conn: Hashable, nbytes: int, now: float):
        b = self.buckets[(int(now // self.resolution + 1e-9), conn)]
        b.bytes += nbytes
        b.msgs += 1

    def connections(self) -> list:
        return sorted({c for _, c in self.buckets}, key=repr)

    def totals(self, start: float, end: float, conn: Hashable = None, on_wire: bool = True) -> int:
        lo = int(round(start / self.resolution))
        hi = int(round(end / self.resolution))
        total = 0
        for (slot, c), b in self.buckets.items():
            if lo <= slot < hi and (conn is None or c == conn):
                total += b.bytes + (b.msgs * self.header_overhead if on_wire else 0)
        return total

    def report(self, window: float, end: Optional[float] = None, on_wire: bool = True) -> dict:
        """KB/s (1 KB = 1000 B) per connection over ``[end - window, end)``."""
        if window <= 0:
            raise ValueError("window must be positive")
        if end is None:
            end = (max((s for s, _ in self.buckets), default=-1) + 1) * self.resolution
        return {c: self.totals(end - window, end, c, on_wire) / window / 1000.0 for c in self.connections()}

    def rows(self):
        """(second, conn, bytes_out, msgs_out) rows in time order."""
        for (slot, conn), b in sorted(self.buckets.items(), key=lambda kv: (kv[0][0], repr(kv[0][1]))):
            yield slot * self.resolution, conn, b.bytes, b.msgs
