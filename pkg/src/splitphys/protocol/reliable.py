"""Envelope framing and a per-connection reliability layer over datagrams.

Envelope: ``channel u8 | sequence u32 | payload``. Channels:

* 0 unreliable - fire and forget, sequence is a per-connection counter
* 1 reliable   - acked, retransmitted, delivered exactly once and in order
* 2 ack        - echoes the acknowledged reliable sequence, empty payload
* 3 fragment   - a reliable slice of a message larger than ``fragment_size``;
  payload starts with ``index u16 | total u16``. Fragments share the
  reliable sequence space, so in-order delivery reassembles them.

Timers are driven by an explicit ``now`` (seconds); nothing here reads a clock.
"""

from __future__ import annotations

import struct
from collections import OrderedDict, deque
from dataclasses import dataclass

CH_UNRELIABLE = 0
CH_RELIABLE = 1
CH_ACK = 2
CH_FRAGMENT = 3

ENVELOPE = struct.Struct("<BI")
ENVELOPE_SIZE = ENVELOPE.size
_FRAG = struct.Struct("<HH")

DEFAULT_RTO = 0.1
MAX_RTO = 1.0
DEFAULT_WINDOW = 64
MAX_EXPIRIES = 10
_REORDER_LIMIT = 1 << 16


class ConnectionDead(RuntimeError):
    pass


def encode_envelope(channel: int, seq: int, payload: bytes = b"") -> bytes:
    return ENVELOPE.pack(channel, seq & 0xFFFFFFFF) + payload


def decode_envelope(data: bytes) -> tuple[int, int, bytes]:
    if len(data) < ENVELOPE_SIZE:
        raise ValueError("datagram shorter than envelope header")
    channel, seq = ENVELOPE.unpack_from(data, 0)
    if channel > CH_FRAGMENT:
        raise ValueError(f"unknown channel {channel}")
    return channel, seq, data[ENVELOPE_SIZE:]


@dataclass
class _Pending:
    seq: int
    datagram: bytes
    due: float
    rto: float


class Connection:
    """Sender and receiver state for one peer."""

    def __init__(self, rto: float = DEFAULT_RTO, max_rto: float = MAX_RTO, window: int = DEFAULT_WINDOW,
                 max_expiries: int = MAX_EXPIRIES, fragment_size: int = 1200):
        self.rto = rto
        self.max_rto = max_rto
        self.window = window
        self.max_expiries = max_expiries
        self.fragment_size = fragment_size

        self.next_seq = 1
        self.unreliable_seq = 0
        self.in_flight: OrderedDict[int, _Pending] = OrderedDict()
        self.backlog: deque[tuple[int, bytes]] = deque()
        self.consecutive_expiries = 0
        self.dead = False

        self.expected = 1
        self._reorder: dict[int, tuple[int, bytes]] = {}
        self._fragments: list[bytes] = []

        self.reliable_transmissions = 0
        self.retransmissions = 0
        self.duplicates = 0

    # -- sending --

    def unreliable(self, payload: bytes) -> bytes:
        self.unreliable_seq = (self.unreliable_seq + 1) & 0xFFFFFFFF
        return encode_envelope(CH_UNRELIABLE, self.unreliable_seq, payload)

    def reliable_send(self, payload: bytes, now: float) -> list[bytes]:
        """Queue a reliable message; returns the datagrams to transmit right now."""
        if self.dead:
            raise ConnectionDead("connection declared dead")
        if len(payload) <= self.fragment_size:
            self._enqueue(CH_RELIABLE, payload)
        else:
            step = self.fragment_size - _FRAG.size
            total = -(-len(payload) // step)
            if total > 0xFFFF:
                raise ValueError("message too large to fragment")
            for i in range(total):
                self._enqueue(CH_FRAGMENT, _FRAG.pack(i, total) + payload[i * step:(i + 1) * step])
        return self._fill_window(now)

    def _enqueue(self, channel: int, payload: bytes):
        seq = self.next_seq
        self.next_seq += 1
        self.backlog.append((seq, encode_envelope(channel, seq, payload)))

    def _fill_window(self, now: float) -> list[bytes]:
        out = []
        while self.backlog and len(self.in_flight) < self.window:
            seq, dgram = self.backlog.popleft()
            self.in_flight[seq] = _Pending(seq, dgram, now + self.rto, self.rto)
            self.reliable_transmissions += 1
            out.append(dgram)
        return out

    def on_ack(self, seq: int, now: float) -> list[bytes]:
        if self.in_flight.pop(seq, None) is not None:
            self.consecutive_expiries = 0
        return self._fill_window(now)

    def retransmit_due(self, now: float) -> list[bytes]:
        if self.dead:
            return []
        out = []
        head = next(iter(self.in_flight), None)
        for p in self.in_flight.values():
            if now >= p.due:
                if p.seq == head:
                    # one retransmission timer per connection, tracked on the oldest message
                    self.consecutive_expiries += 1
                    if self.consecutive_expiries >= self.max_expiries:
                        self.dead = True
                        return []
                p.rto = min(p.rto * 2.0, self.max_rto)
                p.due = now + p.rto
                self.reliable_transmissions += 1
                self.retransmissions += 1
                out.append(p.datagram)
        return out

    @property
    def idle(self) -> bool:
        return not self.in_flight and not self.backlog

    # -- receiving --

    def receive(self, datagram: bytes, now: float) -> tuple[list[bytes], list[bytes]]:
        """Process one datagram. Returns (application payloads, datagrams to send back)."""
        channel, seq, payload = decode_envelope(datagram)
        if channel == CH_UNRELIABLE:
            return [payload], []
        if channel == CH_ACK:
            return [], self.on_ack(seq, now)
        replies = [encode_envelope(CH_ACK, seq)]
        if seq < self.expected or seq in self._reorder:
            self.duplicates += 1
            return [], replies
        if seq - self.expected > _REORDER_LIMIT:
            return [], []
        self._reorder[seq] = (channel, payload)
        delivered = []
        while self.expected in self._reorder:
            ch, body = self._reorder.pop(self.expected)
            self.expected += 1
            if ch == CH_RELIABLE:
                delivered.append(body)
            else:
                index, total = _FRAG.unpack_from(body, 0)
                self._fragments.append(body[_FRAG.size:])
                if index == total - 1:
                    delivered.append(b"".join(self._fragments))
                    self._fragments = []
        return delivered, replies
