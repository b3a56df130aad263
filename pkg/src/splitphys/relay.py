"""Transform relay for clients that run their own physics.

One host publishes authoritative poses; the relay keeps the latest pose per
entity and, once per send interval, forwards only significant changes to every
subscriber using the same grouped, masked records as the physics server.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass
from typing import Hashable, Optional

from .protocol import codec
from .protocol.delta import DEFAULT_POS_EPS, DEFAULT_ROT_EPS, apply_record, diff_transform, make_record
from .protocol.reliable import Connection, ConnectionDead
from .transform import Transform
from .transport import BandwidthMeter

log = logging.getLogger(__name__)

RELAY_CSV_COLUMNS = ("second", "conn", "bytes_out", "msgs_out")


@dataclass
class RelayConfig:
    rate: float = 12.0
    pos_eps: float = DEFAULT_POS_EPS
    rot_eps: float = DEFAULT_ROT_EPS
    max_payload: int = codec.DEFAULT_MAX_PAYLOAD


class RelaySession:
    """Transport-free relay state. Outgoing traffic lands in ``outbox`` as
    ``(player, reliable, payload)``."""

    def __init__(self, config: Optional[RelayConfig] = None):
        self.config = config or RelayConfig()
        self.host: Optional[int] = None
        self.subscribers: list[int] = []
        self.latest: dict[int, tuple[int, Transform]] = {}     # entity -> (owner, pose)
        self.forwarded: dict[int, Transform] = {}
        self.sends = 0
        self.rejected_updates = 0
        self._next_player = 1
        self.outbox: list[tuple[int, bool, bytes]] = []

    def drain(self):
        out, self.outbox = self.outbox, []
        return out

    def on_join(self, host: bool) -> int:
        player = self._next_player
        self._next_player += 1
        if host and self.host is None:
            self.host = player
            self.outbox.append((player, True, codec.encode_join_ack(codec.JoinAck(player, codec.JOINACK_HOST))))
            return player
        self.subscribers.append(player)
        self.outbox.append((player, True, codec.encode_join_ack(codec.JoinAck(player, 0))))
        entries = tuple(codec.SnapshotEntry(e, self.latest[e][0], 0, t) for e, t in sorted(self.forwarded.items()))
        self.outbox.append((player, True, codec.encode_snapshot(codec.Snapshot(self.sends, entries))))
        return player

    def on_leave(self, player: int):
        if player == self.host:
            self.host = None
        elif player in self.subscribers:
            self.subscribers.remove(player)

    def on_host_update(self, player: int, msg: codec.GroupedUpdate) -> bool:
        if player != self.host:
            self.rejected_updates += 1
            return False
        for rec in msg.records:
            prev = self.latest.get(rec.entity_id)
            base = prev[1] if prev else Transform()
            self.latest[rec.entity_id] = (rec.owner, apply_record(base, rec))
        return True

    def collect(self) -> tuple[list[codec.SnapshotEntry], list[codec.TransformRecord]]:
        """Split pending changes into first sightings and delta records."""
        cfg = self.config
        fresh, records = [], []
        for e in sorted(self.latest):
            owner, cur = self.latest[e]
            prev = self.forwarded.get(e)
            if prev is None:
                fresh.append(codec.SnapshotEntry(e, owner, 0, cur))
                self.forwarded[e] = cur
                continue
            mask = diff_transform(prev, cur, cfg.pos_eps, cfg.rot_eps)
            if not mask:
                continue
            records.append(make_record(e, owner, mask, cur))
            self.forwarded[e] = apply_record(prev, records[-1])
        return fresh, records

    def send_interval(self) -> list[bytes]:
        """Run one send interval; returns the grouped messages fanned out.

        Entities seen for the first time go out in a reliable snapshot so
        subscribers can create their proxies before deltas arrive.
        """
        self.sends += 1
        fresh, records = self.collect()
        if fresh:
            snap = codec.encode_snapshot(codec.Snapshot(self.sends, tuple(fresh)))
            for s in self.subscribers:
                self.outbox.append((s, True, snap))
        msgs = codec.encode_group(records, self.sends, self.config.max_payload)
        for m in msgs:
            for s in self.subscribers:
                self.outbox.append((s, False, m))
        return msgs


class RelayServer:
    def __init__(self, endpoint, config: Optional[RelayConfig] = None):
        self.endpoint = endpoint
        self.session = RelaySession(config)
        self.conns: dict[Hashable, Connection] = {}
        self.player_of: dict[Hashable, int] = {}
        self.addr_of: dict[int, Hashable] = {}
        self.meter = BandwidthMeter()
        self.payload_meter = BandwidthMeter(header_overhead=0)

    def _emit(self, addr, datagram: bytes, now: float, payload_len: int = 0):
        self.endpoint.send(addr, datagram, now)
        self.meter.record(addr, len(datagram), now)
        if payload_len:
            self.payload_meter.record(addr, payload_len, now)

    def pump(self, now: float):
        for addr, data in self.endpoint.poll_recv(now):
            conn = self.conns.setdefault(addr, Connection())
            try:
                payloads, replies = conn.receive(data, now)
            except ValueError:
                continue
            for r in replies:
                self._emit(addr, r, now)
            for p in payloads:
                self._dispatch(addr, p)
        for addr, conn in list(self.conns.items()):
            for d in conn.retransmit_due(now):
                self._emit(addr, d, now)
            if conn.dead:
                player = self.player_of.pop(addr, None)
                self.conns.pop(addr, None)
                if player is not None:
                    self.addr_of.pop(player, None)
                    self.session.on_leave(player)
        self._flush(now)

    def _dispatch(self, addr, payload: bytes):
        try:
            msg = codec.decode_message(payload)
        except codec.DecodeError:
            return
        player = self.player_of.get(addr)
        if isinstance(msg, codec.Join):
            if player is None:
                player = self.session.on_join(bool(msg.flags & codec.JOIN_HOST))
                self.player_of[addr] = player
                self.addr_of[player] = addr
        elif isinstance(msg, codec.GroupedUpdate) and player is not None:
            self.session.on_host_update(player, msg)
        else:
            self.session.rejected_updates += 1

    def _flush(self, now: float):
        for player, reliable, payload in self.session.drain():
            addr = self.addr_of.get(player)
            conn = self.conns.get(addr) if addr is not None else None
            if conn is None:
                continue
            try:
                dgrams = conn.reliable_send(payload, now) if reliable else [conn.unreliable(payload)]
            except ConnectionDead:
                continue
            for d in dgrams:
                self._emit(addr, d, now, len(payload) if not reliable else 0)

    def tick(self, now: float):
        """One send interval: ingest, then forward changes."""
        self.pump(now)
        self.session.send_interval()
        self._flush(now)

    def report(self, window: float, end: Optional[float] = None, on_wire: bool = True) -> dict:
        """Per-subscriber KB/s, keyed by player id."""
        meter = self.meter if on_wire else self.payload_meter
        raw = meter.report(window, end)
        return {self.player_of[a]: v for a, v in raw.items() if a in self.player_of}

    def write_csv(self, path: str):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(RELAY_CSV_COLUMNS)
            for second, conn, nbytes, msgs in self.meter.rows():
                w.writerow((second, self.player_of.get(conn, conn), nbytes, msgs))

    def serve(self, duration: Optional[float] = None, csv_path: Optional[str] = None):
        interval = 1.0 / self.session.config.rate
        start = time.monotonic()
        next_send = start
        try:
            while duration is None or time.monotonic() - start < duration:
                now = time.monotonic() - start
                self.pump(now)
                if time.monotonic() >= next_send:
                    self.tick(time.monotonic() - start)
                    next_send += interval
                time.sleep(min(0.002, max(0.0, next_send - time.monotonic())))
        except KeyboardInterrupt:
            pass
        finally:
            if csv_path:
                self.write_csv(csv_path)


class RelayHost:
    """Authoritative publisher: a client with local physics feeding the relay."""

    def __init__(self, endpoint, relay: Hashable, max_payload: int = codec.DEFAULT_MAX_PAYLOAD):
        self.endpoint = endpoint
        self.relay = relay
        self.conn = Connection()
        self.max_payload = max_payload
        self.player: Optional[int] = None
        self.tick = 0

    def join(self, now: float):
        for d in self.conn.reliable_send(codec.encode_join(codec.Join(codec.JOIN_HOST)), now):
            self.endpoint.send(self.relay, d, now)

    def pump(self, now: float):
        for _, data in self.endpoint.poll_recv(now):
            payloads, replies = self.conn.receive(data, now)
            for r in replies:
                self.endpoint.send(self.relay, r, now)
            for p in payloads:
                msg = codec.decode_message(p)
                if isinstance(msg, codec.JoinAck):
                    self.player = msg.player
        for d in self.conn.retransmit_due(now):
            self.endpoint.send(self.relay, d, now)

    def publish(self, poses: dict[int, Transform], now: float, owner: int = 0):
        """Send full records for every entity."""
        self.tick += 1
        records = [make_record(e, owner, codec.MASK_BOTH, t) for e, t in sorted(poses.items())]
        for m in codec.encode_group(records, self.tick, self.max_payload):
            self.endpoint.send(self.relay, self.conn.unreliable(m), now)
