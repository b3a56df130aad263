"""Physics server node: binds a Session to a datagram endpoint."""

from __future__ import annotations

import csv
import logging
import time
from typing import Hashable, Optional

from ..protocol import codec
from ..protocol.reliable import ConnectionDead, Connection
from ..transport import BandwidthMeter
from .session import ALL, ProtocolError, ServerConfig, Session

log = logging.getLogger(__name__)

METRICS_COLUMNS = ("tick", "step_ms", "entities", "records_sent", "bytes_out", "events_out")


class PhysServer:
    """Drives one session over an endpoint (simulated or UDP).

    Call ``pump(now)`` to ingest datagrams and ``tick(now)`` once per physics step.
    """

    def __init__(self, endpoint, session: Optional[Session] = None, config: Optional[ServerConfig] = None,
                 processing_delay: float = 0.0):
        self.endpoint = endpoint
        self.processing_delay = processing_delay   # seconds between tick start and its sends (virtual time)
        self.session = session or Session(config)
        self.conns: dict[Hashable, Connection] = {}
        self.player_of: dict[Hashable, int] = {}
        self.addr_of: dict[int, Hashable] = {}
        self.meter = BandwidthMeter()
        self.protocol_errors = 0
        self._tick_bytes = 0

    def _emit(self, addr, datagram: bytes, now: float):
        self.endpoint.send(addr, datagram, now)
        self.meter.record(addr, len(datagram), now)
        self._tick_bytes += len(datagram)

    def pump(self, now: float):
        for addr, data in self.endpoint.poll_recv(now):
            conn = self.conns.get(addr)
            if conn is None:
                conn = self.conns[addr] = Connection()
            try:
                payloads, replies = conn.receive(data, now)
            except ValueError as exc:
                log.warning("dropping malformed datagram from %s: %s", addr, exc)
                continue
            for r in replies:
                self._emit(addr, r, now)
            for p in payloads:
                self._dispatch(addr, p, now)
        for addr, conn in list(self.conns.items()):
            for d in conn.retransmit_due(now):
                self._emit(addr, d, now)
            if conn.dead:
                log.info("connection %s declared dead", addr)
                self.disconnect(addr, now)
        self._flush(now)

    def _dispatch(self, addr, payload: bytes, now: float):
        try:
            msg = codec.decode_message(payload)
        except codec.DecodeError as exc:
            log.warning("undecodable message from %s: %s", addr, exc)
            self.protocol_errors += 1
            return
        player = self.player_of.get(addr)
        if isinstance(msg, codec.Join):
            if player is None:
                player = self.session.on_join()
                self.player_of[addr] = player
                self.addr_of[player] = addr
            return
        if player is None:
            self.protocol_errors += 1
            return
        try:
            self.session.handle(player, msg)
        except ProtocolError as exc:
            log.warning("protocol error from player %d: %s", player, exc)
            self.protocol_errors += 1

    def disconnect(self, addr, now: float = 0.0):
        player = self.player_of.pop(addr, None)
        self.conns.pop(addr, None)
        if player is not None:
            self.addr_of.pop(player, None)
            self.session.on_leave(player)
            self._flush(now)

    def _flush(self, now: float):
        s = self.session
        for to, reliable, payload in s.drain():
            targets = list(s.players) if to is ALL else [to]
            for player in targets:
                addr = self.addr_of.get(player)
                conn = self.conns.get(addr) if addr is not None else None
                if conn is None or conn.dead:
                    continue
                if reliable:
                    try:
                        dgrams = conn.reliable_send(payload, now)
                    except ConnectionDead:
                        continue
                else:
                    dgrams = [conn.unreliable(payload)]
                for d in dgrams:
                    self._emit(addr, d, now)

    def tick(self, now: float) -> dict:
        self._tick_bytes = 0
        self.pump(now)
        row = self.session.server_tick() if self.session.initialized else None
        self._flush(now + self.processing_delay)
        if row is None:
            return {}
        row["bytes_out"] = self._tick_bytes
        return row

    def write_metrics(self, path: str):
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=METRICS_COLUMNS)
            w.writeheader()
            for row in self.session.metrics:
                w.writerow({k: row[k] for k in METRICS_COLUMNS})

    def serve(self, duration: Optional[float] = None, metrics_path: Optional[str] = None):
        """Real-time loop for UDP endpoints."""
        dt = self.session.config.dt
        start = time.monotonic()
        next_tick = start
        try:
            while duration is None or time.monotonic() - start < duration:
                now = time.monotonic() - start
                self.pump(now)
                if time.monotonic() >= next_tick:
                    self.tick(time.monotonic() - start)
                    next_tick += dt
                time.sleep(min(0.002, max(0.0, next_tick - time.monotonic())))
        except KeyboardInterrupt:
            pass
        finally:
            if metrics_path:
                self.write_metrics(metrics_path)
