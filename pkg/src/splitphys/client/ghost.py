"""Graphics host client: joins a physics server (or relay), mirrors server-owned
poses into graphics objects, and turns local input into commands."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Callable, Hashable, Optional

import numpy as np

from ..model import CollisionEvent, CollisionKind
from ..protocol import codec
from ..protocol.reliable import Connection
from ..transform import Transform
from ..transport import UDP_IP_OVERHEAD
from .dissect import GHostController
from .gro import GraphicsObject, NotReady
from .scene import LocalScene

log = logging.getLogger(__name__)


class InteractState(enum.Enum):
    IDLE = "idle"
    INTERACTING = "interacting"


@dataclass
class Interactor:
    """Grab state machine for one hand."""

    hand: int
    hover: list = field(default_factory=list)   # entities in contact, oldest first
    state: InteractState = InteractState.IDLE
    target: Optional[int] = None
    offset: Optional[Transform] = None          # object pose in hand space at grab time
    was_pressed: bool = False

    @property
    def hovered(self) -> Optional[int]:
        return self.hover[-1] if self.hover else None

    def on_event(self, ev: CollisionEvent):
        if self.hand not in (ev.a, ev.b):
            return
        other = ev.b if ev.a == self.hand else ev.a
        if ev.kind == CollisionKind.ENTER:
            if other not in self.hover:
                self.hover.append(other)
        elif other in self.hover:
            self.hover.remove(other)


@dataclass
class ClientConfig:
    dt: float = 0.02              # server tick, used to turn ticks into server time
    reliable_moves: bool = False  # MoveToTransform is superseded every frame, so unreliable by default


class GHostClient:
    def __init__(self, endpoint, server: Hashable, scene: Optional[LocalScene] = None,
                 config: Optional[ClientConfig] = None, decode_updates: bool = True):
        self.endpoint = endpoint
        self.server = server
        self.config = config or ClientConfig()
        self.controller = GHostController(scene or LocalScene())
        self.conn = Connection()
        self.decode_updates = decode_updates
        self.player: Optional[int] = None
        self.host = False
        self.avatar: Optional[codec.JoinAck] = None
        self.ready = False
        self.interactors: dict[int, Interactor] = {}
        self.softbodies: dict[int, np.ndarray] = {}
        self.clock_offset: Optional[float] = None
        self.commands: list = []
        self.unknown_records = 0
        self.updates_received = 0
        self.bytes_received = 0
        self.wire_bytes_by_type: dict[int, int] = {}   # message type -> on-wire bytes, acks under -1
        self._subscribers: dict[CollisionKind, list[Callable]] = {CollisionKind.ENTER: [], CollisionKind.EXIT: []}
        self.update_listeners: list[Callable] = []   # called as f(entity, now, tick) per applied record

    @property
    def registry(self) -> dict[int, GraphicsObject]:
        return self.controller.registry

    # -- outbound --

    def _send(self, msg, now: float, reliable: bool = True):
        payload = codec.encode_message(msg)
        dgrams = self.conn.reliable_send(payload, now) if reliable else [self.conn.unreliable(payload)]
        for d in dgrams:
            self.endpoint.send(self.server, d, now)
        self.commands.append(msg)

    def join(self, now: float, host: bool = False):
        self._send(codec.Join(codec.JOIN_HOST if host else 0), now)

    # -- inbound --

    def pump(self, now: float):
        for _, data in self.endpoint.poll_recv(now):
            self.bytes_received += len(data)
            payloads, replies = self.conn.receive(data, now)
            kind = payloads[0][0] if payloads and payloads[0] else -1
            self.wire_bytes_by_type[kind] = self.wire_bytes_by_type.get(kind, 0) + len(data) + UDP_IP_OVERHEAD
            for r in replies:
                self.endpoint.send(self.server, r, now)
            for p in payloads:
                self._handle(p, now)
        for d in self.conn.retransmit_due(now):
            self.endpoint.send(self.server, d, now)

    def _server_time(self, tick: int, now: float) -> float:
        st = tick * self.config.dt
        off = now - st
        if self.clock_offset is None or off < self.clock_offset:
            self.clock_offset = off
        return st

    def _gro(self, entity: int) -> GraphicsObject:
        gro = self.registry.get(entity)
        if gro is None:
            gro = self.registry[entity] = GraphicsObject(entity)
        return gro

    def _handle(self, payload: bytes, now: float):
        mtype = payload[0] if payload else None
        if mtype == codec.MSG_GROUPED_UPDATE and not self.decode_updates:
            return
        if mtype == codec.MSG_SOFTBODY_PARTICLES and not self.decode_updates:
            return
        msg = codec.decode_message(payload)
        if isinstance(msg, codec.GroupedUpdate):
            self.on_group_update(msg, now)
        elif isinstance(msg, codec.Snapshot):
            self.on_snapshot(msg, now)
        elif isinstance(msg, codec.CollisionEvents):
            for ev in msg.events:
                self._on_collision(ev)
        elif isinstance(msg, codec.JoinAck):
            self._on_join_ack(msg, now)
        elif isinstance(msg, codec.DestroyEntity):
            for e in msg.entity_ids:
                self.registry.pop(e, None)
                self.softbodies.pop(e, None)
                for gro in self.registry.values():
                    gro.colliding.discard(e)
                for it in self.interactors.values():
                    if e in it.hover:
                        it.hover.remove(e)
        elif isinstance(msg, codec.SoftbodyParticles):
            arr = self.softbodies.get(msg.entity_id)
            need = msg.offset + len(msg.positions)
            if arr is None or len(arr) < need:
                grown = np.zeros((need, 3), dtype=np.float32)
                if arr is not None:
                    grown[:len(arr)] = arr
                arr = self.softbodies[msg.entity_id] = grown
            arr[msg.offset:need] = msg.positions
        else:
            log.debug("ignoring %s", type(msg).__name__)

    def _on_join_ack(self, ack: codec.JoinAck, now: float):
        self.player = ack.player
        self.host = bool(ack.flags & codec.JOINACK_HOST)
        if self.controller.dissection is None:
            containers = self.controller.dissect()
            if ack.flags & codec.JOINACK_NEEDS_INIT:
                self._send(codec.PCCBatch(tuple(containers)), now)
        if ack.flags & codec.JOINACK_NEEDS_INIT:
            return
        self.avatar = ack
        for hand in (ack.left_hand, ack.right_hand):
            if hand:
                self.interactors[hand] = Interactor(hand)
        self.ready = True

    def on_snapshot(self, snap: codec.Snapshot, now: float):
        st = self._server_time(snap.tick, now)
        for e in snap.entries:
            gro = self._gro(e.entity_id)
            gro.owner = e.owner
            gro.interactable = bool(e.flags & codec.SNAP_INTERACTABLE)
            gro.kinematic = bool(e.flags & codec.SNAP_KINEMATIC)
            gro.push(st, e.transform)

    def on_group_update(self, msg: codec.GroupedUpdate, now: float):
        st = self._server_time(msg.tick, now)
        for rec in msg.records:
            gro = self.registry.get(rec.entity_id)
            if gro is None:
                self.unknown_records += 1
                continue
            if gro.apply(st, rec):
                self.updates_received += 1
                for f in self.update_listeners:
                    f(rec.entity_id, now, msg.tick)

    def _on_collision(self, ev: CollisionEvent):
        a, b = self.registry.get(ev.a), self.registry.get(ev.b)
        if ev.kind == CollisionKind.ENTER:
            if a is not None:
                a.colliding.add(ev.b)
            if b is not None:
                b.colliding.add(ev.a)
        else:
            if a is not None:
                a.colliding.discard(ev.b)
            if b is not None:
                b.colliding.discard(ev.a)
        for it in self.interactors.values():
            it.on_event(ev)
        for cb in self._subscribers[ev.kind]:
            cb(ev)

    def subscribe_collision(self, kind: CollisionKind, callback: Callable[[CollisionEvent], None]):
        self._subscribers[CollisionKind(kind)].append(callback)

    # -- sampling --

    def server_time_estimate(self, now: float) -> float:
        return now - (self.clock_offset or 0.0)

    def sample_render_transform(self, entity: int, now: float) -> Transform:
        gro = self.registry.get(entity)
        if gro is None:
            raise NotReady(entity)
        return gro.sample(self.server_time_estimate(now))

    def latest_transform(self, entity: int) -> Transform:
        gro = self.registry.get(entity)
        if gro is None or gro.latest is None:
            raise NotReady(entity)
        return gro.latest

    # -- commands --

    def move_to(self, entity: int, target: Transform, now: float):
        self._send(codec.MoveToTransform(self.player or 0, entity, target), now, self.config.reliable_moves)

    def drive_avatar(self, head: Transform, left: Transform, right: Transform, now: float):
        if self.avatar is None:
            raise RuntimeError("avatar not spawned")
        self.move_to(self.avatar.head, head, now)
        self.move_to(self.avatar.left_hand, left, now)
        self.move_to(self.avatar.right_hand, right, now)

    def interaction_update(self, hand: int, pressed: bool, hand_pose: Transform, now: float):
        """One frame of the grab state machine for ``hand``."""
        it = self.interactors.get(hand)
        if it is None:
            raise KeyError(f"{hand} is not one of this client's hands")
        just_pressed = pressed and not it.was_pressed
        it.was_pressed = pressed
        if it.state is InteractState.IDLE:
            if not just_pressed:
                return
            target = it.hovered
            gro = self.registry.get(target) if target is not None else None
            if gro is None or not gro.interactable:
                return
            obj = gro.latest or hand_pose
            it.state = InteractState.INTERACTING
            it.target = target
            it.offset = hand_pose.inverse().compose(obj)
            self._send(codec.GrabStart(self.player or 0, hand, target), now)
            return
        if pressed:
            self.move_to(it.target, hand_pose.compose(it.offset), now)
        else:
            self._send(codec.GrabEnd(self.player or 0, hand, it.target), now)
            it.state = InteractState.IDLE
            it.target = None
            it.offset = None
