"""Authoritative session state for one physics server.

``Session`` is transport-free: incoming messages are handed to its ``on_*``
methods and everything it wants to send lands in ``outbox`` as
``(recipient, reliable, payload)``, where recipient is a PlayerId or ``ALL``.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..model import (
    NO_ENTITY,
    WORLD_OWNER,
    Box,
    PhysComponentContainer,
    SceneGraph,
    Sphere,
    compose_world_transform,
    validate_pcc,
)
from ..physics import KINEMATIC, STATIC, SoftBody, World, WorldConfig
from ..protocol import codec
from ..protocol.delta import DEFAULT_POS_EPS, DEFAULT_ROT_EPS
from ..transform import Transform, vadd
from .scheduler import SendScheduler

log = logging.getLogger(__name__)

ALL = None
MAX_PLAYERS = 0xFFFF


class ProtocolError(RuntimeError):
    pass


@dataclass
class ServerConfig:
    dt: float = 0.02
    default_rate: float = 12.0
    critical_rate: float = 48.0
    softbody_rate: float = 12.0
    pos_eps: float = DEFAULT_POS_EPS
    rot_eps: float = DEFAULT_ROT_EPS
    max_payload: int = codec.DEFAULT_MAX_PAYLOAD
    critical: tuple = ()
    gravity: tuple = (0.0, -9.81, 0.0)
    spawn_interactable: bool = False   # CCU mode: every avatar also gets a grabbable box
    spawn_origin: tuple = (0.0, 0.0, 0.0)
    spawn_spacing: float = 2.0
    spawn_columns: int = 16
    hand_radius: float = 0.05
    hand_sensor: float = 0.12
    hand_mass: float = 1.0
    interactable_half: float = 0.1


@dataclass
class Avatar:
    player: int
    head: int
    left: int
    right: int
    extra: int = NO_ENTITY

    @property
    def entities(self) -> tuple[int, ...]:
        return tuple(e for e in (self.head, self.left, self.right, self.extra) if e)


def quat_angles(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Angular distance between rows of two (n, 4) quaternion arrays."""
    ax, ay, az, aw = a.T
    bx, by, bz, bw = b.T
    # conj(a) * b
    x = aw * bx - ax * bw - ay * bz + az * by
    y = aw * by - ay * bw - az * bx + ax * bz
    z = aw * bz - az * bw - ax * by + ay * bx
    w = aw * bw + ax * bx + ay * by + az * bz
    return 2.0 * np.arctan2(np.sqrt(x * x + y * y + z * z), np.abs(w))


class Session:
    def __init__(self, config: Optional[ServerConfig] = None, world_config: Optional[WorldConfig] = None):
        self.config = cfg = config or ServerConfig()
        wc = world_config or WorldConfig()
        wc.dt = cfg.dt
        wc.gravity = cfg.gravity
        self.world = World(wc)
        self.scene = SceneGraph()
        self.scheduler = SendScheduler(cfg.dt, cfg.default_rate, cfg.critical_rate, cfg.critical)
        self._softbody_sched = SendScheduler(cfg.dt, cfg.softbody_rate, cfg.softbody_rate)
        self.initialized = False
        self.initializer: Optional[int] = None
        self.pending_joins: list[int] = []
        self.players: dict[int, Avatar] = {}
        self.owner: dict[int, int] = {}
        self.interactable: set[int] = set()
        self.grabbed: dict[int, tuple[int, int]] = {}   # entity -> (player, hand)
        self._next_player = 1
        self._next_entity = 1
        self.outbox: list[tuple[Optional[int], bool, bytes]] = []
        self.metrics: list[dict] = []
        self.rejected_commands = 0
        self.rejected_grabs = 0

        self._sent_version = -1
        self._sent_ids = np.zeros(0, dtype=np.int64)
        self._sent_pos = np.zeros((0, 3), dtype=np.float32)
        self._sent_rot = np.zeros((0, 4), dtype=np.float32)
        self._has_sent = np.zeros(0, dtype=bool)
        self._owner_col = np.zeros(0, dtype=np.int64)

    @property
    def tick(self) -> int:
        return self.world.tick

    def _send(self, to, reliable: bool, payload: bytes):
        self.outbox.append((to, reliable, payload))

    def drain(self) -> list:
        out, self.outbox = self.outbox, []
        return out

    # -- membership --

    def on_join(self) -> int:
        """Register a new connection; returns its PlayerId."""
        if len(self.players) + len(self.pending_joins) + (self.initializer is not None and not self.initialized) >= MAX_PLAYERS:
            raise ProtocolError("player id space exhausted")
        player = self._next_player
        self._next_player += 1
        if self.initialized:
            self._admit(player)
        elif self.initializer is None:
            self.initializer = player
            self._send(player, True, codec.encode_join_ack(codec.JoinAck(player, codec.JOINACK_NEEDS_INIT)))
        else:
            self.pending_joins.append(player)
        return player

    def on_pcc_batch(self, player: int, pccs: Sequence[PhysComponentContainer]):
        if self.initialized:
            raise ProtocolError("session already initialized")
        if player != self.initializer:
            raise ProtocolError(f"player {player} is not the initializing client")
        seen: set[int] = set()
        for i, p in enumerate(pccs):
            problems = validate_pcc(p)
            if problems:
                raise ProtocolError(f"PCC record {i} (entity {p.entity_id}): {'; '.join(problems)}")
            if p.entity_id in seen:
                raise ProtocolError(f"PCC record {i}: duplicate entity {p.entity_id}")
            if p.parent_id != NO_ENTITY and p.parent_id not in seen:
                raise ProtocolError(f"PCC record {i}: unknown parent {p.parent_id} for entity {p.entity_id}")
            seen.add(p.entity_id)
        self.instantiate(pccs)
        self.initialized = True
        self._admit(player)
        queued, self.pending_joins = self.pending_joins, []
        for q in queued:
            self._admit(q)

    def instantiate(self, pccs: Sequence[PhysComponentContainer]):
        """Re-create physics entities and the hierarchy from containers."""
        for p in pccs:
            self.scene.add(p.entity_id, p.parent_id, p.transform)
            self.owner[p.entity_id] = p.owner
            if p.interactable:
                self.interactable.add(p.entity_id)
        for p in pccs:
            self._next_entity = max(self._next_entity, p.entity_id + 1)
            if p.transform_only or not (p.body or p.collider):
                continue
            world_t = compose_world_transform(self.scene, p.entity_id)
            shape = p.collider.shape if p.collider else None
            trigger = bool(p.collider and p.collider.trigger)
            if p.body is None:
                self.world.add_static(p.entity_id, world_t, shape, trigger)
            else:
                b = p.body
                self.world.add_body(p.entity_id, world_t, mass=b.mass, kinematic=b.kinematic,
                                    linear_damping=b.linear_damping, restitution=b.restitution,
                                    shape=shape, trigger=trigger)
        for p in pccs:
            for s in p.springs or ():
                if s.other not in self.scene:
                    raise ProtocolError(f"spring on entity {p.entity_id} references unknown entity {s.other}")
                self.world.add_spring(p.entity_id, s.other, s.rest_length, s.stiffness, s.damping)

    def allocate_entity(self) -> int:
        e = self._next_entity
        self._next_entity += 1
        return e

    def spawn_pose(self, player: int) -> tuple[float, float, float]:
        cfg = self.config
        k = player - 1
        col, row = k % cfg.spawn_columns, k // cfg.spawn_columns
        return vadd(cfg.spawn_origin, (col * cfg.spawn_spacing, 0.0, row * cfg.spawn_spacing))

    def _spawn_avatar(self, player: int) -> Avatar:
        cfg = self.config
        base = self.spawn_pose(player)
        head, left, right = self.allocate_entity(), self.allocate_entity(), self.allocate_entity()
        self.world.add_body(head, Transform(vadd(base, (0.0, 1.6, 0.0))), kinematic=True)
        for hand, dx in ((left, -0.3), (right, 0.3)):
            t = Transform(vadd(base, (dx, 1.2, 0.0)))
            self.world.add_body(hand, t, mass=cfg.hand_mass, shape=Sphere(cfg.hand_radius),
                                sensor_radius=cfg.hand_sensor, linear_damping=1.0)
            self.world.apply_move_to_transform(hand, t)
        extra = NO_ENTITY
        if cfg.spawn_interactable:
            extra = self.allocate_entity()
            h = cfg.interactable_half
            self.world.add_body(extra, Transform(vadd(base, (0.0, 0.9, 0.5))), mass=0.5,
                                shape=Box((h, h, h)), linear_damping=0.5)
            self.world.apply_move_to_transform(extra, Transform(vadd(base, (0.0, 0.9, 0.5))))
            self.interactable.add(extra)
        av = Avatar(player, head, left, right, extra)
        for e in av.entities:
            self.scene.add(e, NO_ENTITY, self.world.transform(e))
            self.owner[e] = player
        return av

    def _admit(self, player: int):
        av = self._spawn_avatar(player)
        self.players[player] = av
        flags = codec.JOINACK_HOST if player == self.initializer else 0
        self._send(player, True, codec.encode_join_ack(
            codec.JoinAck(player, flags, av.head, av.left, av.right, av.extra)))
        self._send(player, True, codec.encode_snapshot(self.snapshot()))
        for sb in self.world.softbodies.values():
            for chunk in codec.encode_softbody_chunks(self.tick, sb.entity, sb.pos, self.config.max_payload):
                self._send(player, True, chunk)
        partial = codec.encode_snapshot(self.snapshot(av.entities))
        for other in self.players:
            if other != player:
                self._send(other, True, partial)

    def on_leave(self, player: int):
        if player in self.pending_joins:
            self.pending_joins.remove(player)
            return
        av = self.players.pop(player, None)
        if av is None:
            return
        for ent, (p, _) in list(self.grabbed.items()):
            if p == player:
                self._release(ent)
        doomed = [e for e, o in self.owner.items() if o == player]
        for e in doomed:
            self.world.remove(e)
            self.scene.remove(e)
            del self.owner[e]
            self.interactable.discard(e)
            self.scheduler.forget(e)
            self.grabbed.pop(e, None)
        if doomed:
            self._send(ALL, True, codec.encode_destroy(codec.DestroyEntity(tuple(doomed))))

    def add_softbody(self, sb: SoftBody) -> int:
        if not sb.entity:
            sb.entity = self.allocate_entity()
        self.world.add_softbody(sb)
        self.scene.add(sb.entity, NO_ENTITY, Transform(tuple(sb.pos.mean(axis=0))))
        self.owner[sb.entity] = WORLD_OWNER
        return sb.entity

    # -- commands --

    def _authorized(self, player: int, entity: int) -> bool:
        if entity not in self.owner:
            return False
        if self.owner[entity] == player and player != WORLD_OWNER:
            return True
        g = self.grabbed.get(entity)
        return g is not None and g[0] == player

    def on_move_to_transform(self, player: int, entity: int, target: Transform) -> bool:
        if player not in self.players or not self._authorized(player, entity) or entity not in self.world.index:
            self.rejected_commands += 1
            return False
        if self.world.kind[self.world.index[entity]] == STATIC:
            self.rejected_commands += 1
            return False
        self.world.apply_move_to_transform(entity, target)
        self.scheduler.note_command(entity, self.tick)
        return True

    def hovering(self, hand: int, entity: int) -> bool:
        return self.world.in_contact(hand, entity)

    def on_grab(self, player: int, hand: int, entity: int) -> bool:
        av = self.players.get(player)
        ok = (av is not None and hand in (av.left, av.right) and entity in self.interactable
              and entity in self.world.index and entity not in self.grabbed
              and self.world.kind[self.world.index[entity]] != STATIC and self.hovering(hand, entity))
        if not ok:
            self.rejected_grabs += 1
            return False
        self.grabbed[entity] = (player, hand)
        self.world.ignore_pair(hand, entity)
        return True

    def on_release(self, player: int, hand: int, entity: int) -> bool:
        g = self.grabbed.get(entity)
        if g is None or g[0] != player:
            self.rejected_grabs += 1
            return False
        self._release(entity)
        return True

    def _release(self, entity: int):
        player, hand = self.grabbed.pop(entity)
        if entity in self.world.index:
            self.world.clear_move_target(entity)
            self.world.ignore_pair(hand, entity, False)
        self.scheduler.forget(entity)

    def handle(self, player: int, msg) -> None:
        """Dispatch one decoded client message."""
        if isinstance(msg, codec.PCCBatch):
            self.on_pcc_batch(player, msg.pccs)
        elif isinstance(msg, codec.MoveToTransform):
            if msg.player != player:
                self.rejected_commands += 1
                return
            self.on_move_to_transform(player, msg.entity_id, msg.target)
        elif isinstance(msg, codec.GrabStart):
            if msg.player == player:
                self.on_grab(player, msg.hand, msg.entity_id)
            else:
                self.rejected_grabs += 1
        elif isinstance(msg, codec.GrabEnd):
            if msg.player == player:
                self.on_release(player, msg.hand, msg.entity_id)
            else:
                self.rejected_grabs += 1
        else:
            raise ProtocolError(f"unexpected {type(msg).__name__} from player {player}")

    # -- streaming --

    def critical_entities(self) -> set[int]:
        crit = set(self.scheduler.configured)
        for av in self.players.values():
            crit.update((av.head, av.left, av.right))
        crit.update(self.grabbed)
        crit.update(self.scheduler.commanded(self.tick))
        return crit

    def _sync_sent_columns(self):
        w = self.world
        if self._sent_version == w.structure_version and len(self._sent_ids) == len(w.ids):
            return
        n = len(w.ids)
        pos = np.zeros((n, 3), dtype=np.float32)
        rot = np.zeros((n, 4), dtype=np.float32)
        has = np.zeros(n, dtype=bool)
        if len(self._sent_ids):
            rows = np.searchsorted(w.ids, self._sent_ids)
            rows_c = np.minimum(rows, max(n - 1, 0))
            ok = (rows < n) & (w.ids[rows_c] == self._sent_ids) if n else np.zeros(len(rows), bool)
            pos[rows[ok]] = self._sent_pos[ok]
            rot[rows[ok]] = self._sent_rot[ok]
            has[rows[ok]] = self._has_sent[ok]
        self._sent_ids = w.ids.copy()
        self._sent_pos, self._sent_rot, self._has_sent = pos, rot, has
        self._owner_col = np.array([self.owner.get(int(e), WORLD_OWNER) for e in w.ids], dtype=np.int64)
        self._sent_version = w.structure_version

    def _mark_sent(self, rows: np.ndarray):
        w = self.world
        self._sent_pos[rows] = w.pos[rows]
        self._sent_rot[rows] = w.rot[rows]
        self._has_sent[rows] = True

    def snapshot(self, entities=None) -> codec.Snapshot:
        """Full-state snapshot; carries the last-sent value so later deltas stay consistent."""
        w = self.world
        w._flush()
        self._sync_sent_columns()
        if entities is None:
            rows = np.arange(len(w.ids))
        else:
            rows = np.array(sorted(w.index[e] for e in entities if e in w.index), dtype=np.int64)
        fresh = rows[~self._has_sent[rows]]
        if len(fresh):
            self._mark_sent(fresh)
        entries = []
        for r in rows.tolist():
            e = int(w.ids[r])
            flags = (codec.SNAP_INTERACTABLE if e in self.interactable else 0) | \
                    (codec.SNAP_KINEMATIC if w.kind[r] == KINEMATIC else 0)
            entries.append(codec.SnapshotEntry(e, int(self._owner_col[r]), flags,
                                               Transform(self._sent_pos[r].tolist(), self._sent_rot[r].tolist())))
        return codec.Snapshot(self.tick, tuple(entries))

    def collect_updates(self, tick: int):
        """Rows due this tick whose change passes the thresholds, with their masks."""
        w = self.world
        self._sync_sent_columns()
        crit_due = self.scheduler.critical_due(tick)
        def_due = self.scheduler.default_due(tick)
        if not (crit_due or def_due) or not len(w.ids):
            return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
        movable = w.kind != STATIC
        critical = np.zeros(len(w.ids), dtype=bool)
        for e in self.critical_entities():
            r = w.index.get(e)
            if r is not None:
                critical[r] = True
        due = movable & ((critical & crit_due) | (~critical & def_due))
        rows = np.nonzero(due)[0]
        if not len(rows):
            return rows, rows
        cur_p = w.pos[rows].astype(np.float32)
        cur_q = w.rot[rows].astype(np.float32)
        fresh = ~self._has_sent[rows]
        dp = np.linalg.norm(cur_p.astype(np.float64) - self._sent_pos[rows], axis=1)
        dq = quat_angles(self._sent_rot[rows].astype(np.float64), cur_q.astype(np.float64))
        mask = (((dp > self.config.pos_eps) | fresh).astype(np.int64) * codec.MASK_POSITION
                + ((dq > self.config.rot_eps) | fresh).astype(np.int64) * codec.MASK_ROTATION)
        keep = mask != 0
        return rows[keep], mask[keep]

    def server_tick(self) -> dict:
        t0 = time.perf_counter()
        events = self.world.step()
        step_ms = (time.perf_counter() - t0) * 1000.0
        tick = self.tick
        rows, masks = self.collect_updates(tick)
        payload_bytes = 0
        if len(rows):
            w = self.world
            pos32 = w.pos[rows].astype(np.float32)
            rot32 = w.rot[rows].astype(np.float32)
            msgs = codec.encode_group_columns(
                tick, w.ids[rows].tolist(), self._owner_col[rows].tolist(), masks.tolist(),
                pos32.tolist(), rot32.tolist(), self.config.max_payload)
            pm = (masks & codec.MASK_POSITION) != 0
            rm = (masks & codec.MASK_ROTATION) != 0
            self._sent_pos[rows[pm]] = pos32[pm]
            self._sent_rot[rows[rm]] = rot32[rm]
            self._has_sent[rows] = True
            for m in msgs:
                self._send(ALL, False, m)
                payload_bytes += len(m)
        if events:
            for chunk in codec.encode_collision_event_chunks(events, self.config.max_payload):
                self._send(ALL, True, chunk)
                payload_bytes += len(chunk)
        if self.world.softbodies and self._softbody_sched.default_due(tick):
            for sb in self.world.softbodies.values():
                for chunk in codec.encode_softbody_chunks(tick, sb.entity, sb.pos, self.config.max_payload):
                    self._send(ALL, False, chunk)
                    payload_bytes += len(chunk)
        row = dict(tick=tick, step_ms=step_ms, entities=len(self.world.ids) + len(self.world.softbodies),
                   records_sent=int(len(rows)), bytes_out=payload_bytes, events_out=len(events))
        self.metrics.append(row)
        return row
