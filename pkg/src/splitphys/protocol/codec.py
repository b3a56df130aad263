"""Byte-exact message codecs. Little-endian throughout; floats are IEEE-754 binary32.

Message type registry (first payload byte):

    0x01 PCCBatch        0x05 CollisionEvent   0x09 JoinAck
    0x02 Snapshot        0x06 GrabStart        0x0A DestroyEntity
    0x03 GroupedUpdate   0x07 GrabEnd          0x0B SoftbodyParticles
    0x04 MoveToTransform 0x08 Join

Full layouts are documented in docs/wire-format.md.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

from ..model import (
    BodySpec,
    Box,
    CollisionEvent,
    CollisionKind,
    ColliderSpec,
    PhysComponentContainer,
    Sphere,
    SpringSpec,
)
from ..transform import Quat, Transform, Vec3

MSG_PCC_BATCH = 0x01
MSG_SNAPSHOT = 0x02
MSG_GROUPED_UPDATE = 0x03
MSG_MOVE_TO_TRANSFORM = 0x04
MSG_COLLISION_EVENT = 0x05
MSG_GRAB_START = 0x06
MSG_GRAB_END = 0x07
MSG_JOIN = 0x08
MSG_JOIN_ACK = 0x09
MSG_DESTROY_ENTITY = 0x0A
MSG_SOFTBODY_PARTICLES = 0x0B

MASK_POSITION = 0b01
MASK_ROTATION = 0b10
MASK_BOTH = MASK_POSITION | MASK_ROTATION

DEFAULT_MAX_PAYLOAD = 1200

_U8 = struct.Struct("<B")
_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")
_VEC = struct.Struct("<3f")
_QUAT = struct.Struct("<4f")
_REC_HEAD = struct.Struct("<IHB")
_REC_POS = struct.Struct("<IHB3f")
_REC_ROT = struct.Struct("<IHB4f")
_REC_BOTH = struct.Struct("<IHB7f")
_GROUP_HEAD = struct.Struct("<BIH")
_XFORM = struct.Struct("<7f")

RECORD_HEADER_SIZE = _REC_HEAD.size  # 7
GROUP_HEADER_SIZE = _GROUP_HEAD.size  # 7
_RECORD_SIZES = {MASK_POSITION: 19, MASK_ROTATION: 23, MASK_BOTH: 35}


class DecodeError(ValueError):
    pass


def f32(x: float) -> float:
    """Round a float to the nearest binary32 value (what survives the wire)."""
    return struct.unpack("<f", struct.pack("<f", x))[0]


# -- transform records -------------------------------------------------------


@dataclass(frozen=True)
class TransformRecord:
    entity_id: int
    owner: int
    mask: int
    position: Optional[Vec3] = None
    rotation: Optional[Quat] = None

    def __post_init__(self):
        if self.mask not in _RECORD_SIZES:
            raise ValueError(f"mask {self.mask:#04b} is not encodable")
        if bool(self.mask & MASK_POSITION) != (self.position is not None):
            raise ValueError("position presence disagrees with mask")
        if bool(self.mask & MASK_ROTATION) != (self.rotation is not None):
            raise ValueError("rotation presence disagrees with mask")

    @property
    def size(self) -> int:
        return _RECORD_SIZES[self.mask]


def record_size(mask: int) -> int:
    return _RECORD_SIZES[mask]


def encode_record(rec: TransformRecord) -> bytes:
    if rec.mask == MASK_BOTH:
        return _REC_BOTH.pack(rec.entity_id, rec.owner, rec.mask, *rec.position, *rec.rotation)
    if rec.mask == MASK_POSITION:
        return _REC_POS.pack(rec.entity_id, rec.owner, rec.mask, *rec.position)
    return _REC_ROT.pack(rec.entity_id, rec.owner, rec.mask, *rec.rotation)


def _decode_record(buf, off: int) -> tuple[TransformRecord, int]:
    if off + 7 > len(buf):
        raise DecodeError("truncated record header")
    mask = buf[off + 6]
    size = _RECORD_SIZES.get(mask)
    if size is None:
        raise DecodeError(f"invalid change mask {mask:#04x}")
    if off + size > len(buf):
        raise DecodeError("truncated record body")
    if mask == MASK_BOTH:
        v = _REC_BOTH.unpack_from(buf, off)
        rec = TransformRecord(v[0], v[1], mask, v[3:6], v[6:10])
    elif mask == MASK_POSITION:
        v = _REC_POS.unpack_from(buf, off)
        rec = TransformRecord(v[0], v[1], mask, v[3:6], None)
    else:
        v = _REC_ROT.unpack_from(buf, off)
        rec = TransformRecord(v[0], v[1], mask, None, v[3:7])
    return rec, off + size


@dataclass(frozen=True)
class GroupedUpdate:
    tick: int
    records: tuple[TransformRecord, ...]


def encode_group(records: Sequence[TransformRecord], tick: int, max_payload: int = DEFAULT_MAX_PAYLOAD) -> list[bytes]:
    """Pack records, in order, greedily into as few GroupedUpdate messages as fit."""
    if max_payload < GROUP_HEADER_SIZE + 35:
        raise ValueError("max_payload must be at least 42 bytes")
    out = []
    parts: list[bytes] = []
    size = GROUP_HEADER_SIZE
    for rec in records:
        body = encode_record(rec)
        if size + len(body) > max_payload:
            out.append(_GROUP_HEAD.pack(MSG_GROUPED_UPDATE, tick, len(parts)) + b"".join(parts))
            parts = []
            size = GROUP_HEADER_SIZE
        parts.append(body)
        size += len(body)
    if parts:
        out.append(_GROUP_HEAD.pack(MSG_GROUPED_UPDATE, tick, len(parts)) + b"".join(parts))
    return out


def encode_group_columns(tick: int, ids, owners, masks, positions, rotations,
                         max_payload: int = DEFAULT_MAX_PAYLOAD) -> list[bytes]:
    """Same bytes as ``encode_group`` but takes parallel columns instead of records.

    Used on the server fanout path where thousands of records are built per tick.
    """
    if max_payload < GROUP_HEADER_SIZE + 35:
        raise ValueError("max_payload must be at least 42 bytes")
    pack_both, pack_pos, pack_rot = _REC_BOTH.pack, _REC_POS.pack, _REC_ROT.pack
    out = []
    parts: list[bytes] = []
    size = GROUP_HEADER_SIZE
    for e, o, m, p, q in zip(ids, owners, masks, positions, rotations):
        if m == MASK_BOTH:
            body = pack_both(e, o, m, *p, *q)
        elif m == MASK_POSITION:
            body = pack_pos(e, o, m, *p)
        elif m == MASK_ROTATION:
            body = pack_rot(e, o, m, *q)
        else:
            raise ValueError(f"mask {m:#04b} is not encodable")
        if size + len(body) > max_payload:
            out.append(_GROUP_HEAD.pack(MSG_GROUPED_UPDATE, tick, len(parts)) + b"".join(parts))
            parts = []
            size = GROUP_HEADER_SIZE
        parts.append(body)
        size += len(body)
    if parts:
        out.append(_GROUP_HEAD.pack(MSG_GROUPED_UPDATE, tick, len(parts)) + b"".join(parts))
    return out


def decode_group(data: bytes) -> GroupedUpdate:
    if len(data) < GROUP_HEADER_SIZE:
        raise DecodeError("truncated grouped update header")
    mtype, tick, count = _GROUP_HEAD.unpack_from(data, 0)
    if mtype != MSG_GROUPED_UPDATE:
        raise DecodeError(f"not a grouped update (type {mtype:#04x})")
    off = GROUP_HEADER_SIZE
    recs = []
    for _ in range(count):
        rec, off = _decode_record(data, off)
        recs.append(rec)
    if off != len(data):
        raise DecodeError("trailing bytes after grouped update")
    return GroupedUpdate(tick, tuple(recs))


# -- PCC batches -------------------------------------------------------------

_PCC_HEAD = struct.Struct("<IIHB")
_BODY = struct.Struct("<fBff")
_SPRING = struct.Struct("<Ifff")
F_TRANSFORM_ONLY = 0x01
F_BODY = 0x02
F_COLLIDER = 0x04
F_SPRINGS = 0x08
F_INTERACTABLE = 0x10
SHAPE_SPHERE = 1
SHAPE_BOX = 2


@dataclass(frozen=True)
class PCCBatch:
    pccs: tuple[PhysComponentContainer, ...]


def _encode_pcc(p: PhysComponentContainer) -> bytes:
    flags = 0
    if p.transform_only:
        flags |= F_TRANSFORM_ONLY
    if p.body is not None:
        flags |= F_BODY
    if p.collider is not None:
        flags |= F_COLLIDER
    if p.springs is not None:
        flags |= F_SPRINGS
    if p.interactable:
        flags |= F_INTERACTABLE
    out = [_PCC_HEAD.pack(p.entity_id, p.parent_id, p.owner, flags), _XFORM.pack(*p.transform.position, *p.transform.rotation)]
    if p.body is not None:
        b = p.body
        out.append(_BODY.pack(b.mass, int(b.kinematic), b.linear_damping, b.restitution))
    if p.collider is not None:
        shape = p.collider.shape
        trig = int(p.collider.trigger)
        if isinstance(shape, Sphere):
            out.append(struct.pack("<BBf", SHAPE_SPHERE, trig, shape.radius))
        else:
            out.append(struct.pack("<BB3f", SHAPE_BOX, trig, *shape.half_extents))
    if p.springs is not None:
        out.append(_U16.pack(len(p.springs)))
        out.extend(_SPRING.pack(s.other, s.rest_length, s.stiffness, s.damping) for s in p.springs)
    return b"".join(out)


def encode_pcc_batch(pccs: Sequence[PhysComponentContainer]) -> bytes:
    return b"".join([_U8.pack(MSG_PCC_BATCH), _U16.pack(len(pccs))] + [_encode_pcc(p) for p in pccs])


class _Reader:
    def __init__(self, buf: bytes, off: int = 0):
        self.buf = buf
        self.off = off

    def take(self, st: struct.Struct) -> tuple:
        if self.off + st.size > len(self.buf):
            raise DecodeError("truncated")
        v = st.unpack_from(self.buf, self.off)
        self.off += st.size
        return v


def _decode_pcc(r: _Reader) -> PhysComponentContainer:
    eid, parent, owner, flags = r.take(_PCC_HEAD)
    x = r.take(_XFORM)
    body = collider = springs = None
    if flags & F_BODY:
        mass, kin, damp, rest = r.take(_BODY)
        body = BodySpec(mass, bool(kin), damp, rest)
    if flags & F_COLLIDER:
        kind, trig = r.take(struct.Struct("<BB"))
        if kind == SHAPE_SPHERE:
            (radius,) = r.take(struct.Struct("<f"))
            shape = Sphere(radius)
        elif kind == SHAPE_BOX:
            shape = Box(r.take(_VEC))
        else:
            raise DecodeError(f"unknown shape code {kind}")
        collider = ColliderSpec(shape, bool(trig))
    if flags & F_SPRINGS:
        (n,) = r.take(_U16)
        springs = tuple(SpringSpec(*r.take(_SPRING)) for _ in range(n))
    return PhysComponentContainer(
        entity_id=eid,
        parent_id=parent,
        owner=owner,
        transform=Transform(x[0:3], x[3:7]),
        transform_only=bool(flags & F_TRANSFORM_ONLY),
        body=body,
        collider=collider,
        interactable=bool(flags & F_INTERACTABLE),
        springs=springs,
    )


def decode_pcc_batch(data: bytes) -> tuple[PhysComponentContainer, ...]:
    if len(data) < 3:
        raise DecodeError("truncated PCC batch header")
    if data[0] != MSG_PCC_BATCH:
        raise DecodeError(f"not a PCC batch (type {data[0]:#04x})")
    (count,) = _U16.unpack_from(data, 1)
    r = _Reader(data, 3)
    out = []
    for i in range(count):
        try:
            out.append(_decode_pcc(r))
        except DecodeError as exc:
            raise DecodeError(f"PCC record {i}: {exc}") from None
    if r.off != len(data):
        raise DecodeError("trailing bytes after PCC batch")
    return tuple(out)


# -- remaining messages --------------------------------------------------------

SNAP_INTERACTABLE = 0x01
SNAP_KINEMATIC = 0x02

_SNAP_HEAD = struct.Struct("<BII")
_SNAP_ENTRY = struct.Struct("<IHB7f")


@dataclass(frozen=True)
class SnapshotEntry:
    entity_id: int
    owner: int
    flags: int
    transform: Transform


@dataclass(frozen=True)
class Snapshot:
    tick: int
    entries: tuple[SnapshotEntry, ...]


@dataclass(frozen=True)
class MoveToTransform:
    player: int
    entity_id: int
    target: Transform


@dataclass(frozen=True)
class CollisionEvents:
    events: tuple[CollisionEvent, ...]


@dataclass(frozen=True)
class GrabStart:
    player: int
    hand: int
    entity_id: int


@dataclass(frozen=True)
class GrabEnd:
    player: int
    hand: int
    entity_id: int


JOIN_HOST = 0x01


@dataclass(frozen=True)
class Join:
    flags: int = 0


JOINACK_NEEDS_INIT = 0x01
JOINACK_HOST = 0x02


@dataclass(frozen=True)
class JoinAck:
    player: int
    flags: int = 0
    head: int = 0
    left_hand: int = 0
    right_hand: int = 0
    extra: int = 0


@dataclass(frozen=True)
class DestroyEntity:
    entity_ids: tuple[int, ...]


@dataclass(frozen=True)
class SoftbodyParticles:
    tick: int
    entity_id: int
    offset: int
    positions: tuple[Vec3, ...] = field(default=())


_MOVE = struct.Struct("<BHI7f")
_EVT = struct.Struct("<BIII")
_GRAB = struct.Struct("<BHII")
_JOINACK = struct.Struct("<BHBIIII")
_SB_HEAD = struct.Struct("<BIIHH")
SOFTBODY_HEADER_SIZE = _SB_HEAD.size
SOFTBODY_PARTICLE_SIZE = 12
COLLISION_EVENT_SIZE = _EVT.size


def encode_snapshot(snap: Snapshot) -> bytes:
    parts = [_SNAP_HEAD.pack(MSG_SNAPSHOT, snap.tick, len(snap.entries))]
    for e in snap.entries:
        t = e.transform
        parts.append(_SNAP_ENTRY.pack(e.entity_id, e.owner, e.flags, *t.position, *t.rotation))
    return b"".join(parts)


def encode_move(m: MoveToTransform) -> bytes:
    return _MOVE.pack(MSG_MOVE_TO_TRANSFORM, m.player, m.entity_id, *m.target.position, *m.target.rotation)


def encode_collision_events(events: Sequence[CollisionEvent]) -> bytes:
    parts = [_U8.pack(MSG_COLLISION_EVENT), _U16.pack(len(events))]
    parts.extend(_EVT.pack(int(e.kind), e.a, e.b, e.tick) for e in events)
    return b"".join(parts)


def encode_collision_event_chunks(events: Sequence[CollisionEvent], max_payload: int = DEFAULT_MAX_PAYLOAD) -> list[bytes]:
    per = max(1, (max_payload - 3) // COLLISION_EVENT_SIZE)
    return [encode_collision_events(events[i:i + per]) for i in range(0, len(events), per)]


def encode_grab(m: Union[GrabStart, GrabEnd]) -> bytes:
    mtype = MSG_GRAB_START if isinstance(m, GrabStart) else MSG_GRAB_END
    return _GRAB.pack(mtype, m.player, m.hand, m.entity_id)


def encode_join(m: Join) -> bytes:
    return bytes((MSG_JOIN, m.flags))


def encode_join_ack(m: JoinAck) -> bytes:
    return _JOINACK.pack(MSG_JOIN_ACK, m.player, m.flags, m.head, m.left_hand, m.right_hand, m.extra)


def encode_destroy(m: DestroyEntity) -> bytes:
    return b"".join([_U8.pack(MSG_DESTROY_ENTITY), _U16.pack(len(m.entity_ids))] + [_U32.pack(i) for i in m.entity_ids])


def encode_softbody(m: SoftbodyParticles) -> bytes:
    parts = [_SB_HEAD.pack(MSG_SOFTBODY_PARTICLES, m.tick, m.entity_id, m.offset, len(m.positions))]
    parts.extend(_VEC.pack(*p) for p in m.positions)
    return b"".join(parts)


def encode_softbody_chunks(tick: int, entity_id: int, positions, max_payload: int = DEFAULT_MAX_PAYLOAD) -> list[bytes]:
    """Split a particle array (n x 3, any float dtype) into messages that fit ``max_payload``."""
    import numpy as np

    arr = np.ascontiguousarray(positions, dtype="<f4")
    per = (max_payload - SOFTBODY_HEADER_SIZE) // SOFTBODY_PARTICLE_SIZE
    out = []
    for off in range(0, len(arr), per):
        chunk = arr[off:off + per]
        out.append(_SB_HEAD.pack(MSG_SOFTBODY_PARTICLES, tick, entity_id, off, len(chunk)) + chunk.tobytes())
    return out


Message = Union[
    PCCBatch, Snapshot, GroupedUpdate, MoveToTransform, CollisionEvents,
    GrabStart, GrabEnd, Join, JoinAck, DestroyEntity, SoftbodyParticles,
]


def encode_message(m: Message) -> bytes:
    if isinstance(m, PCCBatch):
        return encode_pcc_batch(m.pccs)
    if isinstance(m, Snapshot):
        return encode_snapshot(m)
    if isinstance(m, GroupedUpdate):
        msgs = encode_group(m.records, m.tick, max_payload=1 << 30)
        return msgs[0] if msgs else _GROUP_HEAD.pack(MSG_GROUPED_UPDATE, m.tick, 0)
    if isinstance(m, MoveToTransform):
        return encode_move(m)
    if isinstance(m, CollisionEvents):
        return encode_collision_events(m.events)
    if isinstance(m, (GrabStart, GrabEnd)):
        return encode_grab(m)
    if isinstance(m, Join):
        return encode_join(m)
    if isinstance(m, JoinAck):
        return encode_join_ack(m)
    if isinstance(m, DestroyEntity):
        return encode_destroy(m)
    if isinstance(m, SoftbodyParticles):
        return encode_softbody(m)
    raise TypeError(f"cannot encode {type(m).__name__}")


def _exact(data: bytes, st: struct.Struct, what: str) -> tuple:
    if len(data) != st.size:
        raise DecodeError(f"{what}: expected {st.size} bytes, got {len(data)}")
    return st.unpack(data)


def decode_message(data: bytes) -> Message:
    if not data:
        raise DecodeError("empty message")
    mtype = data[0]
    if mtype == MSG_GROUPED_UPDATE:
        return decode_group(data)
    if mtype == MSG_PCC_BATCH:
        return PCCBatch(decode_pcc_batch(data))
    if mtype == MSG_SNAPSHOT:
        if len(data) < _SNAP_HEAD.size:
            raise DecodeError("truncated snapshot header")
        _, tick, count = _SNAP_HEAD.unpack_from(data, 0)
        if len(data) != _SNAP_HEAD.size + count * _SNAP_ENTRY.size:
            raise DecodeError("snapshot length mismatch")
        entries = []
        for v in _SNAP_ENTRY.iter_unpack(data[_SNAP_HEAD.size:]):
            entries.append(SnapshotEntry(v[0], v[1], v[2], Transform(v[3:6], v[6:10])))
        return Snapshot(tick, tuple(entries))
    if mtype == MSG_MOVE_TO_TRANSFORM:
        v = _exact(data, _MOVE, "MoveToTransform")
        return MoveToTransform(v[1], v[2], Transform(v[3:6], v[6:10]))
    if mtype == MSG_COLLISION_EVENT:
        if len(data) < 3:
            raise DecodeError("truncated collision event header")
        (count,) = _U16.unpack_from(data, 1)
        if len(data) != 3 + count * _EVT.size:
            raise DecodeError("collision event length mismatch")
        evs = tuple(CollisionEvent(CollisionKind(k), a, b, t) for k, a, b, t in _EVT.iter_unpack(data[3:]))
        return CollisionEvents(evs)
    if mtype in (MSG_GRAB_START, MSG_GRAB_END):
        v = _exact(data, _GRAB, "Grab")
        cls = GrabStart if mtype == MSG_GRAB_START else GrabEnd
        return cls(v[1], v[2], v[3])
    if mtype == MSG_JOIN:
        if len(data) != 2:
            raise DecodeError("Join: expected 2 bytes")
        return Join(data[1])
    if mtype == MSG_JOIN_ACK:
        v = _exact(data, _JOINACK, "JoinAck")
        return JoinAck(*v[1:])
    if mtype == MSG_DESTROY_ENTITY:
        if len(data) < 3:
            raise DecodeError("truncated destroy header")
        (count,) = _U16.unpack_from(data, 1)
        if len(data) != 3 + 4 * count:
            raise DecodeError("destroy length mismatch")
        return DestroyEntity(tuple(v[0] for v in _U32.iter_unpack(data[3:])))
    if mtype == MSG_SOFTBODY_PARTICLES:
        if len(data) < _SB_HEAD.size:
            raise DecodeError("truncated softbody header")
        _, tick, eid, off, count = _SB_HEAD.unpack_from(data, 0)
        if len(data) != _SB_HEAD.size + 12 * count:
            raise DecodeError("softbody length mismatch")
        return SoftbodyParticles(tick, eid, off, tuple(_VEC.iter_unpack(data[_SB_HEAD.size:])))
    raise DecodeError(f"unknown message type {mtype:#04x}")
