import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from splitphys.model import (
    BodySpec,
    Box,
    ColliderSpec,
    CollisionEvent,
    PhysComponentContainer,
    Sphere,
    SpringSpec,
)
from splitphys.protocol import codec
from splitphys.protocol.delta import apply_record, diff_transform, make_record
from splitphys.transform import Transform, qfrom_axis_angle

f32s = st.floats(-1e4, 1e4, allow_nan=False, width=32)
vec32 = st.tuples(f32s, f32s, f32s)
quat32 = st.tuples(*[st.floats(-1, 1, width=32)] * 4)
u32 = st.integers(0, 2 ** 32 - 1)
eid = st.integers(1, 2 ** 32 - 1)
u16 = st.integers(0, 2 ** 16 - 1)
masks = st.sampled_from([codec.MASK_POSITION, codec.MASK_ROTATION, codec.MASK_BOTH])


@st.composite
def records(draw):
    m = draw(masks)
    return codec.TransformRecord(draw(eid), draw(u16), m,
                                 draw(vec32) if m & 1 else None, draw(quat32) if m & 2 else None)


def xform32(draw):
    return Transform(draw(vec32), draw(quat32))


@st.composite
def pccs(draw):
    shape = draw(st.one_of(st.builds(Sphere, st.floats(0.015625, 10, width=32)),
                           st.builds(Box, st.tuples(*[st.floats(0.015625, 10, width=32)] * 3))))
    body = draw(st.none() | st.builds(BodySpec, st.floats(0.015625, 100, width=32), st.booleans(),
                                      st.floats(0, 5, width=32), st.floats(0, 1, width=32)))
    collider = draw(st.none() | st.just(ColliderSpec(shape, draw(st.booleans()))))
    springs = draw(st.none() | st.lists(st.builds(SpringSpec, eid, st.floats(0, 5, width=32),
                                                  st.floats(0, 500, width=32), st.floats(0, 5, width=32)),
                                        max_size=3).map(tuple))
    only = body is None and collider is None and springs is None
    return PhysComponentContainer(draw(eid), draw(u32), draw(u16), xform32(draw), only, body, collider,
                                  draw(st.booleans()), springs)


def test_record_sizes_are_byte_exact():
    p, q = (1.0, 2.0, 3.0), (0.0, 0.0, 0.0, 1.0)
    sizes = {}
    for mask in (codec.MASK_POSITION, codec.MASK_ROTATION, codec.MASK_BOTH):
        rec = make_record(7, 2, mask, Transform(p, q))
        raw = codec.encode_record(rec)
        assert raw == oracles.record_bytes(7, 2, mask, p, q) == oracles.struct_record(7, 2, mask, p, q)
        sizes[mask] = len(raw)
    assert sizes == {codec.MASK_POSITION: oracles.RECORD_SIZE_POSITION,
                     codec.MASK_ROTATION: oracles.RECORD_SIZE_ROTATION,
                     codec.MASK_BOTH: oracles.RECORD_SIZE_BOTH} == {1: 19, 2: 23, 3: 35}


@given(st.lists(records(), max_size=80), u32)
def test_group_bytes_match_oracle_and_round_trip(recs, tick):
    msgs = codec.encode_group(recs, tick)
    out = []
    for m in msgs:
        assert len(m) <= codec.DEFAULT_MAX_PAYLOAD
        g = codec.decode_group(m)
        assert g.tick == tick
        assert m == oracles.group_bytes(tick, [oracles.record_bytes(r.entity_id, r.owner, r.mask, r.position, r.rotation)
                                               for r in g.records])
        out.extend(g.records)
    assert out == recs


@given(st.lists(records(), max_size=120), u32, st.integers(42, 3000))
def test_column_encoder_matches_record_encoder(recs, tick, cap):
    cols = ([r.entity_id for r in recs], [r.owner for r in recs], [r.mask for r in recs],
            [r.position or (0.0, 0.0, 0.0) for r in recs], [r.rotation or (0.0, 0.0, 0.0, 1.0) for r in recs])
    assert codec.encode_group_columns(tick, *cols, max_payload=cap) == codec.encode_group(recs, tick, cap)


def test_group_packing_is_greedy():
    recs = [make_record(i + 1, 0, codec.MASK_BOTH, Transform()) for i in range(100)]
    msgs = codec.encode_group(recs, 1)
    per = (1200 - 7) // 35
    assert per == 34
    assert [len(codec.decode_group(m).records) for m in msgs] == [34, 34, 32]
    with pytest.raises(ValueError):
        codec.encode_group(recs, 1, max_payload=41)


@given(st.lists(pccs(), max_size=6))
def test_pcc_batch_round_trip(batch):
    data = codec.encode_pcc_batch(batch)
    assert codec.decode_pcc_batch(data) == tuple(batch)


_messages = st.one_of(
    st.builds(codec.Snapshot, u32, st.lists(st.builds(lambda e, o, f, p, q: codec.SnapshotEntry(e, o, f, Transform(p, q)),
                                                      eid, u16, st.integers(0, 3), vec32, quat32), max_size=5).map(tuple)),
    st.builds(lambda p, e, v, q: codec.MoveToTransform(p, e, Transform(v, q)), u16, eid, vec32, quat32),
    st.builds(codec.CollisionEvents, st.lists(st.builds(CollisionEvent, st.integers(0, 1), eid, eid, u32),
                                              max_size=5).map(tuple)),
    st.builds(codec.GrabStart, u16, eid, eid),
    st.builds(codec.GrabEnd, u16, eid, eid),
    st.builds(codec.Join, st.integers(0, 255)),
    st.builds(codec.JoinAck, u16, st.integers(0, 255), u32, u32, u32, u32),
    st.builds(codec.DestroyEntity, st.lists(eid, max_size=8).map(tuple)),
    st.builds(codec.SoftbodyParticles, u32, eid, u16, st.lists(vec32, max_size=8).map(tuple)),
    st.builds(codec.GroupedUpdate, u32, st.lists(records(), max_size=8).map(tuple)),
    st.builds(codec.PCCBatch, st.lists(pccs(), max_size=3).map(tuple)),
)


@given(_messages)
def test_every_message_round_trips(msg):
    data = codec.encode_message(msg)
    assert codec.decode_message(data) == msg
    assert codec.encode_message(codec.decode_message(data)) == data


@given(_messages, st.data())
def test_truncation_is_rejected(msg, data):
    raw = codec.encode_message(msg)
    cut = data.draw(st.integers(0, len(raw) - 1))
    with pytest.raises(codec.DecodeError):
        codec.decode_message(raw[:cut])


def test_bad_inputs_are_rejected():
    rec = codec.encode_group([make_record(1, 0, codec.MASK_BOTH, Transform())], 5)[0]
    with pytest.raises(codec.DecodeError):
        codec.decode_message(rec + b"\x00")
    bad = bytearray(rec)
    bad[7 + 6] = 0
    with pytest.raises(codec.DecodeError):
        codec.decode_message(bytes(bad))
    with pytest.raises(codec.DecodeError):
        codec.decode_message(b"\xff\x00")
    with pytest.raises(ValueError):
        codec.TransformRecord(1, 0, 0)
    with pytest.raises(ValueError):
        codec.TransformRecord(1, 0, codec.MASK_POSITION, None, None)


def test_softbody_chunks_cover_all_particles():
    pos = np.arange(300 * 3, dtype=float).reshape(300, 3)
    chunks = codec.encode_softbody_chunks(4, 9, pos, 600)
    got = np.zeros_like(pos)
    for c in chunks:
        assert len(c) <= 600
        m = codec.decode_message(c)
        got[m.offset:m.offset + len(m.positions)] = m.positions
    assert np.array_equal(got, pos)


def test_change_mask_thresholds():
    a = Transform((0, 0, 0))
    assert diff_transform(a, Transform((0.0009, 0, 0))) == 0
    assert diff_transform(a, Transform((0.0011, 0, 0))) == codec.MASK_POSITION
    assert diff_transform(a, Transform((0, 0, 0), qfrom_axis_angle((0, 1, 0), math.radians(0.6)))) == codec.MASK_ROTATION
    assert diff_transform(a, Transform((0, 0, 0), qfrom_axis_angle((0, 1, 0), math.radians(0.4)))) == 0
    assert diff_transform(a, Transform((1, 0, 0), qfrom_axis_angle((1, 0, 0), 1.0))) == codec.MASK_BOTH
    with pytest.raises(ValueError):
        diff_transform(a, a, -1.0)


def test_partial_record_keeps_untouched_field():
    local = Transform((1, 2, 3), qfrom_axis_angle((0, 0, 1), 0.3))
    rec = make_record(4, 0, codec.MASK_POSITION, Transform((5, 5, 5), (0, 0, 0, 1)))
    got = apply_record(local, rec)
    assert got.position == (5, 5, 5) and got.rotation == local.rotation
