"""Selective synchronization: change masks and partial-record application."""

from __future__ import annotations

import math

from ..transform import Transform, qangle, vlen, vsub
from .codec import MASK_POSITION, MASK_ROTATION, TransformRecord

DEFAULT_POS_EPS = 1e-3
DEFAULT_ROT_EPS = math.radians(0.5)


def diff_transform(prev: Transform, curr: Transform, pos_eps: float = DEFAULT_POS_EPS,
                   rot_eps: float = DEFAULT_ROT_EPS) -> int:
    if pos_eps < 0 or rot_eps < 0:
        raise ValueError("thresholds must be non-negative")
    mask = 0
    if vlen(vsub(curr.position, prev.position)) > pos_eps:
        mask |= MASK_POSITION
    if qangle(prev.rotation, curr.rotation) > rot_eps:
        mask |= MASK_ROTATION
    return mask


def make_record(entity_id: int, owner: int, mask: int, t: Transform) -> TransformRecord:
    return TransformRecord(
        entity_id,
        owner,
        mask,
        t.position if mask & MASK_POSITION else None,
        t.rotation if mask & MASK_ROTATION else None,
    )


def apply_record(local: Transform, rec: TransformRecord) -> Transform:
    pos = rec.position if rec.mask & MASK_POSITION else local.position
    rot = rec.rotation if rec.mask & MASK_ROTATION else local.rotation
    return Transform(pos, rot)
