"""Independent reference implementations used as second routes in tests.

Everything here is written without the package's own helpers: matrices instead
of quaternion products, byte assembly instead of struct layouts, loops instead
of vectorized kernels.
"""

from __future__ import annotations

import math
import struct

import numpy as np


# -- frozen values -------------------------------------------------------------

RECORD_SIZE_POSITION = 4 + 2 + 1 + 3 * 4    # 19
RECORD_SIZE_ROTATION = 4 + 2 + 1 + 4 * 4    # 23
RECORD_SIZE_BOTH = 4 + 2 + 1 + 7 * 4        # 35
GROUP_HEADER = 1 + 4 + 2                    # 7
ENVELOPE = 1 + 4                            # 5
UDP_IP = 28

# one 12 Hz interval of 512 all-changing records in 1200-byte messages:
# 34 records fit per message (7 + 34 * 35 = 1197), so 16 messages per interval
RELAY_512_MSGS = math.ceil(512 / ((1200 - GROUP_HEADER) // RECORD_SIZE_BOTH))
RELAY_512_ON_WIRE_KBPS = 12 * (512 * RECORD_SIZE_BOTH + RELAY_512_MSGS * (GROUP_HEADER + ENVELOPE + UDP_IP)) / 1000
# payload figures count message bytes only, no envelope or IP/UDP headers
RELAY_512_PAYLOAD_KBPS = 12 * (512 * RECORD_SIZE_BOTH + RELAY_512_MSGS * GROUP_HEADER) / 1000


def f32(x: float) -> float:
    return float(np.float32(x))


def le_u(value: int, width: int) -> bytes:
    return int(value).to_bytes(width, "little")


def le_f(x: float) -> bytes:
    return np.float32(x).tobytes()


def record_bytes(entity: int, owner: int, mask: int, pos=None, rot=None) -> bytes:
    out = le_u(entity, 4) + le_u(owner, 2) + le_u(mask, 1)
    if mask & 1:
        out += b"".join(le_f(c) for c in pos)
    if mask & 2:
        out += b"".join(le_f(c) for c in rot)
    return out


def group_bytes(tick: int, records: list[bytes]) -> bytes:
    return le_u(3, 1) + le_u(tick, 4) + le_u(len(records), 2) + b"".join(records)


# -- rigid transforms via 4x4 matrices -------------------------------------------


def quat_matrix(q) -> np.ndarray:
    x, y, z, w = q
    n = math.sqrt(x * x + y * y + z * z + w * w)
    x, y, z, w = x / n, y / n, z / n, w / n
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def homogeneous(position, rotation) -> np.ndarray:
    m = np.eye(4)
    m[:3, :3] = quat_matrix(rotation)
    m[:3, 3] = position
    return m


def matrix_angle(a: np.ndarray, b: np.ndarray) -> float:
    r = a.T @ b
    c = (np.trace(r) - 1.0) / 2.0
    return math.acos(max(-1.0, min(1.0, c)))


def nlerp(a, b, t):
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    if a @ b < 0:
        b = -b
    q = (1 - t) * a + t * b
    return q / np.linalg.norm(q)


# -- physics ---------------------------------------------------------------------


def euler_step(v, p, gravity, damping, dt):
    """Semi-implicit Euler: velocity first, then position with the new velocity."""
    v = [(vi + gi * dt) * max(0.0, 1.0 - damping * dt) for vi, gi in zip(v, gravity)]
    p = [pi + vi * dt for pi, vi in zip(p, v)]
    return v, p


def elastic_1d(m1, v1, m2, v2):
    u1 = ((m1 - m2) * v1 + 2 * m2 * v2) / (m1 + m2)
    u2 = ((m2 - m1) * v2 + 2 * m1 * v1) / (m1 + m2)
    return u1, u2


def spring_forces_loop(pos, vel, springs, rest, stiffness, damping):
    f = [[0.0, 0.0, 0.0] for _ in range(len(pos))]
    for s, (i, j) in enumerate(springs):
        d = [pos[j][k] - pos[i][k] for k in range(3)]
        length = math.sqrt(sum(c * c for c in d))
        if length < 1e-12:
            continue
        u = [c / length for c in d]
        rel = sum((vel[j][k] - vel[i][k]) * u[k] for k in range(3))
        mag = stiffness[s] * (length - rest[s]) + damping[s] * rel
        for k in range(3):
            f[i][k] += mag * u[k]
            f[j][k] -= mag * u[k]
    return np.array(f)


def bound_pairs(pos, bound, active, movable):
    """Brute-force candidate pairs: overlapping bounding spheres, at least one movable."""
    out = set()
    n = len(pos)
    for i in range(n):
        for j in range(i + 1, n):
            if not (active[i] and active[j]) or not (movable[i] or movable[j]):
                continue
            d2 = sum((pos[i][k] - pos[j][k]) ** 2 for k in range(3))
            if d2 <= (bound[i] + bound[j]) ** 2:
                out.add((i, j))
    return out


# -- scenes ----------------------------------------------------------------------


def closure_recursive(entities) -> set:
    """Physics entities and every ancestor, by recursion over parents."""
    parent = {e.name: e.parent for e in entities}
    keep = set()

    def up(name):
        if name is None or name in keep:
            return
        keep.add(name)
        up(parent[name])

    for e in entities:
        if e.has_physics:
            up(e.name)
    return keep


def preorder_recursive(entities) -> list:
    kids = {}
    for e in entities:
        kids.setdefault(e.parent, []).append(e.name)
    out = []

    def visit(name):
        out.append(name)
        for c in kids.get(name, []):
            visit(c)

    for r in kids.get(None, []):
        visit(r)
    return out


def struct_record(entity, owner, mask, pos=None, rot=None) -> bytes:
    """Second layout route using struct with explicit per-field packing."""
    out = struct.pack("<I", entity) + struct.pack("<H", owner) + struct.pack("<B", mask)
    for c in (pos or ()) if mask & 1 else ():
        out += struct.pack("<f", c)
    for c in (rot or ()) if mask & 2 else ():
        out += struct.pack("<f", c)
    return out
