"""Quaternion helpers and the rigid Transform value type.

Quaternions are plain 4-tuples in (x, y, z, w) order. This order is part of
the wire format, so every module goes through these helpers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

Vec3 = tuple[float, float, float]
Quat = tuple[float, float, float, float]

IDENTITY_QUAT: Quat = (0.0, 0.0, 0.0, 1.0)
ZERO_VEC: Vec3 = (0.0, 0.0, 0.0)
UNIT_TOL = 1e-5


def qmul(a: Quat, b: Quat) -> Quat:
    ax, ay, az, aw = a
    bx, by, bz, bw = b
    return (
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
        aw * bw - ax * bx - ay * by - az * bz,
    )


def qconj(q: Quat) -> Quat:
    return (-q[0], -q[1], -q[2], q[3])


def qdot(a: Quat, b: Quat) -> float:
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3]


def qnorm(q: Quat) -> float:
    return math.sqrt(qdot(q, q))


def qnormalize(q: Quat) -> Quat:
    n = qnorm(q)
    if n < 1e-12:
        raise ValueError("cannot normalize a zero quaternion")
    return (q[0] / n, q[1] / n, q[2] / n, q[3] / n)


def qrotate(q: Quat, v: Vec3) -> Vec3:
    """Rotate vector ``v`` by unit quaternion ``q``."""
    x, y, z, w = q
    vx, vy, vz = v
    # t = 2 * cross(q.xyz, v)
    tx = 2.0 * (y * vz - z * vy)
    ty = 2.0 * (z * vx - x * vz)
    tz = 2.0 * (x * vy - y * vx)
    return (
        vx + w * tx + (y * tz - z * ty),
        vy + w * ty + (z * tx - x * tz),
        vz + w * tz + (x * ty - y * tx),
    )


def qangle(a: Quat, b: Quat) -> float:
    """Angular distance in radians between two unit rotations (double-cover aware)."""
    # atan2 form stays accurate for tiny angles where acos(dot) does not
    x, y, z, w = qmul(qconj(a), b)
    return 2.0 * math.atan2(math.sqrt(x * x + y * y + z * z), abs(w))


def qfrom_axis_angle(axis: Vec3, angle: float) -> Quat:
    n = math.sqrt(axis[0] ** 2 + axis[1] ** 2 + axis[2] ** 2)
    s = math.sin(angle / 2.0) / n
    return (axis[0] * s, axis[1] * s, axis[2] * s, math.cos(angle / 2.0))


def qslerp(a: Quat, b: Quat, t: float) -> Quat:
    d = qdot(a, b)
    if d < 0.0:
        b = (-b[0], -b[1], -b[2], -b[3])
        d = -d
    if d > 0.9995:
        q = tuple(a[i] + t * (b[i] - a[i]) for i in range(4))
        return qnormalize(q)  # type: ignore[arg-type]
    theta = math.acos(d)
    s = math.sin(theta)
    wa = math.sin((1.0 - t) * theta) / s
    wb = math.sin(t * theta) / s
    return (
        wa * a[0] + wb * b[0],
        wa * a[1] + wb * b[1],
        wa * a[2] + wb * b[2],
        wa * a[3] + wb * b[3],
    )


def vadd(a: Vec3, b: Vec3) -> Vec3:
    return (a[0] + b[0], a[1] + b[1], a[2] + b[2])


def vsub(a: Vec3, b: Vec3) -> Vec3:
    return (a[0] - b[0], a[1] - b[1], a[2] - b[2])


def vlen(a: Vec3) -> float:
    return math.sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2])


@dataclass(frozen=True)
class Transform:
    position: Vec3 = ZERO_VEC
    rotation: Quat = IDENTITY_QUAT

    def __post_init__(self):
        object.__setattr__(self, "position", tuple(float(c) for c in self.position))
        object.__setattr__(self, "rotation", tuple(float(c) for c in self.rotation))
        if len(self.position) != 3 or len(self.rotation) != 4:
            raise ValueError("position needs 3 components and rotation 4")

    @classmethod
    def identity(cls) -> "Transform":
        return cls()

    def normalized(self) -> "Transform":
        if abs(qnorm(self.rotation) - 1.0) <= UNIT_TOL:
            return self
        return Transform(self.position, qnormalize(self.rotation))

    def compose(self, local: "Transform") -> "Transform":
        """Return ``self ∘ local``: ``local`` expressed in this transform's frame."""
        pos = vadd(self.position, qrotate(self.rotation, local.position))
        rot = qnormalize(qmul(self.rotation, local.rotation))
        return Transform(pos, rot)

    def inverse(self) -> "Transform":
        inv = qconj(self.rotation)
        p = qrotate(inv, self.position)
        return Transform((-p[0], -p[1], -p[2]), inv)

    def is_close(self, other: "Transform", pos_tol: float = 1e-6, rot_tol: float = 1e-6) -> bool:
        return (
            vlen(vsub(self.position, other.position)) <= pos_tol
            and qangle(self.rotation, other.rotation) <= rot_tol
        )
