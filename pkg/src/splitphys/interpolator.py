"""Dual-quaternion representation of rigid transforms and linear blending."""

from __future__ import annotations

from dataclasses import dataclass

from .transform import Quat, Transform, qconj, qdot, qmul, qnorm, qnormalize

ZERO_QUAT: Quat = (0.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class DualQuaternion:
    real: Quat
    dual: Quat

    def __neg__(self) -> "DualQuaternion":
        return DualQuaternion(tuple(-c for c in self.real), tuple(-c for c in self.dual))

    def is_unit(self, tol: float = 1e-5) -> bool:
        return abs(qnorm(self.real) - 1.0) <= tol and abs(qdot(self.real, self.dual)) <= tol

    def normalized(self) -> "DualQuaternion":
        n = qnorm(self.real)
        if n < 1e-9:
            raise ValueError("dual quaternion has a near-zero real part")
        real = tuple(c / n for c in self.real)
        dual = tuple(c / n for c in self.dual)
        # project out the component of dual along real so dot(real, dual) = 0
        d = qdot(real, dual)
        dual = tuple(dual[i] - real[i] * d for i in range(4))
        return DualQuaternion(real, dual)


def from_transform(t: Transform) -> DualQuaternion:
    real = qnormalize(t.rotation)
    px, py, pz = t.position
    tq = qmul((px, py, pz, 0.0), real)
    return DualQuaternion(real, (0.5 * tq[0], 0.5 * tq[1], 0.5 * tq[2], 0.5 * tq[3]))


def to_transform(dq: DualQuaternion) -> Transform:
    if qnorm(dq.real) < 1e-9:
        raise ValueError("dual quaternion has a near-zero real part")
    tq = qmul(dq.dual, qconj(dq.real))
    return Transform((2.0 * tq[0], 2.0 * tq[1], 2.0 * tq[2]), dq.real)


def blend(a: DualQuaternion, b: DualQuaternion, t: float) -> DualQuaternion:
    """Normalized linear blend along the shortest rotational path."""
    if qdot(a.real, b.real) < 0.0:
        b = -b
    s = 1.0 - t
    real = tuple(s * a.real[i] + t * b.real[i] for i in range(4))
    dual = tuple(s * a.dual[i] + t * b.dual[i] for i in range(4))
    return DualQuaternion(real, dual).normalized()


def interpolate(a: Transform, b: Transform, t: float) -> Transform:
    return to_transform(blend(from_transform(a), from_transform(b), t))
