"""Fixed-timestep rigid-body world.

Bodies live in column arrays ordered by ascending EntityId; the contact
pipeline (grid broadphase, sphere/AABB narrowphase, sequential impulses,
positional correction) runs in compiled kernels over those columns.

Rows come in three kinds: static (collider without body, or spring anchors),
dynamic, and kinematic. Kinematic rows have inverse mass 0 and move only by
teleport. Boxes are axis-aligned and never rotate dynamically; spheres and
collider-less bodies may carry a spin that is integrated kinematically.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from ..model import Box, CollisionEvent, CollisionKind, NotFoundError, Shape, Sphere
from ..transform import Quat, Transform, Vec3
from . import kernels
from .softbody import SoftBody, kinetic_energy, step_softbody

STATIC = 0
DYNAMIC = 1
KINEMATIC = 2

_F = ("pos", "vel", "rot", "angvel", "inv_mass", "mass", "kind", "damping", "restitution",
      "shape", "radius", "half", "trigger", "sensor", "has_target", "tgt_pos", "tgt_rot")


class SimulationFault(AssertionError):
    """Raised when the state contains NaN or infinity."""


@dataclass
class WorldConfig:
    dt: float = 0.02
    gravity: Vec3 = (0.0, -9.81, 0.0)
    max_speed: float = 50.0
    drive_gain: float = 30.0
    drive_max_speed: float = 3.0
    slop: float = 0.005
    correction: float = 0.2
    iterations: int = 8
    bounce_threshold: float = 0.5
    cell_size: Optional[float] = None
    softbody_substeps: int = 10


@dataclass(frozen=True)
class RigidBody:
    entity: int
    mass: float
    inverse_mass: float
    velocity: Vec3
    kinematic: bool
    linear_damping: float
    restitution: float
    move_target: Optional[Transform]


@dataclass(frozen=True)
class Collider:
    entity: int
    shape: Shape
    trigger: bool
    sensor_radius: float = 0.0


def _shape_columns(shape: Optional[Shape]):
    if shape is None:
        return kernels.SHAPE_NONE, 0.0, (0.0, 0.0, 0.0)
    if isinstance(shape, Sphere):
        return kernels.SHAPE_SPHERE, float(shape.radius), (0.0, 0.0, 0.0)
    if isinstance(shape, Box):
        return kernels.SHAPE_BOX, 0.0, tuple(shape.half_extents)
    raise TypeError(f"unsupported shape {shape!r}")


def _slerp_rows(a: np.ndarray, b: np.ndarray, t: float) -> np.ndarray:
    d = np.einsum("ij,ij->i", a, b)
    b = np.where(d[:, None] < 0, -b, b)
    d = np.abs(d)
    out = np.empty_like(a)
    lin = d > 0.9995
    if lin.any():
        q = a[lin] + t * (b[lin] - a[lin])
        out[lin] = q / np.linalg.norm(q, axis=1)[:, None]
    rest = ~lin
    if rest.any():
        theta = np.arccos(np.clip(d[rest], -1.0, 1.0))
        s = np.sin(theta)
        wa = np.sin((1.0 - t) * theta) / s
        wb = np.sin(t * theta) / s
        out[rest] = wa[:, None] * a[rest] + wb[:, None] * b[rest]
    return out


class World:
    def __init__(self, config: Optional[WorldConfig] = None, **overrides):
        cfg = config or WorldConfig()
        for k, v in overrides.items():
            if not hasattr(cfg, k):
                raise TypeError(f"unknown world option {k!r}")
            setattr(cfg, k, v)
        if not cfg.dt > 0:
            raise ValueError("dt must be positive")
        self.config = cfg
        self.gravity = np.asarray(cfg.gravity, dtype=np.float64)
        self.tick = 0
        self.ids = np.zeros(0, dtype=np.int64)
        self.pos = np.zeros((0, 3))
        self.vel = np.zeros((0, 3))
        self.rot = np.zeros((0, 4))
        self.angvel = np.zeros((0, 3))
        self.inv_mass = np.zeros(0)
        self.mass = np.zeros(0)
        self.kind = np.zeros(0, dtype=np.int8)
        self.damping = np.zeros(0)
        self.restitution = np.zeros(0)
        self.shape = np.zeros(0, dtype=np.int8)
        self.radius = np.zeros(0)
        self.half = np.zeros((0, 3))
        self.trigger = np.zeros(0, dtype=np.bool_)
        self.sensor = np.zeros(0)
        self.has_target = np.zeros(0, dtype=np.bool_)
        self.tgt_pos = np.zeros((0, 3))
        self.tgt_rot = np.zeros((0, 4))
        self.index: dict[int, int] = {}
        self.structure_version = 0
        self._pending: list[dict] = []

        self.spring_ids = np.zeros((0, 2), dtype=np.int64)
        self.spring_params = np.zeros((0, 3))  # rest, stiffness, damping
        self._spring_rows = np.zeros((0, 2), dtype=np.int64)
        self._spring_version = -1

        self.softbodies: dict[int, SoftBody] = {}
        self.ignored: set[tuple[int, int]] = set()
        self.contacts: set[tuple[int, int]] = set()
        self.last_contact_count = 0

    # -- construction --

    def add_body(self, entity: int, transform: Transform = Transform(), *, mass: float = 1.0,
                 kinematic: bool = False, linear_damping: float = 0.0, restitution: float = 0.0,
                 shape: Optional[Shape] = None, trigger: bool = False, sensor_radius: float = 0.0,
                 velocity: Vec3 = (0.0, 0.0, 0.0), angular_velocity: Vec3 = (0.0, 0.0, 0.0)):
        if not kinematic and not mass > 0:
            raise ValueError("dynamic bodies need mass > 0")
        self._queue(entity, transform, DYNAMIC if not kinematic else KINEMATIC,
                    mass if not kinematic else 0.0, linear_damping, restitution, shape, trigger,
                    sensor_radius, velocity, angular_velocity)

    def add_static(self, entity: int, transform: Transform = Transform(), shape: Optional[Shape] = None,
                   trigger: bool = False, restitution: float = 0.0):
        self._queue(entity, transform, STATIC, 0.0, 0.0, restitution, shape, trigger, 0.0,
                    (0.0, 0.0, 0.0), (0.0, 0.0, 0.0))

    def _queue(self, entity, transform, kind, mass, damping, restitution, shape, trigger, sensor, vel, angvel):
        if entity in self.index or any(p["id"] == entity for p in self._pending[-1:]):
            raise ValueError(f"entity {entity} already in world")
        code, radius, half = _shape_columns(shape)
        t = transform.normalized()
        self._pending.append(dict(
            id=int(entity), pos=t.position, vel=vel, rot=t.rotation, angvel=angvel,
            inv_mass=(1.0 / mass if kind == DYNAMIC else 0.0), mass=mass, kind=kind, damping=damping,
            restitution=restitution, shape=code, radius=radius, half=half, trigger=bool(trigger),
            sensor=float(sensor), has_target=False, tgt_pos=t.position, tgt_rot=t.rotation,
        ))

    def _flush(self):
        if not self._pending:
            return
        new_ids = np.array([p["id"] for p in self._pending], dtype=np.int64)
        if len(np.unique(new_ids)) != len(new_ids) or np.isin(new_ids, self.ids).any():
            self._pending = []
            raise ValueError("duplicate entity ids added to world")
        cols = {name: np.array([p[name] for p in self._pending], dtype=getattr(self, name).dtype)
                for name in _F}
        ids = np.concatenate([self.ids, new_ids])
        order = np.argsort(ids, kind="stable")
        self.ids = ids[order]
        for name in _F:
            merged = np.concatenate([getattr(self, name), cols[name].reshape((-1,) + getattr(self, name).shape[1:])])
            setattr(self, name, merged[order])
        self._pending = []
        self._reindex()

    def _reindex(self):
        self.index = {int(e): r for r, e in enumerate(self.ids)}
        self.structure_version += 1

    def remove(self, entity: int):
        self._flush()
        if entity in self.softbodies:
            del self.softbodies[entity]
            return
        r = self._row(entity)
        keep = np.ones(len(self.ids), dtype=bool)
        keep[r] = False
        self.ids = self.ids[keep]
        for name in _F:
            setattr(self, name, getattr(self, name)[keep])
        if len(self.spring_ids):
            sk = (self.spring_ids != entity).all(axis=1)
            self.spring_ids = self.spring_ids[sk]
            self.spring_params = self.spring_params[sk]
        self.ignored = {p for p in self.ignored if entity not in p}
        self._reindex()

    def add_spring(self, a: int, b: int, rest_length: float, stiffness: float, damping: float = 0.0):
        if a == b:
            raise ValueError("spring endpoints must differ")
        key = (min(a, b), max(a, b))
        if len(self.spring_ids) and ((self.spring_ids[:, 0] == key[0]) & (self.spring_ids[:, 1] == key[1])).any():
            return
        self.spring_ids = np.vstack([self.spring_ids, np.array([key], dtype=np.int64)])
        self.spring_params = np.vstack([self.spring_params, [[rest_length, stiffness, damping]]])
        self._spring_version = -1

    def add_softbody(self, softbody: SoftBody):
        if softbody.entity in self.softbodies or softbody.entity in self.index:
            raise ValueError(f"entity {softbody.entity} already in world")
        self.softbodies[softbody.entity] = softbody

    def ignore_pair(self, a: int, b: int, ignore: bool = True):
        key = (min(a, b), max(a, b))
        if ignore:
            self.ignored.add(key)
        else:
            self.ignored.discard(key)

    # -- queries --

    def _row(self, entity: int) -> int:
        self._flush()
        try:
            return self.index[entity]
        except KeyError:
            raise NotFoundError(entity) from None

    def __contains__(self, entity: int) -> bool:
        self._flush()
        return entity in self.index or entity in self.softbodies

    def __len__(self) -> int:
        self._flush()
        return len(self.ids)

    def transform(self, entity: int) -> Transform:
        r = self._row(entity)
        return Transform(tuple(self.pos[r]), tuple(self.rot[r]))

    def velocity(self, entity: int) -> Vec3:
        return tuple(self.vel[self._row(entity)])

    def body(self, entity: int) -> RigidBody:
        r = self._row(entity)
        target = None
        if self.has_target[r]:
            target = Transform(tuple(self.tgt_pos[r]), tuple(self.tgt_rot[r]))
        return RigidBody(entity, float(self.mass[r]), float(self.inv_mass[r]), tuple(self.vel[r]),
                         bool(self.kind[r] == KINEMATIC), float(self.damping[r]), float(self.restitution[r]), target)

    def collider(self, entity: int) -> Optional[Collider]:
        r = self._row(entity)
        code = self.shape[r]
        if code == kernels.SHAPE_NONE:
            return None
        shape = Sphere(float(self.radius[r])) if code == kernels.SHAPE_SPHERE else Box(tuple(self.half[r]))
        return Collider(entity, shape, bool(self.trigger[r]), float(self.sensor[r]))

    def is_kinematic(self, entity: int) -> bool:
        return bool(self.kind[self._row(entity)] == KINEMATIC)

    def is_dynamic(self, entity: int) -> bool:
        return bool(self.kind[self._row(entity)] == DYNAMIC)

    def in_contact(self, a: int, b: int) -> bool:
        return (min(a, b), max(a, b)) in self.contacts

    def movable_rows(self) -> np.ndarray:
        self._flush()
        return np.nonzero(self.kind != STATIC)[0]

    def kinetic_energy(self) -> float:
        self._flush()
        dyn = self.kind == DYNAMIC
        ke = 0.5 * float(np.sum(self.mass[dyn] * np.einsum("ij,ij->i", self.vel[dyn], self.vel[dyn])))
        return ke + sum(kinetic_energy(sb) for sb in self.softbodies.values())

    # -- commands --

    def set_velocity(self, entity: int, velocity: Vec3):
        r = self._row(entity)
        if self.kind[r] == DYNAMIC:
            self.vel[r] = velocity

    def set_angular_velocity(self, entity: int, angular_velocity: Vec3):
        r = self._row(entity)
        if self.kind[r] == DYNAMIC:
            self.angvel[r] = angular_velocity

    def teleport(self, entity: int, target: Transform):
        r = self._row(entity)
        t = target.normalized()
        self.pos[r] = t.position
        self.rot[r] = t.rotation
        self.vel[r] = 0.0
        self.has_target[r] = False

    def apply_move_to_transform(self, entity: int, target: Transform):
        """Drive a dynamic body toward ``target`` while it stays subject to contacts.

        Kinematic bodies have no physical response, so they teleport instead.
        """
        r = self._row(entity)
        if self.kind[r] == KINEMATIC:
            self.teleport(entity, target)
            return
        if self.kind[r] != DYNAMIC:
            raise ValueError(f"entity {entity} is static")
        t = target.normalized()
        self.has_target[r] = True
        self.tgt_pos[r] = t.position
        self.tgt_rot[r] = t.rotation

    def clear_move_target(self, entity: int):
        self.has_target[self._row(entity)] = False

    # -- simulation --

    def _auto_cell(self, bound: np.ndarray, active: np.ndarray) -> float:
        if self.config.cell_size:
            return self.config.cell_size
        b = bound[active]
        if not len(b):
            return 1.0
        med = float(np.median(b))
        small = b[b <= 4.0 * med]
        return max(2.0 * float(small.max()), 1e-3)

    def _spring_rows_now(self) -> np.ndarray:
        if self._spring_version != self.structure_version:
            if len(self.spring_ids):
                self._spring_rows = np.array([[self.index.get(int(a), -1), self.index.get(int(b), -1)]
                                              for a, b in self.spring_ids], dtype=np.int64).reshape(-1, 2)
            else:
                self._spring_rows = np.zeros((0, 2), dtype=np.int64)
            self._spring_version = self.structure_version
        return self._spring_rows

    def _apply_springs(self, dt: float):
        rows = self._spring_rows_now()
        if not len(rows):
            return
        ok = (rows >= 0).all(axis=1)
        a, b = rows[ok, 0], rows[ok, 1]
        rest, k, c = self.spring_params[ok].T
        d = self.pos[b] - self.pos[a]
        length = np.linalg.norm(d, axis=1)
        safe = np.where(length > 1e-12, length, 1.0)
        u = d / safe[:, None]
        rel = np.einsum("ij,ij->i", self.vel[b] - self.vel[a], u)
        f = (k * (length - rest) + c * rel)[:, None] * u  # force on a, toward b when stretched
        n = len(self.ids)
        for axis in range(3):
            fa = np.bincount(a, weights=f[:, axis], minlength=n) - np.bincount(b, weights=f[:, axis], minlength=n)
            self.vel[:, axis] += fa * self.inv_mass * dt

    def step(self) -> list[CollisionEvent]:
        self._flush()
        cfg = self.config
        dt = cfg.dt
        dyn = self.kind == DYNAMIC
        driven = dyn & self.has_target
        free = dyn & ~self.has_target

        if driven.any():
            v = cfg.drive_gain * (self.tgt_pos[driven] - self.pos[driven])
            speed = np.linalg.norm(v, axis=1)
            scale = np.where(speed > cfg.drive_max_speed, cfg.drive_max_speed / np.maximum(speed, 1e-300), 1.0)
            self.vel[driven] = v * scale[:, None]
            self.angvel[driven] = 0.0
            self.rot[driven] = _slerp_rows(self.rot[driven], self.tgt_rot[driven], min(1.0, cfg.drive_gain * dt))

        self.vel[free] += self.gravity * dt
        self.vel[free] *= np.maximum(0.0, 1.0 - self.damping[free] * dt)[:, None]
        self._apply_springs(dt)

        speed = np.linalg.norm(self.vel, axis=1)
        fast = speed > cfg.max_speed
        if fast.any():
            self.vel[fast] *= (cfg.max_speed / speed[fast])[:, None]
            speed[fast] = cfg.max_speed

        spin = dyn & (self.shape != kernels.SHAPE_BOX) & (np.abs(self.angvel).sum(axis=1) > 0)
        if spin.any():
            w = self.angvel[spin]
            q = self.rot[spin]
            # dq/dt = 0.5 * (w, 0) * q
            wx, wy, wz = w.T
            x, y, z, qw = q.T
            dq = 0.5 * dt * np.stack([
                wx * qw + wy * z - wz * y,
                wy * qw + wz * x - wx * z,
                wz * qw + wx * y - wy * x,
                -wx * x - wy * y - wz * z,
            ], axis=1)
            q = q + dq
            self.rot[spin] = q / np.linalg.norm(q, axis=1)[:, None]

        active = (self.shape != kernels.SHAPE_NONE) | (self.sensor > 0)
        extent = np.where(self.shape == kernels.SHAPE_SPHERE, self.radius, np.linalg.norm(self.half, axis=1))
        bound = np.maximum(extent, self.sensor) + speed * dt + cfg.slop
        movable = self.kind != STATIC
        pairs = kernels.grid_pairs(self.pos, bound, active, movable, self._auto_cell(bound, active))

        m = len(pairs)
        sep = np.empty(m)
        normal = np.empty((m, 3))
        sensor_sep = np.empty(m)
        solid = np.zeros(m, dtype=np.bool_)
        impulse = np.zeros(m)
        if m:
            kernels.narrowphase(pairs, self.pos, self.shape, self.radius, self.half, self.sensor, sep, normal, sensor_sep)
            i, j = pairs[:, 0], pairs[:, 1]
            solid = (np.isfinite(sep) & ~self.trigger[i] & ~self.trigger[j]
                     & ((self.inv_mass[i] + self.inv_mass[j]) > 0))
            if self.ignored:
                keys = self.ids[i] * (1 << 32) + self.ids[j]
                ign = np.array([a * (1 << 32) + b for a, b in self.ignored], dtype=np.int64)
                solid &= ~np.isin(keys, ign)
            impulse = kernels.solve_velocities(pairs, sep, normal, solid, self.vel, self.inv_mass, self.restitution,
                                     dt, cfg.iterations, cfg.bounce_threshold)

        self.pos[~(self.kind == STATIC)] += self.vel[~(self.kind == STATIC)] * dt

        for sb in self.softbodies.values():
            step_softbody(sb, self, dt, cfg.softbody_substeps)

        contacts: set[tuple[int, int]] = set()
        if m:
            kernels.narrowphase(pairs, self.pos, self.shape, self.radius, self.half, self.sensor, sep, normal, sensor_sep)
            kernels.correct_positions(pairs, sep, normal, solid, self.pos, self.inv_mass, cfg.slop, cfg.correction)
            # speculative contacts can resolve a hit before the shapes touch
            touching = (sep < cfg.slop) | (sensor_sep < cfg.slop) | (impulse > 0.0)
            hit = pairs[touching]
            contacts = set(zip(self.ids[hit[:, 0]].tolist(), self.ids[hit[:, 1]].tolist()))
        self.last_contact_count = len(contacts)

        self.tick += 1
        events = [CollisionEvent(CollisionKind.ENTER, a, b, self.tick) for a, b in sorted(contacts - self.contacts)]
        events += [CollisionEvent(CollisionKind.EXIT, a, b, self.tick) for a, b in sorted(self.contacts - contacts)]
        self.contacts = contacts
        self._check_finite()
        return events

    def _check_finite(self):
        for name in ("pos", "vel", "rot"):
            if not np.isfinite(getattr(self, name)).all():
                raise SimulationFault(f"non-finite {name} at tick {self.tick}")
        for sb in self.softbodies.values():
            if not (np.isfinite(sb.pos).all() and np.isfinite(sb.vel).all()):
                raise SimulationFault(f"non-finite softbody {sb.entity} at tick {self.tick}")

    def state_digest(self) -> str:
        """SHA-256 over every state column; equal digests mean bit-identical state."""
        self._flush()
        h = hashlib.sha256()
        h.update(np.int64(self.tick).tobytes())
        h.update(self.ids.tobytes())
        for name in _F:
            h.update(np.ascontiguousarray(getattr(self, name)).tobytes())
        for eid in sorted(self.softbodies):
            sb = self.softbodies[eid]
            h.update(sb.pos.tobytes())
            h.update(sb.vel.tobytes())
        h.update(repr(sorted(self.contacts)).encode())
        return h.hexdigest()

    def entities(self) -> Iterable[int]:
        self._flush()
        return self.ids.tolist()
