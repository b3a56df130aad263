"""Particle-clustered softbodies joined by damped springs.

Vertices of a render mesh are grouped greedily into particles; each vertex is
bound to one particle with a fixed offset (translation-only skinning).
Particles closer than a cutoff are connected by springs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numba import njit
from scipy.spatial import cKDTree

from . import kernels


@dataclass
class SoftBody:
    entity: int
    pos: np.ndarray            # (P, 3)
    vel: np.ndarray            # (P, 3)
    mass: np.ndarray           # (P,)
    inv_mass: np.ndarray       # (P,), 0 for pinned particles
    springs: np.ndarray        # (S, 2) int64, i < j, unique
    rest: np.ndarray           # (S,)
    stiffness: np.ndarray      # (S,)
    damping: np.ndarray        # (S,)
    binding: np.ndarray        # (V,) particle index per vertex
    offset: np.ndarray         # (V, 3) vertex offset from its particle
    radius: float = 0.0        # contact radius of each particle
    use_gravity: bool = False
    drag: float = 0.0          # 1/s, uniform velocity damping
    origin: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.origin is None:
            self.origin = self.pos.copy()

    @property
    def particle_count(self) -> int:
        return len(self.pos)

    def pin(self, indices):
        self.inv_mass[np.asarray(indices, dtype=np.int64)] = 0.0


_EMPTY_ROWS = np.zeros(0, dtype=np.int64)
_EMPTY_SHAPE = np.zeros(0, dtype=np.int8)
_EMPTY3 = np.zeros((0, 3))
_EMPTY1 = np.zeros(0)


def cluster_vertices(vertices: np.ndarray, particle_radius: float):
    """Greedy first-fit clustering in vertex order. Returns (centres, binding)."""
    tree = cKDTree(vertices)
    n = len(vertices)
    binding = np.full(n, -1, dtype=np.int64)
    centres = []
    for v in range(n):
        if binding[v] >= 0:
            continue
        near = np.asarray(tree.query_ball_point(vertices[v], particle_radius), dtype=np.int64)
        near = near[binding[near] < 0]
        binding[near] = len(centres)
        centres.append(vertices[near].mean(axis=0))
    return np.array(centres, dtype=np.float64).reshape(-1, 3), binding


def build_softbody(vertices: Sequence, particle_radius: float, spring_cutoff: float, stiffness: float,
                   damping: float, entity: int = 0, particle_mass: float = 1.0) -> SoftBody:
    verts = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    if not len(verts):
        raise ValueError("softbody needs at least one vertex")
    if not (particle_radius > 0 and spring_cutoff > 0):
        raise ValueError("radii must be positive")
    centres, binding = cluster_vertices(verts, particle_radius)
    pairs = cKDTree(centres).query_pairs(spring_cutoff, output_type="ndarray").astype(np.int64).reshape(-1, 2)
    if len(pairs):
        pairs = np.sort(pairs, axis=1)
        pairs = pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]
        length = np.linalg.norm(centres[pairs[:, 1]] - centres[pairs[:, 0]], axis=1)
        keep = length < spring_cutoff
        pairs, length = pairs[keep], length[keep]
    else:
        length = np.zeros(0)
    p = len(centres)
    s = len(pairs)
    return SoftBody(
        entity=entity,
        pos=centres.copy(),
        vel=np.zeros((p, 3)),
        mass=np.full(p, float(particle_mass)),
        inv_mass=np.full(p, 1.0 / particle_mass),
        springs=pairs,
        rest=length,
        stiffness=np.full(s, float(stiffness)),
        damping=np.full(s, float(damping)),
        binding=binding,
        offset=verts - centres[binding],
        radius=0.5 * float(particle_radius),
    )


def radius_for_count(vertices, target: int, iterations: int = 30) -> float:
    """Bisect the clustering radius so the particle count lands near ``target``."""
    verts = np.asarray(vertices, dtype=np.float64)
    lo, hi = 1e-6, float(np.ptp(verts, axis=0).max()) + 1e-6
    best, best_err = hi, None
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        count = len(cluster_vertices(verts, mid)[0])
        err = abs(count - target)
        if best_err is None or err < best_err:
            best, best_err = mid, err
        if count > target:
            lo = mid
        else:
            hi = mid
        if err == 0:
            break
    return best


def sphere_shell(n: int, radius: float = 0.5, centre=(0.0, 0.0, 0.0), jitter: float = 0.0, seed: int = 0) -> np.ndarray:
    """Fibonacci-lattice points on a sphere, a stand-in for a scanned mesh."""
    i = np.arange(n) + 0.5
    phi = np.arccos(1.0 - 2.0 * i / n)
    theta = np.pi * (1.0 + 5.0 ** 0.5) * i
    pts = np.stack([np.cos(theta) * np.sin(phi), np.cos(phi), np.sin(theta) * np.sin(phi)], axis=1)
    r = radius
    if jitter:
        r = radius * (1.0 + jitter * np.random.default_rng(seed).uniform(-1, 1, size=(n, 1)))
    return pts * r + np.asarray(centre)


def spring_forces(sb: SoftBody) -> np.ndarray:
    """Per-particle spring force, (P, 3)."""
    f = np.zeros_like(sb.pos)
    if not len(sb.springs):
        return f
    i, j = sb.springs[:, 0], sb.springs[:, 1]
    d = sb.pos[j] - sb.pos[i]
    length = np.linalg.norm(d, axis=1)
    u = d / np.where(length > 1e-12, length, 1.0)[:, None]
    rel = np.einsum("ij,ij->i", sb.vel[j] - sb.vel[i], u)
    mag = sb.stiffness * (length - sb.rest) + sb.damping * rel  # pulls i toward j when stretched
    fij = mag[:, None] * u
    p = len(sb.pos)
    for axis in range(3):
        f[:, axis] += np.bincount(i, weights=fij[:, axis], minlength=p)
        f[:, axis] -= np.bincount(j, weights=fij[:, axis], minlength=p)
    return f


@njit(cache=True)
def _push_out(pos, vel, inv_mass, radius, rows, wpos, wvel, shape, wrad, whalf):
    """One-way contact: particles are moved out of rigid shapes; rigid bodies are unaffected."""
    for k in range(pos.shape[0]):
        if inv_mass[k] == 0.0:
            continue
        for r in rows:
            s, nx, ny, nz = kernels.shape_separation(wpos[r], shape[r], wrad[r], whalf[r],
                                                     pos[k], kernels.SHAPE_SPHERE, radius, whalf[r])
            if s >= 0.0:
                continue
            pos[k, 0] -= s * nx
            pos[k, 1] -= s * ny
            pos[k, 2] -= s * nz
            vn = (vel[k, 0] - wvel[r, 0]) * nx + (vel[k, 1] - wvel[r, 1]) * ny + (vel[k, 2] - wvel[r, 2]) * nz
            if vn < 0.0:
                vel[k, 0] -= vn * nx
                vel[k, 1] -= vn * ny
                vel[k, 2] -= vn * nz


@njit(cache=True)
def _substeps(pos, vel, inv_mass, springs, rest, stiffness, damping, gx, gy, gz, drag, dt, substeps,
              radius, rows, wpos, wvel, shape, wrad, whalf):
    p = pos.shape[0]
    h = dt / substeps
    force = np.zeros((p, 3))
    for _ in range(substeps):
        force[:] = 0.0
        for s in range(springs.shape[0]):
            i = springs[s, 0]
            j = springs[s, 1]
            dx = pos[j, 0] - pos[i, 0]
            dy = pos[j, 1] - pos[i, 1]
            dz = pos[j, 2] - pos[i, 2]
            length = np.sqrt(dx * dx + dy * dy + dz * dz)
            if length < 1e-12:
                continue
            ux = dx / length
            uy = dy / length
            uz = dz / length
            rel = (vel[j, 0] - vel[i, 0]) * ux + (vel[j, 1] - vel[i, 1]) * uy + (vel[j, 2] - vel[i, 2]) * uz
            mag = stiffness[s] * (length - rest[s]) + damping[s] * rel
            force[i, 0] += mag * ux
            force[i, 1] += mag * uy
            force[i, 2] += mag * uz
            force[j, 0] -= mag * ux
            force[j, 1] -= mag * uy
            force[j, 2] -= mag * uz
        keep = max(0.0, 1.0 - drag * h)
        for k in range(p):
            w = inv_mass[k]
            if w == 0.0:
                vel[k, 0] = 0.0
                vel[k, 1] = 0.0
                vel[k, 2] = 0.0
                continue
            vel[k, 0] = (vel[k, 0] + (force[k, 0] * w + gx) * h) * keep
            vel[k, 1] = (vel[k, 1] + (force[k, 1] * w + gy) * h) * keep
            vel[k, 2] = (vel[k, 2] + (force[k, 2] * w + gz) * h) * keep
            pos[k, 0] += vel[k, 0] * h
            pos[k, 1] += vel[k, 1] * h
            pos[k, 2] += vel[k, 2] * h
        if rows.shape[0]:
            _push_out(pos, vel, inv_mass, radius, rows, wpos, wvel, shape, wrad, whalf)


def step_softbody(sb: SoftBody, world=None, dt: float = 0.02, substeps: int = 10):
    g = world.gravity if (world is not None and sb.use_gravity) else np.zeros(3)
    rows = _EMPTY_ROWS
    wpos = wvel = whalf = _EMPTY3
    shape = _EMPTY_SHAPE
    wrad = _EMPTY1
    if world is not None and len(world.ids):
        # rigid rows whose bounds overlap the softbody's bounds, padded by one step of travel
        reach = sb.radius + float(np.abs(sb.vel).max(initial=0.0)) * dt
        lo = sb.pos.min(axis=0) - reach
        hi = sb.pos.max(axis=0) + reach
        extent = np.where(world.shape == kernels.SHAPE_SPHERE, world.radius, 0.0)[:, None] + world.half
        near = ((world.shape != kernels.SHAPE_NONE) & ~world.trigger
                & ((world.pos + extent) >= lo).all(axis=1) & ((world.pos - extent) <= hi).all(axis=1))
        rows = np.nonzero(near)[0].astype(np.int64)
        wpos, wvel, shape, wrad, whalf = world.pos, world.vel, world.shape, world.radius, world.half
    _substeps(sb.pos, sb.vel, sb.inv_mass, sb.springs, sb.rest, sb.stiffness, sb.damping,
              float(g[0]), float(g[1]), float(g[2]), float(sb.drag), float(dt), int(substeps),
              float(sb.radius), rows, wpos, wvel, shape, wrad, whalf)


def skin_vertices(sb: SoftBody) -> np.ndarray:
    return sb.pos[sb.binding] + sb.offset


def kinetic_energy(sb: SoftBody) -> float:
    return 0.5 * float(np.sum(sb.mass * np.einsum("ij,ij->i", sb.vel, sb.vel)))
