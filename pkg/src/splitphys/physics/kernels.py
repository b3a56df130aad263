"""Compiled inner loops for the contact pipeline.

Everything operates on row indices into the World's column arrays. Rows are
ordered by ascending EntityId, and every loop here walks rows or pairs in a
fixed order, so results are bit-reproducible.
"""

import numpy as np
from numba import njit

SHAPE_NONE = 0
SHAPE_SPHERE = 1
SHAPE_BOX = 2

_OFF = 1 << 20


@njit(cache=True)
def _pack(cx, cy, cz):
    return ((cx + _OFF) << 42) | ((cy + _OFF) << 21) | (cz + _OFF)


@njit(cache=True)
def _push(buf, count, i, j):
    if count == buf.shape[0]:
        grown = np.empty((buf.shape[0] * 2, 2), np.int64)
        grown[:count] = buf[:count]
        buf = grown
    buf[count, 0] = i
    buf[count, 1] = j
    return buf, count + 1


@njit(cache=True)
def _slot(key, mask):
    h = np.uint64(key) * np.uint64(0x9E3779B97F4A7C15)
    return np.int64((h >> np.uint64(32)) & np.uint64(mask))


@njit(cache=True)
def _cell_table(skeys):
    """Open-addressing map from cell key to its run [start, end) in ``skeys``."""
    ns = skeys.shape[0]
    size = 16
    while size < 2 * ns:
        size *= 2
    mask = size - 1
    tkey = np.full(size, -1, np.int64)
    tstart = np.zeros(size, np.int64)
    tend = np.zeros(size, np.int64)
    m = 0
    while m < ns:
        key = skeys[m]
        e = m + 1
        while e < ns and skeys[e] == key:
            e += 1
        h = _slot(key, mask)
        while tkey[h] != -1:
            h = (h + 1) & mask
        tkey[h] = key
        tstart[h] = m
        tend[h] = e
        m = e
    return tkey, tstart, tend, mask


@njit(cache=True)
def _find_cell(tkey, mask, key):
    h = _slot(key, mask)
    while tkey[h] != -1:
        if tkey[h] == key:
            return h
        h = (h + 1) & mask
    return -1


@njit(cache=True)
def _bounds_touch(pos, bound, i, j):
    dx = pos[j, 0] - pos[i, 0]
    dy = pos[j, 1] - pos[i, 1]
    dz = pos[j, 2] - pos[i, 2]
    r = bound[i] + bound[j]
    return dx * dx + dy * dy + dz * dz <= r * r


@njit(cache=True)
def grid_pairs(pos, bound, active, movable, cell):
    """Uniform-grid broadphase. Returns candidate row pairs (i < j), sorted.

    Rows whose bound exceeds half a cell are treated as large and tested
    against every active row directly.
    """
    n = pos.shape[0]
    buf = np.empty((max(16, 4 * n), 2), np.int64)
    count = 0

    small = np.zeros(n, np.bool_)
    ns = 0
    for i in range(n):
        if active[i] and bound[i] <= 0.5 * cell:
            small[i] = True
            ns += 1
    rows = np.empty(ns, np.int64)
    cells = np.empty((ns, 3), np.int64)
    keys = np.empty(ns, np.int64)
    k = 0
    for i in range(n):
        if small[i]:
            rows[k] = i
            cx = np.int64(np.floor(pos[i, 0] / cell))
            cy = np.int64(np.floor(pos[i, 1] / cell))
            cz = np.int64(np.floor(pos[i, 2] / cell))
            cells[k, 0] = cx
            cells[k, 1] = cy
            cells[k, 2] = cz
            keys[k] = _pack(cx, cy, cz)
            k += 1
    order = np.argsort(keys, kind="mergesort")
    skeys = keys[order]
    srows = rows[order]
    tkey, tstart, tend, tmask = _cell_table(skeys)

    # each unordered pair of cells is visited once: the own cell (later rows
    # only) plus the 13 neighbours that follow it in (dx, dy, dz) order
    inv = np.empty(ns, np.int64)
    for m in range(ns):
        inv[order[m]] = m
    for k in range(ns):
        i = rows[k]
        me = inv[k]
        for dx in range(-1, 2):
            for dy in range(-1, 2):
                for dz in range(-1, 2):
                    if dx < 0 or (dx == 0 and (dy < 0 or (dy == 0 and dz < 0))):
                        continue
                    own = dx == 0 and dy == 0 and dz == 0
                    key = _pack(cells[k, 0] + dx, cells[k, 1] + dy, cells[k, 2] + dz)
                    h = _find_cell(tkey, tmask, key)
                    if h < 0:
                        continue
                    first = me + 1 if own else tstart[h]
                    for m in range(first, tend[h]):
                        j = srows[m]
                        if not (movable[i] or movable[j]):
                            continue
                        if _bounds_touch(pos, bound, i, j):
                            if i < j:
                                buf, count = _push(buf, count, i, j)
                            else:
                                buf, count = _push(buf, count, j, i)

    for i in range(n):
        if not active[i] or small[i]:
            continue
        for j in range(n):
            if j == i or not active[j]:
                continue
            if not small[j] and j < i:
                continue
            if not (movable[i] or movable[j]):
                continue
            if _bounds_touch(pos, bound, i, j):
                if i < j:
                    buf, count = _push(buf, count, i, j)
                else:
                    buf, count = _push(buf, count, j, i)

    out = buf[:count]
    pkey = out[:, 0] * n + out[:, 1]
    return out[np.argsort(pkey, kind="mergesort")].copy()


@njit(cache=True)
def _box_sphere(c, h, s, r):
    """Separation and unit normal (box -> sphere) between an AABB and a sphere."""
    lx = s[0] - c[0]
    ly = s[1] - c[1]
    lz = s[2] - c[2]
    qx = min(max(lx, -h[0]), h[0])
    qy = min(max(ly, -h[1]), h[1])
    qz = min(max(lz, -h[2]), h[2])
    dx = lx - qx
    dy = ly - qy
    dz = lz - qz
    d2 = dx * dx + dy * dy + dz * dz
    if d2 > 1e-24:
        d = np.sqrt(d2)
        return d - r, dx / d, dy / d, dz / d
    # centre inside the box: leave through the nearest face
    px = h[0] - abs(lx)
    py = h[1] - abs(ly)
    pz = h[2] - abs(lz)
    if px <= py and px <= pz:
        return -px - r, (1.0 if lx >= 0 else -1.0), 0.0, 0.0
    if py <= pz:
        return -py - r, 0.0, (1.0 if ly >= 0 else -1.0), 0.0
    return -pz - r, 0.0, 0.0, (1.0 if lz >= 0 else -1.0)


@njit(cache=True)
def _sphere_sphere(a, ra, b, rb):
    dx = b[0] - a[0]
    dy = b[1] - a[1]
    dz = b[2] - a[2]
    d = np.sqrt(dx * dx + dy * dy + dz * dz)
    if d < 1e-12:
        return -(ra + rb), 0.0, 1.0, 0.0
    return d - ra - rb, dx / d, dy / d, dz / d


@njit(cache=True)
def _box_box(a, ha, b, hb):
    best = -np.inf
    axis = 0
    sign = 1.0
    for k in range(3):
        d = b[k] - a[k]
        gap = abs(d) - (ha[k] + hb[k])
        if gap > best:
            best = gap
            axis = k
            sign = 1.0 if d >= 0 else -1.0
    nx = sign if axis == 0 else 0.0
    ny = sign if axis == 1 else 0.0
    nz = sign if axis == 2 else 0.0
    return best, nx, ny, nz


@njit(cache=True)
def shape_separation(pa, sa, ra, ha, pb, sb, rb, hb):
    """Signed separation (negative = penetration) and normal pointing a -> b."""
    if sa == SHAPE_SPHERE and sb == SHAPE_SPHERE:
        return _sphere_sphere(pa, ra, pb, rb)
    if sa == SHAPE_BOX and sb == SHAPE_BOX:
        return _box_box(pa, ha, pb, hb)
    if sa == SHAPE_BOX:
        return _box_sphere(pa, ha, pb, rb)
    s, nx, ny, nz = _box_sphere(pb, hb, pa, ra)
    return s, -nx, -ny, -nz


@njit(cache=True)
def narrowphase(pairs, pos, shape, radius, half, sensor, sep, normal, sensor_sep):
    """Fill ``sep``/``normal`` (solid shapes) and ``sensor_sep`` for each pair."""
    for c in range(pairs.shape[0]):
        i = pairs[c, 0]
        j = pairs[c, 1]
        if shape[i] != SHAPE_NONE and shape[j] != SHAPE_NONE:
            s, nx, ny, nz = shape_separation(pos[i], shape[i], radius[i], half[i], pos[j], shape[j], radius[j], half[j])
            sep[c] = s
            normal[c, 0] = nx
            normal[c, 1] = ny
            normal[c, 2] = nz
        else:
            sep[c] = np.inf
            normal[c, 0] = 0.0
            normal[c, 1] = 1.0
            normal[c, 2] = 0.0
        ss = np.inf
        if sensor[i] > 0.0 and shape[j] != SHAPE_NONE:
            s, _, _, _ = shape_separation(pos[i], SHAPE_SPHERE, sensor[i], half[i], pos[j], shape[j], radius[j], half[j])
            ss = min(ss, s)
        if sensor[j] > 0.0 and shape[i] != SHAPE_NONE:
            s, _, _, _ = shape_separation(pos[j], SHAPE_SPHERE, sensor[j], half[j], pos[i], shape[i], radius[i], half[i])
            ss = min(ss, s)
        sensor_sep[c] = ss


@njit(cache=True)
def solve_velocities(pairs, sep, normal, solid, vel, inv_mass, restitution, dt, iterations, bounce_threshold):
    """Sequential impulses with accumulated clamping and speculative margins."""
    m = pairs.shape[0]
    target = np.zeros(m)
    acc = np.zeros(m)
    for c in range(m):
        if not solid[c]:
            continue
        i = pairs[c, 0]
        j = pairs[c, 1]
        vn = 0.0
        for k in range(3):
            vn += (vel[j, k] - vel[i, k]) * normal[c, k]
        t = -sep[c] / dt if sep[c] > 0.0 else 0.0
        e = 0.5 * (restitution[i] + restitution[j])
        if e > 0.0 and vn < -bounce_threshold and vn < t:
            t = max(t, -e * vn)
        target[c] = t
    for _ in range(iterations):
        for c in range(m):
            if not solid[c]:
                continue
            i = pairs[c, 0]
            j = pairs[c, 1]
            wi = inv_mass[i]
            wj = inv_mass[j]
            w = wi + wj
            if w <= 0.0:
                continue
            vn = 0.0
            for k in range(3):
                vn += (vel[j, k] - vel[i, k]) * normal[c, k]
            dj = (target[c] - vn) / w
            new = max(acc[c] + dj, 0.0)
            dj = new - acc[c]
            acc[c] = new
            for k in range(3):
                vel[i, k] -= dj * wi * normal[c, k]
                vel[j, k] += dj * wj * normal[c, k]
    return acc


@njit(cache=True)
def correct_positions(pairs, sep, normal, solid, pos, inv_mass, slop, beta):
    for c in range(pairs.shape[0]):
        if not solid[c] or sep[c] >= -slop:
            continue
        i = pairs[c, 0]
        j = pairs[c, 1]
        w = inv_mass[i] + inv_mass[j]
        if w <= 0.0:
            continue
        corr = beta * (-sep[c] - slop) / w
        for k in range(3):
            pos[i, k] -= corr * inv_mass[i] * normal[c, k]
            pos[j, k] += corr * inv_mass[j] * normal[c, k]
