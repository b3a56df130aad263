"""Scenario runners over the simulated network, in virtual time.

Each runner builds a scene, starts a physics server (or relay) and bot
clients on a ``SimulatedNetwork``, advances time in fixed ticks and returns a
report dataclass. Wall-clock is read only to time physics steps.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..client import ClientConfig, GHostClient, LocalScene, SceneEntity
from ..model import BodySpec, Box, ColliderSpec, Sphere
from ..physics import build_softbody, radius_for_count, sphere_shell
from ..protocol import codec
from ..protocol.delta import make_record
from ..protocol.reliable import ENVELOPE_SIZE
from ..relay import RelayConfig, RelayHost, RelayServer
from ..server import PhysServer, ServerConfig, Session
from ..transform import Transform, qfrom_axis_angle, vadd
from ..transport import UDP_IP_OVERHEAD, SimulatedLink, SimulatedNetwork
from . import reference

SCENARIOS = ("multiobject", "softbody", "ccu", "relay", "latency")
_PUBLISHED_SIZES = {
    "multiobject": reference.MULTIOBJECT_SIZES,
    "softbody": reference.SOFTBODY_PARTICLES,
    "relay": reference.RELAY_OBJECTS,
}


@dataclass
class ScenarioConfig:
    scenario: str
    n: int                       # objects, particles, users or relay objects
    latency_ms: float = 10.0
    jitter_ms: float = 0.0
    loss: float = 0.0
    duration: float = 10.0       # simulated seconds
    seed: int = 0
    warmup: float = 1.0          # seconds excluded from rate measurements
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}")
        if self.n < 0 or self.duration <= 0 or not 0 <= self.warmup < self.duration:
            raise ValueError("need n >= 0, duration > 0 and 0 <= warmup < duration")

    def at_published_size(self) -> bool:
        sizes = _PUBLISHED_SIZES.get(self.scenario)
        return sizes is None or self.n in sizes

    def link(self) -> SimulatedLink:
        return SimulatedLink(self.latency_ms, self.jitter_ms, self.loss, self.seed)

    def opt(self, key, default):
        return self.options.get(key, default)


def capacity(max_objects: int, per_user: int = reference.OBJECTS_PER_USER) -> int:
    """Users supported when each one needs ``per_user`` physics objects."""
    return max_objects // per_user


def _ticks(duration: float, dt: float) -> int:
    return int(round(duration / dt))


def _whole_seconds(start: float, end: float) -> tuple[float, float]:
    """Meter buckets are one second wide, so measure over whole buckets only."""
    lo, hi = float(math.ceil(start - 1e-9)), float(math.floor(end + 1e-9))
    if hi <= lo:
        raise ValueError("measurement window shorter than one second")
    return lo, hi


def _mean_step(session: Session, start_tick: int = 0) -> tuple[float, float]:
    steps = np.array([m["step_ms"] for m in session.metrics if m["tick"] > start_tick])
    if not len(steps):
        return 0.0, 0.0
    return float(steps.mean()), float(np.percentile(steps, 95))


def _init_session(net: SimulatedNetwork, scene: LocalScene, server_cfg: ServerConfig,
                  client_cfg: Optional[ClientConfig] = None, dt: float = 0.02):
    """Start a server and one initializing client; run until the scene is live."""
    srv = PhysServer(net.endpoint("phys"), config=server_cfg)
    client = GHostClient(net.endpoint("client-1"), "phys", scene, client_cfg)
    client.join(0.0)
    t = 0.0
    for k in range(2000):
        t = k * dt
        client.pump(t)
        srv.pump(t)
        if client.ready:
            break
    else:
        raise RuntimeError("session failed to initialize")
    return srv, client, t


# -- MultiObject -------------------------------------------------------------


@dataclass
class MultiObjectReport:
    n: int
    motion: str
    mean_step_ms: float
    p95_step_ms: float
    outbound_bytes_per_s: float
    outbound_mbps: float
    payload_mbps: float
    records_per_s: float
    client_updates_per_s: float
    reference_mbps: Optional[float]
    metrics: list = field(repr=False, default_factory=list)


def multiobject_scene(n: int, seed: int = 0, spacing: float = 0.6, motion: str = "bounce") -> tuple[LocalScene, float]:
    """Boxes and spheres on a jittered grid inside a closed arena sized to keep density fixed."""
    rng = random.Random(seed)
    per_side = max(1, math.ceil(n ** (1.0 / 3.0)))
    side = per_side * spacing
    restitution = 1.0 if motion == "bounce" else 0.3
    ents = []
    wall = 0.5
    c = side / 2.0
    for name, pos, half in (
        ("floor", (c, -wall, c), (c + wall, wall, c + wall)),
        ("ceiling", (c, side + wall, c), (c + wall, wall, c + wall)),
        ("wall_x0", (-wall, c, c), (wall, c + wall, c + wall)),
        ("wall_x1", (side + wall, c, c), (wall, c + wall, c + wall)),
        ("wall_z0", (c, c, -wall), (c + wall, c + wall, wall)),
        ("wall_z1", (c, c, side + wall), (c + wall, c + wall, wall)),
    ):
        if motion != "bounce" and name == "ceiling":
            continue
        ents.append(SceneEntity(name, None, Transform(pos), collider=ColliderSpec(Box(half), False),
                                body=None))
    ents.append(SceneEntity("objects"))
    size = 0.1
    jit = (spacing - 2 * size) / 2.0 * 0.9
    for i in range(n):
        ix, iy, iz = i % per_side, (i // per_side) % per_side, i // (per_side * per_side)
        p = tuple((k + 0.5) * spacing + rng.uniform(-jit, jit) for k in (ix, iy, iz))
        shape = Sphere(size) if i % 2 == 0 else Box((size, size, size))
        ents.append(SceneEntity(f"obj_{i}", "objects", Transform(p),
                                body=BodySpec(1.0, False, 0.0, restitution), collider=ColliderSpec(shape)))
    return LocalScene(ents), side


def run_multiobject(cfg: ScenarioConfig) -> MultiObjectReport:
    motion = cfg.opt("motion", "bounce")
    speed = cfg.opt("speed", 1.0)
    dt = cfg.opt("dt", 0.02)
    scene, _ = multiobject_scene(cfg.n, cfg.seed, motion=motion)
    gravity = (0.0, 0.0, 0.0) if motion == "bounce" else (0.0, -9.81, 0.0)
    net = SimulatedNetwork(cfg.link())
    srv, client, t0 = _init_session(net, scene, ServerConfig(dt=dt, gravity=gravity))
    world = srv.session.world
    ids = [client.controller.entity_id(f"obj_{i}") for i in range(cfg.n)]
    if motion == "bounce":
        rng = np.random.default_rng(cfg.seed)
        for i, e in enumerate(ids):
            d = rng.normal(size=3)
            world.set_velocity(e, tuple(d / np.linalg.norm(d) * speed * rng.uniform(0.5, 1.5)))
            if i % 2 == 0:
                world.set_angular_velocity(e, tuple(rng.normal(size=3) * 2.0))
    start_tick = srv.session.tick
    update_times = []
    client.update_listeners.append(lambda e, now, tick: update_times.append(now))
    steps = _ticks(cfg.duration, dt)
    for k in range(1, steps + 1):
        t = t0 + k * dt
        client.pump(t)
        srv.tick(t)
    lo, hi = _whole_seconds(t0 + cfg.warmup, t0 + steps * dt)
    window = hi - lo
    wire = srv.meter.totals(lo, hi, "client-1") / window
    raw = srv.meter.totals(lo, hi, "client-1", on_wire=False) / window
    recs = sum(m["records_sent"] for m in srv.session.metrics if lo <= m["tick"] * dt < hi)
    mean_ms, p95_ms = _mean_step(srv.session, start_tick)
    return MultiObjectReport(
        n=cfg.n, motion=motion, mean_step_ms=mean_ms, p95_step_ms=p95_ms,
        outbound_bytes_per_s=wire, outbound_mbps=wire * 8 / 1e6, payload_mbps=raw * 8 / 1e6,
        records_per_s=recs / window, client_updates_per_s=sum(lo <= u < hi for u in update_times) / window,
        reference_mbps=reference.THROUGHPUT_MBPS.get(f"Obj_{cfg.n}"),
        metrics=list(srv.session.metrics),
    )


# -- Softbody ----------------------------------------------------------------


@dataclass
class SoftbodyReport:
    particles: int
    requested: int
    springs: int
    mean_step_ms: float
    p95_step_ms: float
    particle_stream_mbps: float
    energy_windows: list
    energy_decays: bool
    reference_mbps: Optional[float]
    reference_label: Optional[str]


def make_softbody(particles: int, seed: int = 0, centre=(0.0, 0.6, 0.0), radius: float = 0.5,
                  total_mass: float = 1.0):
    verts = sphere_shell(max(4 * particles, 64), radius, centre, jitter=0.02, seed=seed)
    r = radius_for_count(verts, particles)
    mass = total_mass / particles
    sb = build_softbody(verts, r, 2.2 * r, stiffness=1e4 * mass, damping=5.0 * mass, particle_mass=mass)
    sb.use_gravity = True
    sb.drag = 0.5
    base = sb.pos[:, 1].min()
    height = np.ptp(sb.pos[:, 1])
    sb.pin(np.nonzero(sb.pos[:, 1] < base + 0.1 * height)[0])
    return sb


def run_softbody(cfg: ScenarioConfig) -> SoftbodyReport:
    dt = cfg.opt("dt", 0.02)
    poke_until = cfg.opt("poke_until", cfg.duration / 2.0)
    window = cfg.opt("energy_window", 0.5)
    scene = LocalScene([
        SceneEntity("floor", None, Transform((0.0, -0.5, 0.0)), collider=ColliderSpec(Box((3.0, 0.5, 3.0)))),
        SceneEntity("poker", None, Transform((0.0, 0.6, 1.0)), body=BodySpec(2.0, False, 1.0, 0.0),
                    collider=ColliderSpec(Sphere(0.1))),
    ])
    net = SimulatedNetwork(cfg.link())
    srv, client, t0 = _init_session(net, scene, ServerConfig(dt=dt))
    sess = srv.session
    sb = make_softbody(cfg.n, cfg.seed)
    sess.add_softbody(sb)
    poker = client.controller.entity_id("poker")
    start_tick = sess.tick
    steps = _ticks(cfg.duration, dt)
    energy = []
    sb_type = codec.MSG_SOFTBODY_PARTICLES
    sb_bytes0 = None
    for k in range(1, steps + 1):
        t = t0 + k * dt
        phase = t - t0
        if phase < poke_until:
            # push into the shell for a second, then back out
            depth = 0.25 if int(phase) % 2 == 0 else -0.2
            sess.world.apply_move_to_transform(poker, Transform((0.0, 0.6, 0.5 - depth)))
        elif phase - dt < poke_until:
            sess.world.apply_move_to_transform(poker, Transform((0.0, 0.6, 1.5)))
        client.pump(t)
        if sb_bytes0 is None and phase >= cfg.warmup:
            sb_bytes0 = client.wire_bytes_by_type.get(sb_type, 0)
        srv.tick(t)
        if phase >= poke_until + 1.0:
            energy.append(sum(0.5 * float(np.sum(s.mass * np.einsum("ij,ij->i", s.vel, s.vel)))
                              for s in sess.world.softbodies.values()))
    end = t0 + steps * dt
    span = end - (t0 + cfg.warmup)
    sb_bytes = client.wire_bytes_by_type.get(sb_type, 0) - (sb_bytes0 or 0)
    per = max(1, int(round(window / dt)))
    windows = [max(energy[i:i + per]) for i in range(0, len(energy) - per + 1, per)]
    decays = all(b <= a * (1.0 + 1e-9) + 1e-15 for a, b in zip(windows, windows[1:])) and len(windows) >= 2
    mean_ms, p95_ms = _mean_step(sess, start_tick)
    label = {500: "Bunny_1", 1500: "Bunny_3"}.get(cfg.n)
    return SoftbodyReport(
        particles=sb.particle_count, requested=cfg.n, springs=len(sb.springs),
        mean_step_ms=mean_ms, p95_step_ms=p95_ms,
        particle_stream_mbps=sb_bytes * 8 / span / 1e6,
        energy_windows=windows, energy_decays=decays,
        reference_mbps=reference.THROUGHPUT_MBPS.get(label) if label else None, reference_label=label,
    )


# -- Relay -------------------------------------------------------------------


@dataclass
class RelayReport:
    objects: int
    subscribers: int
    rate: float
    kbps_on_wire: float          # per subscriber, mean over subscribers
    kbps_payload: float
    kbps_per_entity_baseline: float
    grouping_saving: float       # fraction saved vs one message per record
    reference_kbps: Optional[float]
    commercial_kbps: Optional[float]
    converged: Optional[bool]    # set when the host freezes mid-run


def relay_poses(n: int, t: float, spacing: float = 1.5) -> dict[int, Transform]:
    """Cubes circling their grid cell while spinning, so every field changes every interval."""
    side = max(1, math.ceil(math.sqrt(n)))
    out = {}
    for i in range(n):
        cx, cz = (i % side) * spacing, (i // side) * spacing
        a = t + i * 0.37
        out[i + 1] = Transform((cx + 0.5 * math.cos(a), 1.0, cz + 0.5 * math.sin(a)),
                               qfrom_axis_angle((0.0, 1.0, 0.0), 1.3 * t + i))
    return out


def per_entity_baseline(records, overhead: int = ENVELOPE_SIZE + UDP_IP_OVERHEAD) -> int:
    """Bytes needed to send each record in its own message."""
    return sum(len(codec.encode_group([r], 0)[0]) + overhead for r in records)


def _subscribers_match(clients, poses: dict, rcfg: RelayConfig) -> bool:
    for c in clients:
        for e, p in poses.items():
            try:
                got = c.latest_transform(e)
            except LookupError:
                return False
            if not got.is_close(p, rcfg.pos_eps + 1e-6, rcfg.rot_eps + 1e-6):
                return False
    return True


def run_relay(cfg: ScenarioConfig) -> RelayReport:
    rate = cfg.opt("rate", 12.0)
    subs = cfg.opt("subscribers", 2)
    freeze_at = cfg.opt("freeze_at", None)
    net = SimulatedNetwork(cfg.link())
    relay = RelayServer(net.endpoint("relay"), RelayConfig(rate=rate))
    host = RelayHost(net.endpoint("host"), "relay")
    clients = [GHostClient(net.endpoint(f"sub-{i}"), "relay") for i in range(subs)]
    interval = 1.0 / rate
    host.join(0.0)
    for c in clients:
        c.join(0.0)
    # the relay forwards half an interval after each host publish
    n_int = int(round(cfg.duration * rate))
    converged = None
    for k in range(n_int + 1):
        t = k * interval
        host.pump(t)
        frozen = freeze_at is not None and t >= freeze_at
        poses = relay_poses(cfg.n, freeze_at if frozen else t)
        if k > 0:
            host.publish(poses, t)
        for c in clients:
            c.pump(t)
        if frozen and converged is None and t >= freeze_at + 2 * interval - 1e-9:
            # two relay sends have happened since the last host movement
            converged = _subscribers_match(clients, poses, relay.session.config)
        relay.tick(t + 0.5 * interval)
        for c in clients:
            c.pump(t + 0.5 * interval)
    # rates are measured while objects move
    lo, hi = _whole_seconds(cfg.warmup, min(n_int * interval, freeze_at if freeze_at is not None else math.inf))
    wire = relay.report(hi - lo, hi)
    raw = relay.report(hi - lo, hi, on_wire=False)
    sub_ids = [c.player for c in clients]
    kb_wire = float(np.mean([wire.get(p, 0.0) for p in sub_ids])) if sub_ids else 0.0
    kb_raw = float(np.mean([raw.get(p, 0.0) for p in sub_ids])) if sub_ids else 0.0
    recs = [make_record(e, 0, codec.MASK_BOTH, p) for e, p in relay_poses(cfg.n, 0.0).items()]
    baseline = per_entity_baseline(recs) * rate / 1000.0
    grouped_once = sum(len(m) + ENVELOPE_SIZE + UDP_IP_OVERHEAD for m in codec.encode_group(recs, 0)) * rate / 1000.0
    ref = reference.RELAY_KBPS.get(cfg.n)
    return RelayReport(
        objects=cfg.n, subscribers=subs, rate=rate, kbps_on_wire=kb_wire, kbps_payload=kb_raw,
        kbps_per_entity_baseline=baseline,
        grouping_saving=1.0 - grouped_once / baseline if baseline else 0.0,
        reference_kbps=ref[0] if ref else None, commercial_kbps=ref[1] if ref else None,
        converged=bool(converged) if freeze_at is not None else None,
    )


# -- CCU ---------------------------------------------------------------------


@dataclass
class CCUReport:
    users: int
    joined: int
    session_objects: int
    avatar_objects: int
    seconds: list
    outbound_kbps: list          # server outbound per second, all connections, on wire
    last_join_time: float
    rising_during_joins: bool
    stable_after: bool
    stable_band: float           # max relative deviation from the post-join mean
    max_divergence: float        # metres
    max_divergence_ratio: float  # worst error / bound
    capacity_users: int


class _Walker:
    """Seeded random-waypoint walk around a fixed anchor."""

    def __init__(self, anchor, rng: random.Random, speed: float, radius: float, refresh: float):
        self.anchor = anchor
        self.pos = anchor
        self.rng = rng
        self.speed = speed
        self.radius = radius
        self.refresh = refresh
        self.next_refresh = 0.0
        self.waypoint = anchor
        self.yaw = 0.0

    def step(self, t: float, dt: float):
        if t >= self.next_refresh:
            a = self.rng.uniform(0, 2 * math.pi)
            r = self.radius * math.sqrt(self.rng.random())
            self.waypoint = (self.anchor[0] + r * math.cos(a), self.anchor[1], self.anchor[2] + r * math.sin(a))
            self.next_refresh = t + self.refresh
        d = [w - p for w, p in zip(self.waypoint, self.pos)]
        dist = math.sqrt(sum(c * c for c in d))
        stepd = self.speed * dt
        if dist <= stepd:
            self.pos = self.waypoint
        else:
            self.pos = tuple(p + c / dist * stepd for p, c in zip(self.pos, d))
        self.yaw += 0.5 * dt
        return self.pos


def ccu_scene() -> LocalScene:
    return LocalScene([
        SceneEntity("floor", None, Transform((16.0, -0.5, 8.0)), collider=ColliderSpec(Box((24.0, 0.5, 16.0)))),
        SceneEntity("props"),
        SceneEntity("pillar_a", "props", Transform((-3.0, 1.0, -3.0)), collider=ColliderSpec(Box((0.3, 1.0, 0.3)))),
        SceneEntity("pillar_b", "props", Transform((35.0, 1.0, -3.0)), collider=ColliderSpec(Box((0.3, 1.0, 0.3)))),
        SceneEntity("crate", "props", Transform((-3.0, 0.25, 5.0)), body=BodySpec(5.0), collider=ColliderSpec(Box((0.25, 0.25, 0.25)))),
    ])


def run_ccu(cfg: ScenarioConfig) -> CCUReport:
    dt = cfg.opt("dt", 0.02)
    join_rate = cfg.opt("join_rate", 1.0)
    frame_every = cfg.opt("frame_every", 2)          # bot frame = this many physics ticks
    n_obs = cfg.opt("observers", 4)
    walk_speed = cfg.opt("walk_speed", 1.0)
    settle = cfg.opt("settle", 3.0)
    users = cfg.n
    net = SimulatedNetwork(cfg.link())
    scfg = ServerConfig(dt=dt, spawn_interactable=True)
    srv = PhysServer(net.endpoint("phys"), config=scfg)
    sess = srv.session
    observers = set(np.linspace(0, users - 1, min(n_obs, users)).round().astype(int).tolist()) if users else set()
    bots: list[GHostClient] = []
    walkers: dict[int, _Walker] = {}
    rng = random.Random(cfg.seed)
    first_join = 0.1
    join_times = [first_join + i / join_rate for i in range(users)]
    steps = _ticks(cfg.duration, dt)
    latency = cfg.latency_ms / 1000.0
    v_max = 0.0
    prev_pos: dict[int, tuple] = {}
    max_err = 0.0
    max_ratio = 0.0
    pending = 0
    for k in range(steps + 1):
        t = k * dt
        while pending < users and join_times[pending] <= t + 1e-9:
            i = pending
            bot = GHostClient(net.endpoint(f"bot-{i}"), "phys", ccu_scene() if i == 0 else None,
                              decode_updates=i in observers)
            bot.join(t)
            bots.append(bot)
            pending += 1
        frame = k % frame_every == 0
        for i, bot in enumerate(bots):
            if not frame and i not in observers:
                continue
            bot.pump(t)
            if frame and bot.ready and bot.avatar is not None:
                w = walkers.get(i)
                if w is None:
                    base = sess.spawn_pose(bot.player)
                    w = walkers[i] = _Walker(vadd(base, (0.0, 1.6, 0.0)), random.Random(rng.random()),
                                             walk_speed, 0.5, 1.0)
                    w.next_refresh = t
                head = w.step(t, dt * frame_every)
                rot = qfrom_axis_angle((0.0, 1.0, 0.0), w.yaw)
                bot.drive_avatar(Transform(head, rot), Transform(vadd(head, (-0.3, -0.4, 0.0)), rot),
                                 Transform(vadd(head, (0.3, -0.4, 0.0)), rot), t)
                if bot.avatar.extra:
                    bot.move_to(bot.avatar.extra, Transform(vadd(head, (0.0, -0.7, 0.5)), rot), t)
        srv.tick(t)
        if not sess.initialized:
            continue
        # divergence of observer views vs the authoritative state, critical entities only
        crit = [e for av in sess.players.values() for e in av.entities]
        w = sess.world
        for e in crit:
            r = w.index.get(e)
            if r is None:
                continue
            p = tuple(w.pos[r])
            q = prev_pos.get(e)
            if q is not None:
                v_max = max(v_max, math.dist(p, q) / dt)
            prev_pos[e] = p
        bound = v_max * (2 * dt + latency + frame_every * dt + 2 * dt) + scfg.pos_eps
        for i in observers:
            if i >= len(bots) or not bots[i].ready:
                continue
            reg = bots[i].registry
            for e in crit:
                gro = reg.get(e)
                if gro is None or gro.latest is None or e not in w.index:
                    continue
                err = math.dist(gro.latest.position, tuple(w.pos[w.index[e]]))
                max_err = max(max_err, err)
                if bound > 0:
                    max_ratio = max(max_ratio, err / bound)
    end = steps * dt
    seconds = list(range(int(end)))
    kbps = [srv.meter.totals(s, s + 1) / 1000.0 for s in seconds]
    last_join = join_times[-1] if users else 0.0
    ramp = [v for s, v in zip(seconds, kbps) if first_join + 1.0 <= s and s + 1 <= last_join]
    rising = all(b >= a for a, b in zip(ramp, ramp[1:]))
    tail = [v for s, v in zip(seconds, kbps) if s >= last_join + settle]
    band = 0.0
    if tail:
        mean = float(np.mean(tail))
        band = max(abs(v - mean) / mean for v in tail) if mean > 0 else 0.0
    avatar_objs = sum(len(av.entities) for av in sess.players.values())
    return CCUReport(
        users=users, joined=len(sess.players), session_objects=len(sess.world.ids), avatar_objects=avatar_objs,
        seconds=seconds, outbound_kbps=kbps, last_join_time=last_join, rising_during_joins=rising,
        stable_after=bool(tail) and band <= 0.15, stable_band=band, max_divergence=max_err,
        max_divergence_ratio=max_ratio, capacity_users=capacity(avatar_objs),
    )
