"""End-to-end interaction latency between two users, in virtual time.

User B grabs an object and steps its target; user A watches it. The time from
B sampling the input to A's frame showing the change is measured and compared
with the sum of its five components: both render times, both network legs,
server processing, and the mean wait for the next server send.

The server ticks at twice ``interval`` and sends every critical entity each
tick, so a command arriving at a random phase waits ``interval`` on average.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from ..client import GHostClient, LocalScene, SceneEntity
from ..model import BodySpec, Box, ColliderSpec
from ..server import PhysServer, ServerConfig
from ..transform import Transform, vadd
from ..transport import SimulatedLink, SimulatedNetwork
from . import reference


@dataclass(frozen=True)
class LatencyBreakdown:
    render_a: float
    render_b: float
    net_a: float
    net_b: float
    phys: float
    interval: float

    @property
    def total(self) -> float:
        return self.render_a + self.render_b + self.net_a + self.net_b + self.phys + self.interval


@dataclass
class LatencyConfig:
    render_a: float = 11.0     # ms
    render_b: float = 11.0
    net_a: float = 10.0
    net_b: float = 10.0
    phys: float = 5.0
    interval: float = 10.4     # mean wait for the next send, half the send period
    duration: float = 20.0     # s of measurement
    step: float = 0.1          # m, target step applied by B
    period: float = 0.5        # s between target steps
    seed: int = 0

    @property
    def breakdown(self) -> LatencyBreakdown:
        return LatencyBreakdown(self.render_a, self.render_b, self.net_a, self.net_b, self.phys, self.interval)


PRESETS = {
    # frame times of a 72 Hz headset, a LAN-ish link and the default send cadence
    "reference": LatencyConfig(13.9, 13.9, 10.0, 10.0, 4.0, 10.4),
    "desk": LatencyConfig(11.0, 11.0, 10.0, 10.0, 5.0, 10.4),
    "fast": LatencyConfig(8.3, 8.3, 5.0, 5.0, 2.0, 8.0),
}


@dataclass
class LatencyReport:
    breakdown: LatencyBreakdown
    samples_ms: list = field(repr=False)
    measured_ms: float
    tick_ms: float
    reference_ms: float = reference.END_TO_END_LATENCY_MS

    @property
    def analytic_ms(self) -> float:
        return self.breakdown.total

    @property
    def error_ms(self) -> float:
        return self.measured_ms - self.analytic_ms


def latency_breakdown(cfg: LatencyConfig) -> LatencyReport:
    if min(cfg.render_a, cfg.render_b, cfg.interval) <= 0:
        raise ValueError("render times and interval must be positive to measure")
    ms = 1e-3
    dt = 2.0 * cfg.interval * ms
    net = SimulatedNetwork()
    net.set_link("a", "phys", SimulatedLink(cfg.net_a, seed=cfg.seed), both_ways=True)
    net.set_link("b", "phys", SimulatedLink(cfg.net_b, seed=cfg.seed + 1), both_ways=True)
    scfg = ServerConfig(dt=dt, gravity=(0.0, 0.0, 0.0), critical_rate=1.0 / dt)

    srv = PhysServer(net.endpoint("phys"), config=scfg, processing_delay=cfg.phys * ms)
    # player 2 spawns one spacing along x; park the object beside its right hand
    hand_b = vadd(srv.session.spawn_pose(2), (0.3, 1.2, 0.0))
    obj_pos = vadd(hand_b, (0.0, 0.0, 0.12))
    scene = LocalScene([SceneEntity("cup", None, Transform(obj_pos), body=BodySpec(0.3, False, 0.0, 0.0),
                                    collider=ColliderSpec(Box((0.04, 0.04, 0.04))), interactable=True)])
    a = GHostClient(net.endpoint("a"), "phys", scene)
    b = GHostClient(net.endpoint("b"), "phys")
    a.join(0.0)

    start = 2.0
    end = start + cfg.duration
    events = [(0.0, 0, "server"), (0.0, 1, "a"), (0.0, 2, "b")]
    period = {"server": dt, "a": cfg.render_a * ms, "b": cfg.render_b * ms}
    b_joined = False
    cup = None
    hand_pose = None
    last_step = -1
    pending = None          # (command time, A's x when commanded)
    samples = []
    while events:
        t, order, who = heapq.heappop(events)
        if t > end:
            break
        heapq.heappush(events, (t + period[who], order, who))
        if who == "server":
            srv.tick(t)
        elif who == "a":
            a.pump(t)
            if cup is None and a.ready:
                cup = a.controller.entity_id("cup")
            if pending is not None:
                x = a.latest_transform(cup).position[0]
                if abs(x - pending[1]) > 0.25 * cfg.step:
                    samples.append((t + cfg.render_a * ms - pending[0]) / ms)
                    pending = None
        else:
            if not b_joined and a.ready and t >= 0.5:
                b.join(t)
                b_joined = True
            b.pump(t)
            if not b.ready or cup is None:
                continue
            hand = b.avatar.right_hand
            if hand_pose is None:
                hand_pose = b.latest_transform(hand)
            it = b.interactors[hand]
            if it.target is None:
                if t < start - 0.5 and cup in it.hover:
                    b.interaction_update(hand, True, hand_pose, t + cfg.render_b * ms)
                else:
                    b.interaction_update(hand, False, hand_pose, t + cfg.render_b * ms)
                continue
            k = int(math.floor((t - start) / cfg.period)) if t >= start else -1
            pose = hand_pose
            if k >= 0 and k != last_step:
                last_step = k
                if pending is None:
                    pending = (t, a.latest_transform(cup).position[0])
            if k >= 0 and k % 2 == 0:
                pose = Transform(vadd(hand_pose.position, (cfg.step, 0.0, 0.0)), hand_pose.rotation)
            b.interaction_update(hand, True, pose, t + cfg.render_b * ms)
    if not samples:
        raise RuntimeError("no latency samples; the grab never took hold")
    return LatencyReport(cfg.breakdown, samples, float(np.mean(samples)), dt / ms)
