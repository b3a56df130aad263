import pytest

import oracles
from splitphys.bench import ScenarioConfig, run_relay
from splitphys.bench.scenarios import per_entity_baseline, relay_poses
from splitphys.protocol import codec
from splitphys.protocol.delta import make_record
from splitphys.relay import RelayConfig, RelaySession
from splitphys.transform import Transform


def _update(poses, tick=1):
    recs = tuple(make_record(e, 0, codec.MASK_BOTH, t) for e, t in sorted(poses.items()))
    return codec.GroupedUpdate(tick, recs)


def _decoded(outbox):
    return [(p, r, codec.decode_message(m)) for p, r, m in outbox]


def test_first_sighting_goes_out_reliably_then_deltas():
    s = RelaySession()
    host = s.on_join(True)
    sub = s.on_join(False)
    s.drain()
    s.on_host_update(host, _update({1: Transform((0, 0, 0)), 2: Transform((1, 0, 0))}))
    s.send_interval()
    out = _decoded(s.drain())
    assert [(p, r, type(m).__name__) for p, r, m in out] == [(sub, True, "Snapshot")]
    s.on_host_update(host, _update({1: Transform((0, 0.5, 0)), 2: Transform((1, 0, 0))}))
    s.send_interval()
    out = _decoded(s.drain())
    assert len(out) == 1 and not out[0][1]
    recs = out[0][2].records
    assert [(r.entity_id, r.mask) for r in recs] == [(1, codec.MASK_POSITION)]


def test_only_host_may_publish():
    s = RelaySession()
    s.on_join(True)
    sub = s.on_join(False)
    assert not s.on_host_update(sub, _update({1: Transform()}))
    assert s.rejected_updates == 1 and s.latest == {}


def test_late_subscriber_gets_forwarded_state():
    s = RelaySession()
    host = s.on_join(True)
    s.on_host_update(host, _update(relay_poses(5, 0.0)))
    s.send_interval()
    s.drain()
    late = s.on_join(False)
    out = _decoded(s.drain())
    snap = [m for p, r, m in out if isinstance(m, codec.Snapshot)][0]
    assert len(snap.entries) == 5 and all(p == late for p, _, _ in out)


def test_below_threshold_changes_are_held_back():
    cfg = RelayConfig(pos_eps=0.01)
    s = RelaySession(cfg)
    host = s.on_join(True)
    s.on_join(False)
    s.on_host_update(host, _update({1: Transform()}))
    s.send_interval()
    s.on_host_update(host, _update({1: Transform((0.005, 0, 0))}))
    assert s.send_interval() == []
    s.on_host_update(host, _update({1: Transform((0.011, 0, 0))}))
    assert len(s.send_interval()) == 1


def test_grouped_bytes_match_layout_arithmetic():
    s = RelaySession()
    host = s.on_join(True)
    s.on_join(False)
    s.on_host_update(host, _update(relay_poses(512, 0.0)))
    s.send_interval()
    s.on_host_update(host, _update(relay_poses(512, 0.1)))
    msgs = s.send_interval()
    assert len(msgs) == oracles.RELAY_512_MSGS
    assert sum(len(m) for m in msgs) == 512 * oracles.RECORD_SIZE_BOTH + len(msgs) * oracles.GROUP_HEADER


def test_grouping_beats_one_datagram_per_entity():
    recs = [make_record(e, 0, codec.MASK_BOTH, Transform()) for e in range(100)]
    assert per_entity_baseline(recs) == 100 * (oracles.RECORD_SIZE_BOTH + 7 + oracles.ENVELOPE + oracles.UDP_IP)


@pytest.mark.parametrize("n", [32, 128])
def test_relay_scenario_scales_and_converges(n):
    r = run_relay(ScenarioConfig("relay", n, duration=4.0, options={"freeze_at": 3.0}))
    msgs = -(-n // 34)
    expected = 12 * (n * 35 + msgs * (7 + 5 + 28)) / 1000
    # the rate window [1, 3) s lies before the freeze
    assert r.kbps_on_wire == pytest.approx(expected, rel=1e-9)
    assert r.converged is True
    assert r.grouping_saving > 0.4
