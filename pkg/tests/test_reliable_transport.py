import time

import pytest

from splitphys.protocol.reliable import (
    CH_ACK,
    CH_RELIABLE,
    Connection,
    ConnectionDead,
    decode_envelope,
    encode_envelope,
)
from splitphys.transport import BandwidthMeter, SimulatedLink, SimulatedNetwork, UdpEndpoint


def run_pair(link: SimulatedLink, messages, reliable=True, horizon=120.0, step=0.01):
    """Push ``messages`` from a to b over ``link``; returns (delivered payloads, sender connection)."""
    net = SimulatedNetwork(link)
    ea, eb = net.endpoint("a"), net.endpoint("b")
    ca, cb = Connection(), Connection()
    got = []
    t = 0.0
    for m in messages:
        if reliable:
            for d in ca.reliable_send(m, t):
                ea.send("b", d, t)
        else:
            ea.send("b", ca.unreliable(m), t)
    while t < horizon:
        for _, d in eb.poll_recv(t):
            payloads, replies = cb.receive(d, t)
            got.extend(payloads)
            for r in replies:
                eb.send("a", r, t)
        for _, d in ea.poll_recv(t):
            _, replies = ca.receive(d, t)
            for r in replies:
                ea.send("b", r, t)
        for d in ca.retransmit_due(t):
            ea.send("b", d, t)
        if reliable and ca.idle and len(got) == len(messages):
            break
        t += step
    return got, ca


@pytest.mark.parametrize("loss,seed", [(0.5, 1), (0.5, 2), (0.2, 3)])
def test_reliable_exactly_once_in_order_under_loss(loss, seed):
    msgs = [f"m{i}".encode() for i in range(100)]
    got, ca = run_pair(SimulatedLink(10, 5, loss, seed), msgs)
    assert got == msgs
    assert not ca.dead and ca.retransmissions > 0


def test_unreliable_tolerates_loss():
    msgs = [bytes([i]) for i in range(200)]
    got, _ = run_pair(SimulatedLink(10, 0, 0.5, 4), msgs, reliable=False, horizon=1.0)
    assert 0 < len(got) < 200
    assert set(got) <= set(msgs)


def test_large_message_fragments_and_reassembles():
    big = bytes(range(256)) * 40
    got, _ = run_pair(SimulatedLink(5, 2, 0.3, 5), [b"a", big, b"z"])
    assert got == [b"a", big, b"z"]


def test_duplicates_are_acked_but_not_redelivered():
    a, b = Connection(), Connection()
    d = a.reliable_send(b"x", 0.0)[0]
    assert b.receive(d, 0.0)[0] == [b"x"]
    payloads, replies = b.receive(d, 0.1)
    assert payloads == [] and decode_envelope(replies[0])[:2] == (CH_ACK, 1)
    assert b.duplicates == 1


def test_window_limits_in_flight_and_backlog_drains():
    a = Connection(window=4)
    sent = []
    for i in range(10):
        sent += a.reliable_send(bytes([i]), 0.0)
    assert len(sent) == 4 and len(a.backlog) == 6
    more = a.on_ack(1, 0.01)
    assert len(more) == 1 and len(a.in_flight) == 4


def test_connection_dies_after_repeated_expiry():
    a = Connection()
    a.reliable_send(b"x", 0.0)
    t = 0.0
    while not a.dead and t < 60:
        t += 0.05
        a.retransmit_due(t)
    assert a.dead
    with pytest.raises(ConnectionDead):
        a.reliable_send(b"y", t)


def test_backoff_doubles_to_cap():
    a = Connection()
    a.reliable_send(b"x", 0.0)
    due = []
    t = 0.0
    while len(due) < 6:
        t = round(t + 0.001, 6)
        if a.retransmit_due(t):
            due.append(t)
    gaps = [b - a_ for a_, b in zip([0.0] + due, due)]
    # polled every millisecond, so each firing lands within one poll of its deadline
    assert all(abs(g - w) <= 0.0015 for g, w in zip(gaps, [0.1, 0.2, 0.4, 0.8, 1.0, 1.0]))


def test_envelope_rejects_short_and_unknown_channel():
    with pytest.raises(ValueError):
        decode_envelope(b"\x01\x00")
    with pytest.raises(ValueError):
        decode_envelope(encode_envelope(9, 1, b""))
    assert decode_envelope(encode_envelope(CH_RELIABLE, 7, b"hi")) == (CH_RELIABLE, 7, b"hi")


def test_simulated_network_is_deterministic_and_delays():
    def trace(seed):
        net = SimulatedNetwork(SimulatedLink(20, 5, 0.3, seed), trace=True)
        a = net.endpoint("a")
        net.endpoint("b")
        for i in range(200):
            a.send("b", bytes([i % 256]), i * 0.001)
        return [(e.sent, e.deliver_at) for e in net.trace]

    t1, t2 = trace(7), trace(7)
    assert t1 == t2
    assert t1 != trace(8)
    delays = [d - s for s, d in t1 if d is not None]
    assert all(0.015 - 1e-12 <= x <= 0.025 + 1e-12 for x in delays)
    lost = sum(d is None for _, d in t1) / len(t1)
    assert 0.2 < lost < 0.4


def test_delivery_waits_for_latency():
    net = SimulatedNetwork(SimulatedLink(10))
    a, b = net.endpoint("a"), net.endpoint("b")
    a.send("b", b"x", 1.0)
    assert b.poll_recv(1.0099) == []
    assert b.poll_recv(1.0101) == [("a", b"x")]


def test_link_validation():
    with pytest.raises(ValueError):
        SimulatedLink(loss=1.5)
    with pytest.raises(ValueError):
        SimulatedLink(latency_ms=-1)


def test_meter_calibration():
    m = BandwidthMeter(header_overhead=0)
    assert m.report(1.0, 10.0) == {}
    for i in range(10000):
        m.record("c", 10, i * 0.01)          # 1000 B/s for 100 s
    r = m.report(50.0, 100.0)
    assert abs(r["c"] - 1.0) <= 0.05
    wire = BandwidthMeter()
    wire.record("c", 100, 0.5)
    assert wire.totals(0, 1) == 128 and wire.totals(0, 1, on_wire=False) == 100
    assert list(wire.rows()) == [(0.0, "c", 100, 1)]
    with pytest.raises(ValueError):
        m.report(0.0)


def test_udp_loopback():
    a, b = UdpEndpoint(), UdpEndpoint()
    try:
        a.send(b.address, b"ping")
        deadline = time.monotonic() + 2.0
        got = []
        while not got and time.monotonic() < deadline:
            got = b.poll_recv()
            time.sleep(0.01)
        assert got and got[0][1] == b"ping"
    finally:
        a.close()
        b.close()
