import os
import subprocess
import sys

import pytest

from mpip.netsim.core import Simulator, component_rng
from mpip.netsim.link import Channel, LinkParams
from mpip.netsim.nat import NatBox
from mpip.packet import ACK, SYN, SimPacket
from mpip.scenario import parse_scenario
from mpip.netsim.runner import run

from conftest import network, two_path


def pkt(size=1000, seq=0, proto="udp"):
    return SimPacket("a", 1, "b", 2, proto, payload_len=size, seq=seq)


class TestSimulator:
    def test_ties_break_on_insertion_order(self):
        sim, out = Simulator(), []
        for i in range(5):
            sim.at(10, out.append, i)
        sim.run(100)
        assert out == [0, 1, 2, 3, 4]

    def test_no_scheduling_in_the_past(self):
        sim = Simulator()
        sim.at(10, lambda: None)
        sim.run(20)
        with pytest.raises(ValueError):
            sim.at(5, lambda: None)

    def test_component_streams_independent(self):
        assert component_rng(1, "a").random() == component_rng(1, "a").random()
        assert component_rng(1, "a").random() != component_rng(1, "b").random()


class TestChannel:
    def make(self, **kw):
        sim = Simulator()
        got, lost = [], []
        params = LinkParams(**{"bandwidth_mbps": 8, "prop_delay_ms": 1, "queue_cap": 10, **kw})
        ch = Channel(sim, "t", params, component_rng(0, "t"),
                     lambda p: got.append((sim.now, p)), lambda p, r, c: lost.append(r))
        return sim, ch, got, lost

    def test_serialization_and_propagation(self):
        sim, ch, got, _ = self.make()
        p = pkt()
        ch.send(p)
        sim.run(10**6)
        # 8 Mbit/s = 1 bit/us
        assert got[0][0] == p.size * 8 // 8 + 1000

    def test_fifo_and_spacing(self):
        sim, ch, got, _ = self.make(queue_cap=100)
        for i in range(20):
            ch.send(pkt(seq=i))
        sim.run(10**7)
        assert [p.seq for _, p in got] == list(range(20))
        gaps = {b[0] - a[0] for a, b in zip(got, got[1:])}
        assert gaps == {got[0][1].size}

    def test_drop_tail(self):
        sim, ch, got, lost = self.make(queue_cap=10)
        for i in range(15):
            ch.send(pkt(seq=i))
        sim.run(10**7)
        assert len(got) == 10 and lost == ["queue_full"] * 5

    def test_mtu(self):
        sim, ch, got, lost = self.make()
        ch.send(pkt(size=1600))
        assert lost == ["mtu"]

    def test_fail_drops_in_flight(self):
        sim, ch, got, lost = self.make(queue_cap=100)
        for i in range(5):
            ch.send(pkt(seq=i))
        sim.at(1500, ch.fail)
        sim.run(10**7)
        assert len(got) + lost.count("link_down") == 5
        assert lost.count("link_down") >= 4
        ch.restore()
        ch.send(pkt(seq=9))
        sim.run(2 * 10**7)
        assert got[-1][1].seq == 9

    def test_loss_rate(self):
        sim, ch, got, lost = self.make(loss_rate=0.25, queue_cap=100000, bandwidth_mbps=1000)
        for i in range(4000):
            ch.send(pkt(seq=i, size=10))
        sim.run(10**8)
        assert 800 < lost.count("loss") < 1200

    @pytest.mark.parametrize("kw", [dict(bandwidth_mbps=0), dict(prop_delay_ms=-1),
                                    dict(loss_rate=1.0), dict(queue_cap=0)])
    def test_params_validated(self, kw):
        with pytest.raises(ValueError):
            self.make(**kw)


class TestNat:
    def test_round_trip_udp(self):
        nat = NatBox("10.0.2.1", "192.0.2.1")
        out = SimPacket("10.0.2.1", 5000, "10.0.2.2", 80, "udp")
        assert nat.outbound(out) is None
        assert (out.src, out.sport) == ("192.0.2.1", 20000)
        back = SimPacket("10.0.2.2", 80, out.src, out.sport, "udp")
        assert nat.inbound(back) is None
        assert (back.dst, back.dport) == ("10.0.2.1", 5000)
        assert nat.translate_back("udp", 5000) == ("192.0.2.1", 20000)

    def test_unknown_tcp_dropped_both_ways(self):
        nat = NatBox("10.0.2.1", "192.0.2.1", drop_unknown_tcp=True)
        assert nat.outbound(SimPacket("10.0.2.1", 5, "x", 80, "tcp", tcp_flags=ACK)) == "nat_unknown_tcp"
        syn = SimPacket("10.0.2.1", 5, "x", 80, "tcp", tcp_flags=SYN)
        assert nat.outbound(syn) is None
        assert nat.inbound(SimPacket("x", 80, "192.0.2.1", syn.sport, "tcp", tcp_flags=ACK)) is None
        assert nat.inbound(SimPacket("y", 80, "192.0.2.1", syn.sport, "tcp")) == "nat_unknown_tcp"

    def test_unmapped_inbound(self):
        assert NatBox("a", "b").inbound(SimPacket("x", 1, "b", 30000, "udp")) == "nat_no_mapping"

    def test_every_mapping_round_trips(self):
        nat = NatBox("10.0.2.1", "192.0.2.1")
        for port in range(1000, 1050):
            p = SimPacket("10.0.2.1", port, "9.9.9.9", 53, "udp")
            nat.outbound(p)
            q = SimPacket("9.9.9.9", 53, p.src, p.sport, "udp")
            assert nat.inbound(q) is None and q.dport == port


BULK = "session bulk 10.0.1.1 10.0.1.2 tcp window=64"


class TestRuns:
    def test_zero_duration_header_only(self):
        r = run(parse_scenario(two_path(BULK, duration=0)))
        assert r.metrics.metrics_csv().splitlines() == [
            "time_ms,session_id,path_id,goodput_bps,weight,q_ms,d_rt_ms"]

    def test_conservation(self):
        net = network(two_path(BULK + "\nsession v 10.0.2.1 10.0.2.2 udp rate_kbps=500",
                               duration=2000, loss1=0.01))
        r = net.run()
        m = r.metrics
        assert m.injected > 0
        assert m.conservation_gap() == 0
        received = sum(n.engine.rx_plain + n.engine.rx_mpip + n.engine.rx_consumed
                       + n.engine.rx_dropped + n.engine.reorder_in for n in r.nodes.values())
        assert received == m.received

    def test_capacity_never_exceeded(self):
        net = network(two_path(BULK + "\nsession v 10.0.2.1 10.0.2.2 udp rate_kbps=9000",
                               duration=3000, bw1=10, bw2=5))
        arrivals = {}
        for key, ch in net.channels.items():
            log = arrivals[key] = []

            def deliver(pkt, orig=ch._deliver, log=log):
                log.append((net.sim.now, pkt.size))
                orig(pkt)
            ch._deliver = deliver
        net.run()
        assert all(arrivals.values())
        # sliding 1 s windows at 100 ms steps; one MTU of slack for the window edge
        for key, log in arrivals.items():
            cap = net.channels[key].params.bandwidth_mbps * 1e6 / 8
            for start in range(0, 2_000_000, 100_000):
                got = sum(n for t, n in log if start <= t < start + 1_000_000)
                assert got <= cap + 1500, key

    def test_single_link_tcp_goodput_bound(self):
        text = """\
node a
node b
iface a 10.0.1.1
iface b 10.0.1.2
link 10.0.1.1 10.0.1.2 40 5 0 200
session bulk 10.0.1.1 10.0.1.2 tcp window=64
duration 5000
"""
        r = network(text).run()
        st = r.flows["bulk"]
        mss = 1500 - 20 - 20 - 25
        # window-limited rate: 64 segments per RTT, RTT ~ 10 ms + serialization
        rtt_s = 0.010 + 1500 * 8 / 40e6 + 65 * 8 / 40e6
        window_bound = 64 * mss * 8 / rtt_s
        expected = min(40e6 * mss / 1500, window_bound)
        rate = r.metrics.goodput("bulk", 1000, 5000)
        assert rate >= 0.9 * 40e6
        assert rate <= expected * 1.01
        assert st.retransmissions == 0

    def test_fail_only_path_stalls_without_crash(self):
        text = """\
node a
node b
iface a 10.0.1.1
iface b 10.0.1.2
link 10.0.1.1 10.0.1.2 10 5 0 100
session bulk 10.0.1.1 10.0.1.2 tcp
fail 10.0.1.1 10.0.1.2 1000
restore 10.0.1.1 10.0.1.2 3000
duration 8000
"""
        r = network(text).run()
        assert r.metrics.goodput("bulk", 1500, 2900) == 0
        assert r.metrics.goodput("bulk", 6000, 8000) > 0
        assert r.flows["bulk"].resets == 0

    def test_udp_cbr_rate(self):
        r = network(two_path("session v 10.0.1.1 10.0.1.2 udp rate_kbps=1000 size=1000",
                             duration=2000)).run()
        # 125 packets per second
        assert r.flows["v"].packets_delivered in (249, 250)

    def test_one_way_udp_triggers_heartbeats(self):
        r = network(two_path("session v 10.0.1.1 10.0.1.2 udp rate_kbps=200", duration=3000)).run()
        assert r.nodes["b"].engine.states
        assert sum(st.heartbeats_sent for st in r.nodes["b"].engine.states.values()) > 0
        assert sum(st.heartbeats_sent for st in r.nodes["a"].engine.states.values()) == 0

    def test_heartbeats_stop_after_expiry(self):
        net = network(two_path("session v 10.0.1.1 10.0.1.2 udp rate_kbps=200 stop=1000\n"
                               "param session_ttl_ms 2000", duration=8000))
        sent = []
        b = net.nodes["b"]
        orig = b.emit

        def emit(pkt, iface):
            if pkt.cm is not None and pkt.cm.flags & 0x10:
                sent.append(net.sim.now)
            orig(pkt, iface)
        b.emit = emit
        r = net.run()
        assert sent and r.metrics.count_events("session_expire") >= 2
        expired = max(t for t, n, _ in r.metrics.events if n == "session_expire")
        assert max(sent) < expired
        assert not r.nodes["b"].engine.states

    def test_tcp_emits_no_heartbeats(self):
        r = network(two_path(BULK, duration=2000)).run()
        assert r.metrics.counters.get("heartbeats_sent", 0) == 0


def test_determinism_across_hash_seeds(tmp_path):
    text = two_path(BULK + "\nsession v 10.0.2.1 10.0.2.2 udp rate_kbps=300", duration=1500,
                    loss1=0.02)
    scn = tmp_path / "s.scn"
    scn.write_text(text)
    outs = []
    for hs in ("1", "987"):
        out = tmp_path / hs
        env = dict(os.environ, PYTHONHASHSEED=hs)
        subprocess.run([sys.executable, "-m", "mpip.cli", "run", str(scn), "--out", str(out)],
                       check=True, env=env, capture_output=True)
        outs.append(((out / "metrics.csv").read_bytes(), (out / "events.csv").read_bytes()))
    assert outs[0] == outs[1]


def test_seed_changes_output():
    text = two_path(BULK, duration=1500)
    a = run(parse_scenario(text), 1).metrics.metrics_csv()
    b = run(parse_scenario(text), 2).metrics.metrics_csv()
    assert a != b
