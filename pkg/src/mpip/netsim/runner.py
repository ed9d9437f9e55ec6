"""Build a network from a scenario and run it."""

from __future__ import annotations

import time
from functools import partial
from dataclasses import dataclass, field
from typing import Optional

from ..scenario import Scenario
from ..transport import NatMode
from .core import Simulator, component_rng
from .link import Channel
from .metrics import SAMPLE_INTERVAL_US, MetricsLog
from .nat import NatBox
from .node import Iface, Node
from .traffic import MSS, WRAP_OVERHEAD, FlowStats, TcpReceiver, TcpSender, UdpSink, UdpSource


@dataclass
class RunResult:
    scenario: Scenario
    seed: int
    metrics: MetricsLog
    nodes: dict[str, Node]
    channels: dict[tuple[str, str], Channel]
    flows: dict[str, FlowStats]
    endpoints: dict[str, tuple] = field(default_factory=dict)
    wall_s: float = 0.0
    events_run: int = 0


class Network:
    def __init__(self, scenario: Scenario, seed: Optional[int] = None):
        self.scenario = scenario
        self.seed = scenario.seed if seed is None else seed
        self.sim = Simulator(self.seed)
        self.metrics = MetricsLog()
        self.nodes: dict[str, Node] = {}
        self.ifaces: dict[str, Iface] = {}
        self.channels: dict[tuple[str, str], Channel] = {}
        self.flows: dict[str, FlowStats] = {}
        self.endpoints: dict[str, tuple] = {}
        self._build()

    # -- construction ---------------------------------------------------------
    def _build(self) -> None:
        sc, sim, seed = self.scenario, self.sim, self.seed
        params = sc.engine_params()
        for spec in sc.nodes.values():
            self.nodes[spec.name] = Node(
                sim, spec.name, spec.node_id, self.metrics, params, sc.rule_table(),
                rng=component_rng(seed, f"route/{spec.name}"), mpip=not spec.plain,
                clock_offset_ms=spec.clock_offset_ms)
        for addr, spec in sc.ifaces.items():
            nat = sc.nats.get(addr)
            box = NatBox(addr, nat.outer, nat.drop_unknown_tcp) if nat else None
            self.ifaces[addr] = self.nodes[spec.node].add_iface(addr, box)
        for link in sc.links:
            self._connect(link.a, link.b, link.params)
            self._connect(link.b, link.a, link.params)
        mss = MSS - WRAP_OVERHEAD if params.nat_mode is NatMode.UDP_WRAPPER else MSS
        for s in sc.sessions:
            self._add_session(s, mss)
        for ev in sc.link_events:
            fn = self.fail_link if ev.kind == "fail" else self.restore_link
            sim.at(ev.at_ms * 1000, fn, ev.a, ev.b)
        sim.every(SAMPLE_INTERVAL_US, self._sample, SAMPLE_INTERVAL_US)
        for node in self.nodes.values():
            node.start()

    def _connect(self, a: str, b: str, params) -> None:
        src, dst = self.ifaces[a], self.ifaces[b]
        node = dst.node
        metrics, sim = self.metrics, self.sim

        def drop(pkt, reason, ch):
            metrics.drop(sim.now, pkt, reason, ch.name)

        ch = Channel(sim, f"{a}->{b}", params, component_rng(self.seed, f"link/{a}->{b}"),
                     partial(node.receive_on, dst), drop)
        self.channels[(a, b)] = ch
        # a NATed interface is reachable only through its outer address
        reach = dst.nat.outer_addr if dst.nat is not None else b
        src.routes[reach] = ch

    def _add_session(self, s, mss: int) -> None:
        sim = self.sim
        src_node = self.ifaces[s.src].node
        dst_node = self.ifaces[s.dst].node
        stats = self.flows[s.name] = FlowStats(s.name)
        self.endpoints[s.name] = (src_node, s.proto, s.src, s.sport, s.dst, s.dport)

        start = s.start_ms * 1000
        stop = s.stop_ms * 1000 if s.stop_ms is not None else None
        if s.proto == "tcp":
            TcpReceiver(sim, dst_node, stats, (s.dst, s.dport))
            TcpSender(sim, src_node, stats, (s.src, s.sport), (s.dst, s.dport), s.window,
                      start, stop, s.total_bytes, mss)
        else:
            UdpSink(sim, dst_node, stats, (s.dst, s.dport), s.twoway)
            UdpSource(sim, src_node, stats, (s.src, s.sport), (s.dst, s.dport), s.rate_kbps,
                      s.size, start, stop)

    # -- runtime --------------------------------------------------------------
    def sender_paths(self, session: str) -> list:
        node, proto, src, sport, dst, dport = self.endpoints[session]
        table = node.engine.table
        rec = table.by_tuple(proto, src, sport, dst, dport)
        return table.session_paths(rec.key) if rec is not None else []

    def _sample(self) -> None:
        now = self.sim.now
        for name in self.endpoints:
            self.metrics.sample(now, name, self.sender_paths(name), self.flows[name].path_bytes)

    def _iface_has_live_link(self, addr: str) -> bool:
        return any(ch.up for (a, _), ch in self.channels.items() if a == addr)

    def fail_link(self, a: str, b: str) -> None:
        """Cut the cable: both directions drop everything, in flight included."""
        for key in ((a, b), (b, a)):
            self.channels[key].fail()
        self.metrics.event(self.sim.now, "link_fail", f"{a} {b}")
        for addr in (a, b):
            if not self._iface_has_live_link(addr):
                iface = self.ifaces[addr]
                iface.node.set_iface(addr, False)

    def restore_link(self, a: str, b: str) -> None:
        for key in ((a, b), (b, a)):
            self.channels[key].restore()
        self.metrics.event(self.sim.now, "link_restore", f"{a} {b}")
        for addr in (a, b):
            self.ifaces[addr].node.set_iface(addr, True)

    def run(self) -> RunResult:
        t0 = time.perf_counter()
        self.sim.run(self.scenario.duration_ms * 1000)
        self.metrics.in_flight = sum(ch.in_flight for ch in self.channels.values())
        return RunResult(self.scenario, self.seed, self.metrics, self.nodes, self.channels,
                         self.flows, self.endpoints, time.perf_counter() - t0,
                         self.sim.events_run)


def run(scenario: Scenario, seed: Optional[int] = None) -> RunResult:
    return Network(scenario, seed).run()
