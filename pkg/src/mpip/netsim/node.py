"""Simulated end hosts: interfaces, routing to links, NAT, and the MPIP engine."""

from __future__ import annotations

from typing import Optional

from ..engine import EngineParams, MpipEngine
from ..packet import SimPacket
from ..tables import RuleTable
from .core import Simulator
from .link import Channel
from .nat import NatBox


class Iface:
    __slots__ = ("node", "addr", "up", "nat", "routes")

    def __init__(self, node: "Node", addr: str, nat: Optional[NatBox] = None):
        self.node = node
        self.addr = addr
        self.up = True
        self.nat = nat
        self.routes: dict[str, Channel] = {}


class Node:
    """One end host. Implements the engine's host surface."""

    def __init__(self, sim: Simulator, name: str, node_id: int, metrics,
                 params: EngineParams | None = None, rules: RuleTable | None = None,
                 rng=None, mpip: bool = True, clock_offset_ms: int = 0):
        self.sim = self.clock = sim
        self.name = name
        self.node_id = node_id
        self.metrics = metrics
        self.ifaces: dict[str, Iface] = {}
        self.endpoints: dict[tuple[str, int], object] = {}
        self._up: list[str] = []
        self.params = params or EngineParams()
        self.engine = MpipEngine(self, node_id, self.params, rules, rng, enabled=mpip,
                                 clock_offset_ms=clock_offset_ms)

    # -- host surface ---------------------------------------------------------
    @property
    def now(self) -> int:
        return self.sim.now

    def up_addrs(self) -> list[str]:
        return self._up

    def event(self, name: str, detail: str) -> None:
        self.metrics.event(self.sim.now, name, f"{self.name} {detail}")

    def count(self, what: str, n: int = 1) -> None:
        c = self.metrics.counters
        c[what] = c.get(what, 0) + n

    def emit(self, pkt: SimPacket, iface_addr: str) -> None:
        iface = self.ifaces.get(iface_addr)
        metrics = self.metrics
        metrics.injected += 1
        if iface is None or not iface.up:
            metrics.drop(self.sim.now, pkt, "iface_down", self.name)
            return
        if iface.nat is not None:
            pkt = pkt.copy()
            reason = iface.nat.outbound(pkt)
            if reason is not None:
                metrics.drop(self.sim.now, pkt, reason, self.name)
                return
        ch = iface.routes.get(pkt.dst)
        if ch is None:
            metrics.drop(self.sim.now, pkt, "no_route", self.name)
            return
        ch.send(pkt)

    def deliver(self, pkt: SimPacket) -> None:
        pkt.delivered_us = self.sim.now
        ep = self.endpoints.get((pkt.proto, pkt.dport))
        if ep is None:
            self.count("rx_no_endpoint")
            return
        ep.on_packet(pkt)

    # -- wiring ---------------------------------------------------------------
    def add_iface(self, addr: str, nat: Optional[NatBox] = None) -> Iface:
        iface = Iface(self, addr, nat)
        self.ifaces[addr] = iface
        self._refresh_up()
        return iface

    def _refresh_up(self) -> None:
        self._up = sorted(a for a, i in self.ifaces.items() if i.up)

    def bind(self, proto: str, port: int, endpoint) -> None:
        self.endpoints[(proto, port)] = endpoint

    def send(self, pkt: SimPacket) -> None:
        """Transport entry point."""
        self.engine.output(pkt)

    def receive(self, pkt: SimPacket, iface: Iface) -> None:
        self.receive_on(iface, pkt)

    def receive_on(self, iface: Iface, pkt: SimPacket) -> None:
        """A packet came off a link onto ``iface``."""
        if not iface.up:
            self.metrics.drop(self.sim.now, pkt, "iface_down", self.name)
            return
        if iface.nat is not None:
            reason = iface.nat.inbound(pkt)
            if reason is not None:
                self.metrics.drop(self.sim.now, pkt, reason, self.name)
                return
        self.metrics.received += 1
        self.engine.input(pkt)

    def set_iface(self, addr: str, up: bool) -> None:
        iface = self.ifaces[addr]
        if iface.up == up:
            return
        iface.up = up
        self._refresh_up()
        if self.engine.enabled:
            self.engine.on_ip_change(addr, up)

    def start(self) -> None:
        if not self.engine.enabled:
            return
        p = self.params
        t_us = p.weights.interval_ms * 1000
        self.sim.every(t_us, self.engine.tick, t_us)
        hb = p.heartbeat_ms * 1000
        self.sim.every(hb, self.engine.heartbeat_tick, hb)
        self.sim.every(1_000_000, self.engine.expire_tick, 1_000_000)
