"""NAT box sitting between one interface and its links."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from ..packet import SYN, SimPacket


@dataclass
class NatBox:
    inner_addr: str
    outer_addr: str
    drop_unknown_tcp: bool = False
    verify_udp: bool = False
    port_base: int = 20000
    # (proto, inner_port) -> outer_port
    mappings: dict = field(default_factory=dict)
    # outer_port -> (proto, inner_port)
    reverse: dict = field(default_factory=dict)
    # (inner_port, remote_addr, remote_port) -> True for TCP flows seen opening
    tcp_flows: dict = field(default_factory=dict)
    # (proto, inner_port) -> set of remote (addr, port) the inside has talked to
    contacted: dict = field(default_factory=dict)
    _next_port: int = 0

    def _map(self, proto: str, inner_port: int) -> int:
        key = (proto, inner_port)
        port = self.mappings.get(key)
        if port is None:
            port = self.port_base + self._next_port
            self._next_port += 1
            self.mappings[key] = port
            self.reverse[port] = key
        return port

    def outbound(self, pkt: SimPacket) -> Optional[str]:
        """Translate in place; returns a drop reason or None."""
        if pkt.proto == "tcp" and self.drop_unknown_tcp:
            flow = (pkt.sport, pkt.dst, pkt.dport)
            if pkt.tcp_flags & SYN:
                self.tcp_flows[flow] = True
            elif flow not in self.tcp_flows:
                return "nat_unknown_tcp"
        key = (pkt.proto, pkt.sport)
        self.contacted.setdefault(key, set()).add((pkt.dst, pkt.dport))
        pkt.src = self.outer_addr
        pkt.sport = self._map(pkt.proto, pkt.sport)
        return None

    def inbound(self, pkt: SimPacket) -> Optional[str]:
        key = self.reverse.get(pkt.dport)
        if key is None or key[0] != pkt.proto:
            return "nat_no_mapping"
        inner_port = key[1]
        if pkt.proto == "tcp" and self.drop_unknown_tcp:
            if (inner_port, pkt.src, pkt.sport) not in self.tcp_flows:
                return "nat_unknown_tcp"
        if pkt.proto == "udp" and self.verify_udp:
            if (pkt.src, pkt.sport) not in self.contacted.get(key, ()):
                return "nat_udp_unverified"
        pkt.dst = self.inner_addr
        pkt.dport = inner_port
        return None

    def translate_back(self, proto: str, inner_port: int) -> tuple[str, int]:
        return self.outer_addr, self.mappings[(proto, inner_port)]
