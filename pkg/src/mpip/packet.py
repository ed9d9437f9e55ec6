"""Simulated packet representation shared by the engine and the simulator."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .wire import CM_SIZE

IP_HEADER = 20
TCP_HEADER = 20
UDP_HEADER = 8

SYN = 1
ACK = 2


@dataclass(slots=True, eq=False)
class SimPacket:
    src: str
    sport: int
    dst: str
    dport: int
    proto: str                      # "tcp" | "udp"
    payload_len: int = 0
    seq: Optional[int] = None
    ack: Optional[int] = None
    tcp_flags: int = 0
    sack: tuple = ()
    cm: Optional[bytes] = None
    inner: Optional["SimPacket"] = None
    payload: Optional[bytes] = None
    created_us: int = 0
    delivered_us: Optional[int] = None
    # simulator bookkeeping, never on the wire
    flow: Optional[str] = None
    path_tag: int = 0
    epoch: int = 0

    @property
    def l4_header(self) -> int:
        return TCP_HEADER if self.proto == "tcp" else UDP_HEADER

    @property
    def size(self) -> int:
        """Bytes on the wire including IP header, CM block and any wrapped packet."""
        n = (IP_HEADER + TCP_HEADER if self.proto == "tcp" else IP_HEADER + UDP_HEADER) + self.payload_len
        if self.cm is not None:
            n += CM_SIZE
        inner = self.inner
        if inner is not None:
            n += (TCP_HEADER if inner.proto == "tcp" else UDP_HEADER) + inner.payload_len
        return n

    def copy(self, **changes) -> "SimPacket":
        new = SimPacket(self.src, self.sport, self.dst, self.dport, self.proto, self.payload_len,
                        self.seq, self.ack, self.tcp_flags, self.sack, self.cm, self.inner,
                        self.payload, self.created_us, self.delivered_us, self.flow,
                        self.path_tag, self.epoch)
        for k, v in changes.items():
            setattr(new, k, v)
        return new

    @property
    def socket_pair(self) -> tuple[str, int, str, int]:
        return (self.src, self.sport, self.dst, self.dport)
