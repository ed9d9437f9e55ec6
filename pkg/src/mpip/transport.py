"""TCP compatibility: receiver reorder buffer, NAT traversal helpers."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

from .packet import ACK, SYN, SimPacket
from .tables import SessionRecord

REORDER_CAPACITY = 100
HS_RETRIES = 3


class NatMode(str, enum.Enum):
    NONE = "none"
    FAKE_HANDSHAKE = "fake-handshake"
    UDP_WRAPPER = "udp-wrapper"


class ReorderBuffer:
    """Hold segments past a gap; release them in order once the gap fills.

    There is no timer. When a new out-of-order segment arrives with the buffer
    already at capacity, everything buffered goes up in sequence order.
    """

    def __init__(self, capacity: int = REORDER_CAPACITY, expected_seq: Optional[int] = None):
        self.capacity = capacity
        self.expected_seq = expected_seq
        self.buffered: dict[int, object] = {}
        self.flushes = 0
        self.duplicates = 0

    def __len__(self) -> int:
        return len(self.buffered)

    def on_segment(self, seg) -> list:
        seq = seg.seq
        if self.expected_seq is None:
            self.expected_seq = seq
        exp = self.expected_seq
        if seq < exp:
            return [seg]
        if seq > exp:
            if seq in self.buffered:
                self.duplicates += 1
                return []
            if len(self.buffered) >= self.capacity:
                self.buffered[seq] = seg
                return self.flush()
            self.buffered[seq] = seg
            return []
        out = [seg]
        nxt = seq + seg.payload_len
        buf = self.buffered
        while nxt in buf:
            s = buf.pop(nxt)
            out.append(s)
            nxt += s.payload_len
        self.expected_seq = nxt
        return out

    def flush(self) -> list:
        if not self.buffered:
            return []
        out = [self.buffered[k] for k in sorted(self.buffered)]
        self.buffered.clear()
        last = out[-1]
        self.expected_seq = max(self.expected_seq, last.seq + last.payload_len)
        self.flushes += 1
        return out


def udp_wrap(pkt: SimPacket, src: tuple[str, int], dst: tuple[str, int]) -> SimPacket:
    """Carry a TCP packet as the payload of a UDP packet addressed along a path."""
    return SimPacket(
        src=src[0], sport=src[1], dst=dst[0], dport=dst[1], proto="udp",
        payload_len=0, cm=pkt.cm, inner=pkt.copy(cm=None),
        created_us=pkt.created_us, flow=pkt.flow, path_tag=pkt.path_tag,
    )


class UnknownSession(Exception):
    pass


def udp_unwrap(pkt: SimPacket, session: Optional[SessionRecord]) -> SimPacket:
    """Strip the UDP carrier and restore the session's original socket pair.

    ``session`` is the receiver's record, so its orig source is the local end.
    """
    if session is None:
        raise UnknownSession()
    inner = pkt.inner
    if inner is None:
        raise ValueError("not a wrapped packet")
    return inner.copy(
        src=session.orig_dst_addr, sport=session.orig_dst_port,
        dst=session.orig_src_addr, dport=session.orig_src_port,
        cm=pkt.cm, created_us=pkt.created_us,
    )


class HsState(str, enum.Enum):
    SYN_SENT = "syn-sent"
    DONE = "done"
    BLOCKED = "blocked"


@dataclass
class FakeHandshake:
    """Client-side progress of one fake three-way handshake on a candidate path."""

    local: tuple[str, int]
    remote: tuple[str, int]
    state: HsState = HsState.SYN_SENT
    tries: int = 0
    last_us: Optional[int] = None
    log: list = field(default_factory=list)

    def next_syn(self, now_us: int, retries: int = HS_RETRIES) -> bool:
        """Whether another SYN should go out now; marks BLOCKED when retries run out."""
        if self.state is not HsState.SYN_SENT:
            return False
        if self.tries >= retries:
            self.state = HsState.BLOCKED
            return False
        self.tries += 1
        self.last_us = now_us
        return True

    def on_syn_ack(self) -> bool:
        if self.state is HsState.SYN_SENT:
            self.state = HsState.DONE
            return True
        return False


def hs_packet(kind: str, local: tuple[str, int], remote: tuple[str, int], seq: int) -> SimPacket:
    flags = {"syn": SYN, "syn-ack": SYN | ACK, "ack": ACK}[kind]
    return SimPacket(src=local[0], sport=local[1], dst=remote[0], dport=remote[1],
                     proto="tcp", seq=seq, ack=seq, tcp_flags=flags)
