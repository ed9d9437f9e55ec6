"""Traffic generators standing in for iperf.

``TcpSender``/``TcpReceiver`` form a deliberately small reliable transport: a
fixed window counted in segments, cumulative ACKs with SACK blocks, SACK-based
loss detection (a hole is resent once three segments above it are SACKed), and
an RTO with exponential backoff. There is no congestion control.

``UdpSource``/``UdpSink`` are a constant-bit-rate stream and its receiver.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from ..packet import ACK, IP_HEADER, SYN, TCP_HEADER, SimPacket
from ..wire import CM_SIZE
from .core import Simulator

MSS = 1500 - IP_HEADER - TCP_HEADER - CM_SIZE
WRAP_OVERHEAD = 8
MAX_SACK_BLOCKS = 16
MIN_RTO_US = 200_000
INIT_RTO_US = 1_000_000
MAX_RTO_US = 8_000_000
DELACK_US = 40_000
ACK_EVERY = 4
DUPTHRESH = 3
REPORT_INTERVAL_US = 100_000
REPORT_SIZE = 40


@dataclass
class FlowStats:
    """Per-flow counters read by the metrics layer and the tests."""

    name: str
    bytes_delivered: int = 0
    packets_delivered: int = 0
    out_of_order: int = 0
    retransmissions: int = 0
    gap_retransmissions: int = 0
    rto_retransmissions: int = 0
    timeouts: int = 0
    established: bool = False
    resets: int = 0
    # sender's path ID (0 for plain packets) -> bytes, counted once per new byte range
    path_bytes: dict = field(default_factory=dict)
    delays_us: list = field(default_factory=list)
    delay_times_us: list = field(default_factory=list)


class _Seg:
    __slots__ = ("seq", "length", "sent_us", "retx", "sacked", "rexmit_round")

    def __init__(self, seq: int, length: int, sent_us: int):
        self.seq = seq
        self.length = length
        self.sent_us = sent_us
        self.retx = False
        self.sacked = False
        self.rexmit_round = -1


class TcpSender:
    def __init__(self, sim: Simulator, node, stats: FlowStats, local: tuple[str, int],
                 remote: tuple[str, int], window: int = 64, start_us: int = 0,
                 stop_us: Optional[int] = None, total_bytes: Optional[int] = None,
                 mss: int = MSS):
        self.sim = sim
        self.node = node
        self.stats = stats
        self.local = local
        self.remote = remote
        self.window = window
        self.stop_us = stop_us
        self.total_bytes = total_bytes
        self.mss = mss
        self.snd_una = 0
        self.snd_nxt = 0
        self.segs: dict[int, _Seg] = {}
        self.dupacks = 0
        self.in_recovery = False
        self.recover = 0
        self.round = 0
        self.srtt: Optional[float] = None
        self.rttvar = 0.0
        self.rto = INIT_RTO_US
        self.backoff = 1
        self._timer_gen = 0
        self._timer_at: Optional[int] = None
        self._deadline: Optional[int] = None
        self.state = "closed"
        node.bind("tcp", local[1], self)
        sim.at(start_us, self._open)

    # -- connection -----------------------------------------------------------
    def _packet(self, **kw) -> SimPacket:
        return SimPacket(self.local[0], self.local[1], self.remote[0], self.remote[1], "tcp",
                         created_us=self.sim.now, flow=self.stats.name, **kw)

    def _open(self) -> None:
        self.state = "syn-sent"
        self._send_syn()

    def _send_syn(self) -> None:
        if self.state != "syn-sent":
            return
        self.node.send(self._packet(seq=0, tcp_flags=SYN))
        self.sim.after(self.rto * self.backoff, self._send_syn)
        self.backoff = min(self.backoff * 2, 8)

    def _stopped(self) -> bool:
        return self.stop_us is not None and self.sim.now >= self.stop_us

    def on_packet(self, pkt: SimPacket) -> None:
        if pkt.tcp_flags & SYN:
            if self.state == "syn-sent" and pkt.tcp_flags & ACK:
                self.state = "established"
                self.stats.established = True
                self.backoff = 1
                self._fill()
            return
        if self.state != "established" or pkt.ack is None:
            return
        self._on_ack(pkt)

    # -- sending --------------------------------------------------------------
    def _fill(self) -> None:
        if self._stopped():
            return
        limit = self.snd_una + self.window * self.mss
        now = self.sim.now
        while self.snd_nxt < limit:
            length = self.mss
            if self.total_bytes is not None:
                length = min(length, self.total_bytes - self.snd_nxt)
                if length <= 0:
                    break
            seq = self.snd_nxt
            self.segs[seq] = _Seg(seq, length, now)
            self.snd_nxt += length
            self.node.send(SimPacket(self.local[0], self.local[1], self.remote[0], self.remote[1],
                                     "tcp", length, seq, 0, ACK, (), None, None, None, now, None,
                                     self.stats.name))
        if self.segs and self._deadline is None:
            self._arm()

    def _retransmit(self, seg: _Seg, kind: str) -> None:
        seg.retx = True
        seg.sent_us = self.sim.now
        st = self.stats
        st.retransmissions += 1
        if kind == "gap":
            st.gap_retransmissions += 1
        else:
            st.rto_retransmissions += 1
        self.node.send(self._packet(seq=seg.seq, ack=0, tcp_flags=ACK, payload_len=seg.length))

    # -- timer ----------------------------------------------------------------
    # One pending heap event at a time: re-arming only moves the deadline, and
    # the event reschedules itself if it fires early. Pushing the deadline
    # earlier than the pending event supersedes it via the generation count.
    def _arm(self) -> None:
        deadline = self.sim.now + min(self.rto * self.backoff, MAX_RTO_US)
        self._deadline = deadline
        if self._timer_at is None or deadline < self._timer_at:
            self._schedule(deadline)

    def _schedule(self, when: int) -> None:
        self._timer_gen += 1
        self._timer_at = when
        self.sim.at(when, self._on_timer, self._timer_gen)

    def _disarm(self) -> None:
        self._deadline = None

    def _on_timer(self, gen: int) -> None:
        if gen != self._timer_gen:
            return
        self._timer_at = None
        if self._deadline is None or not self.segs:
            return
        if self.sim.now < self._deadline:
            self._schedule(self._deadline)
            return
        self._deadline = None
        self.stats.timeouts += 1
        self.backoff = min(self.backoff * 2, 64)
        self.dupacks = 0
        self.in_recovery = False
        for seg in self.segs.values():
            if not seg.sacked:
                self._retransmit(seg, "rto")
        self._arm()

    # -- acks -----------------------------------------------------------------
    def _on_ack(self, pkt: SimPacket) -> None:
        ack = pkt.ack
        segs = self.segs
        now = self.sim.now
        if ack > self.snd_una:
            seq = self.snd_una
            sample = None
            while seq < ack:
                seg = segs.pop(seq, None)
                if seg is None:
                    break
                if not seg.retx:
                    sample = now - seg.sent_us
                seq += seg.length
            self.snd_una = ack
            if sample is not None:
                self._rtt_sample(sample)
            self.backoff = 1
            self.dupacks = 0
            if self.in_recovery and ack >= self.recover:
                self.in_recovery = False
            if pkt.sack and self._mark_sacked(pkt.sack):
                self._detect_loss()
            self._fill()
            if segs:
                self._arm()
            else:
                self._disarm()
            return
        if not segs:
            return
        new_info = self._mark_sacked(pkt.sack) if pkt.sack else False
        if ack == self.snd_una and (new_info or not pkt.sack):
            self.dupacks += 1
        if new_info or self.dupacks >= DUPTHRESH:
            self._detect_loss()

    def _mark_sacked(self, blocks) -> bool:
        segs = self.segs
        new = False
        for start, end in blocks:
            seq = start
            while seq < end:
                seg = segs.get(seq)
                if seg is None:
                    break
                if not seg.sacked:
                    seg.sacked = True
                    new = True
                seq += seg.length
        return new

    def _detect_loss(self) -> None:
        """Retransmit segments presumed lost, each at most once per recovery round.

        A segment counts as lost once DUPTHRESH segments above it are SACKed,
        or, for the first unacknowledged one, after DUPTHRESH duplicate ACKs.
        """
        above = 0
        lost = []
        for seg in reversed(self.segs.values()):
            if seg.sacked:
                above += 1
            elif above >= DUPTHRESH:
                lost.append(seg)
        if not lost and self.dupacks >= DUPTHRESH:
            first = self.segs.get(self.snd_una)
            if first is not None and not first.sacked:
                lost.append(first)
        if not lost:
            return
        if not self.in_recovery:
            self.in_recovery = True
            self.recover = self.snd_nxt
            self.round += 1
        for seg in reversed(lost):
            if seg.rexmit_round != self.round:
                seg.rexmit_round = self.round
                self._retransmit(seg, "gap")

    def _rtt_sample(self, r: int) -> None:
        if self.srtt is None:
            self.srtt = float(r)
            self.rttvar = r / 2
        else:
            self.rttvar = 0.75 * self.rttvar + 0.25 * abs(self.srtt - r)
            self.srtt = 0.875 * self.srtt + 0.125 * r
        self.rto = max(MIN_RTO_US, int(self.srtt + 4 * self.rttvar))


class _RxConn:
    __slots__ = ("remote", "rcv_nxt", "ooo", "unacked", "delack_due", "delack_pending")

    def __init__(self, remote: tuple[str, int]):
        self.remote = remote
        self.rcv_nxt = 0
        self.ooo: dict[int, int] = {}
        self.unacked = 0
        # deadline for the held ACK, and whether a timer event is already queued
        self.delack_due: Optional[int] = None
        self.delack_pending = False


class TcpReceiver:
    """Listening side; one connection per remote socket."""

    def __init__(self, sim: Simulator, node, stats: FlowStats, local: tuple[str, int]):
        self.sim = sim
        self.node = node
        self.stats = stats
        self.local = local
        self.conns: dict[tuple[str, int], _RxConn] = {}
        node.bind("tcp", local[1], self)

    def on_packet(self, pkt: SimPacket) -> None:
        remote = (pkt.src, pkt.sport)
        conn = self.conns.get(remote)
        if pkt.tcp_flags & SYN:
            if conn is None:
                conn = self.conns[remote] = _RxConn(remote)
                self.stats.established = True
            self._send(conn, SYN | ACK)
            return
        if conn is None or pkt.payload_len == 0:
            return
        seq, length = pkt.seq, pkt.payload_len
        stats = self.stats
        if seq == conn.rcv_nxt:
            self._account(pkt, length)
            nxt = seq + length
            ooo = conn.ooo
            while nxt in ooo:
                nxt += ooo.pop(nxt)
            filled = nxt != seq + length
            conn.rcv_nxt = nxt
            conn.unacked += 1
            if filled or ooo or conn.unacked >= ACK_EVERY:
                self._ack(conn)
            elif conn.delack_due is None:
                conn.delack_due = self.sim.now + DELACK_US
                if not conn.delack_pending:
                    conn.delack_pending = True
                    self.sim.at(conn.delack_due, self._delack, conn)
        elif seq > conn.rcv_nxt:
            stats.out_of_order += 1
            if seq not in conn.ooo:
                conn.ooo[seq] = length
                self._account(pkt, length)
            self._ack(conn)
        else:
            self._ack(conn)

    def _account(self, pkt: SimPacket, length: int) -> None:
        st = self.stats
        st.bytes_delivered += length
        st.packets_delivered += 1
        pb = st.path_bytes
        pb[pkt.path_tag] = pb.get(pkt.path_tag, 0) + length

    def _delack(self, conn: _RxConn) -> None:
        conn.delack_pending = False
        due = conn.delack_due
        if due is None:
            return
        if self.sim.now < due:
            conn.delack_pending = True
            self.sim.at(due, self._delack, conn)
            return
        self._ack(conn)

    def _ack(self, conn: _RxConn) -> None:
        conn.unacked = 0
        conn.delack_due = None
        self._send(conn, ACK)

    def _send(self, conn: _RxConn, flags: int) -> None:
        sack = ()
        if conn.ooo:
            blocks = []
            for s in sorted(conn.ooo):
                e = s + conn.ooo[s]
                if blocks and blocks[-1][1] == s:
                    blocks[-1][1] = e
                else:
                    if len(blocks) == MAX_SACK_BLOCKS:
                        break
                    blocks.append([s, e])
            sack = tuple((a, b) for a, b in blocks)
        self.node.send(SimPacket(self.local[0], self.local[1], conn.remote[0], conn.remote[1],
                                 "tcp", 0, 0, conn.rcv_nxt, flags, sack, None, None, None,
                                 self.sim.now, None, self.stats.name))


class UdpSource:
    """Constant bit rate; optionally listens for the sink's periodic reports."""

    def __init__(self, sim: Simulator, node, stats: FlowStats, local: tuple[str, int],
                 remote: tuple[str, int], rate_kbps: float, size: int, start_us: int = 0,
                 stop_us: Optional[int] = None):
        if rate_kbps <= 0 or size <= 0:
            raise ValueError("rate and size must be positive")
        self.sim = sim
        self.node = node
        self.stats = stats
        self.local = local
        self.remote = remote
        self.size = size
        self.interval_us = size * 8 * 1000 / rate_kbps
        self.stop_us = stop_us
        self.sent = 0
        self.reports = 0
        self._start = start_us
        node.bind("udp", local[1], self)
        sim.at(start_us, self._tick)

    def _tick(self) -> None:
        now = self.sim.now
        if self.stop_us is not None and now >= self.stop_us:
            return
        self.node.send(SimPacket(self.local[0], self.local[1], self.remote[0], self.remote[1],
                                 "udp", payload_len=self.size, seq=self.sent,
                                 created_us=now, flow=self.stats.name))
        self.sent += 1
        # schedule from the start time so rounding never accumulates
        self.sim.at(self._start + int(self.sent * self.interval_us), self._tick)

    def on_packet(self, pkt: SimPacket) -> None:
        self.reports += 1


class UdpSink:
    def __init__(self, sim: Simulator, node, stats: FlowStats, local: tuple[str, int],
                 twoway: bool = False):
        self.sim = sim
        self.node = node
        self.stats = stats
        self.local = local
        self.peer: Optional[tuple[str, int]] = None
        node.bind("udp", local[1], self)
        if twoway:
            sim.every(REPORT_INTERVAL_US, self._report, REPORT_INTERVAL_US)

    def on_packet(self, pkt: SimPacket) -> None:
        st = self.stats
        self.peer = (pkt.src, pkt.sport)
        st.bytes_delivered += pkt.payload_len
        st.packets_delivered += 1
        st.delays_us.append(pkt.delivered_us - pkt.created_us)
        st.delay_times_us.append(pkt.created_us)
        pb = st.path_bytes
        pb[pkt.path_tag] = pb.get(pkt.path_tag, 0) + pkt.payload_len

    def _report(self) -> None:
        if self.peer is None:
            return
        self.node.send(SimPacket(self.local[0], self.local[1], self.peer[0], self.peer[1], "udp",
                                 payload_len=REPORT_SIZE, created_us=self.sim.now,
                                 flow=self.stats.name))
