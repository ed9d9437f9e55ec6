"""The MPIP network layer of one node.

The engine sits between a node's transport endpoints and its interfaces. It is
driven by three entry points, all called from the node's single event handler:
``output`` for packets coming down from transport, ``input`` for packets coming
up from an interface, and the timer ticks (weight adjustment and probing,
heartbeats, session expiry). Everything it needs from the outside world goes
through the small :class:`Host` surface.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Protocol as TypingProtocol

from . import handshake
from .handshake import SendAction
from .packet import ACK, SYN, SimPacket
from .paths import (
    HEARTBEAT_MS,
    PROBE_INTERVAL_MS,
    PROBE_RETRIES,
    FeedbackQueue,
    ProbeState,
    probe_candidates,
    probe_due,
    update_delay_metrics,
)
from .router import (ProtectedDedup, WeightParams, adjust_weights, payload_digest, pick_path,
                     route_packet)
from .tables import (
    QUERY_THRESHOLD,
    SESSION_TTL_MS,
    Availability,
    AvailabilityTable,
    NodeAddrTable,
    PathRecord,
    Protocol,
    RuleTable,
    SessionRecord,
    SessionTable,
)
from .transport import (
    REORDER_CAPACITY,
    FakeHandshake,
    HsState,
    NatMode,
    ReorderBuffer,
    hs_packet,
    udp_unwrap,
    udp_wrap,
)
from .wire import CM_VERSION, CmError, ControlMessage, Flags, addr_to_int, int_to_addr, pack_cm, unpack_cm

# skips the NamedTuple __new__ wrapper on the hot path
_new_cm = tuple.__new__
_ENABLE = int(Flags.ENABLE)
_ENABLED = int(Flags.ENABLED)
_HS = int(Flags.HS)
_IP_CHANGE = int(Flags.IP_CHANGE)
_HEARTBEAT = int(Flags.HEARTBEAT)
_PROTECTED = int(Flags.PROTECTED)
_INTERNAL = _HS | _HEARTBEAT


@dataclass
class EngineParams:
    weights: WeightParams = field(default_factory=WeightParams)
    heartbeat_ms: int = HEARTBEAT_MS
    reorder_enabled: bool = True
    reorder_capacity: int = REORDER_CAPACITY
    nat_mode: NatMode = NatMode.NONE
    query_threshold: int = QUERY_THRESHOLD
    query_interval_ms: int = 20
    session_ttl_ms: int = SESSION_TTL_MS
    probe_interval_ms: int = PROBE_INTERVAL_MS
    probe_retries: int = PROBE_RETRIES
    # carry encoded CM bytes on simulated packets instead of the decoded tuple
    wire_cm: bool = False


class Host(TypingProtocol):
    now: int

    def emit(self, pkt: SimPacket, iface_addr: str) -> None: ...
    def deliver(self, pkt: SimPacket) -> None: ...
    def event(self, name: str, detail: str) -> None: ...
    def count(self, what: str, n: int = 1) -> None: ...
    def up_addrs(self) -> list[str]: ...


@dataclass
class SessionState:
    record: SessionRecord
    feedback: FeedbackQueue
    reorder: Optional[ReorderBuffer]
    dedup: ProtectedDedup = field(default_factory=ProtectedDedup)
    is_client: bool = False
    last_out: Optional[SimPacket] = None
    last_send_us: Optional[int] = None
    ip_change_pending: bool = False
    probes: dict = field(default_factory=dict)
    handshakes: dict = field(default_factory=dict)
    heartbeats_sent: int = 0
    paths: list = field(default_factory=list)
    paths_version: int = -1


class MpipEngine:
    def __init__(self, host: Host, node_id: int, params: EngineParams | None = None,
                 rules: RuleTable | None = None, rng=None, enabled: bool = True,
                 clock_offset_ms: int = 0):
        self.host = host
        # anything with a ``now`` attribute; hosts may expose their simulator to skip a property
        self.clock = getattr(host, "clock", host)
        self.node_id = node_id
        self.params = params or EngineParams()
        self.rules = rules or RuleTable()
        self.rng = rng
        self.enabled = enabled
        self.clock_offset_ms = clock_offset_ms
        self.availability = AvailabilityTable(self.params.query_threshold)
        self.node_addrs = NodeAddrTable()
        self.table = SessionTable()
        self.states: dict[tuple[int, int], SessionState] = {}
        self._syn_sent: set = set()
        self._last_to: dict[tuple[str, int], SimPacket] = {}
        self._addr_rot = 0
        self._query_interval_us = self.params.query_interval_ms * 1000
        self._wrap_tcp = self.params.nat_mode is NatMode.UDP_WRAPPER
        self._advert_src: Optional[list] = None
        self._advert_ints: list[int] = []
        # lookups keyed by socket tuples, dropped whenever the session table changes
        self._out_cache: dict[tuple, SessionState] = {}
        self._in_cache: dict[tuple, tuple[SessionState, PathRecord]] = {}
        self._cache_version = -1
        # receive-side accounting: every packet handed to input() lands in exactly one bucket
        # node -> (announced count, address slots already fed to the table)
        self._adv_seen: dict[int, tuple[int, set]] = {}
        self.rx_plain = 0
        self.rx_mpip = 0
        self.rx_consumed = 0
        self.rx_dropped = 0
        self.reorder_in = 0
        self.reorder_out = 0

    # -- helpers ---------------------------------------------------------------
    def local_ms(self) -> int:
        return (self.clock.now // 1000 + self.clock_offset_ms) & 0xFFFFFFFF

    def _advert(self) -> tuple[int, int]:
        """(count, slot) for the next CM: one local address per packet, round robin."""
        addrs = self.host.up_addrs()
        if addrs is not self._advert_src:
            self._advert_src = addrs
            self._advert_ints = [addr_to_int(a) for a in addrs]
        n = len(addrs)
        if not n:
            return 0, 0
        rot = self._addr_rot + 1
        if rot >= n:
            rot = 0
        self._addr_rot = rot
        return n, self._advert_ints[rot]

    def _check_caches(self) -> None:
        if self._cache_version != self.table.version:
            self._out_cache.clear()
            self._in_cache.clear()
            self._cache_version = self.table.version

    def _cm(self, flags: int, session_id: int = 0, path_id: int = 0,
            fb: tuple[int, int] = (0, 0)):
        count, slot = self._advert()
        fields = (flags, self.node_id, session_id, path_id, fb[0], self.local_ms(), fb[1],
                  count, slot)
        return pack_cm(*fields) if self.params.wire_cm else ControlMessage(*fields)

    @staticmethod
    def _is_original(rec: SessionRecord, path: PathRecord) -> bool:
        return (path.src_addr == rec.orig_src_addr and path.dst_addr == rec.orig_dst_addr
                and path.src_port == rec.orig_src_port and path.dst_port == rec.orig_dst_port)

    def _new_state(self, rec: SessionRecord, is_client: bool) -> SessionState:
        reorder = None
        if rec.protocol == Protocol.TCP and self.params.reorder_enabled:
            reorder = ReorderBuffer(self.params.reorder_capacity)
        st = SessionState(rec, FeedbackQueue(), reorder, is_client=is_client)
        self.states[rec.key] = st
        return st

    # -- transport -> network -------------------------------------------------
    def output(self, pkt: SimPacket) -> None:
        host = self.host
        if not self.enabled:
            host.emit(pkt, pkt.src)
            return
        proto = pkt.proto
        if proto == "tcp" and pkt.tcp_flags & SYN and not pkt.tcp_flags & ACK:
            self._syn_sent.add(pkt.socket_pair)
        now = self.clock.now
        table = self.table
        if self._cache_version != table.version:
            self._check_caches()
        tkey = (proto, pkt.src, pkt.sport, pkt.dst, pkt.dport)
        st = self._out_cache.get(tkey)
        if st is None:
            rec = table.by_tuple(*tkey)
            if rec is None:
                action = handshake.on_outgoing_first_contact(
                    self.availability, pkt.dst, pkt.dport, now, self._query_interval_us)
                if action is not SendAction.MPIP:
                    self._send_plain(pkt, action)
                    return
                rec = self._create_outgoing_session(pkt)
                if rec is None:
                    host.emit(pkt, pkt.src)
                    return
            st = self.states[rec.key]
            self._check_caches()
            self._out_cache[tkey] = st
        rec = st.record
        if st.paths_version != table.version:
            st.paths = table.session_paths(rec.key)
            st.paths_version = table.version
        paths = st.paths
        if not paths:
            host.count("no_path_fallback")
            host.emit(pkt, pkt.src)
            return
        flags = _IP_CHANGE if st.ip_change_pending else 0
        if self.rules.rules:
            rule = self.rules.match(pkt.dst, pkt.dport, proto, pkt.payload_len, now / 1000)
            decision = route_packet(rule, paths, self.rng)
            by_id = table.paths
            chosen = [by_id[pid] for pid in decision.path_ids]
            if decision.protected:
                flags |= _PROTECTED
        elif len(paths) == 1:
            chosen = paths
        else:
            chosen = (pick_path(paths, self.rng),)
        fb_pid, fb_delay = st.feedback.pop_feedback()
        addrs = host.up_addrs()
        if addrs is self._advert_src and addrs:
            count = len(addrs)
            rot = self._addr_rot + 1
            if rot >= count:
                rot = 0
            self._addr_rot = rot
            slot = self._advert_ints[rot]
        else:
            count, slot = self._advert()
        ts = (now // 1000 + self.clock_offset_ms) & 0xFFFFFFFF
        node_id, sid = self.node_id, rec.session_id
        wrap = self._wrap_tcp and rec.protocol == Protocol.TCP
        wire = self.params.wire_cm
        for path in chosen:
            pid = path.path_id
            if wire:
                cm = pack_cm(flags, node_id, sid, pid, fb_pid, ts, fb_delay, count, slot)
            else:
                cm = _new_cm(ControlMessage, (flags, node_id, sid, pid, fb_pid, ts, fb_delay,
                                              count, slot, CM_VERSION))
            if len(chosen) == 1:
                # the engine owns packets handed to output(); rewrite in place
                out = pkt
                out.src = path.src_addr
                out.sport = path.src_port
                out.dst = path.dst_addr
                out.dport = path.dst_port
                out.cm = cm
                out.path_tag = pid
            else:
                out = SimPacket(path.src_addr, path.src_port, path.dst_addr, path.dst_port, proto,
                                pkt.payload_len, pkt.seq, pkt.ack, pkt.tcp_flags, pkt.sack, cm,
                                pkt.inner, pkt.payload, pkt.created_us, None, pkt.flow, pid)
            if wrap and not self._is_original(rec, path):
                out = udp_wrap(out, (path.src_addr, path.src_port), (path.dst_addr, path.dst_port))
            host.emit(out, path.src_addr)
        if st.ip_change_pending:
            st.ip_change_pending = False
            self._reset_paths(rec.key, chosen[0].path_id, "local")
        st.last_out = pkt
        st.last_send_us = now
        rec.update_time = now

    def _send_plain(self, pkt: SimPacket, action: SendAction) -> None:
        host = self.host
        self._last_to[(pkt.dst, pkt.dport)] = pkt
        if action is SendAction.PLAIN_PLUS_QUERY:
            query = pkt.copy(cm=self._cm(_ENABLE))
            host.emit(query, pkt.src)
            host.count("queries_sent")
            entry = self.availability.entry(pkt.dst, pkt.dport)
            if entry.available is Availability.FALSE:
                host.event("mpip_unavailable", f"{pkt.dst}:{pkt.dport} queries={entry.query_count}")
        host.count("plain_sent")
        host.emit(pkt, pkt.src)

    def _create_outgoing_session(self, pkt: SimPacket) -> Optional[SessionRecord]:
        dest = self.node_addrs.node_for(pkt.dst, pkt.dport)
        if dest is None:
            return None
        sid = self.table.allocate_session_id(dest)
        rec = SessionRecord(dest, sid, pkt.src, pkt.sport, pkt.dst, pkt.dport,
                            Protocol(pkt.proto), update_time=self.clock.now)
        self.table.add_session(rec)
        self._new_state(rec, pkt.socket_pair in self._syn_sent)
        self.host.event("session_create", f"node={dest:012x} sid={sid} {pkt.proto} out")
        path = self.table.add_path(rec.key, pkt.src, pkt.sport, pkt.dst, pkt.dport)
        self.host.event("path_add", self._path_str(path))
        self._probe_session(self.states[rec.key], self.clock.now)
        return rec

    # -- network -> transport -------------------------------------------------
    def input(self, pkt: SimPacket) -> None:
        host = self.host
        if pkt.cm is None:
            self.rx_plain += 1
            host.deliver(pkt)
            return
        if not self.enabled:
            self.rx_dropped += 1
            host.count("rx_cm_at_plain_node")
            return
        cm = pkt.cm
        if type(cm) is bytes:
            try:
                cm = ControlMessage(*unpack_cm(cm))
            except CmError:
                host.count("rx_corrupt_cm")
                self.rx_plain += 1
                pkt.cm = None
                host.deliver(pkt)
                return
        flags, node, sid, pid, fb_pid, ts, delay, count, slot, _ = cm
        now = self.clock.now
        addrs = self.node_addrs
        if count:
            seen = self._adv_seen.get(node)
            if seen is None or seen[0] != count:
                seen = self._adv_seen[node] = (count, set())
            if slot not in seen[1]:
                seen[1].add(slot)
                if addrs.advertise(node, count, int_to_addr(slot)):
                    self._on_remote_addrs_changed(node)
        if flags & (_ENABLE | _ENABLED):
            addrs.learn(node, pkt.src, pkt.sport)
            self.rx_consumed += 1
            observed = (pkt.src, pkt.sport)
            if flags & _ENABLE:
                self._on_query(pkt, cm, observed)
            elif handshake.on_receive_confirmation(self.availability, observed):
                host.event("mpip_available", f"{observed[0]}:{observed[1]}")
            return
        table = self.table
        if self._cache_version != table.version:
            self._check_caches()
        ckey = (node, sid, pkt.dst, pkt.dport, pkt.src, pkt.sport)
        hit = self._in_cache.get(ckey)
        if hit is not None:
            st, path = hit
            key = st.record.key
        else:
            # first packet on this socket pair: learn the sender and maybe a new path
            addrs.learn(node, pkt.src, pkt.sport)
            self.availability.record_confirmation(pkt.src, pkt.sport)
            if sid == 0:
                self.rx_consumed += 1
                return
            key = (node, sid)
            st = self.states.get(key)
            if st is None:
                st = self._create_incoming_session(pkt, cm, key)
                if st is None:
                    self.rx_dropped += 1
                    host.count("rx_unknown_session")
                    return
                key = st.record.key
            path = table.find_path(key, pkt.dst, pkt.dport, pkt.src, pkt.sport)
            if path is None:
                path = table.add_path(key, pkt.dst, pkt.dport, pkt.src, pkt.sport)
                host.event("path_add", self._path_str(path))
            self._check_caches()
            self._in_cache[ckey] = (st, path)
        rec = st.record
        if flags & _IP_CHANGE:
            host.count("ip_change_rx")
            addrs.forget_advertised(node)
            self._adv_seen.pop(node, None)
            st.feedback.forget(keep=(pid,))
            self._reset_paths(key, path.path_id, "remote")
        if pid:
            st.feedback.on_delay_sample(pid, ts, (now // 1000 + self.clock_offset_ms) & 0xFFFFFFFF)
        if fb_pid:
            fpath = table.paths.get(fb_pid)
            if fpath is not None and fpath.dest_node_id == node and fpath.session_id == key[1]:
                update_delay_metrics(fpath, delay)
        if flags & _INTERNAL or pid == 0:
            if flags & _HS:
                self._on_hs(pkt, cm, st)
            self.rx_consumed += 1
            return
        rec.update_time = now

        if flags & _PROTECTED:
            digest = payload_digest(pkt.seq, pkt.ack, pkt.payload_len, pkt.payload)
            if not st.dedup.check((key, ts, digest), now):
                self.rx_dropped += 1
                host.count("rx_dedup")
                host.event("dedupe", f"sid={rec.session_id} ts={ts}")
                return
        if pkt.inner is not None:
            if rec.protocol != Protocol.TCP:
                self.rx_dropped += 1
                host.count("rx_unknown_session")
                return
            pkt = udp_unwrap(pkt, rec)
        else:
            pkt.src = rec.orig_dst_addr
            pkt.sport = rec.orig_dst_port
            pkt.dst = rec.orig_src_addr
            pkt.dport = rec.orig_src_port
        pkt.cm = None
        pkt.path_tag = pid
        reorder = st.reorder
        if reorder is not None and pkt.payload_len > 0:
            self.reorder_in += 1
            before = reorder.flushes
            ready = reorder.on_segment(pkt)
            if reorder.flushes != before:
                host.event("reorder_flush", f"sid={rec.session_id} n={len(ready)} next={reorder.expected_seq}")
            self.reorder_out += len(ready)
            for seg in ready:
                host.deliver(seg)
            return
        self.rx_mpip += 1
        host.deliver(pkt)

    @property
    def reorder_held(self) -> int:
        return sum(len(st.reorder) for st in self.states.values() if st.reorder is not None)

    def _create_incoming_session(self, pkt: SimPacket, cm: ControlMessage,
                                 key: tuple[int, int]) -> Optional[SessionState]:
        if cm.path_id == 0 or pkt.inner is not None or cm.flags & _INTERNAL:
            return None
        existing = self.table.by_tuple(pkt.proto, pkt.dst, pkt.dport, pkt.src, pkt.sport)
        if existing is not None and existing.dest_node_id == cm.source_node_id:
            # Both ends opened the session concurrently; the lower node ID's choice wins.
            if cm.source_node_id < self.node_id:
                old = existing.key
                st = self.states.pop(old)
                self.table.rekey(old, cm.session_id)
                self.states[existing.key] = st
                self.host.event("session_rekey", f"sid {old[1]}->{cm.session_id}")
            return self.states[existing.key]
        rec = SessionRecord(cm.source_node_id, cm.session_id, pkt.dst, pkt.dport,
                            pkt.src, pkt.sport, Protocol(pkt.proto), update_time=self.clock.now)
        self.table.add_session(rec)
        self.host.event("session_create", f"node={cm.source_node_id:012x} sid={cm.session_id} {pkt.proto} in")
        return self._new_state(rec, rec.four_tuple in self._syn_sent)

    def _on_query(self, pkt: SimPacket, cm: ControlMessage, observed: tuple[str, int]) -> None:
        """Answer an ENABLE query on a duplicate of our last packet to that peer."""
        handshake.on_receive_query(self.availability, self.node_addrs, cm, observed)
        last = self._last_to.get(observed)
        if last is not None:
            reply = last.copy(src=pkt.dst, sport=pkt.dport, cm=self._cm(_ENABLED))
        else:
            reply = SimPacket(pkt.dst, pkt.dport, observed[0], observed[1], pkt.proto,
                              tcp_flags=ACK if pkt.proto == "tcp" else 0,
                              cm=self._cm(_ENABLED), created_us=self.clock.now)
        self.host.count("confirmations_sent")
        self.host.emit(reply, pkt.dst)

    # -- fake TCP handshake ----------------------------------------------------
    def _on_hs(self, pkt: SimPacket, cm: ControlMessage, st: SessionState) -> None:
        rec = st.record
        local = (pkt.dst, pkt.dport)
        remote = (pkt.src, pkt.sport)
        if pkt.tcp_flags & SYN and not pkt.tcp_flags & ACK:
            reply = hs_packet("syn-ack", local, remote, pkt.seq or 0)
            reply.cm = self._cm(_HS, rec.session_id)
            self.host.event("fake_handshake", f"syn-ack {local[0]}->{remote[0]}")
            self.host.emit(reply, local[0])
        elif pkt.tcp_flags & SYN and pkt.tcp_flags & ACK:
            hs = st.handshakes.get((local[0], remote[0]))
            if hs is not None and hs.on_syn_ack():
                ack = hs_packet("ack", local, remote, pkt.seq or 0)
                ack.cm = self._cm(_HS, rec.session_id)
                self.host.event("fake_handshake", f"done {local[0]}->{remote[0]}")
                self.host.emit(ack, local[0])

    def fake_handshake(self, st: SessionState, local_addr: str, remote_addr: str) -> bool:
        """Send (or retry) the SYN of a fake handshake toward one candidate path."""
        rec = st.record
        local = (local_addr, rec.orig_src_port)
        remote = (remote_addr, rec.orig_dst_port)
        hs = st.handshakes.get((local_addr, remote_addr))
        if hs is None:
            hs = st.handshakes[(local_addr, remote_addr)] = FakeHandshake(local, remote)
        if hs.state is HsState.DONE:
            return False
        now = self.clock.now
        if hs.last_us is not None and now - hs.last_us < self.params.probe_interval_ms * 1000:
            return False
        if not hs.next_syn(now, self.params.probe_retries):
            if hs.state is HsState.BLOCKED and not hs.log:
                hs.log.append(now)
                self.host.event("nat_blocked", f"sid={rec.session_id} {local_addr}->{remote_addr}")
            return False
        seq = st.last_out.seq if st.last_out is not None and st.last_out.seq is not None else 0
        syn = hs_packet("syn", local, remote, seq)
        syn.cm = self._cm(_HS, rec.session_id)
        syn.created_us = now
        self.host.event("fake_handshake", f"syn {local_addr}->{remote_addr} try={hs.tries}")
        self.host.emit(syn, local_addr)
        return True

    # -- path establishment ----------------------------------------------------
    def _remote_addrs(self, rec: SessionRecord) -> list[str]:
        addrs = self.node_addrs.advertised(rec.dest_node_id)
        if rec.orig_dst_addr not in addrs:
            addrs.insert(0, rec.orig_dst_addr)
        return addrs

    def _probe_session(self, st: SessionState, now: int) -> None:
        rec = st.record
        fake_hs = self.params.nat_mode is NatMode.FAKE_HANDSHAKE and rec.protocol == Protocol.TCP
        if fake_hs and not st.is_client:
            return
        paths = self.table.session_paths(rec.key)
        cands = probe_candidates(self.host.up_addrs(), self._remote_addrs(rec), paths)
        if not cands:
            return
        interval = self.params.probe_interval_ms * 1000
        for la, ra in cands:
            if fake_hs:
                if (la, ra) != (rec.orig_src_addr, rec.orig_dst_addr):
                    self.fake_handshake(st, la, ra)
                continue
            ps = st.probes.get((la, ra))
            if ps is None:
                ps = st.probes[(la, ra)] = ProbeState()
            if not probe_due(ps, now, interval, self.params.probe_retries):
                continue
            ps.tries += 1
            ps.last_us = now
            self._send_probe(st, la, ra)

    def _send_probe(self, st: SessionState, local_addr: str, remote_addr: str) -> None:
        rec = st.record
        template = st.last_out
        src, dst = (local_addr, rec.orig_src_port), (remote_addr, rec.orig_dst_port)
        cm = self._cm(0, rec.session_id, 0)
        if template is not None:
            probe = SimPacket(src[0], src[1], dst[0], dst[1], template.proto, template.payload_len,
                              template.seq, template.ack, template.tcp_flags, cm=cm,
                              created_us=self.clock.now, flow=template.flow)
        else:
            probe = SimPacket(src[0], src[1], dst[0], dst[1], rec.protocol.value,
                              tcp_flags=ACK if rec.protocol == Protocol.TCP else 0, cm=cm,
                              created_us=self.clock.now)
        if self.params.nat_mode is NatMode.UDP_WRAPPER and rec.protocol == Protocol.TCP:
            probe = udp_wrap(probe, src, dst)
        self.host.count("probes_sent")
        self.host.emit(probe, local_addr)

    def _on_remote_addrs_changed(self, node_id: int) -> None:
        for st in self.states.values():
            if st.record.dest_node_id == node_id:
                st.probes.clear()
                st.handshakes = {k: v for k, v in st.handshakes.items() if v.state is HsState.DONE}

    def _reset_paths(self, key: tuple[int, int], keep_pid: int, side: str) -> None:
        removed = []
        for path in self.table.session_paths(key):
            if path.path_id != keep_pid:
                self.table.remove_path(path.path_id)
                removed.append(path.path_id)
        st = self.states[key]
        st.probes.clear()
        st.handshakes.clear()
        if side == "remote":
            self.host.event("session_reset_paths",
                            f"sid={key[1]} kept={keep_pid} removed={removed}")
        else:
            self.host.event("ip_change_sent", f"sid={key[1]} kept={keep_pid} removed={removed}")

    def on_ip_change(self, changed_addr: str, up: bool) -> None:
        """An interface address went away or came back."""
        if not up:
            for key, st in self.states.items():
                for path in self.table.session_paths(key):
                    if path.src_addr == changed_addr:
                        self.table.remove_path(path.path_id)
                        self.host.event("path_remove", self._path_str(path))
                st.ip_change_pending = True
        for st in self.states.values():
            st.probes.clear()
            st.handshakes.clear()
        self.host.event("ip_change", f"{changed_addr} {'up' if up else 'down'}")

    # -- timers ----------------------------------------------------------------
    def tick(self) -> None:
        """Every T: adjust weights and advance path establishment."""
        now = self.clock.now
        params = self.params.weights
        for key, st in self.states.items():
            paths = self.table.session_paths(key)
            if len(paths) > 1:
                adjust_weights(paths, params)
            self._probe_session(st, now)

    def heartbeat_tick(self) -> None:
        now = self.clock.now
        interval = self.params.heartbeat_ms * 1000
        for key, st in self.states.items():
            if st.record.protocol != Protocol.UDP:
                continue
            if st.last_send_us is not None and now - st.last_send_us < interval:
                continue
            rec = st.record
            for path in self.table.session_paths(key):
                hb = SimPacket(path.src_addr, path.src_port, path.dst_addr, path.dst_port, "udp",
                               cm=self._cm(_HEARTBEAT, rec.session_id, path.path_id,
                                           st.feedback.pop_feedback()),
                               created_us=now, path_tag=path.path_id)
                st.heartbeats_sent += 1
                self.host.count("heartbeats_sent")
                self.host.emit(hb, path.src_addr)

    def expire_tick(self) -> list[tuple[int, int]]:
        now = self.clock.now
        gone = self.table.expire_sessions(now, self.params.session_ttl_ms * 1000)
        for key in gone:
            self.states.pop(key, None)
            self.host.event("session_expire", f"node={key[0]:012x} sid={key[1]}")
        return gone

    # -- reporting -------------------------------------------------------------
    @staticmethod
    def _path_str(p: PathRecord) -> str:
        return f"sid={p.session_id} pid={p.path_id} {p.src_addr}:{p.src_port}->{p.dst_addr}:{p.dst_port}"
