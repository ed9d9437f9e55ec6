"""Per-node MPIP state: availability, node/address mapping, sessions, paths, rules."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

QUERY_THRESHOLD = 10
SESSION_TTL_MS = 60_000
W_MAX = 1000
W_MIN = 1
W_TOTAL = 1000


class Availability(enum.Enum):
    UNKNOWN = "unknown"
    TRUE = "true"
    FALSE = "false"


@dataclass
class AvailabilityEntry:
    dest_addr: str
    dest_port: int
    available: Availability = Availability.UNKNOWN
    query_count: int = 0
    last_query_us: Optional[int] = None


class AvailabilityTable:
    def __init__(self, threshold: int = QUERY_THRESHOLD):
        self.threshold = threshold
        self._entries: dict[tuple[str, int], AvailabilityEntry] = {}

    def lookup(self, addr: str, port: int) -> Availability:
        entry = self._entries.get((addr, port))
        return entry.available if entry else Availability.UNKNOWN

    def entry(self, addr: str, port: int) -> AvailabilityEntry:
        key = (addr, port)
        entry = self._entries.get(key)
        if entry is None:
            entry = self._entries[key] = AvailabilityEntry(addr, port)
        return entry

    def record_confirmation(self, addr: str, port: int) -> bool:
        """Mark the destination MPIP-capable; returns True on a state change.

        A destination already given up on (False) stays False: availability only
        ever leaves Unknown once.
        """
        entry = self.entry(addr, port)
        if entry.available is Availability.UNKNOWN:
            entry.available = Availability.TRUE
            return True
        return False

    def record_query(self, addr: str, port: int, now_us: int = 0) -> AvailabilityEntry:
        entry = self.entry(addr, port)
        if entry.available is Availability.UNKNOWN:
            entry.query_count += 1
            entry.last_query_us = now_us
            if entry.query_count >= self.threshold:
                entry.available = Availability.FALSE
        return entry

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self):
        return iter(self._entries.values())


@dataclass
class NodeAddrEntry:
    node_id: int
    addr: str
    port: int


class NodeAddrTable:
    """Node ID -> observed (addr, port) pairs, plus advertised local addresses."""

    def __init__(self):
        self._observed: dict[tuple[int, str, int], NodeAddrEntry] = {}
        self._by_socket: dict[tuple[str, int], int] = {}
        # node_id -> (announced count, addresses in arrival order)
        self._advertised: dict[int, tuple[int, list[str]]] = {}

    def learn(self, node_id: int, addr: str, port: int) -> bool:
        key = (node_id, addr, port)
        if key in self._observed:
            return False
        self._observed[key] = NodeAddrEntry(node_id, addr, port)
        self._by_socket[(addr, port)] = node_id
        return True

    def advertise(self, node_id: int, count: int, addr: str) -> bool:
        """Accumulate one rotated address slot; returns True if the set grew."""
        known = self._advertised.get(node_id)
        if known is None or known[0] != count:
            self._advertised[node_id] = (count, [addr] if count else [])
            return bool(count)
        if addr in known[1] or len(known[1]) >= count:
            return False
        known[1].append(addr)
        return True

    def forget_advertised(self, node_id: int) -> None:
        self._advertised.pop(node_id, None)

    def node_for(self, addr: str, port: int) -> Optional[int]:
        return self._by_socket.get((addr, port))

    def entries(self, node_id: int) -> list[NodeAddrEntry]:
        return [e for e in self._observed.values() if e.node_id == node_id]

    def advertised(self, node_id: int) -> list[str]:
        known = self._advertised.get(node_id)
        return list(known[1]) if known else []

    def __len__(self) -> int:
        return len(self._observed)


class Protocol(str, enum.Enum):
    TCP = "tcp"
    UDP = "udp"


@dataclass
class SessionRecord:
    dest_node_id: int
    session_id: int
    orig_src_addr: str
    orig_src_port: int
    orig_dst_addr: str
    orig_dst_port: int
    protocol: Protocol
    next_seq: Optional[int] = None
    update_time: int = 0

    @property
    def key(self) -> tuple[int, int]:
        return (self.dest_node_id, self.session_id)

    @property
    def four_tuple(self) -> tuple[str, int, str, int]:
        return (self.orig_src_addr, self.orig_src_port, self.orig_dst_addr, self.orig_dst_port)


@dataclass
class PathRecord:
    dest_node_id: int
    session_id: int
    path_id: int
    src_addr: str
    src_port: int
    dst_addr: str
    dst_port: int
    d_min: Optional[int] = None
    d_rt: Optional[int] = None
    q: int = 0
    q_max: int = 0
    weight: int = W_TOTAL

    @property
    def session_key(self) -> tuple[int, int]:
        return (self.dest_node_id, self.session_id)


class TableError(Exception):
    pass


def _tuple_key(rec: SessionRecord) -> tuple:
    # plain str so lookups with "tcp"/"udp" hit (str enums hash by member name)
    return (Protocol(rec.protocol).value, *rec.four_tuple)


class SessionTable:
    """Sessions keyed by (dest node, session ID) with their path records.

    Path IDs are allocated per node from 1 upward and skip IDs still in use;
    0 is reserved for "no path".
    """

    def __init__(self):
        self.sessions: dict[tuple[int, int], SessionRecord] = {}
        self.paths: dict[int, PathRecord] = {}
        self._session_paths: dict[tuple[int, int], list[int]] = {}
        self._by_tuple: dict[tuple, tuple[int, int]] = {}
        self._next_sid = 1
        self._next_pid = 1
        # bumped on every structural change so callers can cache path lists
        self.version = 0

    # sessions -----------------------------------------------------------------
    def allocate_session_id(self, dest_node_id: int) -> int:
        for _ in range(0xFFFF):
            sid = self._next_sid
            self._next_sid = sid % 0xFFFF + 1
            if (dest_node_id, sid) not in self.sessions:
                return sid
        raise TableError("session IDs exhausted")

    def add_session(self, rec: SessionRecord) -> SessionRecord:
        if rec.key in self.sessions:
            raise TableError(f"duplicate session {rec.key}")
        self.sessions[rec.key] = rec
        self._session_paths[rec.key] = []
        self.version += 1
        self._by_tuple[_tuple_key(rec)] = rec.key
        return rec

    def get(self, key: tuple[int, int]) -> Optional[SessionRecord]:
        return self.sessions.get(key)

    def by_tuple(self, protocol, src_addr, src_port, dst_addr, dst_port) -> Optional[SessionRecord]:
        key = self._by_tuple.get((protocol, src_addr, src_port, dst_addr, dst_port))
        return self.sessions.get(key) if key is not None else None

    def rekey(self, old: tuple[int, int], new_sid: int) -> SessionRecord:
        rec = self.sessions.pop(old)
        pids = self._session_paths.pop(old)
        rec.session_id = new_sid
        self.sessions[rec.key] = rec
        self._session_paths[rec.key] = pids
        self._by_tuple[_tuple_key(rec)] = rec.key
        for pid in pids:
            self.paths[pid].session_id = new_sid
        self.version += 1
        return rec

    def remove_session(self, key: tuple[int, int]) -> Optional[SessionRecord]:
        rec = self.sessions.pop(key, None)
        if rec is None:
            return None
        for pid in self._session_paths.pop(key, []):
            self.paths.pop(pid, None)
        self.version += 1
        tkey = _tuple_key(rec)
        if self._by_tuple.get(tkey) == key:
            del self._by_tuple[tkey]
        return rec

    def expire_sessions(self, now: float, ttl: float) -> list[tuple[int, int]]:
        if math.isinf(ttl):
            return []
        stale = [k for k, s in self.sessions.items() if now - s.update_time > ttl]
        for key in stale:
            self.remove_session(key)
        return stale

    # paths --------------------------------------------------------------------
    def _allocate_path_id(self) -> int:
        for _ in range(255):
            pid = self._next_pid
            self._next_pid = pid % 255 + 1
            if pid not in self.paths:
                return pid
        raise TableError("path IDs exhausted")

    def add_path(self, key: tuple[int, int], src_addr: str, src_port: int,
                 dst_addr: str, dst_port: int) -> PathRecord:
        if key not in self.sessions:
            raise TableError(f"no session {key}")
        pid = self._allocate_path_id()
        path = PathRecord(key[0], key[1], pid, src_addr, src_port, dst_addr, dst_port)
        self.paths[pid] = path
        self._session_paths[key].append(pid)
        self.version += 1
        self.reset_weights(key)
        return path

    def remove_path(self, pid: int) -> Optional[PathRecord]:
        path = self.paths.pop(pid, None)
        if path is not None:
            self._session_paths[path.session_key].remove(pid)
            self.version += 1
            self.reset_weights(path.session_key)
        return path

    def session_paths(self, key: tuple[int, int]) -> list[PathRecord]:
        return [self.paths[pid] for pid in self._session_paths.get(key, ())]

    def find_path(self, key, src_addr, src_port, dst_addr, dst_port) -> Optional[PathRecord]:
        for pid in self._session_paths.get(key, ()):
            p = self.paths[pid]
            if (p.src_addr == src_addr and p.dst_addr == dst_addr
                    and p.src_port == src_port and p.dst_port == dst_port):
                return p
        return None

    def reset_weights(self, key: tuple[int, int]) -> None:
        pids = self._session_paths.get(key, ())
        if pids:
            w = max(W_MIN, W_TOTAL // len(pids))
            for pid in pids:
                self.paths[pid].weight = w

    def check_integrity(self) -> None:
        for pid, path in self.paths.items():
            if path.session_key not in self.sessions:
                raise TableError(f"path {pid} orphaned")
            if pid not in self._session_paths[path.session_key]:
                raise TableError(f"path {pid} not indexed")
            if not W_MIN <= path.weight <= W_MAX:
                raise TableError(f"path {pid} weight {path.weight}")


class Priority(str, enum.Enum):
    TF = "Tf"
    RF = "Rf"
    PF = "Pf"


@dataclass(frozen=True)
class RoutingRule:
    """One user routing rule; ``None`` fields are wildcards.

    ``via``, ``active_from_ms`` and ``active_until_ms`` are optional extensions: restrict the
    candidate paths to one local interface, and bound when the rule is active.
    """

    dst_addr: Optional[str]
    dst_port: Optional[int]
    protocol: Optional[str]
    start_size: int
    end_size: Optional[int]
    priority: Priority
    via: Optional[str] = None
    active_from_ms: Optional[int] = None
    active_until_ms: Optional[int] = None

    def __post_init__(self):
        if self.end_size is not None and self.start_size > self.end_size:
            raise ValueError(f"start_size {self.start_size} > end_size {self.end_size}")

    def matches(self, dst_addr: str, dst_port: int, protocol: str, payload_len: int,
                now_ms: Optional[float] = None) -> bool:
        if self.dst_addr is not None and self.dst_addr != dst_addr:
            return False
        if self.dst_port is not None and self.dst_port != dst_port:
            return False
        if self.protocol is not None and self.protocol != protocol:
            return False
        if payload_len < self.start_size:
            return False
        if self.end_size is not None and payload_len > self.end_size:
            return False
        if now_ms is not None:
            if self.active_from_ms is not None and now_ms < self.active_from_ms:
                return False
            if self.active_until_ms is not None and now_ms >= self.active_until_ms:
                return False
        return True


@dataclass
class RuleTable:
    rules: list[RoutingRule] = field(default_factory=list)

    def match(self, dst_addr: str, dst_port: int, protocol: str, payload_len: int,
              now_ms: Optional[float] = None) -> Optional[RoutingRule]:
        for rule in self.rules:
            if rule.matches(dst_addr, dst_port, protocol, payload_len, now_ms):
                return rule
        return None


def match_rule(rules: Iterable[RoutingRule], pkt_meta: dict) -> Optional[Priority]:
    """First matching rule's priority, or None when nothing matches."""
    for rule in rules:
        if rule.matches(pkt_meta["dst_addr"], pkt_meta["dst_port"], pkt_meta["protocol"],
                        pkt_meta["payload_len"], pkt_meta.get("now_ms")):
            return rule.priority
    return None
