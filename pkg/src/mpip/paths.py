"""Path monitoring and establishment helpers.

Delay flows in two halves. The receiver of a packet turns its timestamp into a
one-way delay sample for the sender's path and smooths it (:class:`DelayMonitor`).
The smoothed value is fed back in a later reverse-direction CM, and the sender
folds it into its own :class:`~mpip.tables.PathRecord` via
:func:`update_delay_metrics`.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .tables import PathRecord

SMOOTHING_WINDOW = 10
HEARTBEAT_MS = 200
PROBE_RETRIES = 3
PROBE_INTERVAL_MS = 200

_U32 = 1 << 32


def one_way_delay(send_ts: int, recv_ts: int) -> int:
    """recv - send on 32-bit wrapping millisecond clocks, as a signed value."""
    d = (recv_ts - send_ts) % _U32
    return d - _U32 if d >= 1 << 31 else d


def moving_average(samples: Iterable[float]) -> float:
    samples = list(samples)
    return sum(samples) / len(samples)


def update_delay_metrics(path: PathRecord, d_rt: int) -> PathRecord:
    path.d_rt = d_rt
    path.d_min = d_rt if path.d_min is None else min(path.d_min, d_rt)
    path.q = d_rt - path.d_min
    path.q_max = max(path.q_max, path.q)
    return path


class DelayMonitor:
    """Receiver-side smoothing for one remote path (keyed by the sender's path ID)."""

    __slots__ = ("window", "_sum", "fresh", "samples")

    def __init__(self, window: int = SMOOTHING_WINDOW):
        self.window: deque = deque(maxlen=window)
        self._sum = 0
        self.fresh = False
        self.samples = 0

    def add(self, sample: int) -> float:
        if len(self.window) == self.window.maxlen:
            self._sum -= self.window[0]
        self.window.append(sample)
        self._sum += sample
        self.fresh = True
        self.samples += 1
        return self._sum / len(self.window)

    @property
    def d_rt(self) -> float:
        return self._sum / len(self.window)


@dataclass
class FeedbackQueue:
    """Per-session inbound delay state and round-robin feedback selection."""

    window: int = SMOOTHING_WINDOW
    monitors: dict[int, DelayMonitor] = field(default_factory=dict)
    dropped: int = 0
    _cursor: int = 0
    _order: list = field(default_factory=list)

    def on_delay_sample(self, path_id: int, send_ts: int, recv_ts: int) -> Optional[float]:
        """Record one sample for the sender's ``path_id``; returns the smoothed delay."""
        if path_id == 0:
            self.dropped += 1
            return None
        mon = self.monitors.get(path_id)
        if mon is None:
            mon = self.monitors[path_id] = DelayMonitor(self.window)
            self._order = sorted(self.monitors)
        d = (recv_ts - send_ts) & 0xFFFFFFFF
        return mon.add(d - _U32 if d >= 1 << 31 else d)

    def pop_feedback(self) -> tuple[int, int]:
        """Next (feedback_path_id, path_delay) to piggyback, or (0, 0)."""
        pids = self._order
        n = len(pids)
        if not n:
            return 0, 0
        for i in range(n):
            pid = pids[(self._cursor + i) % n]
            mon = self.monitors[pid]
            if mon.fresh:
                mon.fresh = False
                self._cursor = (self._cursor + i + 1) % n
                # floor, not round: shift-invariant, so a clock offset cannot move q
                return pid, mon._sum // len(mon.window)
        return 0, 0

    def forget(self, keep: Iterable[int] = ()) -> None:
        keep = set(keep)
        for pid in [p for p in self.monitors if p not in keep]:
            del self.monitors[pid]
        self._order = sorted(self.monitors)


@dataclass
class ProbeState:
    tries: int = 0
    last_us: Optional[int] = None
    blocked: bool = False
    established: bool = False


def probe_candidates(local_addrs: Iterable[str], remote_addrs: Iterable[str],
                     existing: Iterable[PathRecord]) -> list[tuple[str, str]]:
    """Local x remote address pairs not already covered by a path."""
    have = {(p.src_addr, p.dst_addr) for p in existing}
    out = []
    for la in local_addrs:
        for ra in remote_addrs:
            if (la, ra) not in have:
                out.append((la, ra))
    return out


def probe_due(state: ProbeState, now_us: int, interval_us: int = PROBE_INTERVAL_MS * 1000,
              retries: int = PROBE_RETRIES) -> bool:
    if state.blocked or state.established:
        return False
    if state.tries >= retries:
        return False
    return state.last_us is None or now_us - state.last_us >= interval_us


def reset_after_ip_change(paths: list[PathRecord], keep_pid: Optional[int]) -> list[PathRecord]:
    """Paths to remove so that only ``keep_pid`` survives."""
    return [p for p in paths if p.path_id != keep_pid]


def heartbeat_due(protocol: str, last_send_us: Optional[int], now_us: int,
                  interval_us: int = HEARTBEAT_MS * 1000) -> bool:
    if protocol != "udp":
        return False
    return last_send_us is None or now_us - last_send_us >= interval_us
