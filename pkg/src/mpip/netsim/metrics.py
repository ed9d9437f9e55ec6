"""Run-time measurement: per-interval path rows, events, drops, counters."""

from __future__ import annotations

import csv
import io
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional

METRICS_HEADER = ("time_ms", "session_id", "path_id", "goodput_bps", "weight", "q_ms", "d_rt_ms")
EVENTS_HEADER = ("time_ms", "event", "detail")
SAMPLE_INTERVAL_US = 100_000


@dataclass
class MetricRow:
    time_ms: int
    session_id: str
    path_id: int
    goodput_bps: int
    weight: Optional[int]
    q_ms: Optional[int]
    d_rt_ms: Optional[int]

    def as_tuple(self) -> tuple:
        blank = lambda v: "" if v is None else v  # noqa: E731
        return (self.time_ms, self.session_id, self.path_id, self.goodput_bps,
                blank(self.weight), blank(self.q_ms), blank(self.d_rt_ms))


@dataclass
class MetricsLog:
    rows: list[MetricRow] = field(default_factory=list)
    events: list[tuple[int, str, str]] = field(default_factory=list)
    drops: Counter = field(default_factory=Counter)
    counters: dict[str, int] = field(default_factory=dict)
    injected: int = 0
    received: int = 0
    in_flight: int = 0
    flows: dict = field(default_factory=dict)
    # session name -> {path id: cumulative bytes at the previous sample}
    _last: dict = field(default_factory=dict)

    # -- recording ------------------------------------------------------------
    def event(self, time_us: int, name: str, detail: str) -> None:
        self.events.append((time_us, name, detail))

    def drop(self, time_us: int, pkt, reason: str, where: str) -> None:
        self.drops[reason] += 1
        if reason.startswith("nat_"):
            self.event(time_us, "nat_drop", f"{where} {reason} {pkt.proto} {pkt.src}:{pkt.sport}->{pkt.dst}:{pkt.dport}")

    def sample(self, time_us: int, session: str, paths: list, delivered: dict,
               interval_us: int = SAMPLE_INTERVAL_US) -> None:
        """Emit one row per path that exists now or delivered bytes this interval.

        ``delivered`` is the receiver's cumulative byte count per sender path ID;
        rows carry the difference since the previous sample.
        """
        last = self._last.setdefault(session, {})
        by_id = {p.path_id: p for p in paths}
        pids = set(by_id)
        for pid, total in delivered.items():
            if total != last.get(pid, 0):
                pids.add(pid)
        for pid in sorted(pids):
            total = delivered.get(pid, 0)
            n = total - last.get(pid, 0)
            last[pid] = total
            p = by_id.get(pid)
            self.rows.append(MetricRow(
                time_us // 1000, session, pid, n * 8 * 1_000_000 // interval_us,
                p.weight if p else None,
                p.q if p else None,
                p.d_rt if p else None,
            ))

    # -- reporting ------------------------------------------------------------
    @property
    def dropped(self) -> int:
        return sum(self.drops.values())

    def conservation_gap(self) -> int:
        """Packets unaccounted for; zero when every injection is resolved or in flight."""
        return self.injected - self.received - self.dropped - self.in_flight

    def metrics_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for row in self.rows:
            w.writerow(row.as_tuple())
        return buf.getvalue()

    def events_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(EVENTS_HEADER)
        for t, name, detail in self.events:
            w.writerow((f"{t / 1000:.3f}", name, detail))
        return buf.getvalue()

    def series(self, session: str, path_id: Optional[int] = None) -> list[MetricRow]:
        return [r for r in self.rows
                if r.session_id == session and (path_id is None or r.path_id == path_id)]

    def goodput(self, session: str, t0_ms: int, t1_ms: int, path_id: Optional[int] = None) -> float:
        """Mean goodput in bit/s over rows with t0 < time_ms <= t1 (rows close their interval)."""
        rows = [r for r in self.series(session, path_id) if t0_ms < r.time_ms <= t1_ms]
        return sum(r.goodput_bps for r in rows) / max(1, (t1_ms - t0_ms) // 100)

    def count_events(self, name: str) -> int:
        return sum(1 for _, n, _ in self.events if n == name)
