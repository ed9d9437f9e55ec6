"""Per-packet path selection and weight adjustment."""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Optional, Sequence

from .tables import W_MAX, W_MIN, PathRecord, Priority, RoutingRule


class NoPathAvailable(Exception):
    pass


@dataclass(frozen=True)
class WeightParams:
    step: int = 10          # S, weight units per adjustment
    interval_ms: int = 100  # T
    w_max: int = W_MAX
    w_min: int = W_MIN

    def __post_init__(self):
        if self.step < 1:
            raise ValueError("step must be >= 1")
        if self.interval_ms <= 0:
            raise ValueError("interval must be > 0")


def path_probabilities(paths: Sequence[PathRecord]) -> list[float]:
    total = sum(p.weight for p in paths)
    return [p.weight / total for p in paths]


def pick_path(paths: Sequence[PathRecord], rng) -> PathRecord:
    """Draw one path with probability weight / total weight."""
    if not paths:
        raise NoPathAvailable()
    if len(paths) == 1:
        return paths[0]
    total = 0
    for p in paths:
        total += p.weight
    x = rng.random() * total
    acc = 0
    for p in paths:
        acc += p.weight
        if x < acc:
            return p
    return paths[-1]


def adjust_weights(paths: Sequence[PathRecord], params: WeightParams = WeightParams()) -> None:
    """One round of queuing-delay-driven weight adjustment, in place."""
    n = len(paths)
    if n == 0:
        return
    q_avg = sum(p.q for p in paths) / n
    for p in paths:
        if p.q <= q_avg:
            p.weight = min(params.w_max, p.weight + params.step)
        else:
            p.weight = max(params.w_min, p.weight - params.step)


def lowest_delay_path(paths: Sequence[PathRecord]) -> PathRecord:
    """Minimum real-time delay; paths without samples lose, ties go to the lowest ID."""
    if not paths:
        raise NoPathAvailable()
    return min(paths, key=lambda p: (p.d_rt is None, p.d_rt or 0, p.path_id))


@dataclass(frozen=True)
class Decision:
    mode: str                 # "all-paths" | "single-path" | "protected"
    path_ids: tuple[int, ...]

    @property
    def protected(self) -> bool:
        return self.mode == "protected"


def route_packet(rule: Optional[RoutingRule], paths: Sequence[PathRecord], rng) -> Decision:
    """Apply the matched rule (or the all-paths default) to the session's paths."""
    if not paths:
        raise NoPathAvailable()
    if rule is not None and rule.via is not None:
        scoped = [p for p in paths if p.src_addr == rule.via]
        if scoped:
            paths = scoped
    priority = rule.priority if rule is not None else Priority.TF
    if priority is Priority.RF:
        return Decision("single-path", (lowest_delay_path(paths).path_id,))
    if priority is Priority.PF:
        return Decision("protected", tuple(p.path_id for p in paths))
    return Decision("all-paths", (pick_path(paths, rng).path_id,))


def payload_digest(*parts) -> int:
    return zlib.crc32(repr(parts).encode())


class ProtectedDedup:
    """Deliver the first copy of each protected packet; drop repeats within a window."""

    def __init__(self, window_us: int = 1_000_000):
        self.window_us = window_us
        self._seen: dict[tuple, int] = {}
        self.discarded = 0

    def check(self, key: tuple, now_us: int) -> bool:
        """True to deliver, False to discard."""
        if len(self._seen) > 256:
            horizon = now_us - self.window_us
            self._seen = {k: t for k, t in self._seen.items() if t >= horizon}
        first = self._seen.get(key)
        if first is not None and now_us - first <= self.window_us:
            self.discarded += 1
            return False
        self._seen[key] = now_us
        return True


def dedup_protected(dedup: ProtectedDedup, session_key: tuple, packet_timestamp: int,
                    digest: int, now_us: int) -> str:
    return "deliver" if dedup.check((session_key, packet_timestamp, digest), now_us) else "discard"
