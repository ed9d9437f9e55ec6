"""Event loop. Time is integer microseconds; ties break on insertion order."""

from __future__ import annotations

import gc
import heapq
import random
from typing import Callable


def component_rng(seed: int, name: str) -> random.Random:
    """Independent stream per component so one consumer can't shift another's draws."""
    return random.Random(f"{seed}/{name}")


class Simulator:
    def __init__(self, seed: int = 0):
        self.now = 0
        self.seed = seed
        self._heap: list = []
        self._eid = 0
        self.events_run = 0

    def at(self, when_us: int, fn: Callable, *args) -> None:
        if when_us < self.now:
            raise ValueError(f"cannot schedule in the past ({when_us} < {self.now})")
        self._eid += 1
        heapq.heappush(self._heap, (when_us, self._eid, fn, args))

    def after(self, delay_us: int, fn: Callable, *args) -> None:
        self.at(self.now + delay_us, fn, *args)

    def every(self, period_us: int, fn: Callable, start_us: int = 0) -> None:
        """Call ``fn()`` at start, start+period, ... until the run ends."""
        def tick():
            fn()
            self.after(period_us, tick)
        self.at(max(start_us, self.now), tick)

    def run(self, until_us: int) -> None:
        heap = self._heap
        pop = heapq.heappop
        n = 0
        # packets and events are acyclic; the cycle collector only costs time here
        was_enabled = gc.isenabled()
        gc.disable()
        try:
            while heap and heap[0][0] <= until_us:
                when, _, fn, args = pop(heap)
                self.now = when
                fn(*args)
                n += 1
        finally:
            self.events_run += n
            if was_enabled:
                gc.enable()
        self.now = max(self.now, until_us)

    @property
    def pending(self) -> int:
        return len(self._heap)
