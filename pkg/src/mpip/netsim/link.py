"""Point-to-point full-duplex links with a FIFO drop-tail queue per direction."""

from __future__ import annotations

import math
from heapq import heappush
from collections import deque
from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable

if TYPE_CHECKING:
    from ..packet import SimPacket
    from .core import Simulator

DEFAULT_MTU = 1500


@dataclass(frozen=True)
class LinkParams:
    bandwidth_mbps: float
    prop_delay_ms: float
    loss_rate: float = 0.0
    queue_cap: int = 100
    mtu: int = DEFAULT_MTU

    def __post_init__(self):
        if self.bandwidth_mbps <= 0:
            raise ValueError("bandwidth must be positive")
        if self.prop_delay_ms < 0:
            raise ValueError("delay must be non-negative")
        if not 0 <= self.loss_rate < 1:
            raise ValueError("loss rate must be in [0, 1)")
        if self.queue_cap < 1:
            raise ValueError("queue must hold at least one packet")


class Channel:
    """One direction of a link.

    Rather than scheduling a transmit-complete event per packet, the channel
    tracks when the transmitter frees up and schedules only the arrival. The
    deque of finish times gives queue occupancy at any instant.
    """

    def __init__(self, sim: "Simulator", name: str, params: LinkParams, rng,
                 deliver: Callable, drop: Callable):
        """``deliver(pkt)`` receives arrivals; ``drop(pkt, reason, channel)`` every loss."""
        self.sim = sim
        self.name = name
        self.params = params
        self.rng = rng
        self._deliver = deliver
        self._drop = drop
        self._bits_per_us = params.bandwidth_mbps
        self._prop_us = int(round(params.prop_delay_ms * 1000))
        self._queue_cap = params.queue_cap
        self._mtu = params.mtu
        self._loss = params.loss_rate
        self._busy_until = 0
        self._finish: deque = deque()
        self.up = True
        self.epoch = 0
        self.sent_packets = 0
        self.sent_bytes = 0
        self.arrived_bytes = 0
        self.max_occupancy = 0
        self.in_flight = 0

    def occupancy(self) -> int:
        now = self.sim.now
        fin = self._finish  # finish times of packets still queued or on the wire
        while fin and fin[0] <= now:
            fin.popleft()
        return len(fin)

    def send(self, pkt: "SimPacket") -> None:
        if not self.up:
            self._drop(pkt, "link_down", self)
            return
        size = pkt.size
        if size > self._mtu:
            self._drop(pkt, "mtu", self)
            return
        now = self.sim.now
        fin = self._finish  # finish times of packets still queued or on the wire
        while fin and fin[0] <= now:
            fin.popleft()
        occ = len(fin)
        if occ >= self._queue_cap:
            self._drop(pkt, "queue_full", self)
            return
        start = self._busy_until if self._busy_until > now else now
        finish = start + math.ceil(size * 8 / self._bits_per_us)
        self._busy_until = finish
        self._finish.append(finish)
        if occ + 1 > self.max_occupancy:
            self.max_occupancy = occ + 1
        self.sent_packets += 1
        self.sent_bytes += size
        if self._loss and self.rng.random() < self._loss:
            self._drop(pkt, "loss", self)
            return
        pkt.epoch = self.epoch
        self.in_flight += 1
        sim = self.sim
        sim._eid += 1
        heappush(sim._heap, (finish + self._prop_us, sim._eid, self._arrive, (pkt, size)))

    def _arrive(self, pkt: "SimPacket", size: int) -> None:
        self.in_flight -= 1
        if not self.up or pkt.epoch != self.epoch:
            self._drop(pkt, "link_down", self)
            return
        self.arrived_bytes += size
        self._deliver(pkt)

    def fail(self) -> None:
        self.up = False
        self.epoch += 1
        self._finish.clear()
        self._busy_until = self.sim.now

    def restore(self) -> None:
        self.up = True
        self._busy_until = self.sim.now
