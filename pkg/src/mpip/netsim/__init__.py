"""Deterministic discrete-event network simulator hosting MPIP nodes."""

from ..packet import SimPacket

__all__ = ["SimPacket"]
