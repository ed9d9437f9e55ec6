"""Control-message (CM) block codec.

Every MPIP packet carries a fixed 25-byte CM block at the end of its payload::

    byte  0      flags (bits 0-5) | version (bits 6-7, currently 01)
    bytes 1-6    source node ID (48-bit, big-endian)
    bytes 7-8    session ID
    byte  9      path ID
    byte  10     feedback path ID
    bytes 11-14  packet timestamp (ms, unsigned, wraps)
    bytes 15-18  path delay (ms, signed)
    byte  19     advertised address count
    bytes 20-23  advertised address slot (IPv4)
    byte  24     XOR checksum over bytes 0-23
"""

from __future__ import annotations

import enum
import ipaddress
import struct
from typing import NamedTuple
from functools import lru_cache, reduce
from operator import xor

CM_SIZE = 25
CM_VERSION = 1

_BODY = struct.Struct("!B6sHBBIiBI")
assert _BODY.size == CM_SIZE - 1

_FLAG_MASK = 0x3F


class Flags(enum.IntFlag):
    NONE = 0
    ENABLE = 1 << 0
    ENABLED = 1 << 1
    HS = 1 << 2
    IP_CHANGE = 1 << 3
    HEARTBEAT = 1 << 4
    PROTECTED = 1 << 5


class CmError(ValueError):
    """Base class for CM decode failures."""


class TruncatedCm(CmError):
    pass


class CorruptCm(CmError):
    pass


class MalformedCm(CmError):
    pass


class CmEncodeError(ValueError):
    def __init__(self, field: str, value):
        super().__init__(f"CM field {field!r} out of range: {value!r}")
        self.field = field
        self.value = value


class ControlMessage(NamedTuple):
    """Decoded CM block. Immutable; field order matches the wire layout."""

    flags: int = 0
    source_node_id: int = 0
    session_id: int = 0
    path_id: int = 0
    feedback_path_id: int = 0
    packet_timestamp: int = 0
    path_delay: int = 0
    addr_count: int = 0
    addr_slot: int = 0
    version: int = CM_VERSION

    def has(self, flag: Flags) -> bool:
        return bool(self.flags & flag)


_RANGES = (
    ("version", 0, 3),
    ("flags", 0, _FLAG_MASK),
    ("source_node_id", 0, (1 << 48) - 1),
    ("session_id", 0, 0xFFFF),
    ("path_id", 0, 0xFF),
    ("feedback_path_id", 0, 0xFF),
    ("packet_timestamp", 0, 0xFFFFFFFF),
    ("path_delay", -(1 << 31), (1 << 31) - 1),
    ("addr_count", 0, 0xFF),
    ("addr_slot", 0, 0xFFFFFFFF),
)


_M96 = (1 << 96) - 1
_M48 = (1 << 48) - 1
_M24 = (1 << 24) - 1


def _checksum(body: bytes) -> int:
    """XOR of all bytes. For the 24-byte body, fold the integer instead of looping."""
    if len(body) != CM_SIZE - 1:
        return reduce(xor, body, 0)
    x = int.from_bytes(body, "big")
    x = (x >> 96) ^ (x & _M96)
    x = (x >> 48) ^ (x & _M48)
    x = (x >> 24) ^ (x & _M24)
    return ((x >> 16) ^ (x >> 8) ^ x) & 0xFF


def encode_cm(cm: ControlMessage) -> bytes:
    for name, lo, hi in _RANGES:
        value = getattr(cm, name)
        if not isinstance(value, int) or not lo <= value <= hi:
            raise CmEncodeError(name, value)
    if cm.version != CM_VERSION:
        raise CmEncodeError("version", cm.version)
    body = _BODY.pack(
        (cm.version << 6) | int(cm.flags),
        cm.source_node_id.to_bytes(6, "big"),
        cm.session_id,
        cm.path_id,
        cm.feedback_path_id,
        cm.packet_timestamp,
        cm.path_delay,
        cm.addr_count,
        cm.addr_slot,
    )
    return body + bytes((_checksum(body),))


def pack_cm(flags: int, node_id: int, session_id: int, path_id: int, feedback_path_id: int,
            timestamp: int, path_delay: int, addr_count: int, addr_slot: int) -> bytes:
    """Unchecked fast path of :func:`encode_cm` for callers that own every field."""
    body = _BODY.pack((CM_VERSION << 6) | flags, node_id.to_bytes(6, "big"), session_id,
                      path_id, feedback_path_id, timestamp, path_delay, addr_count, addr_slot)
    return body + bytes((_checksum(body),))


def unpack_cm(buf: bytes) -> tuple:
    """Checked decode returning the raw field tuple
    (flags, node_id, session_id, path_id, feedback_path_id, timestamp, delay, count, slot).
    """
    if len(buf) < CM_SIZE:
        raise TruncatedCm(f"need {CM_SIZE} bytes, got {len(buf)}")
    block = buf[-CM_SIZE:]
    body = block[:-1]
    if _checksum(body) != block[-1]:
        raise CorruptCm("checksum mismatch")
    first, node, sid, pid, fpid, ts, delay, count, slot = _BODY.unpack(body)
    if first >> 6 != CM_VERSION:
        raise MalformedCm(f"reserved/version bits set: {first >> 6:#x}")
    return (first & _FLAG_MASK, int.from_bytes(node, "big"), sid, pid, fpid, ts, delay,
            count, slot)


def decode_cm(buf: bytes) -> ControlMessage:
    """Parse the CM block occupying the last 25 bytes of ``buf``."""
    if len(buf) < CM_SIZE:
        raise TruncatedCm(f"need {CM_SIZE} bytes, got {len(buf)}")
    block = bytes(buf[-CM_SIZE:])
    body = block[:-1]
    if _checksum(body) != block[-1]:
        raise CorruptCm("checksum mismatch")
    first, node, sid, pid, fpid, ts, delay, count, slot = _BODY.unpack(body)
    version = first >> 6
    if version != CM_VERSION:
        raise MalformedCm(f"reserved/version bits set: {version:#x}")
    return ControlMessage(
        flags=first & _FLAG_MASK,
        source_node_id=int.from_bytes(node, "big"),
        session_id=sid,
        path_id=pid,
        feedback_path_id=fpid,
        packet_timestamp=ts,
        path_delay=delay,
        addr_count=count,
        addr_slot=slot,
        version=version,
    )


@lru_cache(maxsize=4096)
def addr_to_int(addr: str) -> int:
    return int(ipaddress.IPv4Address(addr))


@lru_cache(maxsize=4096)
def int_to_addr(value: int) -> str:
    return str(ipaddress.IPv4Address(value))
