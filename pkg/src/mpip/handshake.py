"""MPIP availability discovery: query, confirmation, fallback, address learning."""

from __future__ import annotations

import enum

from .tables import Availability, AvailabilityTable, NodeAddrTable
from .wire import ControlMessage, Flags, int_to_addr


class SendAction(enum.Enum):
    PLAIN = "send-plain"
    PLAIN_PLUS_QUERY = "send-plain-plus-query"
    MPIP = "send-mpip"


def on_outgoing_first_contact(table: AvailabilityTable, addr: str, port: int,
                              now_us: int = 0, query_interval_us: int = 0) -> SendAction:
    """Decide how to emit a transport packet headed to ``(addr, port)``.

    An Unknown destination gets the plain packet plus, at most once per
    outgoing packet and at most once per ``query_interval_us``, a duplicate
    carrying an ENABLE query. Reaching the query threshold flips it to False.
    """
    state = table.lookup(addr, port)
    if state is Availability.TRUE:
        return SendAction.MPIP
    if state is Availability.FALSE:
        return SendAction.PLAIN
    entry = table.entry(addr, port)
    if (query_interval_us and entry.last_query_us is not None
            and now_us - entry.last_query_us < query_interval_us):
        return SendAction.PLAIN
    table.record_query(addr, port, now_us)
    return SendAction.PLAIN_PLUS_QUERY


def on_receive_query(table: AvailabilityTable, addrs: NodeAddrTable, cm: ControlMessage,
                     observed_src: tuple[str, int]) -> ControlMessage:
    """Record the querying peer and return the CM for the ENABLED reply.

    The caller supplies its own node ID etc. by replacing fields on the
    returned template; only the flag matters to the peer.
    """
    addr, port = observed_src
    table.record_confirmation(addr, port)
    learn_peer_addr(addrs, cm, observed_src)
    return ControlMessage(flags=Flags.ENABLED)


def on_receive_confirmation(table: AvailabilityTable, observed_src: tuple[str, int]) -> bool:
    return table.record_confirmation(*observed_src)


def learn_peer_addr(addrs: NodeAddrTable, cm: ControlMessage,
                    observed_src: tuple[str, int]) -> bool:
    """Write (node ID, observed addr, observed port) and the advertised slot.

    Returns True when the peer's advertised address set grew.
    """
    addrs.learn(cm.source_node_id, observed_src[0], observed_src[1])
    if cm.addr_count:
        return addrs.advertise(cm.source_node_id, cm.addr_count, int_to_addr(cm.addr_slot))
    return False
