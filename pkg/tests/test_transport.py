import random

from hypothesis import given, strategies as st

from mpip.packet import ACK, SYN, SimPacket
from mpip.tables import Protocol, SessionRecord
from mpip.transport import (FakeHandshake, HsState, ReorderBuffer, hs_packet, udp_unwrap,
                            udp_wrap)


def seg(seq, length=1):
    return SimPacket("a", 1, "b", 2, "tcp", payload_len=length, seq=seq, tcp_flags=ACK)


class TestReorder:
    def test_gap_then_fill(self):
        rb = ReorderBuffer(expected_seq=100)
        assert rb.on_segment(seg(101)) == []
        assert rb.on_segment(seg(102)) == []
        assert [s.seq for s in rb.on_segment(seg(100))] == [100, 101, 102]
        assert rb.expected_seq == 103

    def test_in_order_passes_straight_through(self):
        rb = ReorderBuffer(expected_seq=0)
        for i in range(50):
            assert [s.seq for s in rb.on_segment(seg(i))] == [i]
            assert len(rb) == 0

    def test_full_buffer_flushes(self):
        rb = ReorderBuffer(capacity=100, expected_seq=0)
        for i in range(1, 101):
            assert rb.on_segment(seg(i)) == []
        out = rb.on_segment(seg(101 + 5))
        assert [s.seq for s in out] == list(range(1, 101)) + [106]
        assert rb.expected_seq == 107
        assert len(rb) == 0 and rb.flushes == 1

    def test_old_segment_passthrough(self):
        rb = ReorderBuffer(expected_seq=10)
        assert [s.seq for s in rb.on_segment(seg(3))] == [3]

    def test_buffered_duplicate_ignored(self):
        rb = ReorderBuffer(expected_seq=0)
        rb.on_segment(seg(5))
        assert rb.on_segment(seg(5)) == []
        assert rb.duplicates == 1


@given(st.integers(0, 2**32), st.randoms(use_true_random=False), st.integers(1, 120))
def test_any_interleaving_delivers_the_stream_in_order(seed, rnd, n):
    rb = ReorderBuffer(capacity=100, expected_seq=0)
    arrivals = list(range(n))
    rnd.shuffle(arrivals)
    delivered = []
    for s in arrivals:
        delivered += [x.seq for x in rb.on_segment(seg(s))]
        assert len(rb) <= 100
    delivered += [x.seq for x in rb.flush()]
    assert sorted(delivered) == list(range(n))
    if n <= 100:
        assert delivered == list(range(n))


class TestWrap:
    rec = SessionRecord(1, 1, "10.0.1.2", 80, "10.0.1.1", 9000, Protocol.TCP)

    def test_round_trip(self):
        inner = SimPacket("10.0.1.1", 9000, "10.0.1.2", 80, "tcp", payload_len=1000, seq=77,
                          ack=5, tcp_flags=ACK, sack=((1, 2),))
        wrapped = udp_wrap(inner, ("10.0.2.1", 9000), ("10.0.2.2", 80))
        assert wrapped.proto == "udp" and wrapped.inner is not None
        assert wrapped.size == inner.size + 8
        back = udp_unwrap(wrapped, self.rec)
        for f in ("src", "sport", "dst", "dport", "proto", "payload_len", "seq", "ack",
                  "tcp_flags", "sack"):
            assert getattr(back, f) == getattr(inner, f)

    def test_unknown_session(self):
        import pytest
        from mpip.transport import UnknownSession
        w = udp_wrap(seg(1), ("a", 1), ("b", 2))
        with pytest.raises(UnknownSession):
            udp_unwrap(w, None)


class TestFakeHandshake:
    def test_three_tries_then_blocked(self):
        hs = FakeHandshake(("a", 1), ("b", 2))
        assert [hs.next_syn(t) for t in (0, 1, 2, 3)] == [True, True, True, False]
        assert hs.state is HsState.BLOCKED

    def test_syn_ack_completes(self):
        hs = FakeHandshake(("a", 1), ("b", 2))
        hs.next_syn(0)
        assert hs.on_syn_ack()
        assert hs.state is HsState.DONE
        assert not hs.next_syn(1)

    def test_packet_flags(self):
        assert hs_packet("syn", ("a", 1), ("b", 2), 5).tcp_flags == SYN
        assert hs_packet("syn-ack", ("a", 1), ("b", 2), 5).tcp_flags == SYN | ACK
