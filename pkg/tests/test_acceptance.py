"""End-to-end acceptance runs.

Each test records one PASS/FAIL line in ``conftest.ACCEPTANCE``; the lines are printed in
the terminal summary. Run this file directly to print them without pytest.
"""

import random
import statistics
import time
from contextlib import contextmanager

import pytest
from scipy.stats import chisquare

import conftest
from mpip.cli import canned_names, canned_text
from mpip.netsim.runner import Network
from mpip.paths import FeedbackQueue, update_delay_metrics
from mpip.router import WeightParams, adjust_weights, path_probabilities, pick_path
from mpip.scenario import parse_scenario
from mpip.tables import Availability, PathRecord
from mpip.wire import CM_SIZE, ControlMessage, CmError, decode_cm, encode_cm

_RUNS: dict = {}


def canned_run(name: str, text: str | None = None, hook=None):
    """Run a scenario once per (name, text); ``hook(net)`` may schedule probes first."""
    key = (name, text)
    if key not in _RUNS:
        net = Network(parse_scenario(text if text is not None else canned_text(name)))
        extra = hook(net) if hook else None
        _RUNS[key] = (net, net.run(), extra)
    return _RUNS[key]


def path_ifaces(result, node: str) -> dict[int, str]:
    """Path ID -> local source address, from the node's path_add events."""
    out = {}
    for _, name, detail in result.metrics.events:
        if name == "path_add" and detail.startswith(node + " "):
            parts = detail.split()
            pid = int(parts[2].split("=")[1])
            out[pid] = parts[3].split(":")[0]
    return out


def iface_goodput(result, session, node, addr, t0, t1) -> float:
    pids = [pid for pid, a in path_ifaces(result, node).items() if a == addr]
    return sum(result.metrics.goodput(session, t0, t1, pid) for pid in pids)


@contextmanager
def criterion(cid: str):
    """Collect (ok, text) checks; record and assert them on exit."""
    checks: list[tuple[bool, str]] = []
    try:
        yield checks
    except Exception as exc:
        checks.append((False, f"error: {exc!r}"))
    ok = bool(checks) and all(c for c, _ in checks)
    conftest.ACCEPTANCE[cid] = (ok, "; ".join(t for _, t in checks))
    failed = [t for c, t in checks if not c]
    assert ok, f"{cid}: " + "; ".join(failed)


def mbps(x):
    return f"{x / 1e6:.2f} Mbps"


# -- C1 -------------------------------------------------------------------------

def two_path_goodput_checks(result, checks, label=""):
    g1 = iface_goodput(result, "bulk", "client", "10.0.1.1", 10_000, 60_000)
    g2 = iface_goodput(result, "bulk", "client", "10.0.2.1", 10_000, 60_000)
    ratio = g1 / g2 if g2 else float("inf")
    checks.append((abs(g1 - 40e6) <= 4e6, f"{label}path1 {mbps(g1)} (40 +-10%)"))
    checks.append((abs(g2 - 20e6) <= 2e6, f"{label}path2 {mbps(g2)} (20 +-10%)"))
    checks.append((abs(ratio - 2) <= 0.3, f"{label}ratio {ratio:.3f} (2 +-15%)"))


def test_c1_load_balancing():
    with criterion("C1") as checks:
        t0 = time.perf_counter()
        net = Network(parse_scenario(canned_text("loadbalance_40_20")))
        result = net.run()
        wall = time.perf_counter() - t0
        _RUNS[("loadbalance_40_20", None)] = (net, result, None)
        two_path_goodput_checks(result, checks)
        checks.append((wall < 10.0, f"wall {wall:.2f} s (<10)"))


# -- C2 -------------------------------------------------------------------------

def test_c2_failover():
    with criterion("C2") as checks:
        _, r, _ = canned_run("failover")
        after_fail = r.metrics.goodput("bulk", 31_000, 32_000)
        held = min(r.metrics.goodput("bulk", t, t + 1000) for t in range(31_000, 70_000, 1000))
        checks.append((after_fail >= 0.9 * 40e6,
                       f"aggregate 31-32 s {mbps(after_fail)} (>= 36)"))
        checks.append((held >= 0.9 * 40e6, f"worst 1 s bin 31-70 s {mbps(held)}"))
        restored = iface_goodput(r, "bulk", "client", "10.0.2.1", 74_000, 75_000)
        total = r.metrics.goodput("bulk", 74_000, 75_000)
        share = restored / total if total else 0.0
        checks.append((share >= 0.25, f"restored share 74-75 s {share:.1%} (>= 25%)"))
        st = r.flows["bulk"]
        checks.append((st.established and st.resets == 0, f"resets {st.resets}"))


# -- C3 -------------------------------------------------------------------------

def test_c3_reordering():
    with criterion("C3") as checks:
        text = canned_text("reorder_10_2")
        _, on, _ = canned_run("reorder_10_2")
        _, off, _ = canned_run("reorder_10_2/off", text.replace("reorder_buffer on", "reorder_buffer off"))
        s_on, s_off = on.flows["bulk"], off.flows["bulk"]
        dur = on.scenario.duration_ms
        g_on = on.metrics.goodput("bulk", 0, dur)
        g_off = off.metrics.goodput("bulk", 0, dur)
        checks.append((s_on.out_of_order == 0, f"on: out-of-order {s_on.out_of_order}"))
        checks.append((s_on.gap_retransmissions == 0, f"on: gap retx {s_on.gap_retransmissions}"))
        checks.append((g_on >= 0.9 * 40e6, f"on: goodput {mbps(g_on)} (>= 36)"))
        checks.append((s_off.retransmissions > 0, f"off: retx {s_off.retransmissions}"))
        checks.append((g_off < g_on, f"off: goodput {mbps(g_off)} (< on)"))


# -- C4 -------------------------------------------------------------------------

def paths_with(weights, qs=None):
    ps = [PathRecord(1, 1, i + 1, f"10.0.{i + 1}.1", 1, "10.9.0.1", 2, weight=w)
          for i, w in enumerate(weights)]
    for p, q in zip(ps, qs or []):
        p.q = q
    return ps


def test_c4_dispatch_and_weights():
    with criterion("C4") as checks:
        rng = random.Random(4)
        in_bounds = True
        sums_ok = True
        for _ in range(2000):
            ps = paths_with([rng.randint(1, 1000) for _ in range(rng.randint(1, 6))])
            for _ in range(rng.randint(1, 20)):
                for p in ps:
                    p.q = rng.randint(0, 200)
                adjust_weights(ps, WeightParams(step=rng.randint(1, 300)))
                in_bounds &= all(1 <= p.weight <= 1000 for p in ps)
            sums_ok &= abs(sum(path_probabilities(ps)) - 1) < 1e-12
        _, lb, _ = canned_run("loadbalance_40_20")
        live = [r.weight for r in lb.metrics.rows if r.weight is not None]
        in_bounds &= all(1 <= w <= 1000 for w in live)
        checks.append((in_bounds, f"weights in [1,1000] (random + {len(live)} run rows)"))
        checks.append((sums_ok, "sum P = 1"))

        ps = paths_with([1000, 500])
        rng = random.Random(1)
        counts = [0, 0]
        for _ in range(10_000):
            counts[pick_path(ps, rng).path_id - 1] += 1
        p = chisquare(counts, [10_000 * 2 / 3, 10_000 / 3]).pvalue
        checks.append((p > 0.01, f"chi-square {counts} p={p:.3f}"))

        ex = []
        ps = paths_with([500, 500], [5, 15])
        adjust_weights(ps, WeightParams(step=10))
        ex.append([p.weight for p in ps] == [510, 490])
        ps = paths_with([1000, 500], [0, 9])
        adjust_weights(ps)
        ex.append(ps[0].weight == 1000)
        ps = paths_with([500, 1], [0, 9])
        adjust_weights(ps)
        ex.append(ps[1].weight == 1)
        checks.append((all(ex), f"weight-update examples {sum(ex)}/3"))


# -- C5 -------------------------------------------------------------------------

def mean_delay_ms(result, session, t0_ms=2000):
    st = result.flows[session]
    d = [dl for dl, t in zip(st.delays_us, st.delay_times_us) if t >= t0_ms * 1000]
    return statistics.fmean(d) / 1000


def test_c5_rf_latency():
    with criterion("C5") as checks:
        text = canned_text("rf_audio_50_80")
        _, rf, _ = canned_run("rf_audio_50_80")
        _, tf, _ = canned_run("rf_audio_50_80/tf", text.replace(" Rf", " Tf"))
        a_rf = mean_delay_ms(rf, "audio")
        a_tf = mean_delay_ms(tf, "audio")
        video_paths = {pid for pid, b in rf.flows["video"].path_bytes.items() if b > 0}
        checks.append((abs(a_rf - 50) <= 2, f"Rf audio {a_rf:.2f} ms (50 +-2)"))
        checks.append((len(video_paths) >= 2, f"video on {len(video_paths)} paths"))
        checks.append((a_tf - a_rf >= 25, f"Tf control {a_tf:.2f} ms, gain {a_tf - a_rf:.2f} ms (>= 25)"))


# -- C6 -------------------------------------------------------------------------

def test_c6_coordinated():
    def hook(net):
        snap = {}

        def take():
            snap.update({n: f.out_of_order for n, f in net.flows.items()})
        net.sim.at(60_000_000, take)
        return snap

    with criterion("C6") as checks:
        _, r, snap = canned_run("coordinated_two_sessions", hook=hook)
        video = r.metrics.goodput("video", 60_000, 120_000)
        checks.append((abs(video - 2e6) <= 0.2e6, f"video phase 2 {mbps(video)} (2 +-10%)"))
        for name in ("video", "download"):
            ooo = r.flows[name].out_of_order - snap[name]
            checks.append((ooo == 0, f"{name} phase-2 out-of-order {ooo}"))
        v_paths = {path_ifaces(r, "server").get(pid) for pid in
                   {row.path_id for row in r.metrics.series("video") if row.time_ms > 61_000 and row.goodput_bps}}
        checks.append((v_paths == {"10.0.1.2"}, f"video pinned to {sorted(v_paths)}"))


# -- C7 -------------------------------------------------------------------------

def test_c7_nat():
    with criterion("C7") as checks:
        text = canned_text("nat_fakehs")
        _, none, _ = canned_run("nat/none", text.replace("fake-handshake", "none"))
        secondary = iface_goodput(none, "bulk", "client", "10.0.2.1", 0, 60_000)
        checks.append((secondary == 0, f"disabled: secondary {mbps(secondary)}"))
        for name in ("nat_fakehs", "nat_udpwrap"):
            _, r, _ = canned_run(name)
            two_path_goodput_checks(r, checks, f"{name}: ")


# -- C8 -------------------------------------------------------------------------

def test_c8_handshake_fallback():
    def hook(net):
        log = []
        client = net.nodes["client"]
        orig = client.emit

        def emit(pkt, iface):
            log.append((net.sim.now, pkt.cm is not None, pkt.payload_len))
            orig(pkt, iface)
        client.emit = emit
        return log

    with criterion("C8") as checks:
        _, r, log = canned_run("non_mpip_peer", hook=hook)
        client = r.nodes["client"].engine
        plain_only = all(set(f.path_bytes) <= {0} and f.bytes_delivered > 0 for f in r.flows.values())
        checks.append((plain_only, "all delivered plain"))
        entries = [client.availability.entry("10.0.1.2", p) for p in (5001, 5002)]
        states = [(e.available, e.query_count) for e in entries]
        checks.append((all(s == (Availability.FALSE, 10) for s in states),
                       f"availability/queries {[(s[0].name, s[1]) for s in states]}"))
        gave_up = max(t for t, n, _ in r.metrics.events if n == "mpip_unavailable")
        late = sum(1 for t, cm, n in log if t > gave_up and cm and n > 0)
        checks.append((late == 0, f"CM data packets after False: {late}"))


# -- C9 -------------------------------------------------------------------------

def test_c9_conformance():
    with criterion("C9") as checks:
        rng = random.Random(9)
        trips = corrupt_ok = 0
        for _ in range(200):
            cm = ControlMessage(rng.getrandbits(6), rng.getrandbits(48), rng.getrandbits(16),
                                rng.getrandbits(8), rng.getrandbits(8), rng.getrandbits(32),
                                rng.randint(-(1 << 31), (1 << 31) - 1), rng.getrandbits(8),
                                rng.getrandbits(32))
            raw = encode_cm(cm)
            trips += len(raw) == CM_SIZE and decode_cm(raw) == cm
        raw = encode_cm(ControlMessage(flags=5, source_node_id=0xA1B2C3D4E5F6, session_id=7,
                                       path_id=2, packet_timestamp=123456, path_delay=-4))
        total = 0
        for i in range(24):
            for mask in range(1, 256):
                buf = bytearray(raw)
                buf[i] ^= mask
                total += 1
                try:
                    decode_cm(bytes(buf))
                except CmError:
                    corrupt_ok += 1
        checks.append((trips == 200, f"codec round-trip {trips}/200"))
        checks.append((corrupt_ok == total, f"corruption detected {corrupt_ok}/{total}"))

        mismatches = 0
        for trial in range(300):
            fq = FeedbackQueue()
            path = PathRecord(1, 1, 1, "a", 1, "b", 2)
            offset = rng.randint(-10**6, 10**6)
            window: list[int] = []
            d_min = None
            q_max = 0
            for _ in range(rng.randint(1, 60)):
                send = rng.randint(0, 2**32 - 1)
                true_d = rng.randint(1, 500)
                fq.on_delay_sample(1, send, (send + true_d + offset) % 2**32)
                window = (window + [true_d + offset])[-10:]
                pid, fed = fq.pop_feedback()
                update_delay_metrics(path, fed)
                d_rt = sum(window) // len(window)
                d_min = d_rt if d_min is None else min(d_min, d_rt)
                q_max = max(q_max, d_rt - d_min)
                mismatches += (path.d_rt, path.d_min, path.q, path.q_max) != (d_rt, d_min, d_rt - d_min, q_max)
        checks.append((mismatches == 0, f"delay metrics vs oracle: {mismatches} mismatches"))

        from test_engine import MESH, TestIpChange, TestProtected  # noqa: F401
        _, seen = TestIpChange().run_mesh()
        checks.append((seen[1080] == (1, 1) and seen[3900] == (4, 4),
                       f"IP_CHANGE paths {seen[1000]} -> {seen[1080]} -> {seen[3900]}"))
        try:
            TestProtected().test_exactly_once_under_duplication()
            TestProtected().test_exactly_once_under_single_copy_loss()
            checks.append((True, "protected exactly-once (dup + loss)"))
        except AssertionError as exc:
            checks.append((False, f"protected: {exc}"))


# -- C10 ------------------------------------------------------------------------

def test_c10_determinism():
    with criterion("C10") as checks:
        same = []
        for name in canned_names():
            _, first, _ = canned_run(name)
            again = Network(parse_scenario(canned_text(name))).run()
            same.append(first.metrics.metrics_csv() == again.metrics.metrics_csv()
                        and first.metrics.events_csv() == again.metrics.events_csv())
        checks.append((all(same), f"{sum(same)}/{len(same)} canned scenarios byte-identical"))


if __name__ == "__main__":
    import sys
    for fn in [v for k, v in sorted(globals().items()) if k.startswith("test_c")]:
        try:
            fn()
        except AssertionError:
            pass
    for cid in sorted(conftest.ACCEPTANCE, key=lambda c: int(c[1:])):
        ok, detail = conftest.ACCEPTANCE[cid]
        print(f"{cid:>3} {'PASS' if ok else 'FAIL'}  {detail}")
    sys.exit(0 if all(ok for ok, _ in conftest.ACCEPTANCE.values()) else 1)
