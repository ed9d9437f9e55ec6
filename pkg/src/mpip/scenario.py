"""Line-oriented scenario files.

One declaration per line, ``#`` starts a comment::

    node A                         # optional: plain, clock_offset=<ms>
    iface A 10.0.1.1
    link 10.0.1.1 10.0.1.2 40 5 0 200
    nat 10.0.2.1 192.0.2.1 drop_unknown_tcp
    session bulk 10.0.1.1 10.0.1.2 tcp window=150
    rule * 5001 udp 0 200 Rf via=10.0.1.1 from=20000
    param S 10
    fail 10.0.2.1 10.0.2.2 30000
    restore 10.0.2.1 10.0.2.2 70000
    duration 60000
    seed 7

Parsing is all-or-nothing: any problem raises :class:`ScenarioError` carrying
the offending line number, and no partial scenario is returned.
"""

from __future__ import annotations

import hashlib
import ipaddress
import math
from dataclasses import dataclass, field
from typing import Optional

from .engine import EngineParams
from .netsim.link import LinkParams
from .router import WeightParams
from .tables import Priority, RoutingRule, RuleTable
from .transport import NatMode


class ScenarioError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line
        self.message = message


@dataclass
class NodeSpec:
    name: str
    plain: bool = False
    clock_offset_ms: int = 0
    line: int = 0

    @property
    def node_id(self) -> int:
        return int.from_bytes(hashlib.sha256(self.name.encode()).digest()[:6], "big")


@dataclass
class IfaceSpec:
    node: str
    addr: str
    line: int = 0


@dataclass
class LinkSpec:
    a: str
    b: str
    params: LinkParams
    line: int = 0


@dataclass
class NatSpec:
    iface: str
    outer: str
    drop_unknown_tcp: bool = False
    line: int = 0


@dataclass
class SessionSpec:
    name: str
    src: str
    dst: str
    proto: str
    sport: int
    dport: int
    start_ms: int = 0
    stop_ms: Optional[int] = None
    window: int = 64
    total_bytes: Optional[int] = None
    rate_kbps: float = 0.0
    size: int = 0
    twoway: bool = False
    line: int = 0


@dataclass
class LinkEvent:
    kind: str          # "fail" | "restore"
    a: str
    b: str
    at_ms: int
    line: int = 0


@dataclass
class Scenario:
    nodes: dict[str, NodeSpec] = field(default_factory=dict)
    ifaces: dict[str, IfaceSpec] = field(default_factory=dict)
    links: list[LinkSpec] = field(default_factory=list)
    nats: dict[str, NatSpec] = field(default_factory=dict)
    sessions: list[SessionSpec] = field(default_factory=list)
    rules: list[RoutingRule] = field(default_factory=list)
    params: dict[str, object] = field(default_factory=dict)
    link_events: list[LinkEvent] = field(default_factory=list)
    duration_ms: int = 0
    seed: int = 1

    def engine_params(self) -> EngineParams:
        p = self.params
        reorder = p.get("reorder_buffer", True)
        ttl = p.get("session_ttl_ms", 60000)
        return EngineParams(
            weights=WeightParams(step=p.get("S", 10), interval_ms=p.get("T", 100)),
            heartbeat_ms=p.get("heartbeat_ms", 200),
            reorder_enabled=reorder is not False,
            reorder_capacity=reorder if isinstance(reorder, int) and reorder is not True else 100,
            nat_mode=NatMode(p.get("nat_mode", "none")),
            query_threshold=p.get("query_threshold", 10),
            query_interval_ms=p.get("query_interval_ms", 20),
            session_ttl_ms=ttl,
        )

    def rule_table(self) -> RuleTable:
        return RuleTable(list(self.rules))


# -- token helpers -------------------------------------------------------------

def _int(tok: str, line: int, what: str, lo: Optional[int] = None, hi: Optional[int] = None) -> int:
    try:
        v = int(tok, 0)
    except ValueError:
        raise ScenarioError(line, f"{what}: expected an integer, got {tok!r}") from None
    if (lo is not None and v < lo) or (hi is not None and v > hi):
        rng = f"[{lo if lo is not None else '-inf'}, {hi if hi is not None else 'inf'}]"
        raise ScenarioError(line, f"{what} {v} out of range {rng}")
    return v


def _float(tok: str, line: int, what: str, lo: float, hi: float = math.inf,
           lo_open: bool = False, hi_open: bool = False) -> float:
    try:
        v = float(tok)
    except ValueError:
        raise ScenarioError(line, f"{what}: expected a number, got {tok!r}") from None
    if not math.isfinite(v) or v < lo or v > hi or (lo_open and v == lo) or (hi_open and v == hi):
        raise ScenarioError(line, f"{what} {tok} out of range")
    return v


def _addr(tok: str, line: int) -> str:
    try:
        return str(ipaddress.IPv4Address(tok))
    except ValueError:
        raise ScenarioError(line, f"not an IPv4 address: {tok!r}") from None


def _kv(tokens: list[str], line: int, allowed: set[str]) -> dict[str, str]:
    out = {}
    for tok in tokens:
        key, sep, value = tok.partition("=")
        if not sep or not value:
            raise ScenarioError(line, f"expected key=value, got {tok!r}")
        if key not in allowed:
            raise ScenarioError(line, f"unknown key {key!r} (allowed: {', '.join(sorted(allowed))})")
        if key in out:
            raise ScenarioError(line, f"duplicate key {key!r}")
        out[key] = value
    return out


def _bool(tok: str, line: int, what: str) -> bool:
    if tok in ("on", "1", "true", "yes"):
        return True
    if tok in ("off", "0", "false", "no"):
        return False
    raise ScenarioError(line, f"{what}: expected on/off, got {tok!r}")


def _arity(tokens: list[str], line: int, lo: int, hi: Optional[int] = None, usage: str = "") -> None:
    n = len(tokens) - 1
    if n < lo or (hi is not None and n > hi):
        raise ScenarioError(line, f"wrong number of arguments; usage: {usage}")


# -- directives ----------------------------------------------------------------

def _param(key: str, tok: str, line: int):
    if key == "S":
        return _int(tok, line, "S", 1, 1000)
    if key == "T":
        return _int(tok, line, "T", 1, 60000)
    if key == "heartbeat_ms":
        return _int(tok, line, "heartbeat_ms", 1, 60000)
    if key == "reorder_buffer":
        if tok.isdigit():
            return _int(tok, line, "reorder_buffer", 1, 100000)
        return _bool(tok, line, "reorder_buffer")
    if key == "nat_mode":
        try:
            return NatMode(tok).value
        except ValueError:
            raise ScenarioError(line, f"nat_mode must be one of {[m.value for m in NatMode]}") from None
    if key == "query_threshold":
        return _int(tok, line, "query_threshold", 1, 1000)
    if key == "session_ttl_ms":
        if tok == "inf":
            return math.inf
        return _int(tok, line, "session_ttl_ms", 1)
    if key == "query_interval_ms":
        return _int(tok, line, "query_interval_ms", 0, 60000)
    raise ScenarioError(line, f"unknown param {key!r}")


_TCP_KEYS = {"window", "start", "stop", "sport", "dport", "bytes"}
_UDP_KEYS = {"rate_kbps", "size", "twoway", "start", "stop", "sport", "dport"}


def _session(tokens: list[str], line: int, index: int) -> SessionSpec:
    _arity(tokens, line, 4, None, "session <name> <src_iface> <dst_iface> <tcp|udp> key=value...")
    name, src, dst, proto = tokens[1], _addr(tokens[2], line), _addr(tokens[3], line), tokens[4]
    if proto not in ("tcp", "udp"):
        raise ScenarioError(line, f"protocol must be tcp or udp, got {proto!r}")
    kv = _kv(tokens[5:], line, _TCP_KEYS if proto == "tcp" else _UDP_KEYS)
    spec = SessionSpec(
        name, src, dst, proto,
        sport=_int(kv.get("sport", str(10000 + index)), line, "sport", 1, 65535),
        dport=_int(kv.get("dport", str(5000 + index)), line, "dport", 1, 65535),
        start_ms=_int(kv.get("start", "0"), line, "start", 0),
        stop_ms=_int(kv["stop"], line, "stop", 0) if "stop" in kv else None,
        line=line,
    )
    if spec.stop_ms is not None and spec.stop_ms <= spec.start_ms:
        raise ScenarioError(line, "stop must be after start")
    if proto == "tcp":
        spec.window = _int(kv.get("window", "64"), line, "window", 1, 100000)
        if "bytes" in kv:
            spec.total_bytes = _int(kv["bytes"], line, "bytes", 1)
    else:
        if "rate_kbps" not in kv:
            raise ScenarioError(line, "udp session needs rate_kbps=")
        spec.rate_kbps = _float(kv["rate_kbps"], line, "rate_kbps", 0, lo_open=True)
        spec.size = _int(kv.get("size", "1000"), line, "size", 1, 1500 - 20 - 8 - 25)
        spec.twoway = _bool(kv.get("twoway", "off"), line, "twoway")
    return spec


def _rule(tokens: list[str], line: int) -> RoutingRule:
    _arity(tokens, line, 6, 9,
           "rule <addr|*> <port|*> <proto|*> <min> <max|*> <Tf|Rf|Pf> [via=] [from=] [until=]")
    addr = None if tokens[1] == "*" else _addr(tokens[1], line)
    port = None if tokens[2] == "*" else _int(tokens[2], line, "port", 0, 65535)
    proto = None if tokens[3] == "*" else tokens[3]
    if proto not in (None, "tcp", "udp"):
        raise ScenarioError(line, f"protocol must be tcp, udp or *, got {proto!r}")
    lo = _int(tokens[4], line, "min_len", 0)
    hi = None if tokens[5] == "*" else _int(tokens[5], line, "max_len", 0)
    if hi is not None and hi < lo:
        raise ScenarioError(line, f"max_len {hi} < min_len {lo}")
    try:
        prio = Priority(tokens[6])
    except ValueError:
        raise ScenarioError(line, f"priority must be Tf, Rf or Pf, got {tokens[6]!r}") from None
    kv = _kv(tokens[7:], line, {"via", "from", "until"})
    start = _int(kv["from"], line, "from", 0) if "from" in kv else None
    until = _int(kv["until"], line, "until", 0) if "until" in kv else None
    if start is not None and until is not None and until <= start:
        raise ScenarioError(line, "until must be after from")
    return RoutingRule(addr, port, proto, lo, hi, prio,
                       via=_addr(kv["via"], line) if "via" in kv else None,
                       active_from_ms=start, active_until_ms=until)


def parse_scenario(text: str) -> Scenario:
    sc = Scenario()
    seen_duration = False
    rule_lines: list[tuple[RoutingRule, int]] = []
    link_pairs: dict[frozenset, LinkSpec] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        tokens = raw.split("#", 1)[0].split()
        if not tokens:
            continue
        d = tokens[0]
        if d == "node":
            _arity(tokens, lineno, 1, 3, "node <name> [plain] [clock_offset=<ms>]")
            name = tokens[1]
            if name in sc.nodes:
                raise ScenarioError(lineno, f"node {name!r} already defined")
            spec = NodeSpec(name, line=lineno)
            for tok in tokens[2:]:
                if tok == "plain":
                    spec.plain = True
                elif tok.startswith("clock_offset="):
                    spec.clock_offset_ms = _int(tok.partition("=")[2], lineno, "clock_offset", -(1 << 30), 1 << 30)
                else:
                    raise ScenarioError(lineno, f"unknown node option {tok!r}")
            sc.nodes[name] = spec
        elif d == "iface":
            _arity(tokens, lineno, 2, 2, "iface <node> <addr>")
            node, addr = tokens[1], _addr(tokens[2], lineno)
            if node not in sc.nodes:
                raise ScenarioError(lineno, f"undefined node {node!r}")
            if addr in sc.ifaces:
                raise ScenarioError(lineno, f"address {addr} already in use")
            sc.ifaces[addr] = IfaceSpec(node, addr, lineno)
        elif d == "link":
            _arity(tokens, lineno, 6, 6, "link <iface> <iface> <bw_mbps> <delay_ms> <loss> <queue_pkts>")
            a, b = _addr(tokens[1], lineno), _addr(tokens[2], lineno)
            for x in (a, b):
                if x not in sc.ifaces:
                    raise ScenarioError(lineno, f"undefined interface {x}")
            if sc.ifaces[a].node == sc.ifaces[b].node:
                raise ScenarioError(lineno, "link endpoints are on the same node")
            pair = frozenset((a, b))
            if pair in link_pairs:
                raise ScenarioError(lineno, f"duplicate link {a} {b}")
            params = LinkParams(
                _float(tokens[3], lineno, "bandwidth", 0, lo_open=True),
                _float(tokens[4], lineno, "delay", 0),
                _float(tokens[5], lineno, "loss", 0, 1, hi_open=True),
                _int(tokens[6], lineno, "queue", 1),
            )
            link = LinkSpec(a, b, params, lineno)
            link_pairs[pair] = link
            sc.links.append(link)
        elif d == "nat":
            _arity(tokens, lineno, 2, 3, "nat <iface> <outer_addr> [drop_unknown_tcp]")
            iface, outer = _addr(tokens[1], lineno), _addr(tokens[2], lineno)
            if iface not in sc.ifaces:
                raise ScenarioError(lineno, f"undefined interface {iface}")
            if iface in sc.nats:
                raise ScenarioError(lineno, f"interface {iface} already has a NAT")
            if outer in sc.ifaces or any(n.outer == outer for n in sc.nats.values()):
                raise ScenarioError(lineno, f"outer address {outer} already in use")
            drop = False
            if len(tokens) == 4:
                if tokens[3] != "drop_unknown_tcp":
                    raise ScenarioError(lineno, f"unknown nat option {tokens[3]!r}")
                drop = True
            sc.nats[iface] = NatSpec(iface, outer, drop, lineno)
        elif d == "session":
            spec = _session(tokens, lineno, len(sc.sessions) + 1)
            for x in (spec.src, spec.dst):
                if x not in sc.ifaces:
                    raise ScenarioError(lineno, f"undefined interface {x}")
            if sc.ifaces[spec.src].node == sc.ifaces[spec.dst].node:
                raise ScenarioError(lineno, "session endpoints are on the same node")
            for other in sc.sessions:
                if other.name == spec.name:
                    raise ScenarioError(lineno, f"session {spec.name!r} already defined")
                ends = {(sc.ifaces[other.src].node, other.proto, other.sport),
                        (sc.ifaces[other.dst].node, other.proto, other.dport)}
                if {(sc.ifaces[spec.src].node, spec.proto, spec.sport),
                        (sc.ifaces[spec.dst].node, spec.proto, spec.dport)} & ends:
                    raise ScenarioError(lineno, f"port clash with session {other.name!r}")
            sc.sessions.append(spec)
        elif d == "rule":
            rule = _rule(tokens, lineno)
            rule_lines.append((rule, lineno))
            sc.rules.append(rule)
        elif d == "param":
            _arity(tokens, lineno, 2, 2, "param <key> <value>")
            sc.params[tokens[1]] = _param(tokens[1], tokens[2], lineno)
        elif d == "duration":
            _arity(tokens, lineno, 1, 1, "duration <ms>")
            sc.duration_ms = _int(tokens[1], lineno, "duration", 0, 24 * 3600 * 1000)
            seen_duration = True
        elif d == "seed":
            _arity(tokens, lineno, 1, 1, "seed <u64>")
            sc.seed = _int(tokens[1], lineno, "seed", 0, (1 << 64) - 1)
        elif d in ("fail", "restore"):
            _arity(tokens, lineno, 3, 3, f"{d} <iface> <iface> <ms>")
            a, b = _addr(tokens[1], lineno), _addr(tokens[2], lineno)
            if frozenset((a, b)) not in link_pairs:
                raise ScenarioError(lineno, f"no link between {a} and {b}")
            sc.link_events.append(LinkEvent(d, a, b, _int(tokens[3], lineno, "time", 0), lineno))
        else:
            raise ScenarioError(lineno, f"unknown directive {d!r}")
    for rule, lineno in rule_lines:
        if rule.via is not None and rule.via not in sc.ifaces:
            raise ScenarioError(lineno, f"via address {rule.via} is not an interface")
    for s in sc.sessions:
        if s.dst in sc.nats:
            raise ScenarioError(s.line, f"session destination {s.dst} is behind a NAT")
    if not seen_duration:
        raise ScenarioError(len(text.splitlines()) + 1, "missing 'duration'")
    return sc
