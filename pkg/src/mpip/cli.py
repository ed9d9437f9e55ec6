"""Command line: run, validate, list-scenarios."""

from __future__ import annotations

import argparse
import os
import sys
from importlib import resources
from pathlib import Path
from typing import Optional

from .scenario import Scenario, ScenarioError, parse_scenario

METRICS_FILE = "metrics.csv"
EVENTS_FILE = "events.csv"


def canned_names() -> list[str]:
    root = resources.files("mpip") / "scenarios"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".scn"))


def canned_text(name: str) -> str:
    return (resources.files("mpip") / "scenarios" / f"{name}.scn").read_text()


def load_scenario(ref: str) -> Scenario:
    """Parse a scenario file, or a canned scenario by name."""
    path = Path(ref)
    if path.is_file():
        return parse_scenario(path.read_text())
    if ref in canned_names():
        return parse_scenario(canned_text(ref))
    raise FileNotFoundError(f"no scenario file or canned scenario named {ref!r}")


def run_experiment(scenario: Scenario, seed: Optional[int], out_dir: str | os.PathLike):
    """Run and write both CSVs. Partial files are removed if writing fails."""
    from .netsim.runner import run

    result = run(scenario, seed)
    out = Path(out_dir)
    written: list[Path] = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        for name, text in ((METRICS_FILE, result.metrics.metrics_csv()),
                           (EVENTS_FILE, result.metrics.events_csv())):
            target = out / name
            written.append(target)
            with open(target, "w", newline="") as fh:
                fh.write(text)
    except OSError:
        for p in written:
            try:
                p.unlink()
            except OSError:
                pass
        raise
    return result


def _cmd_run(args) -> int:
    try:
        sc = load_scenario(args.scenario)
    except (ScenarioError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        result = run_experiment(sc, args.seed, args.out)
    except OSError as exc:
        print(f"error: writing results failed: {exc}", file=sys.stderr)
        return 1
    m = result.metrics
    print(f"seed={result.seed} sim_ms={sc.duration_ms} events={result.events_run} "
          f"wall_s={result.wall_s:.2f} rows={len(m.rows)} events_logged={len(m.events)}")
    for name, st in result.flows.items():
        secs = max(sc.duration_ms / 1000, 1e-9)
        print(f"  {name}: {st.bytes_delivered * 8 / secs / 1e6:.2f} Mbps delivered, "
              f"retransmissions={st.retransmissions} out_of_order={st.out_of_order}")
    print(f"wrote {Path(args.out) / METRICS_FILE} and {Path(args.out) / EVENTS_FILE}")
    return 0


def _cmd_validate(args) -> int:
    try:
        sc = load_scenario(args.scenario)
    except (ScenarioError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"ok: {len(sc.nodes)} nodes, {len(sc.ifaces)} interfaces, {len(sc.links)} links, "
          f"{len(sc.sessions)} sessions, {len(sc.rules)} rules, duration {sc.duration_ms} ms")
    return 0


def _cmd_list(args) -> int:
    for name in canned_names():
        first = canned_text(name).splitlines()[0].lstrip("# ").strip()
        print(f"{name:26s} {first}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mpip-sim", description="Multipath IP network simulator")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a scenario and write metrics.csv / events.csv")
    r.add_argument("scenario", help="scenario file or canned scenario name")
    r.add_argument("--seed", type=int, default=None, help="override the scenario's seed")
    r.add_argument("--out", default="out", help="output directory (default: ./out)")
    r.set_defaults(fn=_cmd_run)
    v = sub.add_parser("validate", help="parse and check a scenario")
    v.add_argument("scenario")
    v.set_defaults(fn=_cmd_validate)
    ls = sub.add_parser("list-scenarios", help="list the canned scenarios")
    ls.set_defaults(fn=_cmd_list)
    return p


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
