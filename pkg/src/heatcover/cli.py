"""Command line entry point: ``heatcover {run,compare,validate}``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .geometry import build_region
from .mission import ALGO1, ALGO3, CENTRALIZED, MissionConfig, RunSummary, run
from .output import TABLE_ORDER, write_artifacts, write_comparison
from .scenario import ScenarioError, parse_scenario

ALGO_CHOICES = {"1": [ALGO1], "3": [ALGO3], "central": [CENTRALIZED], "all": list(TABLE_ORDER)}

log = logging.getLogger("heatcover")


def summary_line(s: RunSummary) -> str:
    status = "completed" if s.completed else f"NOT completed ({s.stop_reason})"
    return f"{s.algorithm}: T={s.T:.1f} T*={s.T_star:.1f} dT={s.delta_T:.1f} {status}"


def run_command(config: MissionConfig, algorithms: Sequence[str], out: Optional[Path]) -> int:
    """Run the selected algorithms, write outputs and print one line each."""
    region = build_region(config.region)
    base = Path(out or config.output.directory)
    ok = True
    for name in algorithms:
        summary = run(config, name)
        target = base / name if len(algorithms) > 1 else base
        write_artifacts(target, summary, region, config.output.artifacts, config.output.stride)
        print(summary_line(summary), flush=True)
        ok &= summary.completed
    return 0 if ok else 2


def compare_command(config: MissionConfig, out: Optional[Path]) -> int:
    base = Path(out or config.output.directory)
    summaries = {}
    for name in TABLE_ORDER:
        summaries[name] = run(config, name)
        print(summary_line(summaries[name]), flush=True)
    write_comparison(base / "comparison.csv", summaries)
    return 0 if all(s.completed for s in summaries.values()) else 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="heatcover", description="Heat-field multi-agent coverage simulator.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run one or all algorithms on a scenario")
    p.add_argument("--config", required=True, help="scenario file or bundled name (paper_fig3, paper_fig3_coarse)")
    p.add_argument("--algo", choices=sorted(ALGO_CHOICES), default=None, help="defaults to the scenario's algorithm")
    p.add_argument("--out", type=Path, default=None, help="output directory (overrides the scenario)")
    p = sub.add_parser("compare", help="run all algorithms and write comparison.csv")
    p.add_argument("--config", required=True)
    p.add_argument("--out", type=Path, default=None)
    p = sub.add_parser("validate", help="parse and validate a scenario")
    p.add_argument("--config", required=True)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        config = parse_scenario(args.config)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        if args.command == "validate":
            print(f"ok: N={config.N} algorithm={config.algorithm} spacing={config.region.spacing}")
            return 0
        if args.command == "compare":
            return compare_command(config, args.out)
        algorithms = ALGO_CHOICES[args.algo] if args.algo else [config.algorithm]
        return run_command(config, algorithms, args.out)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
