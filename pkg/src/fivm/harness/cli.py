"""Command-line front end over the scenario harness.

Four commands cover the workflow: ``compile`` shows what the planner
would maintain, ``run`` streams a scenario through one engine, recording
metrics, ``enumerate`` replays a scenario to completion and dumps the
listing, and ``verify`` races all three engines and fails loudly on any
disagreement. ``FIVM_LOG`` in the environment picks the log level.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from typing import Optional, Sequence

from ..enumeration import listing_csv_rows
from ..queries import classify
from .engines import (
    ENGINE_NAMES,
    emit_metrics,
    run_scenario,
    verify_scenarios,
)
from .scenario import ScenarioError, compile_scenario, load_scenario

__all__ = ["main"]


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fivm",
        description="maintain join aggregates over update streams",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_scenario(p, multiple=False):
        if multiple:
            p.add_argument(
                "--scenario", "-s", action="append", required=True,
                metavar="PATH", help="scenario JSON file (repeatable)",
            )
        else:
            p.add_argument(
                "--scenario", "-s", required=True, metavar="PATH",
                help="scenario JSON file",
            )

    p = sub.add_parser("compile", help="plan a scenario and print the view tree")
    add_scenario(p)
    p.add_argument("--no-indicators", action="store_true",
                   help="skip existence-projection planning")

    p = sub.add_parser("run", help="stream a scenario through one engine")
    add_scenario(p)
    p.add_argument("--engine", choices=ENGINE_NAMES, default="fivm")
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--intvl", type=int, default=None,
                   help="enumerate every INTVL batches")
    p.add_argument("--metrics", metavar="CSV", default=None,
                   help="write per-batch metrics here")
    p.add_argument("--export", metavar="CSV", default=None,
                   help="write app output (or the final listing) here")
    p.add_argument("--no-indicators", action="store_true")

    p = sub.add_parser("enumerate", help="replay fully, then dump the listing")
    add_scenario(p)
    p.add_argument("--limit", type=int, default=None)
    p.add_argument("--export", metavar="CSV", default=None)

    p = sub.add_parser("verify", help="race all engines and compare snapshots")
    add_scenario(p, multiple=True)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--metrics", metavar="CSV", default=None)
    return parser


def _cmd_compile(args) -> int:
    scn = load_scenario(args.scenario)
    compiled = compile_scenario(scn, indicators=not args.no_indicators)
    tree = compiled.plan(indicators=not args.no_indicators)
    cls = classify(compiled.query)
    print(f"scenario: {scn.name}")
    print(
        "class: acyclic=%s free_connex=%s hierarchical=%s q_hierarchical=%s"
        % (cls.acyclic, cls.free_connex, cls.hierarchical, cls.q_hierarchical)
    )
    print(f"mode: {tree.mode}   result schema: {compiled.result_schema}")
    print(f"updatable: {', '.join(scn.updatable)}")
    print(tree.dump())
    if tree.enum_views:
        pairs = ", ".join(f"{v} -> {n}" for v, n in tree.enum_views.items())
        print(f"enumeration views: {pairs}")
    indexed = [
        (n.id, spec) for n in tree.nodes for spec in n.required_indices
    ]
    for node_id, (probe, group) in indexed:
        grouped = f" grouped by {group}" if group else ""
        print(f"index on {node_id}: probe {','.join(probe) or '()'}{grouped}")
    return 0


def _cmd_run(args) -> int:
    scn = load_scenario(args.scenario)
    compiled = compile_scenario(scn, indicators=not args.no_indicators)
    report = run_scenario(
        compiled,
        engine_name=args.engine,
        batch_size=args.batch_size,
        seed=args.seed,
        intvl=args.intvl,
        indicators=not args.no_indicators,
    )
    total = sum(r[3] for r in report.rows)
    print(f"{scn.name}: {len(report.rows)} batches, {total} tuples, engine {args.engine}")
    if args.metrics:
        emit_metrics(report.rows, args.metrics)
        print(f"metrics -> {args.metrics}")
    if args.export:
        _export_run(args.export, compiled, report)
        print(f"export -> {args.export}")
    return 0


def _export_run(path: str, compiled, report) -> int:
    from ..apps import (
        export_chow_liu_csv,
        export_covariance_csv,
        export_mi_csv,
        export_theta_csv,
    )

    results = report.app_results
    if "regression" in results:
        export_theta_csv(path, results["regression"])
    elif "chow_liu" in results:
        export_chow_liu_csv(path, results["chow_liu"], results["mi"])
    elif "mi" in results:
        export_mi_csv(path, results["mi"])
    elif "covariance" in results:
        export_covariance_csv(
            path, compiled.query.ring, compiled.slots, results["covariance"]
        )
    else:
        header, rows = listing_csv_rows(report.engine.state)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in rows:
                w.writerow(row)
    return 0


def _cmd_enumerate(args) -> int:
    scn = load_scenario(args.scenario)
    compiled = compile_scenario(scn)
    report = run_scenario(compiled, engine_name="fivm")
    header, rows = listing_csv_rows(report.engine.state, limit=args.limit)
    if args.export:
        with open(args.export, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            count = 0
            for row in rows:
                w.writerow(row)
                count += 1
        print(f"{scn.name}: {count} rows -> {args.export}")
    else:
        print(",".join(header))
        for row in rows:
            print(",".join(str(x) for x in row))
    return 0


def _cmd_verify(args) -> int:
    compiled = [compile_scenario(load_scenario(p)) for p in args.scenario]
    ok, problems, rows = verify_scenarios(compiled, workers=args.workers)
    if args.metrics:
        emit_metrics(rows, args.metrics)
    for c in compiled:
        status = "ok" if not any(c.scenario.name in m for m in problems) else "FAIL"
        print(f"{c.scenario.name}: {status}")
    for msg in problems:
        print(f"  {msg}", file=sys.stderr)
    return 0 if ok else 1


def main(argv: Optional[Sequence[str]] = None) -> int:
    level = os.environ.get("FIVM_LOG")
    if level:
        logging.basicConfig(level=level.upper())
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "compile":
            return _cmd_compile(args)
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "enumerate":
            return _cmd_enumerate(args)
        if args.command == "verify":
            return _cmd_verify(args)
    except ScenarioError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    parser.error(f"unknown command {args.command!r}")
    return 2


if __name__ == "__main__":
    sys.exit(main())
