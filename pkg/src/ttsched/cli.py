"""Command-line driver: compile, simulate, check, report.

Exit codes are fixed for CI use: 0 success/PASS, 2 validation or format
error, 3 infeasible budget or scratchpad overflow, 4 check/simulation FAIL.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .errors import (
    InfeasibleBudgetError,
    ParseError,
    ScheduleFormatError,
    SpmOverflowError,
    TtschedError,
    ValidationError,
)
from .mapper import cross_core_bytes, map_subtasks
from .model_ir import fuse_operators, load_model
from .partitioner import build_subtask_graph
from .scheduler import build_schedule, check_schedule, emit_schedule, load_schedule
from .simulator import emit_gantt_csv, emit_trace, parse_profile, simulate, verify_against_prediction
from .timing import HardwareConfig, apply_overrides, load_hw_config, load_wcet_overrides, wcet_subtask

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_INFEASIBLE = 3
EXIT_FAIL = 4


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ttsched", description=__doc__)
    parser.add_argument("--version", action="version", version=f"ttsched {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_compile = sub.add_parser("compile", help="compile a model into a schedule artifact")
    p_compile.add_argument("--model", required=True, help="model interchange JSON")
    p_compile.add_argument("--hw", help="hardware config JSON (defaults otherwise)")
    p_compile.add_argument("--wcet-overrides", help="subtask id -> cycles JSON map")
    p_compile.add_argument("--out", default=".", help="output directory")
    p_compile.add_argument("--tile-budget-bytes", type=int, help="override the scratchpad tile budget")
    p_compile.add_argument("--include-program-load", action="store_true",
                           help="schedule per-core program image loads from cycle 0")

    p_sim = sub.add_parser("simulate", help="run a schedule artifact and verify the bound")
    p_sim.add_argument("schedule", help="schedule artifact JSON")
    p_sim.add_argument("--profile", default="worst-case",
                       help="worst-case | scaled:F | random:SEED:MIN | fault:ID=F,...")
    p_sim.add_argument("--out", default=".", help="output directory for trace and Gantt CSV")

    p_check = sub.add_parser("check", help="revalidate schedule invariants offline")
    p_check.add_argument("schedule", help="schedule artifact JSON")

    p_report = sub.add_parser("report", help="summarize a schedule artifact")
    p_report.add_argument("schedule", help="schedule artifact JSON")
    return parser


def _cmd_compile(args) -> int:
    hw = load_hw_config(args.hw) if args.hw else HardwareConfig()
    if args.include_program_load:
        hw = HardwareConfig.from_dict({**hw.to_dict(), "include_program_load": True})
    graph = fuse_operators(load_model(args.model))
    sg = build_subtask_graph(graph, hw, tile_budget_bytes=args.tile_budget_bytes)
    mapping = map_subtasks(sg, hw.n_cores)
    costs = {s.id: wcet_subtask(s.tile, sg.dims_of[s.layer_id], hw) for s in sg.subtasks}
    if args.wcet_overrides:
        costs = apply_overrides(costs, load_wcet_overrides(args.wcet_overrides))
    schedule = build_schedule(sg, mapping, costs, hw)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    emit_schedule(schedule, out / "schedule.json")
    xbytes = cross_core_bytes(sg, mapping)
    per_core = {}
    for core in mapping.core_of.values():
        per_core[core] = per_core.get(core, 0) + 1
    report = {
        "model": str(args.model),
        "layers": len(graph.layers),
        "subtasks": len(sg.subtasks),
        "edges": len(sg.edges),
        "cores_used": len(per_core),
        "load_cap": mapping.load_cap,
        "per_core_counts": {str(k): v for k, v in sorted(per_core.items())},
        "core_of": {str(k): v for k, v in sorted(mapping.core_of.items())},
        "cross_core_bytes": xbytes,
        "makespan": schedule.makespan,
    }
    (out / "mapping.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"compiled {args.model}: subtasks={len(sg.subtasks)} "
          f"cross_core_bytes={xbytes} makespan={schedule.makespan}")
    print(f"wrote {out / 'schedule.json'} and {out / 'mapping.json'}")
    return EXIT_OK


def _cmd_simulate(args) -> int:
    schedule = load_schedule(args.schedule)
    profile = parse_profile(args.profile)
    trace = simulate(schedule, profile)
    report = verify_against_prediction(trace, schedule)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    emit_trace(trace, out / "trace.json")
    emit_gantt_csv(trace, out / "gantt.csv")

    rel = "==" if report["equality_required"] else "<="
    print(f"observed_makespan={report['observed_makespan']} {rel} "
          f"predicted_makespan={report['predicted_makespan']}")
    for v in report["violations"]:
        print(f"violation: {v['kind']} at {v['event']} cycle {v['cycle']}")
    print("PASS" if report["pass"] else "FAIL")
    return EXIT_OK if report["pass"] else EXIT_FAIL


def _cmd_check(args) -> int:
    schedule = load_schedule(args.schedule)
    results = check_schedule(schedule)
    ok = True
    for name, good, detail in results:
        ok &= good
        print(f"{'PASS' if good else 'FAIL'} {name}: {detail}")
    return EXIT_OK if ok else EXIT_FAIL


def _cmd_report(args) -> int:
    schedule = load_schedule(args.schedule)
    n_cores = len({c.core for c in schedule.computes})
    busy_dma = sum(t.dur for t in schedule.transfers)
    busy_core = sum(c.wcet for c in schedule.computes)
    span = max(schedule.makespan, 1)
    print(f"schedule {args.schedule}")
    print(f"  computes: {len(schedule.computes)} on {n_cores} core(s)")
    print(f"  transfers: {len(schedule.transfers)} "
          f"({sum(t.bytes for t in schedule.transfers)} bytes)")
    print(f"  makespan: {schedule.makespan} cycles")
    print(f"  dma busy: {busy_dma} cycles ({100.0 * busy_dma / span:.1f}%)")
    if n_cores:
        print(f"  mean core busy: {busy_core / max(n_cores, 1):.0f} cycles "
              f"({100.0 * busy_core / (span * max(n_cores, 1)):.1f}%)")
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {
        "compile": _cmd_compile,
        "simulate": _cmd_simulate,
        "check": _cmd_check,
        "report": _cmd_report,
    }
    try:
        return handlers[args.command](args)
    except (InfeasibleBudgetError, SpmOverflowError) as exc:
        print(f"error[{exc.stage}]: {exc.args[0]}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ParseError, ValidationError, ScheduleFormatError) as exc:
        print(f"error[{exc.stage}]: {exc.args[0]}", file=sys.stderr)
        return EXIT_INVALID
    except TtschedError as exc:  # pragma: no cover - defensive catch-all
        print(f"error[{exc.stage}]: {exc.args[0]}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error[io]: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
