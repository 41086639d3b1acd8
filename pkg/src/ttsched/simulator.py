"""Discrete-event execution of a schedule under actual subtask run times.

The schedule is time-triggered: every event launches at its compiled start
cycle no matter what happened before it.  The engine therefore checks, rather
than assumes, the guarantees the schedule claims: inputs resident before each
compute starts, no execution past its cycle budget, one DMA transaction at a
time, and per-core scratchpad residency within capacity.  An overrun is
reported once, at the subtask that overran; downstream residency is judged
against the compiled cycle budgets, matching hardware that flags the fault at
the WCET boundary without rescheduling anything.
"""

from __future__ import annotations

import csv
import json
import random
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ValidationError
from .scheduler import Schedule, validate_structure

MICRO = 10**6

# Deterministic total order for trace rows.
_KIND_PRIORITY = {"transfer_end": 0, "compute_end": 1, "transfer_start": 2, "compute_start": 3}

VIOLATION_KINDS = ("wcet_overrun", "dependency_unready", "dma_overlap", "spm_overflow")


@dataclass(frozen=True)
class ExecutionProfile:
    mode: str  # worst_case | scaled | random | fault
    factor: float = 1.0
    seed: int = 0
    min_factor: float = 1.0
    faults: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in ("worst_case", "scaled", "random", "fault"):
            raise ValidationError(f"unknown profile mode {self.mode!r}")
        if self.mode == "scaled" and not 0.0 < self.factor <= 1.0:
            raise ValidationError("scaled factor must be in (0, 1]")
        if self.mode == "random" and not 0.0 < self.min_factor <= 1.0:
            raise ValidationError("random min_factor must be in (0, 1]")
        if self.mode == "fault":
            for sid, f in self.faults.items():
                if f <= 1.0:
                    raise ValidationError(f"fault factor for subtask {sid} must be > 1")

    def micro_factors(self, subtask_ids) -> dict:
        """Per-subtask factor in integer micro-units (exact ceil arithmetic)."""
        ids = sorted(subtask_ids)
        if self.mode == "worst_case":
            return {sid: MICRO for sid in ids}
        if self.mode == "scaled":
            return {sid: round(self.factor * MICRO) for sid in ids}
        if self.mode == "random":
            rng = random.Random(self.seed)
            out = {}
            for sid in ids:
                out[sid] = max(1, round(rng.uniform(self.min_factor, 1.0) * MICRO))
            return out
        out = {sid: MICRO for sid in ids}
        for sid, f in self.faults.items():
            if sid not in out:
                raise ValidationError(f"fault names unknown subtask {sid}")
            out[sid] = round(f * MICRO)
        return out

    def to_dict(self) -> dict:
        doc = {"mode": self.mode}
        if self.mode == "scaled":
            doc["factor"] = self.factor
        if self.mode == "random":
            doc.update(seed=self.seed, min_factor=self.min_factor)
        if self.mode == "fault":
            doc["faults"] = {str(k): v for k, v in sorted(self.faults.items())}
        return doc


def parse_profile(spec: str) -> ExecutionProfile:
    """Parse CLI syntax: worst-case | scaled:F | random:SEED:MIN | fault:ID=F,..."""
    if spec in ("worst-case", "worst_case"):
        return ExecutionProfile("worst_case")
    head, _, rest = spec.partition(":")
    try:
        if head == "scaled":
            return ExecutionProfile("scaled", factor=float(rest))
        if head == "random":
            seed_s, _, min_s = rest.partition(":")
            return ExecutionProfile("random", seed=int(seed_s), min_factor=float(min_s or 1.0))
        if head == "fault":
            faults = {}
            for item in rest.split(","):
                key, _, val = item.partition("=")
                faults[int(key.strip().lstrip("Ss"))] = float(val)
            return ExecutionProfile("fault", faults=faults)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"bad profile spec {spec!r}: {exc}") from exc
    raise ValidationError(f"unknown profile {spec!r}")


def actual_cycles(wcet: int, micro_factor: int) -> int:
    return max(1, -(-wcet * micro_factor // MICRO))


@dataclass(frozen=True)
class Violation:
    kind: str
    event: str
    cycle: int


@dataclass(frozen=True)
class TraceEvent:
    event: str  # "c<subtask>" or "t<id>"
    kind: str   # compute | load_dram | store_dram | copy_spm
    row: str    # "core<i>" or "dma"
    scheduled_start: int
    scheduled_end: int
    actual_start: int
    actual_end: int
    label: str = ""


@dataclass
class SimTrace:
    profile: ExecutionProfile
    events: list
    violations: list
    observed_makespan: int
    predicted_makespan: int

    @property
    def ok(self) -> bool:
        return not self.violations


def simulate(s: Schedule, profile: ExecutionProfile) -> SimTrace:
    """Fire every event at its compiled start; collect all violations."""
    validate_structure(s)
    factors = profile.micro_factors([c.subtask for c in s.computes])

    events = []
    actual_end = {}
    for c in s.computes:
        dur = actual_cycles(c.wcet, factors[c.subtask])
        actual_end[c.subtask] = c.start + dur
        events.append(TraceEvent(
            event=f"c{c.subtask}", kind="compute", row=f"core{c.core}",
            scheduled_start=c.start, scheduled_end=c.end,
            actual_start=c.start, actual_end=c.start + dur,
            label=f"{c.layer}#{c.subtask}" if c.layer else f"#{c.subtask}",
        ))
    for t in s.transfers:
        events.append(TraceEvent(
            event=f"t{t.id}", kind=t.kind, row="dma",
            scheduled_start=t.start, scheduled_end=t.end,
            actual_start=t.start, actual_end=t.end,
            label=f"{t.purpose}:{','.join(str(x) for x in t.serves)}",
        ))

    violations = []

    for c in sorted(s.computes, key=lambda c: c.subtask):
        if actual_end[c.subtask] > c.end:
            violations.append(Violation("wcet_overrun", f"c{c.subtask}", c.end))

    # Residency: serving transfers must have delivered, and local producers
    # must fit their compiled budget, before the compute launches.
    compute_by_sid = {c.subtask: c for c in s.computes}
    for c in sorted(s.computes, key=lambda c: c.subtask):
        late = False
        for t in s.transfers:
            if c.subtask in t.serves and t.kind in ("load_dram", "copy_spm") and t.end > c.start:
                late = True
        for dep in c.local_deps:
            if compute_by_sid[dep].end > c.start:
                late = True
        if late:
            violations.append(Violation("dependency_unready", f"c{c.subtask}", c.start))
    for t in s.transfers:
        if t.src_subtask is not None and compute_by_sid[t.src_subtask].end > t.start:
            violations.append(Violation("dependency_unready", f"t{t.id}", t.start))

    ordered = sorted(s.transfers, key=lambda t: (t.start, t.id))
    for i, a in enumerate(ordered):
        for b in ordered[i + 1 :]:
            if b.start >= a.end:
                break
            violations.append(Violation("dma_overlap", f"t{b.id}", b.start))

    for core in sorted({r.core for r in s.spm_regions}):
        marks = []
        for r in s.spm_regions:
            if r.core == core and r.end > r.start:
                marks.append((r.start, r.bytes))
                marks.append((r.end, -r.bytes))
        marks.sort()
        live = 0
        for cycle, delta in marks:
            live += delta
            if live > s.hw.spm_data_bytes:
                violations.append(Violation("spm_overflow", f"core{core}", cycle))
                break

    observed = max((e.actual_end for e in events), default=0)
    events.sort(key=lambda e: (
        e.actual_end,
        _KIND_PRIORITY["compute_end" if e.kind == "compute" else "transfer_end"],
        e.event,
    ))
    return SimTrace(profile, events, violations, observed, s.makespan)


def verify_against_prediction(trace: SimTrace, s: Schedule) -> dict:
    """PASS iff no violations and the composed bound holds (tight under worst case)."""
    require_equal = trace.profile.mode == "worst_case"
    bound_ok = trace.observed_makespan <= s.makespan
    if require_equal:
        bound_ok = trace.observed_makespan == s.makespan
    ok = trace.ok and bound_ok
    return {
        "pass": ok,
        "observed_makespan": trace.observed_makespan,
        "predicted_makespan": s.makespan,
        "equality_required": require_equal,
        "violations": [
            {"kind": v.kind, "event": v.event, "cycle": v.cycle} for v in trace.violations
        ],
    }


def trace_to_dict(trace: SimTrace) -> dict:
    return {
        "profile": trace.profile.to_dict(),
        "events": [
            {
                "event": e.event, "kind": e.kind, "row": e.row, "label": e.label,
                "scheduled": [e.scheduled_start, e.scheduled_end],
                "actual": [e.actual_start, e.actual_end],
            }
            for e in trace.events
        ],
        "violations": [
            {"kind": v.kind, "event": v.event, "cycle": v.cycle} for v in trace.violations
        ],
        "observed_makespan": trace.observed_makespan,
        "predicted_makespan": trace.predicted_makespan,
        "pass": trace.ok,
    }


def emit_trace(trace: SimTrace, path) -> None:
    Path(path).write_text(json.dumps(trace_to_dict(trace), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def emit_gantt_csv(trace: SimTrace, path) -> None:
    """Plot-ready rows: row_type, row_id, label, start, end (actual intervals)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row_type", "row_id", "label", "start", "end"])
        for e in trace.events:
            if e.row == "dma":
                writer.writerow(["dma", 0, f"{e.kind}:{e.label}", e.actual_start, e.actual_end])
            else:
                writer.writerow(["core", e.row.removeprefix("core"), e.label, e.actual_start, e.actual_end])
