"""Greedy core assignment maximizing scratchpad data reuse.

Subtasks are visited from the result side of the graph toward the input side;
within one depth level, subtasks touching more data go first.  Each subtask
lands on the core where the most bytes of its already-placed neighbors live,
subject to a hard per-core load cap that keeps the heuristic from collapsing
everything onto one core.
"""

from __future__ import annotations

from dataclasses import dataclass

from .partitioner import DRAM_NODE, SubtaskGraph


@dataclass(frozen=True)
class Mapping:
    core_of: dict  # subtask id -> core index
    load_cap: int


def _depths(sg: SubtaskGraph) -> dict:
    """Consumer-side depth: 0 at the result layer, growing toward the input."""
    consumers = {s.id: [] for s in sg.subtasks}
    for e in sg.edges:
        if e.src != DRAM_NODE and e.dst != DRAM_NODE:
            consumers[e.src].append(e.dst)
    depth = {}

    def visit(sid):
        if sid not in depth:
            depth[sid] = 1 + max((visit(c) for c in consumers[sid]), default=-1)
        return depth[sid]

    for s in sg.subtasks:
        visit(s.id)
    return depth


def map_subtasks(sg: SubtaskGraph, n_cores: int) -> Mapping:
    """Deterministic reverse-traversal greedy mapping."""
    assert n_cores >= 1
    if not sg.subtasks:
        return Mapping({}, 0)

    load_cap = -(-len(sg.subtasks) // n_cores)
    incident = {s.id: 0 for s in sg.subtasks}
    neighbors = {s.id: [] for s in sg.subtasks}  # (other id, bytes), DRAM excluded
    for e in sg.edges:
        if e.src != DRAM_NODE:
            incident[e.src] += e.bytes
        if e.dst != DRAM_NODE:
            incident[e.dst] += e.bytes
        if e.src != DRAM_NODE and e.dst != DRAM_NODE:
            neighbors[e.src].append((e.dst, e.bytes))
            neighbors[e.dst].append((e.src, e.bytes))

    depth = _depths(sg)
    order = sorted(sg.subtasks, key=lambda s: (depth[s.id], -incident[s.id], s.id))

    core_of = {}
    counts = [0] * n_cores
    for s in order:
        affinity = [0] * n_cores
        for other, volume in neighbors[s.id]:
            if other in core_of:
                affinity[core_of[other]] += volume
        best = min(
            (c for c in range(n_cores) if counts[c] < load_cap),
            key=lambda c: (-affinity[c], counts[c], c),
        )
        core_of[s.id] = best
        counts[best] += 1
    return Mapping(core_of, load_cap)


def cross_core_bytes(sg: SubtaskGraph, mapping: Mapping) -> int:
    """Bytes that must cross the interconnect: DRAM edges plus cross-core edges."""
    total = 0
    for e in sg.edges:
        if e.src == DRAM_NODE or e.dst == DRAM_NODE:
            total += e.bytes
        elif mapping.core_of[e.src] != mapping.core_of[e.dst]:
            total += e.bytes
    return total
