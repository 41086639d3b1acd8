"""Static time-triggered schedule construction and the schedule artifact.

All start times are fixed at compile time.  Transfers serialize on a single
DMA channel: each is placed at the earliest cycle at or after its data-ready
time at which the channel is free, with ties broken round-robin over the
involved worker core (one round-robin pointer for the whole schedule, core 0
first).  Compute starts are the max of the core becoming free and the serving
transfers completing.  Loads for a core's next tile may overlap the current
tile's compute (dual-ported scratchpads); loads further ahead are gated so at
most two tile generations are in flight per core.

Scratchpad regions are assigned first-fit as events are placed.  When a core
runs out of space the resident output region with the furthest next use is
spilled to external memory (store now, reload into each remaining consumer),
and the failing event is retried.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ScheduleFormatError, SpmOverflowError, ValidationError
from .mapper import Mapping
from .partitioner import DRAM_NODE, SubtaskGraph
from .timing import CostEstimate, HardwareConfig, transfer_cycles

TRANSFER_KINDS = ("load_dram", "store_dram", "copy_spm")

SCHEDULE_FORMAT = "ttsched-schedule-v1"


@dataclass(frozen=True)
class TransferEvent:
    id: int
    kind: str
    src: dict
    dst: dict
    bytes: int
    start: int
    dur: int
    serves: tuple
    purpose: str = "data"
    src_subtask: int | None = None

    @property
    def end(self) -> int:
        return self.start + self.dur


@dataclass(frozen=True)
class ComputeEvent:
    subtask: int
    core: int
    start: int
    wcet: int
    layer: str = ""
    local_deps: tuple = ()
    cost_inputs: dict = field(default_factory=dict)

    @property
    def end(self) -> int:
        return self.start + self.wcet


@dataclass(frozen=True)
class SpmRegion:
    core: int
    offset: int
    bytes: int
    start: int
    end: int
    tag: str


@dataclass
class Schedule:
    hw: HardwareConfig
    mapping: Mapping
    transfers: list
    computes: list
    spm_regions: list
    makespan: int
    dram_map: dict = field(default_factory=dict)

    def compute_of(self, sid: int) -> ComputeEvent:
        return next(c for c in self.computes if c.subtask == sid)


# ---------------------------------------------------------------------------
# construction


class _Request:
    """One pending DMA transaction during construction."""

    __slots__ = (
        "rid", "kind", "purpose", "core", "bytes", "serves", "owner",
        "producer", "after_rid", "gate_sid", "role", "src_info", "placed", "event",
    )

    def __init__(self, rid, kind, purpose, core, nbytes, serves, owner,
                 producer=None, after_rid=None, gate_sid=None, role=None, src_info=None):
        self.rid = rid
        self.kind = kind
        self.purpose = purpose
        self.core = core            # round-robin key: the involved worker core
        self.bytes = nbytes
        self.serves = serves
        self.owner = owner          # subtask whose region this writes/reads
        self.producer = producer    # compute that must finish first
        self.after_rid = after_rid  # transfer that must be placed first
        self.gate_sid = gate_sid    # prefetch gate: compute two positions back
        self.role = role            # "in" | "w" | None
        self.src_info = src_info    # dict for src address reporting
        self.placed = False
        self.event = None           # TransferEvent once placed


class _Region:
    __slots__ = ("core", "offset", "length", "start", "end", "tag", "owner", "role", "uses", "spilled")

    def __init__(self, core, offset, length, start, tag, owner, role):
        self.core = core
        self.offset = offset
        self.length = length
        self.start = start
        self.end = None  # unknown until the last use is scheduled
        self.tag = tag
        self.owner = owner
        self.role = role
        self.uses = 0    # pending consumers (out regions only)
        self.spilled = False


class _Builder:
    def __init__(self, sg: SubtaskGraph, mapping: Mapping, costs: dict, hw: HardwareConfig):
        self.sg = sg
        self.mapping = mapping
        self.costs = costs
        self.hw = hw
        self.subtasks = list(sg.subtasks)
        self.by_id = {s.id: s for s in self.subtasks}

        self.requests: list[_Request] = []
        self.transfers: list[TransferEvent] = []
        self.computes: dict[int, ComputeEvent] = {}
        self.regions: dict[int, list[_Region]] = {}

        self.dma_free = 0
        self.rr_last = -1  # so core 0 wins the first tie
        self.core_free = {}
        self.core_order = {}
        self.next_pos = {}
        self.pos_of = {}

        self.in_region = {}   # sid -> _Region
        self.w_region = {}
        self.out_region = {}
        self.local_deps = {s.id: [] for s in self.subtasks}
        self.inbound = {s.id: [] for s in self.subtasks}
        self.dram_map = {}
        self.spill_cursor = 0

    # -- setup ------------------------------------------------------------

    def _build_dram_map(self):
        base = 0
        for name, size in self.sg.dram_regions.items():
            self.dram_map[name] = {"base": base, "bytes": size}
            base += size
        if self.hw.include_program_load:
            cores = sorted({self.mapping.core_of[s.id] for s in self.subtasks})
            for c in cores:
                self.dram_map[f"program:{c}"] = {"base": base, "bytes": self.hw.program_image_bytes}
                base += self.hw.program_image_bytes
        self.spill_base = base

    def _new_spill_slot(self, nbytes):
        base = self.spill_base + self.spill_cursor
        self.spill_cursor += nbytes
        return base

    def _make_requests(self):
        """Emit the transfer requests for every subtask, in layer order."""
        order = sorted(self.subtasks, key=lambda s: s.id)
        for core in set(self.mapping.core_of.values()):
            self.core_order[core] = []
            self.core_free[core] = 0
            self.next_pos[core] = 0
            self.regions[core] = []
        for s in order:
            core = self.mapping.core_of[s.id]
            self.pos_of[s.id] = len(self.core_order[core])
            self.core_order[core].append(s.id)

        out_set = set(self.sg.output_subtasks)
        producers_of = {s.id: [] for s in order}
        dram_in = {s.id: 0 for s in order}
        for e in self.sg.edges:
            if e.src == DRAM_NODE:
                dram_in[e.dst] = e.bytes
            elif e.dst != DRAM_NODE:
                producers_of[e.dst].append(e)

        rid = 0
        for s in order:
            core = self.mapping.core_of[s.id]
            gate = self._gate_sid(s.id)
            if s.weight_bytes > 0:
                src = {"region": f"weights:{s.weights_ref}", "offset": s.weight_offset}
                self.requests.append(_Request(rid, "load_dram", "weights", core, s.weight_bytes,
                                              (s.id,), s.id, gate_sid=gate, role="w", src_info=src))
                self.inbound[s.id].append(rid)
                rid += 1
            act_dram = dram_in[s.id] - s.weight_bytes
            if act_dram > 0:
                src = {"region": "input", "offset": 0}
                self.requests.append(_Request(rid, "load_dram", "input", core, act_dram,
                                              (s.id,), s.id, gate_sid=gate, role="in", src_info=src))
                self.inbound[s.id].append(rid)
                rid += 1
            for e in sorted(producers_of[s.id], key=lambda e: e.src):
                src_core = self.mapping.core_of[e.src]
                if src_core == core:
                    self.local_deps[s.id].append(e.src)
                else:
                    self.requests.append(_Request(rid, "copy_spm", "copy", core, e.bytes,
                                                  (s.id,), s.id, producer=e.src,
                                                  gate_sid=gate, role="in"))
                    self.inbound[s.id].append(rid)
                    rid += 1
            if s.id in out_set:
                out_dims = self._out_elem_origin(s.id)
                self.requests.append(_Request(rid, "store_dram", "store", core, s.out_bytes,
                                              (s.id,), s.id, producer=s.id,
                                              src_info={"region": "output", "offset": out_dims}))
                rid += 1
        self.next_rid = rid

    def _gate_sid(self, sid):
        core = self.mapping.core_of[sid]
        pos = self.pos_of[sid]
        if pos < 2:
            return None
        return self.core_order[core][pos - 2]

    def _out_elem_origin(self, sid):
        s = self.by_id[sid]
        dims = self.sg.dims_of[s.layer_id]
        return s.tile.m0 * dims.n + s.tile.n0

    # -- scratchpad regions ------------------------------------------------

    def _blocking(self, core, t):
        return [r for r in self.regions[core] if r.end is None or r.end > t]

    def _find_gap(self, core, length, t):
        busy = sorted((r.offset, r.offset + r.length) for r in self._blocking(core, t))
        cursor = 0
        for lo, hi in busy:
            if lo - cursor >= length:
                return cursor
            cursor = max(cursor, hi)
        if self.hw.spm_data_bytes - cursor >= length:
            return cursor
        return None

    def _earliest_fit(self, core, length, t):
        """(time, offset) of the first point >= t where `length` bytes fit."""
        if length > self.hw.spm_data_bytes:
            return None, None
        off = self._find_gap(core, length, t)
        if off is not None:
            return t, off
        ends = sorted({r.end for r in self.regions[core] if r.end is not None and r.end > t})
        for cand in ends:
            off = self._find_gap(core, length, cand)
            if off is not None:
                return cand, off
        return None, None

    def _fits_all(self, core, lengths, t):
        """Whether `lengths` can all be first-fit placed at time t."""
        busy = sorted((r.offset, r.offset + r.length) for r in self._blocking(core, t))
        for length in lengths:
            cursor, placed = 0, None
            for lo, hi in busy:
                if lo - cursor >= length:
                    placed = cursor
                    break
                cursor = max(cursor, hi)
            if placed is None:
                if self.hw.spm_data_bytes - cursor >= length:
                    placed = cursor
                else:
                    return False
            busy.append((placed, placed + length))
            busy.sort()
        return True

    def _alloc(self, core, length, t, tag, owner, role):
        off = self._find_gap(core, length, t)
        assert off is not None, "caller must verify fit via _earliest_fit"
        region = _Region(core, off, length, t, tag, owner, role)
        self.regions[core].append(region)
        return region

    def _retire(self, region, end):
        region.end = max(end, region.start)

    def _region_length(self, s, role):
        dims = self.sg.dims_of[s.layer_id]
        if role == "in":
            return s.tile.mt * dims.k if s.is_gemm else max(s.act_in_bytes, 1)
        if role == "w":
            return s.weight_bytes
        return 4 * s.tile.mt * s.tile.nt if s.is_gemm else s.out_bytes

    # -- spilling ----------------------------------------------------------

    def _try_spill(self, core, t):
        """Spill the materialized out-region with the furthest next use.

        Returns True if a spill store was queued (caller retries later).
        """
        candidates = []
        for r in self.regions[core]:
            if r.role != "out" or r.end is not None or r.spilled:
                continue
            if r.owner not in self.computes:
                continue  # data not produced yet; nothing to store
            if any(not rq.placed and rq.purpose == "store" and rq.producer == r.owner
                   for rq in self.requests):
                continue  # heading to external memory anyway; spilling won't help
            pending = self._pending_uses(r.owner)
            if not pending:
                continue
            next_use = min(pending)
            candidates.append((next_use, r))
        if not candidates:
            return False
        # Furthest next use first; owner id breaks ties deterministically.
        candidates.sort(key=lambda item: (-item[0], item[1].owner))
        _, region = candidates[0]
        self._spill_region(region)
        return True

    def _pending_uses(self, owner):
        """Ids of subtasks/requests that still need `owner`'s output on chip."""
        uses = []
        for sid, deps in self.local_deps.items():
            if owner in deps and sid not in self.computes:
                uses.append(sid)
        for rq in self.requests:
            if rq.placed:
                continue
            if rq.kind == "copy_spm" and rq.producer == owner:
                uses.append(rq.owner)
            if rq.kind == "store_dram" and rq.producer == owner and rq.purpose == "store":
                uses.append(owner)
        return uses

    def _spill_region(self, region):
        owner = region.owner
        s = self.by_id[owner]
        core = region.core
        slot = self._new_spill_slot(s.out_bytes)
        store = _Request(self.next_rid, "store_dram", "spill", core, s.out_bytes,
                         (owner,), owner, producer=owner,
                         src_info={"region": "spill", "offset": slot - self.spill_base})
        self.next_rid += 1
        self.requests.append(store)
        region.spilled = True
        region.end = None  # finalized when the spill store is placed

        # Remaining local consumers now reload from the spill slot.
        for sid in sorted(self.local_deps):
            deps = self.local_deps[sid]
            if owner in deps and sid not in self.computes:
                while owner in deps:
                    deps.remove(owner)
                reload = _Request(self.next_rid, "load_dram", "reload",
                                  self.mapping.core_of[sid], self._edge_bytes(owner, sid),
                                  (sid,), sid, after_rid=store.rid,
                                  gate_sid=self._gate_sid(sid), role="in",
                                  src_info={"region": "spill", "offset": slot - self.spill_base})
                self.next_rid += 1
                self.requests.append(reload)
                self.inbound[sid].append(reload.rid)
        # Pending copies out of this region become reloads from the slot.
        for rq in self.requests:
            if not rq.placed and rq.kind == "copy_spm" and rq.producer == owner:
                rq.kind = "load_dram"
                rq.purpose = "reload"
                rq.after_rid = store.rid
                rq.producer = None
                rq.src_info = {"region": "spill", "offset": slot - self.spill_base}

    def _edge_bytes(self, src, dst):
        return sum(e.bytes for e in self.sg.edges if e.src == src and e.dst == dst)

    # -- main loop ----------------------------------------------------------

    def _ready(self, rq: _Request):
        t = 0
        if rq.gate_sid is not None:
            c = self.computes.get(rq.gate_sid)
            if c is None:
                return None
            t = max(t, c.end)
        if rq.producer is not None:
            c = self.computes.get(rq.producer)
            if c is None:
                return None
            t = max(t, c.end)
        if rq.after_rid is not None:
            prior = self.requests[rq.after_rid]
            if not prior.placed:
                return None
            t = max(t, prior.event.end)
        return t

    def _transfer_end(self, rid):
        return self.requests[rid].event.end

    def _schedule_computes(self):
        """Schedule every compute whose inputs are placed, in subtask order."""
        progress = True
        while progress:
            progress = False
            for s in self.subtasks:
                if s.id in self.computes:
                    continue
                core = self.mapping.core_of[s.id]
                pos = self.next_pos[core]
                if pos >= len(self.core_order[core]) or self.core_order[core][pos] != s.id:
                    continue
                if any(not self.requests[rid].placed for rid in self.inbound[s.id]):
                    continue
                if not self._emit_compute(s, core):
                    continue
                progress = True

    def _emit_compute(self, s, core):
        start = self.core_free[core]
        for rid in self.inbound[s.id]:
            start = max(start, self._transfer_end(rid))
        for pid in self.local_deps[s.id]:
            start = max(start, self.computes[pid].end)

        lengths = [self._region_length(s, "out")]
        needs_in = s.id not in self.in_region
        if needs_in:
            # All inputs were produced on this core; the gather still needs
            # the expanded input buffer during execution.
            lengths.append(self._region_length(s, "in"))
        t = start
        while not self._fits_all(core, lengths, t):
            later = min((r.end for r in self.regions[core] if r.end is not None and r.end > t), default=None)
            if later is not None:
                t = later
                continue
            if self._try_spill(core, t):
                return False  # retry once the spill store frees space
            free = self.hw.spm_data_bytes - sum(r.length for r in self._blocking(core, t))
            raise SpmOverflowError(
                f"core {core} needs {sum(lengths)} bytes at cycle {t} for subtask {s.id}",
                core=core, cycle=t, deficit=sum(lengths) - max(free, 0),
            )
        start = t
        out_region = self._alloc(core, lengths[0], start, f"out:{s.id}", s.id, "out")
        out_region.uses = len(self._pending_uses(s.id))
        self.out_region[s.id] = out_region
        if needs_in:
            self.in_region[s.id] = self._alloc(core, lengths[1], start, f"in:{s.id}", s.id, "in")

        wcet = self.costs[s.id].wcet_cycles
        ev = ComputeEvent(
            subtask=s.id, core=core, start=start, wcet=wcet, layer=s.layer_id,
            local_deps=tuple(sorted(set(self.local_deps[s.id]))),
            cost_inputs=dict(self.costs[s.id].derived_from),
        )
        self.computes[s.id] = ev
        self.core_free[core] = ev.end
        self.next_pos[core] += 1

        for role, table in (("in", self.in_region), ("w", self.w_region)):
            region = table.get(s.id)
            if region is not None:
                self._retire(region, ev.end)
        # This compute may be the last pending use of its local producers.
        for pid in self.local_deps[s.id]:
            self._consume_use(pid, ev.end)
        if out_region.uses == 0:
            self._retire(out_region, ev.end)
        return True

    def _consume_use(self, owner, end):
        region = self.out_region.get(owner)
        if region is None or region.end is not None:
            return
        region.uses -= 1
        if region.uses <= 0 and not region.spilled:
            self._retire(region, max(end, self.computes[owner].end))

    def _place_program_loads(self):
        cores = sorted({self.mapping.core_of[s.id] for s in self.subtasks})
        if self.hw.program_image_bytes > self.hw.spm_instr_bytes:
            raise ValidationError("program image exceeds the instruction scratchpad")
        for c in cores:  # round-robin from core 0 over equal-ready requests
            dur = transfer_cycles(self.hw.program_image_bytes, self.hw, dram=True)
            ev = TransferEvent(
                id=len(self.transfers), kind="load_dram",
                src={"mem": "dram", "base": self.dram_map[f"program:{c}"]["base"],
                     "bytes": self.hw.program_image_bytes},
                dst={"mem": "spm_instr", "core": c, "offset": 0, "bytes": self.hw.program_image_bytes},
                bytes=self.hw.program_image_bytes, start=self.dma_free, dur=dur,
                serves=(), purpose="program",
            )
            self.transfers.append(ev)
            self.dma_free = ev.end
            self.core_free[c] = ev.end
            self.rr_last = c

    def _src_dst(self, rq: _Request, region):
        s = self.by_id[rq.owner]
        core = self.mapping.core_of[rq.owner]
        if rq.kind == "load_dram":
            info = rq.src_info or {"region": "input", "offset": 0}
            base = self.dram_map.get(info["region"], {"base": self.spill_base})["base"] + info["offset"]
            src = {"mem": "dram", "base": base, "bytes": rq.bytes}
            dst = {"mem": "spm", "core": core, "offset": region.offset, "bytes": rq.bytes}
        elif rq.kind == "copy_spm":
            prod_region = self.out_region[rq.producer]
            src = {"mem": "spm", "core": prod_region.core, "offset": prod_region.offset, "bytes": rq.bytes}
            dst = {"mem": "spm", "core": core, "offset": region.offset, "bytes": rq.bytes}
        else:  # store_dram
            prod_region = self.out_region[rq.producer]
            src = {"mem": "spm", "core": prod_region.core, "offset": prod_region.offset, "bytes": rq.bytes}
            info = rq.src_info or {"region": "output", "offset": 0}
            region_name = info["region"]
            if region_name == "spill":
                base = self.spill_base + info["offset"]
            else:
                base = self.dram_map.get(region_name, {"base": 0})["base"] + info["offset"]
            dst = {"mem": "dram", "base": base, "bytes": rq.bytes}
        return src, dst

    def _place(self, rq: _Request, t, region):
        dur = transfer_cycles(rq.bytes, self.hw, dram=rq.kind != "copy_spm")
        src, dst = self._src_dst(rq, region)
        ev = TransferEvent(
            id=len(self.transfers), kind=rq.kind, src=src, dst=dst, bytes=rq.bytes,
            start=t, dur=dur, serves=rq.serves, purpose=rq.purpose,
            src_subtask=rq.producer if rq.kind in ("copy_spm", "store_dram") else None,
        )
        self.transfers.append(ev)
        self.dma_free = ev.end
        self.rr_last = rq.core
        rq.placed = True
        rq.event = ev
        if rq.kind == "copy_spm":
            self._consume_use(rq.producer, ev.end)
        if rq.kind == "store_dram":
            region_out = self.out_region[rq.producer]
            if rq.purpose == "spill":
                self._retire(region_out, ev.end)
            else:
                self._consume_use(rq.producer, ev.end)
        return ev

    def _target_region(self, rq: _Request, t):
        """Region a placement at time t would write into; allocates lazily.

        Returns (time, region-or-None); region is None for outbound requests.
        """
        if rq.kind == "store_dram":
            return t, None
        table = self.in_region if rq.role == "in" else self.w_region
        existing = table.get(rq.owner)
        if existing is not None:
            return t, existing
        length = self._region_length(self.by_id[rq.owner], rq.role)
        t_fit, _ = self._earliest_fit(self.mapping.core_of[rq.owner], length, t)
        if t_fit is None:
            return None, None
        return t_fit, "new"

    def run(self) -> Schedule:
        self._build_dram_map()
        if not self.subtasks:
            return Schedule(self.hw, self.mapping, [], [], [], 0, dict(self.dram_map))
        self._make_requests()
        if self.hw.include_program_load:
            self._place_program_loads()

        guard = 0
        limit = 40 * (len(self.requests) + len(self.subtasks)) + 1000
        while True:
            guard += 1
            if guard > limit:
                raise RuntimeError("schedule construction did not converge")
            self._schedule_computes()
            pending = [rq for rq in self.requests if not rq.placed]
            if not pending:
                if len(self.computes) == len(self.subtasks):
                    break
                raise RuntimeError("computes stalled with no pending transfers")
            released = []
            for rq in pending:
                rdy = self._ready(rq)
                if rdy is not None:
                    released.append((rq, max(rdy, self.dma_free)))
            if not released:
                raise RuntimeError("no releasable transfer; dependency cycle in construction")
            viable = []
            blocked = []
            for rq, t0 in released:
                t_fit, region = self._target_region(rq, t0)
                if t_fit is None:
                    blocked.append((t0, rq))
                else:
                    viable.append((t_fit, rq, region))
            if not viable:
                blocked.sort(key=lambda item: (item[0], item[1].rid))
                t0, rq = blocked[0]
                core = self.mapping.core_of[rq.owner]
                if self._try_spill(core, t0):
                    continue
                length = self._region_length(self.by_id[rq.owner], rq.role)
                free = self.hw.spm_data_bytes - sum(r.length for r in self._blocking(core, t0))
                raise SpmOverflowError(
                    f"core {core} needs {length} bytes at cycle {t0} for subtask {rq.owner}",
                    core=core, cycle=t0, deficit=length - max(free, 0),
                )
            t_min = min(t for t, _, _ in viable)
            cands = [(rq, region) for t, rq, region in viable if t == t_min]
            cores_avail = {rq.core for rq, _ in cands}
            pick_core = next(
                c for c in ((self.rr_last + 1 + i) % self.hw.n_cores for i in range(self.hw.n_cores))
                if c in cores_avail
            )
            rq, region = min(
                ((rq, region) for rq, region in cands if rq.core == pick_core),
                key=lambda item: item[0].rid,
            )
            if region == "new":
                length = self._region_length(self.by_id[rq.owner], rq.role)
                region = self._alloc(self.mapping.core_of[rq.owner], length, t_min,
                                     f"{rq.role}:{rq.owner}", rq.owner, rq.role)
                table = self.in_region if rq.role == "in" else self.w_region
                table[rq.owner] = region
            self._place(rq, t_min, region)

        return self._assemble()

    def _assemble(self) -> Schedule:
        for core_regions in self.regions.values():
            for r in core_regions:
                assert r.end is not None, f"region {r.tag} never retired"
        regions = sorted(
            (SpmRegion(r.core, r.offset, r.length, r.start, r.end, r.tag)
             for rs in self.regions.values() for r in rs),
            key=lambda r: (r.core, r.start, r.offset),
        )
        transfers = sorted(self.transfers, key=lambda t: (t.start, t.id))
        computes = sorted(self.computes.values(), key=lambda c: (c.start, c.subtask))
        ends = [t.end for t in transfers] + [c.end for c in computes]
        makespan = max(ends) if ends else 0
        if self.spill_cursor:
            self.dram_map["spill"] = {"base": self.spill_base, "bytes": self.spill_cursor}
        return Schedule(self.hw, self.mapping, transfers, computes, regions, makespan, dict(self.dram_map))


def build_schedule(sg: SubtaskGraph, mapping: Mapping, costs: dict, hw: HardwareConfig) -> Schedule:
    """List-schedule the subtask graph onto one DMA and n_cores core timelines."""
    missing = [s.id for s in sg.subtasks if s.id not in costs]
    if missing:
        raise ValidationError(f"no cost estimate for subtasks {missing}")
    unmapped = [s.id for s in sg.subtasks if s.id not in mapping.core_of]
    if unmapped:
        raise ValidationError(f"no core assignment for subtasks {unmapped}")
    bad_cores = sorted({c for c in mapping.core_of.values() if not 0 <= c < hw.n_cores})
    if bad_cores:
        raise ValidationError(f"mapping uses cores {bad_cores}, hardware has {hw.n_cores}")
    return _Builder(sg, mapping, costs, hw).run()


# ---------------------------------------------------------------------------
# artifact I/O


def schedule_to_dict(s: Schedule) -> dict:
    return {
        "format": SCHEDULE_FORMAT,
        "hw": s.hw.to_dict(),
        "mapping": {
            "core_of": {str(k): v for k, v in sorted(s.mapping.core_of.items())},
            "load_cap": s.mapping.load_cap,
        },
        "transfers": [
            {
                "id": t.id, "kind": t.kind, "src": t.src, "dst": t.dst, "bytes": t.bytes,
                "start": t.start, "dur": t.dur, "serves": list(t.serves),
                "purpose": t.purpose, "src_subtask": t.src_subtask,
            }
            for t in s.transfers
        ],
        "computes": [
            {
                "subtask": c.subtask, "core": c.core, "start": c.start, "wcet": c.wcet,
                "layer": c.layer, "local_deps": list(c.local_deps), "cost_inputs": c.cost_inputs,
            }
            for c in s.computes
        ],
        "spm_regions": [
            {"core": r.core, "offset": r.offset, "bytes": r.bytes,
             "start": r.start, "end": r.end, "tag": r.tag}
            for r in s.spm_regions
        ],
        "dram_map": s.dram_map,
        "makespan": s.makespan,
    }


def emit_schedule(s: Schedule, path) -> None:
    """Write the canonical schedule artifact; byte-identical across runs."""
    problems = check_schedule(s)
    bad = [p for p in problems if not p[1]]
    if bad:
        raise ValidationError(f"refusing to emit an inconsistent schedule: {bad[0][0]}: {bad[0][2]}")
    Path(path).write_text(json.dumps(schedule_to_dict(s), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def schedule_from_dict(doc: dict) -> Schedule:
    try:
        if doc.get("format") != SCHEDULE_FORMAT:
            raise ScheduleFormatError(f"unknown artifact format {doc.get('format')!r}")
        hw = HardwareConfig.from_dict(doc["hw"])
        mapping = Mapping(
            {int(k): int(v) for k, v in doc["mapping"]["core_of"].items()},
            int(doc["mapping"]["load_cap"]),
        )
        transfers = [
            TransferEvent(
                id=int(t["id"]), kind=t["kind"], src=t["src"], dst=t["dst"], bytes=int(t["bytes"]),
                start=int(t["start"]), dur=int(t["dur"]), serves=tuple(t["serves"]),
                purpose=t.get("purpose", "data"), src_subtask=t.get("src_subtask"),
            )
            for t in doc["transfers"]
        ]
        computes = [
            ComputeEvent(
                subtask=int(c["subtask"]), core=int(c["core"]), start=int(c["start"]),
                wcet=int(c["wcet"]), layer=c.get("layer", ""),
                local_deps=tuple(c.get("local_deps", ())), cost_inputs=c.get("cost_inputs", {}),
            )
            for c in doc["computes"]
        ]
        regions = [
            SpmRegion(int(r["core"]), int(r["offset"]), int(r["bytes"]),
                      int(r["start"]), int(r["end"]), r["tag"])
            for r in doc["spm_regions"]
        ]
        sched = Schedule(hw, mapping, transfers, computes, regions,
                         int(doc["makespan"]), doc.get("dram_map", {}))
    except ScheduleFormatError:
        raise
    except (KeyError, TypeError, ValueError, ValidationError) as exc:
        raise ScheduleFormatError(f"malformed schedule artifact: {exc}") from exc
    validate_structure(sched)
    return sched


def load_schedule(path) -> Schedule:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ScheduleFormatError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ScheduleFormatError(f"invalid JSON in {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ScheduleFormatError("schedule artifact must be a JSON object")
    return schedule_from_dict(doc)


def validate_structure(s: Schedule) -> None:
    """Structural well-formedness; semantic invariants are checked separately."""
    sids = {c.subtask for c in s.computes}
    if len(sids) != len(s.computes):
        raise ScheduleFormatError("duplicate compute events")
    for c in s.computes:
        if c.start < 0 or c.wcet < 1:
            raise ScheduleFormatError(f"bad compute event for subtask {c.subtask}")
        if not 0 <= c.core < s.hw.n_cores:
            raise ScheduleFormatError(f"compute core {c.core} out of range")
        if s.mapping.core_of.get(c.subtask) != c.core:
            raise ScheduleFormatError(f"compute {c.subtask} disagrees with the mapping")
        for dep in c.local_deps:
            if dep not in sids:
                raise ScheduleFormatError(f"compute {c.subtask} depends on unknown subtask {dep}")
    for t in s.transfers:
        if t.kind not in TRANSFER_KINDS:
            raise ScheduleFormatError(f"unknown transfer kind {t.kind!r}")
        if t.start < 0 or t.bytes < 1:
            raise ScheduleFormatError(f"bad transfer event {t.id}")
        if t.dur != transfer_cycles(t.bytes, s.hw, dram=t.kind != "copy_spm"):
            raise ScheduleFormatError(f"transfer {t.id} duration inconsistent with its byte count")
        for sid in t.serves:
            if sid not in sids:
                raise ScheduleFormatError(f"transfer {t.id} serves unknown subtask {sid}")
        if t.src_subtask is not None and t.src_subtask not in sids:
            raise ScheduleFormatError(f"transfer {t.id} sources unknown subtask {t.src_subtask}")
    for r in s.spm_regions:
        if r.offset < 0 or r.bytes < 1 or r.end < r.start:
            raise ScheduleFormatError(f"bad scratchpad region {r.tag}")
        if r.offset + r.bytes > s.hw.spm_data_bytes:
            raise ScheduleFormatError(f"region {r.tag} exceeds the scratchpad address range")


def _intervals_overlap(events) -> list:
    """Pairs of events with overlapping [start, end) intervals."""
    out = []
    ordered = sorted(events, key=lambda e: (e.start, e.end))
    for a, b in zip(ordered, ordered[1:]):
        if b.start < a.end:
            out.append((a, b))
    return out


def check_schedule(s: Schedule) -> list:
    """Static invariant checks: list of (name, ok, detail)."""
    results = []

    overlaps = _intervals_overlap(s.transfers)
    results.append(("dma_exclusive", not overlaps,
                    f"{len(overlaps)} overlapping transfer pair(s)" if overlaps else "all transfers disjoint"))

    core_bad = []
    for core in sorted({c.core for c in s.computes}):
        core_bad += _intervals_overlap([c for c in s.computes if c.core == core])
    results.append(("core_exclusive", not core_bad,
                    f"{len(core_bad)} overlapping compute pair(s)" if core_bad else "per-core computes disjoint"))

    cap_bad = []
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
                cap_bad.append((core, cycle, live))
                break
    results.append(("spm_capacity", not cap_bad,
                    f"core {cap_bad[0][0]} holds {cap_bad[0][2]} bytes at cycle {cap_bad[0][1]}"
                    if cap_bad else "per-core residency within capacity"))

    dep_bad = []
    compute_by_sid = {c.subtask: c for c in s.computes}
    for c in s.computes:
        for t in s.transfers:
            if c.subtask in t.serves and t.kind in ("load_dram", "copy_spm") and t.end > c.start:
                dep_bad.append(f"transfer {t.id} serves {c.subtask} but ends at {t.end} > start {c.start}")
        for dep in c.local_deps:
            if compute_by_sid[dep].end > c.start:
                dep_bad.append(f"subtask {c.subtask} starts before local producer {dep} finishes")
    for t in s.transfers:
        if t.src_subtask is not None and compute_by_sid[t.src_subtask].end > t.start:
            dep_bad.append(f"transfer {t.id} starts before source subtask {t.src_subtask} finishes")
    results.append(("dependencies", not dep_bad, dep_bad[0] if dep_bad else "all data dependencies respected"))

    ends = [t.end for t in s.transfers] + [c.end for c in s.computes]
    recomputed = max(ends) if ends else 0
    results.append(("makespan", recomputed == s.makespan,
                    f"recomputed {recomputed} != recorded {s.makespan}"
                    if recomputed != s.makespan else f"makespan {s.makespan} reproduced from events"))
    return results
