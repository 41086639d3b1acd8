"""Hardware configuration and the analytic per-subtask cost model.

Cycle estimates stand in for an external per-artifact worst-case analysis;
every estimate records its formula inputs so tools downstream can swap in
measured numbers via an override file without touching the schedule logic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ParseError, ValidationError


@dataclass(frozen=True)
class HardwareConfig:
    n_cores: int = 16
    spm_data_bytes: int = 524288
    spm_instr_bytes: int = 524288
    vlen_bits: int = 512
    sew_bits: int = 8
    bus_bytes_per_cycle: int = 8
    dma_setup_cycles: int = 20
    dram_latency_cycles: int = 30
    gemm_c0: int = 200
    gemm_c1: int = 2
    stream_c1: int = 1
    program_image_bytes: int = 65536
    include_program_load: bool = False

    def __post_init__(self):
        for f in fields(self):
            if f.name == "include_program_load":
                continue
            if getattr(self, f.name) < 1:
                raise ValidationError(f"hardware field {f.name} must be >= 1")
        if self.vlen_bits % self.sew_bits != 0:
            raise ValidationError("vlen_bits must be divisible by sew_bits")

    @property
    def lanes(self) -> int:
        return self.vlen_bits // self.sew_bits

    @property
    def tile_budget_bytes(self) -> int:
        # Half the data scratchpad; the other half double-buffers the next
        # tile's inputs (the scratchpads are dual-ported).
        return self.spm_data_bytes // 2

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, doc: dict) -> "HardwareConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValidationError(f"unknown hardware fields: {sorted(unknown)}")
        return cls(**doc)


def load_hw_config(path) -> HardwareConfig:
    """Read a JSON hardware config; missing fields take defaults."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON in {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ParseError(f"hardware config must be a JSON object: {path}")
    return HardwareConfig.from_dict(doc)


@dataclass(frozen=True)
class CostEstimate:
    wcet_cycles: int
    derived_from: dict = field(default_factory=dict)


def wcet_subtask(tile, dims, hw: HardwareConfig) -> CostEstimate:
    """Worst-case cycles for one tile.

    GEMM tiles run mt*k vector-MACC steps per lane group; k=1 streaming tiles
    (elementwise/pool) cost one lane-group pass per output row.
    """
    mt, nt = tile.mt, tile.nt
    lane_groups = -(-nt // hw.lanes)
    if tile.is_gemm:
        cycles = hw.gemm_c0 + mt * dims.k * lane_groups * hw.gemm_c1
        inputs = {
            "kind": "gemm",
            "mt": mt,
            "nt": nt,
            "k": dims.k,
            "lanes": hw.lanes,
            "c0": hw.gemm_c0,
            "c1": hw.gemm_c1,
        }
    else:
        cycles = hw.gemm_c0 + mt * lane_groups * hw.stream_c1
        inputs = {
            "kind": "stream",
            "mt": mt,
            "nt": nt,
            "lanes": hw.lanes,
            "c0": hw.gemm_c0,
            "c1": hw.stream_c1,
        }
    return CostEstimate(cycles, inputs)


def transfer_cycles(n_bytes: int, hw: HardwareConfig, dram: bool = True) -> int:
    """Worst-case cycles for one DMA transaction of n_bytes.

    DRAM endpoints pay the external-memory latency once per transaction;
    scratchpad-to-scratchpad copies only pay setup plus bus time.
    """
    if n_bytes < 1:
        raise ValidationError(f"transfer of {n_bytes} bytes")
    cycles = hw.dma_setup_cycles + -(-n_bytes // hw.bus_bytes_per_cycle)
    if dram:
        cycles += hw.dram_latency_cycles
    return cycles


def load_wcet_overrides(path) -> dict:
    """Read a subtask-id -> wcet_cycles override map (JSON)."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON in {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ParseError("wcet override file must be a JSON object")
    out = {}
    for key, val in doc.items():
        try:
            sid, cyc = int(key), int(val)
        except (TypeError, ValueError) as exc:
            raise ParseError(f"bad override entry {key!r}: {val!r}") from exc
        if cyc < 1:
            raise ValidationError(f"override for subtask {sid} must be >= 1 cycle")
        out[sid] = cyc
    return out


def apply_overrides(costs: dict, overrides: dict) -> dict:
    """Replace analytic estimates with externally supplied cycle counts."""
    out = dict(costs)
    for sid, cyc in overrides.items():
        if sid not in out:
            raise ValidationError(f"override names unknown subtask {sid}")
        out[sid] = CostEstimate(cyc, {"kind": "override"})
    return out
