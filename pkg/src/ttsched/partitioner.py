"""Lower compute layers to GEMM tiles and build the subtask dependency graph.

Each Conv2D/Dense layer becomes an implicit GEMM split into tiles that fit
the per-core scratchpad tile budget; elementwise/pool layers become k=1
streaming pseudo-GEMMs.  Edges carry exact overlap byte counts between
producer output regions and consumer input footprints.  Convolution inputs
are duplicated for the row-gather only inside the scratchpad, so edge bytes
and external-memory accounting always count unique elements.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleBudgetError, ValidationError
from .model_ir import GRAPH_INPUT, Layer, ModelGraph
from .timing import HardwareConfig

# Virtual node id for external memory in the subtask graph.
DRAM_NODE = 0

GEMM_OPS = ("Conv2D", "Dense")
STREAM_OPS = ("ReLU", "ElementwiseAdd", "MaxPool2D")


@dataclass(frozen=True)
class GemmDims:
    m: int
    n: int
    k: int

    def __post_init__(self):
        if min(self.m, self.n, self.k) < 1:
            raise ValidationError(f"degenerate GEMM dims {self}")


@dataclass(frozen=True)
class Tile:
    m0: int
    mt: int
    n0: int
    nt: int
    is_gemm: bool = True


@dataclass(frozen=True)
class Subtask:
    id: int
    layer_id: str
    tile: Tile
    dram_in_bytes: int
    spm_footprint_bytes: int
    out_bytes: int
    # Scheduling detail: weight slice location and unique activation volume.
    weight_bytes: int = 0
    act_in_bytes: int = 0
    weights_ref: str | None = None
    weight_offset: int = 0

    @property
    def is_gemm(self) -> bool:
        return self.tile.is_gemm


@dataclass(frozen=True)
class Edge:
    src: int
    dst: int
    bytes: int


@dataclass
class SubtaskGraph:
    subtasks: list
    edges: list
    layer_order: list  # layer ids that own subtasks, topological
    dims_of: dict = field(default_factory=dict)  # layer id -> GemmDims
    output_subtasks: list = field(default_factory=list)
    dram_regions: dict = field(default_factory=dict)  # region name -> byte size

    def subtask(self, sid: int) -> Subtask:
        return next(s for s in self.subtasks if s.id == sid)

    def in_edges(self, sid: int) -> list:
        return [e for e in self.edges if e.dst == sid]

    def out_edges(self, sid: int) -> list:
        return [e for e in self.edges if e.src == sid]


def lower_to_gemm(layer: Layer) -> GemmDims:
    """GEMM problem size for a compute layer.

    Conv2D maps output pixels to rows and output channels to columns with the
    receptive field flattened into k; streaming ops get a k=1 pseudo-GEMM over
    (positions, channels).  Flatten has no compute and no dims.
    """
    if layer.op == "Conv2D":
        a = layer.attrs
        h_out, w_out, c_out = layer.out_shape.dims
        return GemmDims(h_out * w_out, c_out, a["in_channels"] * a["kernel_h"] * a["kernel_w"])
    if layer.op == "Dense":
        return GemmDims(1, layer.attrs["out_features"], layer.attrs["in_features"])
    if layer.op in STREAM_OPS:
        dims = layer.out_shape.dims
        return GemmDims(math.prod(dims[:-1]), dims[-1], 1)
    raise ValidationError(f"no GEMM lowering for op {layer.op!r} at {layer.id}", layer_id=layer.id)


def _gemm_footprint(mt: int, nt: int, k: int) -> int:
    # Scratchpad-expanded input rows + weight slice + int32 accumulator.
    return mt * k + k * nt + 4 * mt * nt


def _nt_candidates(n: int, lanes: int):
    if n < lanes:
        return [n]
    return [g * lanes for g in range(n // lanes, 0, -1)]


def tile_layer(dims: GemmDims, budget_bytes: int, lanes: int) -> list:
    """Grid of GEMM tiles fitting the scratchpad budget, full k per tile.

    Picks the largest lane-aligned nt that leaves room for at least one row,
    then the largest mt that fits; edge tiles are clipped.
    """
    if lanes < 1:
        raise ValidationError(f"lanes must be >= 1, got {lanes}")
    m, n, k = dims.m, dims.n, dims.k
    nt = next((c for c in _nt_candidates(n, lanes) if _gemm_footprint(1, c, k) <= budget_bytes), None)
    if nt is None:
        need = _gemm_footprint(1, min(n, lanes), k)
        raise InfeasibleBudgetError(
            f"minimal {1}x{min(n, lanes)} tile with k={k} needs {need} bytes, budget is {budget_bytes}",
            required_bytes=need,
        )
    mt = min(m, (budget_bytes - k * nt) // (k + 4 * nt))
    tiles = []
    for m0 in range(0, m, mt):
        for n0 in range(0, n, nt):
            tiles.append(Tile(m0, min(mt, m - m0), n0, min(nt, n - n0), is_gemm=True))
    return tiles


def _input_tensor(g: ModelGraph, src: str):
    return g.input_shape if src == GRAPH_INPUT else g.layer(src).out_shape


def _resolve_source(g: ModelGraph, src: str) -> str:
    """Follow Flatten layers (pure views) back to the data-producing source."""
    while src != GRAPH_INPUT and g.layer(src).op == "Flatten":
        src = g.layer(src).inputs[0]
    return src


def _conv_pixel_mask(layer: Layer, in_hw, m0: int, mt: int) -> np.ndarray:
    """Input pixels (flat H*W mask) read by output pixels [m0, m0+mt)."""
    h, w = in_hw
    a = layer.attrs
    kh, kw = a["kernel_h"], a["kernel_w"]
    s, p = a["stride"], a["padding"]
    w_out = layer.out_shape.dims[1]
    mask = np.zeros((h, w), dtype=bool)
    for pos in range(m0, m0 + mt):
        oh, ow = divmod(pos, w_out)
        r0, c0 = oh * s - p, ow * s - p
        mask[max(r0, 0) : max(r0 + kh, 0), max(c0, 0) : max(c0 + kw, 0)] = True
    return mask.reshape(-1)


def _pool_pixel_mask(layer: Layer, in_hw, m0: int, mt: int) -> np.ndarray:
    h, w = in_hw
    wnd, s = layer.attrs["window"], layer.attrs["stride"]
    w_out = layer.out_shape.dims[1]
    mask = np.zeros((h, w), dtype=bool)
    for pos in range(m0, m0 + mt):
        oh, ow = divmod(pos, w_out)
        mask[oh * s : oh * s + wnd, ow * s : ow * s + wnd] = True
    return mask.reshape(-1)


def need_mask(g: ModelGraph, layer: Layer, slot: int, tile: Tile) -> np.ndarray:
    """Flat boolean mask over the slot's input tensor: elements the tile reads.

    Flat indexing is row-major with channels last, which coincides with the
    producing layer's (m, n) output grid, so overlap with a producer tile is a
    2-D slice of this mask.
    """
    in_shape = _input_tensor(g, layer.inputs[slot])
    n_elems = in_shape.num_elems
    if layer.op == "Dense":
        return np.ones(n_elems, dtype=bool)
    if layer.op == "Conv2D":
        h, w, c = in_shape.spatial()
        pix = _conv_pixel_mask(layer, (h, w), tile.m0, tile.mt)
        return np.repeat(pix, c)
    if layer.op == "MaxPool2D":
        h, w, c = in_shape.spatial()
        pix = _pool_pixel_mask(layer, (h, w), tile.m0, tile.mt)
        mask = np.zeros((h * w, c), dtype=bool)
        mask[pix, tile.n0 : tile.n0 + tile.nt] = True
        return mask.reshape(-1)
    if layer.op in ("ReLU", "ElementwiseAdd"):
        n = layer.out_shape.dims[-1]
        mask = np.zeros((n_elems // n, n), dtype=bool)
        mask[tile.m0 : tile.m0 + tile.mt, tile.n0 : tile.n0 + tile.nt] = True
        return mask.reshape(-1)
    raise ValidationError(f"op {layer.op!r} has no input footprint", layer_id=layer.id)


def _tile_in_bytes(g: ModelGraph, layer: Layer, tile: Tile) -> int:
    """Unique input bytes (all slots) the tile must have resident."""
    return sum(int(need_mask(g, layer, s, tile).sum()) for s in range(len(layer.inputs)))


def _tile_stream_layer(g: ModelGraph, layer: Layer, dims: GemmDims, budget_bytes: int, lanes: int) -> list:
    """Tile a k=1 streaming layer so unique-input + output bytes fit the budget."""
    m, n = dims.m, dims.n

    def footprint(mt, nt):
        t = Tile(0, mt, 0, nt, is_gemm=False)
        return _tile_in_bytes(g, layer, t) + mt * nt

    nt = next((c for c in _nt_candidates(n, lanes) if footprint(1, c) <= budget_bytes), None)
    if nt is None:
        need = footprint(1, min(n, lanes))
        raise InfeasibleBudgetError(
            f"minimal 1x{min(n, lanes)} streaming tile needs {need} bytes, budget is {budget_bytes}",
            required_bytes=need,
        )
    lo, hi = 1, m  # footprint is monotone in mt
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if footprint(mid, nt) <= budget_bytes:
            lo = mid
        else:
            hi = mid - 1
    mt = lo
    return [
        Tile(m0, min(mt, m - m0), n0, min(nt, n - n0), is_gemm=False)
        for m0 in range(0, m, mt)
        for n0 in range(0, n, nt)
    ]


def _overlap_bytes(mask: np.ndarray, prod_dims: GemmDims, tile: Tile) -> int:
    grid = mask.reshape(prod_dims.m, prod_dims.n)
    return int(grid[tile.m0 : tile.m0 + tile.mt, tile.n0 : tile.n0 + tile.nt].sum())


def build_subtask_graph(g: ModelGraph, hw: HardwareConfig, tile_budget_bytes: int | None = None) -> SubtaskGraph:
    """Tile every compute layer and connect tiles with exact byte volumes.

    Graph-input loads (including weight slices) and graph-output stores appear
    as edges to/from the virtual DRAM node.  Deterministic for equal inputs.
    """
    budget = hw.tile_budget_bytes if tile_budget_bytes is None else tile_budget_bytes
    subtasks, edges = [], []
    tiles_of = {}  # layer id -> list of subtask ids
    dims_of = {}
    layer_order = []
    next_id = DRAM_NODE + 1

    for layer in g.layers:
        if layer.op == "Flatten":
            continue
        dims = lower_to_gemm(layer)
        dims_of[layer.id] = dims
        try:
            if layer.op in GEMM_OPS:
                tiles = tile_layer(dims, budget, hw.lanes)
            else:
                tiles = _tile_stream_layer(g, layer, dims, budget, hw.lanes)
        except InfeasibleBudgetError as exc:
            raise InfeasibleBudgetError(
                f"layer {layer.id}: {exc.args[0]}", layer_id=layer.id, required_bytes=exc.required_bytes
            ) from exc
        layer_order.append(layer.id)
        ids = []
        for tile in tiles:
            act_in = _tile_in_bytes(g, layer, tile)
            if layer.op in GEMM_OPS:
                w_bytes = dims.k * tile.nt
                footprint = _gemm_footprint(tile.mt, tile.nt, dims.k)
            else:
                w_bytes = 0
                footprint = act_in + tile.mt * tile.nt
            subtasks.append(
                Subtask(
                    id=next_id,
                    layer_id=layer.id,
                    tile=tile,
                    dram_in_bytes=w_bytes + act_in,
                    spm_footprint_bytes=footprint,
                    out_bytes=tile.mt * tile.nt,
                    weight_bytes=w_bytes,
                    act_in_bytes=act_in,
                    weights_ref=layer.weights_ref,
                    weight_offset=tile.n0 * dims.k,
                )
            )
            ids.append(next_id)
            next_id += 1
        tiles_of[layer.id] = ids

    by_id = {s.id: s for s in subtasks}
    for layer in g.layers:
        if layer.id not in tiles_of:
            continue
        for sid in tiles_of[layer.id]:
            st = by_id[sid]
            dram_bytes = st.weight_bytes
            for slot in range(len(layer.inputs)):
                src = _resolve_source(g, layer.inputs[slot])
                mask = need_mask(g, layer, slot, st.tile)
                if src == GRAPH_INPUT:
                    dram_bytes += int(mask.sum())
                    continue
                src_dims = dims_of[src]
                for pid in tiles_of[src]:
                    ov = _overlap_bytes(mask, src_dims, by_id[pid].tile)
                    if ov > 0:
                        edges.append(Edge(pid, sid, ov))
            if dram_bytes > 0:
                edges.append(Edge(DRAM_NODE, sid, dram_bytes))

    out_src = _resolve_source(g, g.output_layer().id)
    output_subtasks = list(tiles_of[out_src]) if out_src != GRAPH_INPUT else []
    for sid in output_subtasks:
        edges.append(Edge(sid, DRAM_NODE, by_id[sid].out_bytes))

    # External-memory layout the schedule reports addresses against.
    dram_regions = {f"weights:{ref}": size for ref, size in g.weight_sizes.items()}
    dram_regions["input"] = g.input_shape.byte_size
    dram_regions["output"] = g.output_layer().out_shape.byte_size
    return SubtaskGraph(subtasks, edges, layer_order, dims_of, output_subtasks, dram_regions)
