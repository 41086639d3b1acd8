"""Shared builders, random generators, and brute-force oracles for the tests.

The oracles here deliberately re-derive results element by element (receptive
fields, path enumeration, exhaustive mappings) so they share no code with the
implementation they check.
"""

from __future__ import annotations

import itertools
import math
import random

import numpy as np

from ttsched import (
    DRAM_NODE,
    HardwareConfig,
    build_schedule,
    build_subtask_graph,
    fuse_operators,
    map_subtasks,
    model_from_dict,
    wcet_subtask,
)
from ttsched.model_ir import GRAPH_INPUT


# ---------------------------------------------------------------------------
# model builders


def conv(lid, src, c_in, c_out, k=3, stride=1, pad=1, shift=0):
    return {
        "id": lid, "op": "Conv2D",
        "attrs": {"in_channels": c_in, "out_channels": c_out, "kernel_h": k,
                  "kernel_w": k, "stride": stride, "padding": pad, "shift": shift},
        "inputs": [src], "weights": f"{lid}.w",
    }


def dense(lid, src, f_in, f_out, shift=0):
    return {
        "id": lid, "op": "Dense",
        "attrs": {"in_features": f_in, "out_features": f_out, "shift": shift},
        "inputs": [src], "weights": f"{lid}.w",
    }


def relu(lid, src):
    return {"id": lid, "op": "ReLU", "inputs": [src]}


def addop(lid, a, b, shift=0):
    return {"id": lid, "op": "ElementwiseAdd", "attrs": {"shift": shift}, "inputs": [a, b]}


def maxpool(lid, src, window=2, stride=2):
    return {"id": lid, "op": "MaxPool2D", "attrs": {"window": window, "stride": stride}, "inputs": [src]}


def flatten(lid, src):
    return {"id": lid, "op": "Flatten", "inputs": [src]}


def weight_bytes_of(layer_doc):
    a = layer_doc.get("attrs", {})
    if layer_doc["op"] == "Conv2D":
        return a["out_channels"] * a["in_channels"] * a["kernel_h"] * a["kernel_w"]
    if layer_doc["op"] == "Dense":
        return a["out_features"] * a["in_features"]
    return 0


def make_model(input_dims, layer_docs):
    """Validated ModelGraph from layer dicts; weight sizes derived from attrs."""
    sizes = {d["weights"]: weight_bytes_of(d) for d in layer_docs if d.get("weights")}
    return model_from_dict({
        "input": {"dims": list(input_dims)},
        "layers": layer_docs,
        "weights_file": "model.bin",
        "weight_sizes": sizes,
    })


def random_weights(g, rng):
    """Deterministic int8 blobs for every declared weight."""
    out = {}
    for name, size in g.weight_sizes.items():
        out[name] = np.array([rng.randint(-128, 127) for _ in range(size)], dtype=np.int8)
    return out


# ---------------------------------------------------------------------------
# random model / hardware generators


def random_model(rng: random.Random, max_layers=6, spatial=True):
    """A valid random model document (chains plus occasional residual adds)."""
    if spatial and rng.random() < 0.8:
        shape = (rng.randint(3, 12), rng.randint(3, 12), rng.choice([1, 2, 3, 4, 8, 16]))
    else:
        shape = (rng.randint(1, 200),)
    docs = []
    cur_src, cur_shape = GRAPH_INPUT, shape
    shapes_seen = {}  # shape -> latest layer id with that output
    n_layers = rng.randint(1, max_layers)
    for i in range(n_layers):
        lid = f"L{i}"
        ops = ["ReLU", "Dense"]
        if len(cur_shape) == 3:
            h, w, c = cur_shape
            ops += ["Flatten", "Conv2D", "Conv2D"]
            if h >= 2 and w >= 2:
                ops += ["MaxPool2D"]
        if cur_shape in shapes_seen and shapes_seen[cur_shape] != cur_src:
            ops += ["ElementwiseAdd", "ElementwiseAdd"]
        op = rng.choice(ops)
        if op == "Conv2D":
            h, w, c = cur_shape
            k = rng.choice([1, 3])
            pad = rng.choice([0, 1]) if k == 3 else 0
            stride = rng.choice([1, 1, 2])
            if h + 2 * pad < k or w + 2 * pad < k:
                k, pad, stride = 1, 0, 1
            c_out = rng.choice([1, 2, 4, 8, 16, 32])
            docs.append(conv(lid, cur_src, c, c_out, k=k, stride=stride, pad=pad,
                             shift=rng.choice([0, 0, 4, 7])))
            cur_shape = ((h + 2 * pad - k) // stride + 1, (w + 2 * pad - k) // stride + 1, c_out)
        elif op == "MaxPool2D":
            h, w, c = cur_shape
            stride = rng.choice([1, 2])
            docs.append(maxpool(lid, cur_src, window=2, stride=stride))
            cur_shape = ((h - 2) // stride + 1, (w - 2) // stride + 1, c)
        elif op == "Flatten":
            docs.append(flatten(lid, cur_src))
            cur_shape = (math.prod(cur_shape),)
        elif op == "Dense":
            f_in = math.prod(cur_shape)
            f_out = rng.randint(1, 64)
            docs.append(dense(lid, cur_src, f_in, f_out, shift=rng.choice([0, 0, 5])))
            cur_shape = (f_out,)
        elif op == "ElementwiseAdd":
            docs.append(addop(lid, cur_src, shapes_seen[cur_shape], shift=rng.choice([0, 1])))
        else:
            docs.append(relu(lid, cur_src))
        # Remember the first producer of each shape so later layers with the
        # same shape can form residual adds against it.
        shapes_seen.setdefault(cur_shape, lid)
        cur_src = lid
    sizes = {d["weights"]: weight_bytes_of(d) for d in docs if d.get("weights")}
    return {
        "input": {"dims": list(shape)},
        "layers": docs,
        "weights_file": "model.bin",
        "weight_sizes": sizes,
    }


def random_hw(rng: random.Random) -> HardwareConfig:
    return HardwareConfig(
        n_cores=rng.choice([1, 2, 3, 4, 8, 16]),
        spm_data_bytes=rng.choice([65536, 131072, 262144, 524288]),
        spm_instr_bytes=524288,
        vlen_bits=rng.choice([256, 512]),
        sew_bits=8,
        bus_bytes_per_cycle=rng.choice([4, 8, 16]),
        dma_setup_cycles=rng.randint(5, 40),
        dram_latency_cycles=rng.randint(10, 60),
        gemm_c0=rng.randint(50, 400),
        gemm_c1=rng.randint(1, 4),
        stream_c1=rng.randint(1, 2),
        program_image_bytes=rng.choice([16384, 65536]),
        include_program_load=rng.random() < 0.2,
    )


def compile_pipeline(g, hw, tile_budget_bytes=None, wcet_overrides=None):
    """load->fuse assumed done; partition, map, cost, schedule."""
    sg = build_subtask_graph(g, hw, tile_budget_bytes=tile_budget_bytes)
    mapping = map_subtasks(sg, hw.n_cores)
    costs = {s.id: wcet_subtask(s.tile, sg.dims_of[s.layer_id], hw) for s in sg.subtasks}
    if wcet_overrides:
        costs.update(wcet_overrides)
    schedule = build_schedule(sg, mapping, costs, hw)
    return sg, mapping, costs, schedule


def random_pipeline(rng, max_layers=6):
    """Random (model, hw) pair compiled end to end; resamples until feasible."""
    from ttsched.errors import InfeasibleBudgetError

    while True:
        doc = random_model(rng, max_layers=max_layers)
        hw = random_hw(rng)
        g = fuse_operators(model_from_dict(doc))
        try:
            sg, mapping, costs, schedule = compile_pipeline(g, hw)
        except InfeasibleBudgetError:
            continue
        return doc, g, hw, sg, mapping, costs, schedule


# ---------------------------------------------------------------------------
# brute-force oracles


def elem_reads(g, layer, slot, p, ch):
    """Flat input-element ids one output element (p, ch) reads, slot-wise.

    Independent re-derivation: walks the receptive field of the single output
    element instead of rasterizing tile rectangles.
    """
    src = layer.inputs[slot]
    in_shape = g.input_shape if src == GRAPH_INPUT else g.layer(src).out_shape
    if layer.op == "Dense":
        return set(range(in_shape.num_elems))
    if layer.op == "Conv2D":
        a = layer.attrs
        h, w, c_in = in_shape.spatial()
        w_out = layer.out_shape.dims[1]
        oh, ow = divmod(p, w_out)
        reads = set()
        for ki in range(a["kernel_h"]):
            for kj in range(a["kernel_w"]):
                ih = oh * a["stride"] - a["padding"] + ki
                iw = ow * a["stride"] - a["padding"] + kj
                if 0 <= ih < h and 0 <= iw < w:
                    base = (ih * w + iw) * c_in
                    reads.update(range(base, base + c_in))
        return reads
    if layer.op == "MaxPool2D":
        a = layer.attrs
        h, w, c = in_shape.spatial()
        w_out = layer.out_shape.dims[1]
        oh, ow = divmod(p, w_out)
        reads = set()
        for ki in range(a["window"]):
            for kj in range(a["window"]):
                ih, iw = oh * a["stride"] + ki, ow * a["stride"] + kj
                if 0 <= ih < h and 0 <= iw < w:
                    reads.add((ih * w + iw) * c + ch)
        return reads
    if layer.op in ("ReLU", "ElementwiseAdd"):
        n = layer.out_shape.dims[-1]
        return {p * n + ch}
    raise AssertionError(f"unexpected op {layer.op}")


def oracle_edge_bytes(g, sg):
    """Region-intersection oracle: expected bytes for every producer edge."""
    by_id = {s.id: s for s in sg.subtasks}
    resolved = {}

    def resolve(lid):
        while lid != GRAPH_INPUT and g.layer(lid).op == "Flatten":
            lid = g.layer(lid).inputs[0]
        return lid

    expected = {}
    for s in sg.subtasks:
        layer = g.layer(s.layer_id)
        for slot in range(len(layer.inputs)):
            src = resolve(layer.inputs[slot])
            if src == GRAPH_INPUT:
                continue
            need = set()
            for p in range(s.tile.m0, s.tile.m0 + s.tile.mt):
                for ch in range(s.tile.n0, s.tile.n0 + s.tile.nt):
                    need |= elem_reads(g, layer, slot, p, ch)
            src_dims = sg.dims_of[src]
            for prod in sg.subtasks:
                if prod.layer_id != src:
                    continue
                elems = {
                    pp * src_dims.n + pc
                    for pp in range(prod.tile.m0, prod.tile.m0 + prod.tile.mt)
                    for pc in range(prod.tile.n0, prod.tile.n0 + prod.tile.nt)
                }
                count = len(need & elems)
                if count:
                    expected[(prod.id, s.id)] = expected.get((prod.id, s.id), 0) + count
    return expected


def enumerate_mappings(sg, n_cores):
    """All cap-feasible core assignments and their cross-core byte costs."""
    from ttsched import Mapping, cross_core_bytes

    ids = [s.id for s in sg.subtasks]
    cap = -(-len(ids) // n_cores)
    costs = []
    for combo in itertools.product(range(n_cores), repeat=len(ids)):
        if any(combo.count(c) > cap for c in range(n_cores)):
            continue
        costs.append(cross_core_bytes(sg, Mapping(dict(zip(ids, combo)), cap)))
    return costs


def longest_path_cycles(schedule):
    """Brute-force longest dependency path through the event DAG."""
    nodes = {}
    for c in schedule.computes:
        nodes[f"c{c.subtask}"] = c.wcet
    for t in schedule.transfers:
        nodes[f"t{t.id}"] = t.dur
    succ = {k: set() for k in nodes}
    for c in schedule.computes:
        for t in schedule.transfers:
            if c.subtask in t.serves and t.kind in ("load_dram", "copy_spm"):
                succ[f"t{t.id}"].add(f"c{c.subtask}")
        for dep in c.local_deps:
            succ[f"c{dep}"].add(f"c{c.subtask}")
    for t in schedule.transfers:
        if t.src_subtask is not None:
            succ[f"c{t.src_subtask}"].add(f"t{t.id}")

    best = 0
    def walk(node, acc):
        nonlocal best
        acc += nodes[node]
        best = max(best, acc)
        for nxt in succ[node]:
            walk(nxt, acc)

    for node in nodes:
        walk(node, 0)
    return best
