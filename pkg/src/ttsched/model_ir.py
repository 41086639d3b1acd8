"""Layer-graph ingestion, operator fusion, and an int8 reference executor.

The model interchange format is a JSON description plus a raw little-endian
int8 weight blob.  The reference executor is bit-exact (int32 accumulation,
power-of-two requantization) and serves as the functional oracle for the
tiling stages.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ParseError, ValidationError

SUPPORTED_OPS = ("Conv2D", "Dense", "ReLU", "ElementwiseAdd", "MaxPool2D", "Flatten")

# Reserved id that layers use to reference the graph input tensor.
GRAPH_INPUT = "input"

INT8_MIN, INT8_MAX = -128, 127

_REQUIRED_ATTRS = {
    "Conv2D": ("in_channels", "out_channels", "kernel_h", "kernel_w", "stride", "padding"),
    "Dense": ("in_features", "out_features"),
    "MaxPool2D": ("window", "stride"),
    "ReLU": (),
    "ElementwiseAdd": (),
    "Flatten": (),
}

# Ops that may carry a requantization shift attribute.
_SHIFT_OPS = ("Conv2D", "Dense", "ElementwiseAdd")


@dataclass(frozen=True)
class TensorShape:
    """Tensor extents in (N,)H,W,C order plus element width in bytes."""

    dims: tuple
    elem_bytes: int = 1

    def __post_init__(self):
        if not 1 <= len(self.dims) <= 4:
            raise ValidationError(f"tensor rank {len(self.dims)} out of range 1..4")
        if any(int(d) < 1 for d in self.dims):
            raise ValidationError(f"non-positive tensor dim in {self.dims}")
        if self.elem_bytes < 1:
            raise ValidationError(f"non-positive elem_bytes {self.elem_bytes}")
        if self.byte_size >= 2**63:
            raise ValidationError(f"tensor byte size overflows 63 bits: {self.dims}")

    @property
    def num_elems(self) -> int:
        return math.prod(self.dims)

    @property
    def byte_size(self) -> int:
        return math.prod(self.dims) * self.elem_bytes

    def spatial(self):
        """(H, W, C) view for 3-D/4-D activations; None for flat tensors.

        A leading batch dim must be 1 (single-inference toolchain).
        """
        dims = self.dims
        if len(dims) == 4:
            if dims[0] != 1:
                return None
            dims = dims[1:]
        if len(dims) == 3:
            return dims
        return None


@dataclass
class Layer:
    id: str
    op: str
    attrs: dict = field(default_factory=dict)
    inputs: list = field(default_factory=list)
    weights_ref: str | None = None
    # Filled in by validation / fusion:
    out_shape: TensorShape | None = None
    epilogue_relu: bool = False

    @property
    def shift(self) -> int:
        return int(self.attrs.get("shift", 0))


@dataclass
class ModelGraph:
    layers: list
    input_shape: TensorShape
    weight_sizes: dict = field(default_factory=dict)
    weights_file: str | None = None

    def layer(self, layer_id: str) -> Layer:
        for lyr in self.layers:
            if lyr.id == layer_id:
                return lyr
        raise KeyError(layer_id)

    def consumers(self) -> dict:
        """Map layer id -> list of layer ids that read it (file order)."""
        out = {lyr.id: [] for lyr in self.layers}
        for lyr in self.layers:
            for src in lyr.inputs:
                if src != GRAPH_INPUT:
                    out[src].append(lyr.id)
        return out

    def output_layer(self) -> Layer:
        cons = self.consumers()
        sinks = [lyr for lyr in self.layers if not cons[lyr.id]]
        assert len(sinks) == 1, "validated graphs have exactly one output layer"
        return sinks[0]

    def input_shape_of(self, lyr: Layer, slot: int = 0) -> TensorShape:
        src = lyr.inputs[slot]
        if src == GRAPH_INPUT:
            return self.input_shape
        return self.layer(src).out_shape


def _infer_out_shape(g: ModelGraph, lyr: Layer) -> TensorShape:
    """Shape inference for one layer; raises ValidationError naming the layer."""
    in_shape = g.input_shape_of(lyr)

    def err(msg):
        raise ValidationError(f"shape mismatch at {lyr.id}: {msg}", layer_id=lyr.id)

    if lyr.op == "Conv2D":
        sp = in_shape.spatial()
        if sp is None:
            err(f"Conv2D needs an (H,W,C) input, got {in_shape.dims}")
        h, w, c = sp
        a = lyr.attrs
        if c != a["in_channels"]:
            err(f"in_channels={a['in_channels']} but input has {c} channels")
        kh, kw, s, p = a["kernel_h"], a["kernel_w"], a["stride"], a["padding"]
        if h + 2 * p < kh or w + 2 * p < kw:
            err(f"kernel {kh}x{kw} larger than padded input {h + 2 * p}x{w + 2 * p}")
        h_out = (h + 2 * p - kh) // s + 1
        w_out = (w + 2 * p - kw) // s + 1
        return TensorShape((h_out, w_out, a["out_channels"]))
    if lyr.op == "Dense":
        if in_shape.num_elems != lyr.attrs["in_features"]:
            err(
                f"in_features={lyr.attrs['in_features']} but input "
                f"{in_shape.dims} has {in_shape.num_elems} elements"
            )
        return TensorShape((lyr.attrs["out_features"],))
    if lyr.op == "ReLU":
        return in_shape
    if lyr.op == "ElementwiseAdd":
        other = g.input_shape_of(lyr, 1)
        if in_shape.dims != other.dims:
            err(f"operand shapes differ: {in_shape.dims} vs {other.dims}")
        return in_shape
    if lyr.op == "MaxPool2D":
        sp = in_shape.spatial()
        if sp is None:
            err(f"MaxPool2D needs an (H,W,C) input, got {in_shape.dims}")
        h, w, c = sp
        wnd, s = lyr.attrs["window"], lyr.attrs["stride"]
        if h < wnd or w < wnd:
            err(f"window {wnd} larger than input {h}x{w}")
        return TensorShape(((h - wnd) // s + 1, (w - wnd) // s + 1, c))
    if lyr.op == "Flatten":
        return TensorShape((in_shape.num_elems,))
    raise ValidationError(f"unknown op {lyr.op!r} at {lyr.id}", layer_id=lyr.id)


def _expected_weight_bytes(lyr: Layer) -> int:
    if lyr.op == "Conv2D":
        a = lyr.attrs
        return a["out_channels"] * a["in_channels"] * a["kernel_h"] * a["kernel_w"]
    if lyr.op == "Dense":
        return lyr.attrs["out_features"] * lyr.attrs["in_features"]
    return 0


def validate(g: ModelGraph) -> ModelGraph:
    """Validate structure, topologically order layers, and infer all shapes.

    Returns the same graph with layers re-ordered (stable Kahn sort) and
    out_shape attached to every layer.
    """
    if not g.layers:
        raise ValidationError("empty graph")

    ids = [lyr.id for lyr in g.layers]
    if len(set(ids)) != len(ids):
        dup = next(i for i in ids if ids.count(i) > 1)
        raise ValidationError(f"duplicate layer id {dup}", layer_id=dup)
    if GRAPH_INPUT in ids:
        raise ValidationError(f"layer id {GRAPH_INPUT!r} is reserved", layer_id=GRAPH_INPUT)

    by_id = {lyr.id: lyr for lyr in g.layers}
    reads_input = 0
    for lyr in g.layers:
        if lyr.op not in SUPPORTED_OPS:
            raise ValidationError(f"unknown op {lyr.op!r} at {lyr.id}", layer_id=lyr.id)
        for key in _REQUIRED_ATTRS[lyr.op]:
            if key not in lyr.attrs:
                raise ValidationError(f"missing attr {key!r} at {lyr.id}", layer_id=lyr.id)
            if int(lyr.attrs[key]) < (0 if key == "padding" else 1):
                raise ValidationError(f"attr {key}={lyr.attrs[key]} out of range at {lyr.id}", layer_id=lyr.id)
        if "shift" in lyr.attrs and lyr.op not in _SHIFT_OPS:
            raise ValidationError(f"{lyr.op} does not requantize; no shift at {lyr.id}", layer_id=lyr.id)
        if lyr.shift < 0:
            raise ValidationError(f"negative shift at {lyr.id}", layer_id=lyr.id)
        n_in = 2 if lyr.op == "ElementwiseAdd" else 1
        if len(lyr.inputs) != n_in:
            raise ValidationError(
                f"{lyr.op} takes {n_in} input(s), got {len(lyr.inputs)} at {lyr.id}", layer_id=lyr.id
            )
        for src in lyr.inputs:
            if src == GRAPH_INPUT:
                reads_input += 1
            elif src not in by_id:
                raise ValidationError(f"dangling reference {src!r} at {lyr.id}", layer_id=lyr.id)
        needs_w = lyr.op in ("Conv2D", "Dense")
        if needs_w and not lyr.weights_ref:
            raise ValidationError(f"{lyr.op} requires a weights ref at {lyr.id}", layer_id=lyr.id)
        if not needs_w and lyr.weights_ref:
            raise ValidationError(f"{lyr.op} takes no weights at {lyr.id}", layer_id=lyr.id)
        if needs_w:
            if lyr.weights_ref not in g.weight_sizes:
                raise ValidationError(
                    f"weights {lyr.weights_ref!r} not declared at {lyr.id}", layer_id=lyr.id
                )
            want = _expected_weight_bytes(lyr)
            got = g.weight_sizes[lyr.weights_ref]
            if got != want:
                raise ValidationError(
                    f"weights {lyr.weights_ref!r} is {got} bytes, attrs imply {want} at {lyr.id}",
                    layer_id=lyr.id,
                )
    if reads_input == 0:
        raise ValidationError("no layer reads the graph input")

    # Kahn sort; file order breaks ties so results are deterministic.
    file_pos = {lid: i for i, lid in enumerate(ids)}
    remaining = {lyr.id: sum(1 for s in lyr.inputs if s != GRAPH_INPUT) for lyr in g.layers}
    order, ready = [], [lyr for lyr in g.layers if remaining[lyr.id] == 0]
    cons = g.consumers()
    while ready:
        ready.sort(key=lambda l: file_pos[l.id])
        lyr = ready.pop(0)
        order.append(lyr)
        for cid in cons[lyr.id]:
            remaining[cid] -= 1
            if remaining[cid] == 0:
                ready.append(by_id[cid])
    if len(order) != len(g.layers):
        stuck = next(i for i, n in remaining.items() if n > 0)
        raise ValidationError(f"cycle involving {stuck}", layer_id=stuck)
    g.layers = order

    sinks = [lyr for lyr in g.layers if not cons[lyr.id]]
    if len(sinks) != 1:
        names = ", ".join(l.id for l in sinks)
        raise ValidationError(f"expected exactly one output layer, got {len(sinks)} ({names})")

    for lyr in g.layers:
        lyr.out_shape = _infer_out_shape(g, lyr)
    return g


def model_from_dict(doc: dict) -> ModelGraph:
    """Build and validate a ModelGraph from a parsed interchange document."""
    try:
        input_shape = TensorShape(tuple(int(d) for d in doc["input"]["dims"]))
        layers = [
            Layer(
                id=str(entry["id"]),
                op=str(entry["op"]),
                attrs={k: int(v) for k, v in entry.get("attrs", {}).items()},
                inputs=[str(s) for s in entry.get("inputs", [])],
                weights_ref=entry.get("weights"),
            )
            for entry in doc.get("layers", [])
        ]
        weight_sizes = {str(k): int(v) for k, v in doc.get("weight_sizes", {}).items()}
        weights_file = doc.get("weights_file")
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed model document: {exc}") from exc
    return validate(ModelGraph(layers, input_shape, weight_sizes, weights_file))


def load_model(path) -> ModelGraph:
    """Load and validate a model interchange file."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON in {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ParseError(f"model document must be a JSON object: {path}")
    return model_from_dict(doc)


def load_weights(g: ModelGraph, model_path) -> dict:
    """Split the weight blob next to the model file into named int8 arrays.

    Blobs are concatenated in declaration order of weight_sizes; offsets are
    implied by the sizes.
    """
    blob_path = Path(model_path).parent / (g.weights_file or "")
    if not g.weight_sizes:
        return {}
    raw = np.fromfile(blob_path, dtype=np.int8)
    total = sum(g.weight_sizes.values())
    if raw.size != total:
        raise ValidationError(f"weight blob {blob_path} is {raw.size} bytes, declared {total}")
    out, off = {}, 0
    for name, size in g.weight_sizes.items():
        out[name] = raw[off : off + size].copy()
        off += size
    return out


def fuse_operators(g: ModelGraph) -> ModelGraph:
    """Absorb ReLU layers into a preceding single-consumer Conv2D/Dense.

    Non-fusable patterns pass through unchanged; the result is re-validated.
    """
    cons = g.consumers()
    fused_into = {}  # relu id -> absorbing layer id
    for lyr in g.layers:
        if lyr.op != "ReLU":
            continue
        src = lyr.inputs[0]
        if src == GRAPH_INPUT:
            continue
        producer = g.layer(src)
        if producer.op in ("Conv2D", "Dense") and cons[producer.id] == [lyr.id]:
            fused_into[lyr.id] = producer.id

    if not fused_into:
        return g

    new_layers = []
    for lyr in g.layers:
        if lyr.id in fused_into:
            continue
        kept = replace(lyr, attrs=dict(lyr.attrs), inputs=list(lyr.inputs))
        kept.inputs = [fused_into.get(s, s) for s in kept.inputs]
        if kept.id in fused_into.values():
            kept.epilogue_relu = True
        new_layers.append(kept)
    return validate(ModelGraph(new_layers, g.input_shape, dict(g.weight_sizes), g.weights_file))


def _requantize(acc: np.ndarray, shift: int) -> np.ndarray:
    """Arithmetic right shift then saturate to int8."""
    return np.clip(acc >> shift, INT8_MIN, INT8_MAX).astype(np.int8)


def _conv2d(x: np.ndarray, w: np.ndarray, lyr: Layer) -> np.ndarray:
    a = lyr.attrs
    kh, kw, s, p = a["kernel_h"], a["kernel_w"], a["stride"], a["padding"]
    c_in, c_out = a["in_channels"], a["out_channels"]
    h, w_in = x.shape[0], x.shape[1]
    h_out = (h + 2 * p - kh) // s + 1
    w_out = (w_in + 2 * p - kw) // s + 1
    padded = np.zeros((h + 2 * p, w_in + 2 * p, c_in), dtype=np.int32)
    padded[p : p + h, p : p + w_in] = x.astype(np.int32)
    # Weight blob layout: (out_c, kh, kw, in_c) so each output channel's
    # reduction vector is contiguous.
    wt = w.reshape(c_out, kh, kw, c_in).astype(np.int32)
    acc = np.zeros((h_out, w_out, c_out), dtype=np.int64)
    for i in range(h_out):
        for j in range(w_out):
            patch = padded[i * s : i * s + kh, j * s : j * s + kw, :]
            acc[i, j, :] = np.tensordot(wt, patch, axes=([1, 2, 3], [0, 1, 2]))
    return acc.astype(np.int64)


def execute_reference(g: ModelGraph, x: np.ndarray, weights: dict) -> np.ndarray:
    """Run the graph layer by layer: int32 accumulate, shift, saturate.

    `x` must be int8 with g.input_shape.dims; returns the int8 output tensor.
    Deterministic; the oracle the tiled deployment is checked against.
    """
    if tuple(x.shape) != g.input_shape.dims:
        raise ValidationError(f"input shape {x.shape} != declared {g.input_shape.dims}")
    x = np.asarray(x, dtype=np.int8)

    values = {GRAPH_INPUT: x}
    for lyr in g.layers:
        ins = [values[s] for s in lyr.inputs]
        if lyr.op in ("Conv2D", "Dense") and lyr.weights_ref not in weights:
            raise ValidationError(f"missing weight blob {lyr.weights_ref!r} for {lyr.id}", layer_id=lyr.id)
        if lyr.op == "Conv2D":
            wz = np.asarray(weights[lyr.weights_ref], dtype=np.int8)
            if wz.size != g.weight_sizes[lyr.weights_ref]:
                raise ValidationError(f"weight blob {lyr.weights_ref!r} size mismatch", layer_id=lyr.id)
            out = _requantize(_conv2d(ins[0], wz, lyr), lyr.shift)
        elif lyr.op == "Dense":
            wz = np.asarray(weights[lyr.weights_ref], dtype=np.int8)
            a = lyr.attrs
            # Row-major (out_features, in_features): row = output neuron.
            wt = wz.reshape(a["out_features"], a["in_features"]).astype(np.int64)
            acc = wt @ ins[0].reshape(-1).astype(np.int64)
            out = _requantize(acc, lyr.shift)
        elif lyr.op == "ReLU":
            out = np.maximum(ins[0], 0).astype(np.int8)
        elif lyr.op == "ElementwiseAdd":
            acc = ins[0].astype(np.int64) + ins[1].astype(np.int64)
            out = _requantize(acc, lyr.shift)
        elif lyr.op == "MaxPool2D":
            wnd, s = lyr.attrs["window"], lyr.attrs["stride"]
            h_out, w_out, c = lyr.out_shape.dims
            out = np.empty((h_out, w_out, c), dtype=np.int8)
            for i in range(h_out):
                for j in range(w_out):
                    out[i, j, :] = ins[0][i * s : i * s + wnd, j * s : j * s + wnd, :].max(axis=(0, 1))
        elif lyr.op == "Flatten":
            out = ins[0].reshape(-1)
        else:  # pragma: no cover - validate() rejects unknown ops
            raise ValidationError(f"unknown op {lyr.op!r}", layer_id=lyr.id)
        if lyr.epilogue_relu:
            out = np.maximum(out, 0).astype(np.int8)
        values[lyr.id] = out
    return values[g.output_layer().id]
