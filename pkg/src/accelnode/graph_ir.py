"""Compute-graph IR: tensor/op types, validation, shape inference, and cost stats.

The graph is a typed DAG of tensor operations. Everything downstream
(quantizer, partitioner, simulator) consumes this representation; values are
treated as immutable after construction and all passes return new graphs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Mapping, Optional, Sequence


class DType(Enum):
    FP32 = "fp32"
    FP16 = "fp16"
    BF16 = "bf16"
    INT8 = "int8"
    INT4RW = "int4rw"
    INT32 = "int32"

    @property
    def element_bytes(self) -> float:
        return _ELEMENT_BYTES[self]


_ELEMENT_BYTES = {
    DType.FP32: 4.0,
    DType.FP16: 2.0,
    DType.BF16: 2.0,
    DType.INT8: 1.0,
    DType.INT4RW: 0.5,
    DType.INT32: 4.0,
}

# Row-wise quantized storage keeps an fp16 scale and fp16 bias per row.
ROWWISE_ROW_OVERHEAD_BYTES = 4


class OpKind(Enum):
    FC = "FC"
    MATMUL = "MatMul"
    BATCH_MATMUL = "BatchMatMul"
    CONV = "Conv"
    CONV3D = "Conv3D"
    SLS = "SLS"
    QUANTIZE = "Quantize"
    DEQUANTIZE = "Dequantize"
    CONVERT_TO = "ConvertTo"
    CONCAT = "Concat"
    TILE = "Tile"
    TRANSPOSE = "Transpose"
    ADD = "Add"
    MUL = "Mul"
    POOL = "Pool"
    SOFTMAX = "Softmax"
    GELU = "Gelu"
    LAYER_NORM = "LayerNorm"
    ROI_ALIGN_LIKE = "RoiAlignLike"
    HOST_DECODE = "HostDecode"
    CUSTOM = "Custom"


# Kinds that only ever run on the host CPU.
HOST_ONLY_KINDS = frozenset({OpKind.ROI_ALIGN_LIKE, OpKind.HOST_DECODE})


class GraphError(Exception):
    """Malformed graph or unsatisfiable request against one."""


class ShapeError(GraphError):
    """Shape inference failed; message names the op and offending dims."""


@dataclass(frozen=True)
class TensorSpec:
    name: str
    shape: Optional[tuple[int, ...]] = None
    dtype: DType = DType.FP32
    # Axes whose runtime extent may be smaller than the compiled extent;
    # shape[] holds the compiled (max) extent for those axes.
    variable_axes: tuple[int, ...] = ()

    def __post_init__(self):
        if self.shape is not None:
            object.__setattr__(self, "shape", tuple(int(d) for d in self.shape))
            for d in self.shape:
                if d < 1:
                    raise GraphError(f"tensor {self.name}: extent {d} < 1")
            for ax in self.variable_axes:
                if not 0 <= ax < len(self.shape):
                    raise GraphError(f"tensor {self.name}: variable axis {ax} out of range")

    @property
    def numel(self) -> int:
        if self.shape is None:
            raise ShapeError(f"tensor {self.name} has no resolved shape")
        return math.prod(self.shape)

    @property
    def nbytes(self) -> int:
        """Storage bytes at this dtype, including row-wise scale/bias overhead."""
        n = self.numel * self.dtype.element_bytes
        if self.dtype is DType.INT4RW:
            rows = self.shape[0] if self.shape else 0
            n += rows * ROWWISE_ROW_OVERHEAD_BYTES
        return int(n)


@dataclass(frozen=True)
class OpNode:
    id: str
    kind: OpKind
    inputs: tuple[str, ...] = ()
    outputs: tuple[str, ...] = ()
    attrs: Mapping[str, object] = field(default_factory=dict)
    device_supported: bool = True

    def __post_init__(self):
        object.__setattr__(self, "inputs", tuple(self.inputs))
        object.__setattr__(self, "outputs", tuple(self.outputs))
        # Sequence attrs are stored as lists so serialization round-trips to
        # a structurally identical graph.
        object.__setattr__(self, "attrs", {
            k: list(v) if isinstance(v, (tuple, list)) else v
            for k, v in dict(self.attrs).items()})
        if self.kind in HOST_ONLY_KINDS and self.device_supported:
            object.__setattr__(self, "device_supported", False)


@dataclass
class ComputeGraph:
    ops: list[OpNode] = field(default_factory=list)
    tensors: dict[str, TensorSpec] = field(default_factory=dict)
    inputs: tuple[str, ...] = ()
    outputs: tuple[str, ...] = ()
    weights: tuple[str, ...] = ()

    def __post_init__(self):
        self.inputs = tuple(self.inputs)
        self.outputs = tuple(self.outputs)
        self.weights = tuple(self.weights)

    # -- lookups ------------------------------------------------------------

    def op(self, op_id: str) -> OpNode:
        for o in self.ops:
            if o.id == op_id:
                return o
        raise GraphError(f"unknown op {op_id}")

    def tensor(self, name: str) -> TensorSpec:
        try:
            return self.tensors[name]
        except KeyError:
            raise GraphError(f"unknown tensor {name}") from None

    def producer_map(self) -> dict[str, OpNode]:
        prod: dict[str, OpNode] = {}
        for op in self.ops:
            for t in op.outputs:
                prod[t] = op
        return prod

    def consumer_map(self) -> dict[str, list[OpNode]]:
        cons: dict[str, list[OpNode]] = {t: [] for t in self.tensors}
        for op in self.ops:
            for t in op.inputs:
                cons.setdefault(t, []).append(op)
        return cons

    def weight_set(self) -> frozenset[str]:
        return frozenset(self.weights)

    def topo_order(self) -> list[OpNode]:
        """Kahn topological order; raises GraphError on a cycle."""
        prod = self.producer_map()
        indeg = {op.id: 0 for op in self.ops}
        succs: dict[str, list[str]] = {op.id: [] for op in self.ops}
        by_id = {op.id: op for op in self.ops}
        for op in self.ops:
            for t in op.inputs:
                p = prod.get(t)
                if p is not None and p.id != op.id:
                    succs[p.id].append(op.id)
                    indeg[op.id] += 1
                elif p is not None and p.id == op.id:
                    raise GraphError(f"cycle: op {op.id} consumes its own output")
        ready = sorted(i for i, d in indeg.items() if d == 0)
        order: list[OpNode] = []
        while ready:
            nxt = ready.pop(0)
            order.append(by_id[nxt])
            for s in succs[nxt]:
                indeg[s] -= 1
                if indeg[s] == 0:
                    ready.append(s)
            ready.sort()
        if len(order) != len(self.ops):
            stuck = sorted(set(indeg) - {o.id for o in order})
            raise GraphError(f"cycle involving ops {stuck}")
        return order

    def weight_bytes(self, name: str) -> int:
        return self.tensor(name).nbytes

    def total_weight_bytes(self) -> int:
        return sum(self.weight_bytes(w) for w in self.weights)

    def total_params(self) -> int:
        return sum(self.tensor(w).numel for w in self.weights)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def validate_graph(g: ComputeGraph) -> list[str]:
    """Check structural invariants; returns a list of violations (empty = ok)."""
    violations: list[str] = []

    producers: dict[str, list[str]] = {}
    for op in g.ops:
        for t in op.outputs:
            producers.setdefault(t, []).append(op.id)

    declared = set(g.tensors)
    sources = set(g.inputs) | set(g.weights)

    for name, prods in producers.items():
        if len(prods) > 1:
            violations.append(f"tensor {name} produced by multiple ops {prods}")
        if name in sources:
            violations.append(f"tensor {name} is a graph source but also produced by {prods[0]}")

    for op in g.ops:
        for t in op.inputs:
            if t not in declared:
                violations.append(f"dangling input {t} (op {op.id}: undeclared tensor)")
            elif t not in producers and t not in sources:
                violations.append(f"dangling input {t} (op {op.id}: no producer)")
        for t in op.outputs:
            if t not in declared:
                violations.append(f"op {op.id} writes undeclared tensor {t}")
        if op.kind is OpKind.SLS:
            max_l = op.attrs.get("max_lookups")
            avg_l = op.attrs.get("avg_lookups")
            if max_l is None or max_l < 1:
                violations.append(f"op {op.id}: SLS max_lookups must be >= 1")
            elif avg_l is not None and not (1 <= avg_l <= max_l):
                violations.append(f"op {op.id}: SLS avg_lookups {avg_l} outside [1, {max_l}]")

    for t in g.outputs:
        if t not in declared:
            violations.append(f"graph output {t} undeclared")
        elif t not in producers and t not in sources:
            violations.append(f"graph output {t} is never produced")

    for name in g.tensors:
        if name not in producers and name not in sources:
            # Tensors must come from somewhere; unconsumed ones are fine.
            consumed = any(name in op.inputs for op in g.ops) or name in g.outputs
            if consumed:
                violations.append(f"tensor {name} has no producer and is not a graph input/weight")

    try:
        g.topo_order()
    except GraphError as e:
        violations.append(str(e))

    return violations


# ---------------------------------------------------------------------------
# Shape inference
# ---------------------------------------------------------------------------

def infer_shapes(g: ComputeGraph) -> ComputeGraph:
    """Resolve every intermediate TensorSpec shape from graph inputs and weights.

    Variable axes are compiled at their max extent; runtime-actual sizes are a
    simulator concern. Idempotent: already-resolved shapes are re-derived and
    must agree.
    """
    tensors = dict(g.tensors)

    def shape_of(name: str, op: OpNode) -> tuple[int, ...]:
        spec = tensors.get(name)
        if spec is None or spec.shape is None:
            raise ShapeError(f"op {op.id}: input {name} has no resolved shape")
        return spec.shape

    def set_shape(name: str, shape: Sequence[int], op: OpNode, dtype: DType | None = None):
        shape = tuple(int(d) for d in shape)
        spec = tensors.get(name)
        if spec is None:
            raise GraphError(f"op {op.id} writes undeclared tensor {name}")
        if spec.shape is not None and spec.shape != shape:
            raise ShapeError(
                f"op {op.id}: inferred shape {shape} for {name} contradicts declared {spec.shape}")
        tensors[name] = replace(spec, shape=shape, dtype=dtype or spec.dtype)

    for op in g.topo_order():
        _infer_op(op, tensors, shape_of, set_shape)

    return ComputeGraph(ops=list(g.ops), tensors=tensors, inputs=g.inputs,
                        outputs=g.outputs, weights=g.weights)


def _infer_op(op: OpNode, tensors, shape_of, set_shape) -> None:
    k = op.kind
    if k is OpKind.FC or k is OpKind.MATMUL:
        a = shape_of(op.inputs[0], op)
        w = shape_of(op.inputs[1], op)
        if len(w) != 2:
            raise ShapeError(f"op {op.id}: weight must be rank-2, got {w}")
        kdim, n = w
        if a[-1] != kdim:
            raise ShapeError(f"op {op.id}: K mismatch {a[-1]} vs {kdim}")
        set_shape(op.outputs[0], a[:-1] + (n,), op)
    elif k is OpKind.BATCH_MATMUL:
        a = shape_of(op.inputs[0], op)
        if "view_rows" in op.attrs:
            # Self-interaction form: a flat [B, rows*cols] viewed as [rows, cols]
            # per batch element, multiplied against its own transpose.
            rows = int(op.attrs["view_rows"])
            cols = int(op.attrs["view_cols"])
            if a[-1] != rows * cols:
                raise ShapeError(
                    f"op {op.id}: view {rows}x{cols} mismatches flat extent {a[-1]}")
            set_shape(op.outputs[0], a[:-1] + (rows * rows,), op)
        elif op.attrs.get("form") == "qk":
            # Attention scores: [T, h*dh] x [h*dh, T] -> [h, T, T].
            b = shape_of(op.inputs[1], op)
            h = int(op.attrs["heads"])
            dh = int(op.attrs["head_dim"])
            if a[-1] != h * dh or b[0] != h * dh or a[0] != b[1]:
                raise ShapeError(f"op {op.id}: qk shapes {a} x {b} mismatch heads "
                                 f"{h}x{dh}")
            set_shape(op.outputs[0], (h, a[0], a[0]), op)
        elif op.attrs.get("form") == "sv":
            # Attention context: [h, T, T] x [T, h*dh] -> [T, h*dh].
            b = shape_of(op.inputs[1], op)
            h = int(op.attrs["heads"])
            dh = int(op.attrs["head_dim"])
            if len(a) != 3 or a[0] != h or b != (a[1], h * dh):
                raise ShapeError(f"op {op.id}: sv shapes {a} x {b} mismatch heads "
                                 f"{h}x{dh}")
            set_shape(op.outputs[0], (a[1], h * dh), op)
        else:
            b = shape_of(op.inputs[1], op)
            if len(a) != 3 or len(b) != 3 or a[0] != b[0]:
                raise ShapeError(f"op {op.id}: BatchMatMul wants [B,M,K]x[B,K,N], got {a} x {b}")
            if a[2] != b[1]:
                raise ShapeError(f"op {op.id}: K mismatch {a[2]} vs {b[1]}")
            set_shape(op.outputs[0], (a[0], a[1], b[2]), op)
    elif k in (OpKind.CONV, OpKind.CONV3D):
        a = shape_of(op.inputs[0], op)
        w = shape_of(op.inputs[1], op)
        ndim = 2 if k is OpKind.CONV else 3
        if len(a) != 2 + ndim or len(w) != 2 + ndim:
            raise ShapeError(f"op {op.id}: rank mismatch for {k.value}: {a} x {w}")
        groups = int(op.attrs.get("groups", 1))
        stride = int(op.attrs.get("stride", 1))
        pad = int(op.attrs.get("padding", 0))
        if a[1] != w[1] * groups:
            raise ShapeError(f"op {op.id}: channel mismatch {a[1]} vs {w[1]}*{groups}")
        spatial = []
        for x, kk in zip(a[2:], w[2:]):
            out = (x + 2 * pad - kk) // stride + 1
            if out < 1:
                raise ShapeError(f"op {op.id}: kernel {kk} does not fit extent {x}")
            spatial.append(out)
        set_shape(op.outputs[0], (a[0], w[0], *spatial), op)
    elif k is OpKind.SLS:
        t = shape_of(op.inputs[0], op)
        if len(t) != 2:
            raise ShapeError(f"op {op.id}: SLS table must be [rows, dim], got {t}")
        batch = int(op.attrs.get("batch", 1))
        set_shape(op.outputs[0], (batch, t[1]), op)
    elif k in (OpKind.QUANTIZE, OpKind.DEQUANTIZE, OpKind.CONVERT_TO, OpKind.SOFTMAX,
               OpKind.GELU, OpKind.LAYER_NORM):
        set_shape(op.outputs[0], shape_of(op.inputs[0], op), op)
    elif k is OpKind.CONCAT:
        axis = int(op.attrs.get("axis", 0))
        shapes = [shape_of(t, op) for t in op.inputs]
        base = list(shapes[0])
        for s in shapes[1:]:
            if len(s) != len(base) or any(
                    s[i] != base[i] for i in range(len(base)) if i != axis):
                raise ShapeError(f"op {op.id}: concat shapes {shapes} differ off axis {axis}")
        base[axis] = sum(s[axis] for s in shapes)
        set_shape(op.outputs[0], base, op)
    elif k is OpKind.TILE:
        a = shape_of(op.inputs[0], op)
        reps = tuple(int(r) for r in op.attrs.get("reps", ()))
        if len(reps) != len(a):
            raise ShapeError(f"op {op.id}: reps {reps} rank mismatches input {a}")
        set_shape(op.outputs[0], tuple(x * r for x, r in zip(a, reps)), op)
    elif k is OpKind.TRANSPOSE:
        a = shape_of(op.inputs[0], op)
        perm = tuple(int(p) for p in op.attrs.get("perm", reversed(range(len(a)))))
        set_shape(op.outputs[0], tuple(a[p] for p in perm), op)
    elif k in (OpKind.ADD, OpKind.MUL):
        a = shape_of(op.inputs[0], op)
        b = shape_of(op.inputs[1], op)
        if a != b and not (len(b) == 1 and b[0] == a[-1]):
            raise ShapeError(f"op {op.id}: elementwise shapes {a} vs {b}")
        set_shape(op.outputs[0], a, op)
    elif k is OpKind.POOL:
        a = shape_of(op.inputs[0], op)
        if op.attrs.get("global", False):
            set_shape(op.outputs[0], a[:2] + (1,) * (len(a) - 2), op)
        else:
            kk = int(op.attrs.get("kernel", 1))
            stride = int(op.attrs.get("stride", kk))
            # Undersized extents collapse to 1 rather than erroring; this is a
            # cost IR, not an executable one.
            spatial = tuple(max(1, (x - kk) // stride + 1) for x in a[2:])
            set_shape(op.outputs[0], a[:2] + spatial, op)
    else:  # RoiAlignLike / HostDecode / Custom
        for name in op.inputs:
            shape_of(name, op)
        out_shape = op.attrs.get("out_shape")
        out_shapes = op.attrs.get("out_shapes")
        if out_shapes is not None:
            for t, s in zip(op.outputs, out_shapes):
                set_shape(t, tuple(s), op)
        elif out_shape is not None:
            for t in op.outputs:
                set_shape(t, tuple(out_shape), op)
        else:
            for t in op.outputs:
                spec = tensors.get(t)
                if spec is None or spec.shape is None:
                    raise ShapeError(f"op {op.id}: {k.value} output {t} needs an out_shape attr")


# ---------------------------------------------------------------------------
# Cost stats
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OpCostStats:
    flops: float
    bytes_moved: float
    arithmetic_intensity: float
    bytes_by_tier: Mapping[str, float] = field(default_factory=dict)


# Rough elementwise flop factors for transcendental-ish kinds.
_ELEMENTWISE_FLOPS = {
    OpKind.ADD: 1, OpKind.MUL: 1, OpKind.QUANTIZE: 1, OpKind.DEQUANTIZE: 1,
    OpKind.CONVERT_TO: 1, OpKind.SOFTMAX: 4, OpKind.GELU: 8, OpKind.LAYER_NORM: 8,
}

DEFAULT_TIER = "lpddr"


def op_cost_stats(g: ComputeGraph, op: OpNode,
                  residency: Mapping[str, str] | None = None) -> OpCostStats:
    """Flops, bytes moved, and arithmetic intensity for one op at its dtypes.

    `residency` maps tensor name -> memory tier; unmapped tensors default to
    LPDDR. Bytes count weights plus input and output activations; SLS counts
    only the pooled rows it reads and the output it writes.
    """
    res = residency or {}

    def tier(name: str) -> str:
        return res.get(name, DEFAULT_TIER)

    def t_bytes(name: str) -> float:
        return float(g.tensor(name).nbytes)

    flops = 0.0
    by_tier: dict[str, float] = {}

    def add_bytes(name: str, n: float):
        by_tier[tier(name)] = by_tier.get(tier(name), 0.0) + n

    k = op.kind
    if k is OpKind.SLS:
        table = g.tensor(op.inputs[0])
        if table.shape is None:
            raise ShapeError(f"op {op.id}: unresolved table shape")
        out = g.tensor(op.outputs[0])
        batch = out.shape[0]
        dim = table.shape[1]
        lookups = float(op.attrs.get("avg_lookups", op.attrs["max_lookups"]))
        flops = lookups * batch * dim
        row_bytes = dim * table.dtype.element_bytes
        if table.dtype is DType.INT4RW:
            row_bytes += ROWWISE_ROW_OVERHEAD_BYTES
        add_bytes(op.inputs[0], lookups * batch * row_bytes)
        add_bytes(op.outputs[0], float(out.nbytes))
    elif k is OpKind.CUSTOM or k in HOST_ONLY_KINDS:
        # Opaque cost: an explicit `bytes` attr replaces tensor accounting
        # entirely (used by split/scatter plumbing ops).
        flops = float(op.attrs.get("flops", 0.0))
        if "bytes" in op.attrs:
            by_tier[DEFAULT_TIER] = float(op.attrs["bytes"])
        else:
            for name in op.inputs:
                add_bytes(name, t_bytes(name))
            for name in op.outputs:
                add_bytes(name, t_bytes(name))
    else:
        if k is OpKind.FC or k is OpKind.MATMUL:
            a = g.tensor(op.inputs[0]).shape
            w = g.tensor(op.inputs[1]).shape
            if a is None or w is None:
                raise ShapeError(f"op {op.id}: unresolved shapes")
            flops = 2.0 * math.prod(a[:-1]) * w[0] * w[1]
        elif k is OpKind.BATCH_MATMUL:
            out = g.tensor(op.outputs[0]).shape
            if "view_rows" in op.attrs:
                rows = int(op.attrs["view_rows"])
                cols = int(op.attrs["view_cols"])
                flops = 2.0 * out[0] * rows * rows * cols
            elif op.attrs.get("form") in ("qk", "sv"):
                a = g.tensor(op.inputs[0]).shape
                t = a[1] if op.attrs["form"] == "sv" else a[0]
                flops = 2.0 * int(op.attrs["heads"]) * t * t * int(op.attrs["head_dim"])
            else:
                a = g.tensor(op.inputs[0]).shape
                flops = 2.0 * out[0] * out[1] * a[2] * out[2]
        elif k in (OpKind.CONV, OpKind.CONV3D):
            out = g.tensor(op.outputs[0]).shape
            w = g.tensor(op.inputs[1]).shape
            flops = 2.0 * math.prod(out) * math.prod(w[1:])
        elif k is OpKind.POOL:
            flops = float(g.tensor(op.inputs[0]).numel)
        elif k in _ELEMENTWISE_FLOPS:
            flops = float(_ELEMENTWISE_FLOPS[k] * g.tensor(op.outputs[0]).numel)
        else:  # Concat / Tile / Transpose move data only
            flops = 0.0
        for name in op.inputs:
            add_bytes(name, t_bytes(name))
        for name in op.outputs:
            add_bytes(name, t_bytes(name))

    total_bytes = sum(by_tier.values())
    ai = flops / total_bytes if total_bytes > 0 else 0.0
    return OpCostStats(flops=flops, bytes_moved=total_bytes,
                       arithmetic_intensity=ai, bytes_by_tier=by_tier)


def graph_cost_totals(g: ComputeGraph, kinds: Iterable[OpKind] | None = None) -> OpCostStats:
    """Aggregate cost stats over the graph (optionally restricted to kinds)."""
    want = set(kinds) if kinds is not None else None
    flops = 0.0
    by_tier: dict[str, float] = {}
    for op in g.ops:
        if want is not None and op.kind not in want:
            continue
        st = op_cost_stats(g, op)
        flops += st.flops
        for t, b in st.bytes_by_tier.items():
            by_tier[t] = by_tier.get(t, 0.0) + b
    total = sum(by_tier.values())
    return OpCostStats(flops=flops, bytes_moved=total,
                       arithmetic_intensity=flops / total if total else 0.0,
                       bytes_by_tier=by_tier)


# ---------------------------------------------------------------------------
# Serialization (structured text; parse(serialize(g)) is structurally identical)
# ---------------------------------------------------------------------------

def _tensor_to_dict(t: TensorSpec) -> dict:
    d: dict[str, object] = {"name": t.name, "shape": list(t.shape) if t.shape else None,
                            "dtype": t.dtype.value}
    if t.variable_axes:
        d["variability"] = {"kind": "variable", "axes": list(t.variable_axes)}
    else:
        d["variability"] = {"kind": "static"}
    return d


def _op_to_dict(op: OpNode) -> dict:
    return {"id": op.id, "kind": op.kind.value, "inputs": list(op.inputs),
            "outputs": list(op.outputs), "attrs": dict(op.attrs),
            "device_supported": op.device_supported}


def graph_to_dict(g: ComputeGraph) -> dict:
    return {
        "tensors": [_tensor_to_dict(g.tensors[n]) for n in sorted(g.tensors)],
        "ops": [_op_to_dict(op) for op in g.ops],
        "inputs": list(g.inputs),
        "outputs": list(g.outputs),
        "weights": {w: {"bytes": g.tensor(w).nbytes, "dtype": g.tensor(w).dtype.value}
                    for w in g.weights},
    }


def graph_from_dict(d: Mapping) -> ComputeGraph:
    tensors = {}
    for td in d["tensors"]:
        var = td.get("variability", {"kind": "static"})
        axes = tuple(var.get("axes", ())) if var.get("kind") == "variable" else ()
        tensors[td["name"]] = TensorSpec(
            name=td["name"],
            shape=tuple(td["shape"]) if td.get("shape") else None,
            dtype=DType(td["dtype"]),
            variable_axes=axes)
    ops = [OpNode(id=od["id"], kind=OpKind(od["kind"]), inputs=tuple(od["inputs"]),
                  outputs=tuple(od["outputs"]), attrs=od.get("attrs", {}),
                  device_supported=od.get("device_supported", True))
           for od in d["ops"]]
    return ComputeGraph(ops=ops, tensors=tensors, inputs=tuple(d["inputs"]),
                        outputs=tuple(d["outputs"]), weights=tuple(d["weights"]))


def serialize_graph(g: ComputeGraph) -> str:
    return json.dumps(graph_to_dict(g), indent=2) + "\n"


def parse_graph(text: str) -> ComputeGraph:
    return graph_from_dict(json.loads(text))
