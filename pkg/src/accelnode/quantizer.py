"""Error-driven mixed-precision workflow.

Profile for bottleneck op kinds, start candidates at int8 (embedding tables at
row-wise int4), then iteratively promote the op with the worst per-layer
quantization error to fp16 until an end-to-end accuracy budget is met or
everything has fallen back to fp16. A small reference executor built on the
numerics kernels provides the desk-scale end-to-end proxy metric.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Optional

import numpy as np

from .graph_ir import (
    ComputeGraph, DType, GraphError, OpKind, OpNode, TensorSpec, validate_graph,
)
from .hardware import CostModel
from .numerics import (
    AccuracyBudget, QuantParams, RowwiseQuantTable, bf16_round, dequantize_int8,
    fp16_round, fc_int8_reference, layer_error, ne_metric, quantize_int8,
    quantize_rowwise, sls_reference,
)

INT8_CANDIDATE_KINDS = frozenset({OpKind.FC, OpKind.CONV, OpKind.MATMUL})


class QuantizerError(Exception):
    pass


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------

@dataclass
class PrecisionAssignment:
    per_op: dict[str, str]                      # op id -> int8 | fp16 | int4rw
    tensor_qparams: dict[str, QuantParams]      # activation tensor -> params
    weight_qparams: dict[str, QuantParams]      # weight tensor -> params
    budget: AccuracyBudget
    status: str = "meets_budget"                # or fallback_all_fp16
    final_metric: float = 0.0
    promotions: tuple[str, ...] = ()

    def precision(self, op_id: str) -> str:
        return self.per_op[op_id]


def save_assignment(a: PrecisionAssignment, g: ComputeGraph) -> str:
    """Per-op lines "op_id precision scale zero_point" plus a status footer.

    int8 lines carry the op's input-activation params; others use "-".
    """
    lines = []
    for op_id in sorted(a.per_op):
        prec = a.per_op[op_id]
        scale, zp = "-", "-"
        if prec == "int8":
            p = a.tensor_qparams.get(g.op(op_id).inputs[0])
            if p is not None:
                scale = repr(float(np.asarray(p.scale, dtype=np.float64).ravel()[0]))
                zp = str(p.zero_point)
        lines.append(f"{op_id} {prec} {scale} {zp}")
    lines.append(f"# status={a.status} metric={a.final_metric!r}")
    return "\n".join(lines) + "\n"


def load_assignment_precisions(text: str) -> tuple[dict[str, str], str, float]:
    per_op: dict[str, str] = {}
    status, metric = "meets_budget", 0.0
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            for tok in line[1:].split():
                if tok.startswith("status="):
                    status = tok.split("=", 1)[1]
                elif tok.startswith("metric="):
                    metric = float(tok.split("=", 1)[1])
            continue
        op_id, prec, _scale, _zp = line.split()
        per_op[op_id] = prec
    return per_op, status, metric


# ---------------------------------------------------------------------------
# Bottleneck profiling
# ---------------------------------------------------------------------------

def profile_bottlenecks(g: ComputeGraph, cost: CostModel) -> list[tuple[str, float]]:
    """Estimated latency share per op kind, descending; ties by kind name."""
    if not g.ops:
        raise QuantizerError("empty graph")
    by_kind: dict[str, float] = {}
    for op in g.ops:
        by_kind[op.kind.value] = by_kind.get(op.kind.value, 0.0) + cost.latency(op)
    total = sum(by_kind.values())
    ranked = sorted(((k, t / total) for k, t in by_kind.items()),
                    key=lambda kv: (-kv[1], kv[0]))
    return ranked


# ---------------------------------------------------------------------------
# Calibration statistics
# ---------------------------------------------------------------------------

def activation_qparams(values: np.ndarray) -> QuantParams:
    """Per-tensor asymmetric params from plain min/max statistics."""
    lo = float(np.min(values)) if values.size else 0.0
    hi = float(np.max(values)) if values.size else 0.0
    lo, hi = min(lo, 0.0), max(hi, 0.0)
    scale = (hi - lo) / 255.0
    if scale <= 0.0:
        return QuantParams("per_tensor_asymmetric", scale=1.0, zero_point=0)
    zp = int(np.clip(round(-128 - lo / scale), -128, 127))
    return QuantParams("per_tensor_asymmetric", scale=scale, zero_point=zp)


def weight_qparams_for(op: OpNode, w: np.ndarray) -> QuantParams:
    """Per-channel symmetric params over the output-channel axis."""
    if op.kind in (OpKind.FC, OpKind.MATMUL):
        axis = 1  # weight layout [K, N]
    else:
        axis = 0  # conv layout [F, C, ...]
    moved = np.moveaxis(w, axis, 0).reshape(w.shape[axis], -1)
    amax = np.max(np.abs(moved), axis=1)
    scale = np.where(amax > 0, amax / 127.0, 1.0)
    return QuantParams("per_channel_symmetric", scale=scale, channel_axis=axis)


# ---------------------------------------------------------------------------
# Reference executor (quantization-relevant subset)
# ---------------------------------------------------------------------------

def _gelu(x):
    c = math.sqrt(2.0 / math.pi)
    return 0.5 * x * (1.0 + np.tanh(c * (x + 0.044715 * x ** 3)))


def _softmax(x):
    z = x - np.max(x, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def _layernorm(x):
    mu = np.mean(x, axis=-1, keepdims=True)
    var = np.var(x, axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + 1e-5)


def _round_to(values: np.ndarray, dtype: DType) -> np.ndarray:
    if dtype is DType.FP16:
        return fp16_round(values)
    if dtype is DType.BF16:
        return bf16_round(np.asarray(values, dtype=np.float32))
    return np.asarray(values, dtype=np.float32)


class GraphExecutor:
    """Executes a (possibly quantized) graph with the reference kernels.

    Weight feeds are always the original float values; int8/int4 ops quantize
    them on the fly with the params recorded in their attrs, so the executor
    reproduces exactly what the numerics module defines.
    """

    def __init__(self, g: ComputeGraph):
        self.graph = g
        self._table_cache: dict[tuple[int, str], object] = {}

    def run(self, feeds: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
        g = self.graph
        env: dict[str, np.ndarray] = {}
        for name in (*g.inputs, *g.weights):
            if name not in feeds:
                raise QuantizerError(f"missing feed for {name}")
            val = np.asarray(feeds[name])
            # Float weight feeds are always the original values; land them on
            # the declared grid (int8/int4 weights are quantized per op).
            dtype = g.tensor(name).dtype
            if name in g.weights and dtype in (DType.FP16, DType.BF16):
                val = _round_to(val, dtype)
            env[name] = val
        for op in g.topo_order():
            self._exec_op(op, env)
        return env

    def outputs(self, feeds: Mapping[str, np.ndarray]) -> list[np.ndarray]:
        env = self.run(feeds)
        return [env[t] for t in self.graph.outputs]

    # -- op dispatch --------------------------------------------------------

    def _qparams(self, op: OpNode, key: str) -> QuantParams:
        raw = op.attrs.get(key)
        if raw is None:
            raise QuantizerError(f"op {op.id}: missing {key}")
        scale = raw["scale"]
        return QuantParams(raw["scheme"], scale=np.asarray(scale, dtype=np.float64)
                           if isinstance(scale, list) else float(scale),
                           zero_point=int(raw.get("zero_point", 0)),
                           channel_axis=raw.get("channel_axis"))

    def _exec_op(self, op: OpNode, env: dict) -> None:
        g = self.graph
        k = op.kind
        out_name = op.outputs[0] if op.outputs else None
        out_dtype = g.tensor(out_name).dtype if out_name else DType.FP32

        def store(v):
            env[out_name] = v

        if k is OpKind.FC or k is OpKind.MATMUL:
            x, w = env[op.inputs[0]], env[op.inputs[1]]
            if "weight_qparams" in op.attrs:  # int8 path
                xp = self._qparams(op, "input_qparams")
                wp = self._qparams(op, "weight_qparams")
                wq = quantize_int8(w, wp)
                acc = fc_int8_reference(np.asarray(x, dtype=np.int8), wq, xp, wp,
                                        out_dtype="fp32")
                if out_dtype is DType.INT8:
                    store(quantize_int8(acc, self._qparams(op, "output_qparams")))
                else:
                    store(_round_to(acc, out_dtype))
            else:
                acc = np.asarray(x, dtype=np.float32) @ np.asarray(w, dtype=np.float32)
                store(_round_to(acc, out_dtype))
        elif k is OpKind.SLS:
            table = self._sls_table(op)
            idx = np.asarray(env[op.inputs[1]]).astype(np.int64).ravel()
            batch = int(op.attrs.get("batch", 1))
            per = len(idx) // batch if batch else 0
            lengths = op.attrs.get("lengths", [per] * batch)
            out = sls_reference(table, list(idx), list(lengths))
            store(_round_to(out, out_dtype))
        elif k is OpKind.QUANTIZE:
            store(quantize_int8(env[op.inputs[0]], self._qparams(op, "qparams")))
        elif k is OpKind.DEQUANTIZE:
            out = dequantize_int8(env[op.inputs[0]], self._qparams(op, "qparams"))
            store(_round_to(out, out_dtype))
        elif k is OpKind.CONVERT_TO:
            store(_round_to(np.asarray(env[op.inputs[0]], dtype=np.float32), out_dtype))
        elif k is OpKind.CONCAT:
            axis = int(op.attrs.get("axis", 0))
            vals = [env[t] for t in op.inputs]
            store(_round_to(np.concatenate(vals, axis=axis), out_dtype)
                  if not any(v.dtype == np.int8 for v in vals)
                  else np.concatenate(vals, axis=axis))
        elif k is OpKind.TILE:
            store(np.tile(env[op.inputs[0]], tuple(op.attrs["reps"])))
        elif k is OpKind.TRANSPOSE:
            perm = tuple(op.attrs["perm"])
            store(np.transpose(env[op.inputs[0]], perm))
        elif k in (OpKind.ADD, OpKind.MUL):
            a = np.asarray(env[op.inputs[0]], dtype=np.float32)
            b = np.asarray(env[op.inputs[1]], dtype=np.float32)
            store(_round_to(a + b if k is OpKind.ADD else a * b, out_dtype))
        elif k is OpKind.BATCH_MATMUL:
            store(_round_to(self._bmm(op, env), out_dtype))
        elif k is OpKind.SOFTMAX:
            store(_round_to(_softmax(np.asarray(env[op.inputs[0]], dtype=np.float32)),
                            out_dtype))
        elif k is OpKind.GELU:
            store(_round_to(_gelu(np.asarray(env[op.inputs[0]], dtype=np.float32)),
                            out_dtype))
        elif k is OpKind.LAYER_NORM:
            store(_round_to(_layernorm(np.asarray(env[op.inputs[0]], dtype=np.float32)),
                            out_dtype))
        elif k is OpKind.POOL:
            x = np.asarray(env[op.inputs[0]], dtype=np.float32)
            if op.attrs.get("global", False):
                axes = tuple(range(2, x.ndim))
                store(_round_to(np.mean(x, axis=axes, keepdims=True), out_dtype))
            else:
                raise QuantizerError(f"op {op.id}: strided pool has no reference semantics")
        else:
            raise QuantizerError(f"op {op.id}: kind {k.value} is not executable "
                                 "by the reference executor")

    def _bmm(self, op: OpNode, env: dict) -> np.ndarray:
        a = np.asarray(env[op.inputs[0]], dtype=np.float32)
        if "view_rows" in op.attrs:
            rows, cols = int(op.attrs["view_rows"]), int(op.attrs["view_cols"])
            x = a.reshape(a.shape[0], rows, cols)
            return np.einsum("bfd,bgd->bfg", x, x).reshape(a.shape[0], rows * rows)
        b = np.asarray(env[op.inputs[1]], dtype=np.float32)
        form = op.attrs.get("form")
        if form == "qk":
            h, dh = int(op.attrs["heads"]), int(op.attrs["head_dim"])
            t = a.shape[0]
            qh = a.reshape(t, h, dh).transpose(1, 0, 2)
            kh = b.T.reshape(t, h, dh).transpose(1, 0, 2)
            return np.einsum("htd,hsd->hts", qh, kh)
        if form == "sv":
            h, dh = int(op.attrs["heads"]), int(op.attrs["head_dim"])
            t = a.shape[1]
            vh = b.reshape(t, h, dh).transpose(1, 0, 2)
            ctx = np.einsum("hts,hsd->htd", a, vh)
            return ctx.transpose(1, 0, 2).reshape(t, h * dh)
        return np.matmul(a, b)

    def _sls_table(self, op: OpNode):
        g = self.graph
        name = op.inputs[0]
        dtype = g.tensor(name).dtype
        key = (id(op), name)
        if key not in self._table_cache:
            raw = np.asarray(op.attrs.get("_table_values"))
            if op.attrs.get("_table_values") is None:
                raise QuantizerError(f"op {op.id}: SLS table values not bound")
            if dtype is DType.INT4RW:
                self._table_cache[key] = quantize_rowwise(raw, 4)
            elif dtype is DType.INT8:
                self._table_cache[key] = quantize_rowwise(raw, 8)
            elif dtype in (DType.FP16, DType.BF16):
                self._table_cache[key] = _round_to(raw, dtype)
            else:
                self._table_cache[key] = np.asarray(raw, dtype=np.float32)
        return self._table_cache[key]


def execute_graph(g: ComputeGraph, feeds: Mapping[str, np.ndarray],
                  table_values: Mapping[str, np.ndarray] | None = None
                  ) -> dict[str, np.ndarray]:
    """One-shot reference execution; SLS table values come from `feeds` unless
    bound explicitly via op attrs."""
    if table_values is None:
        table_values = feeds
    bound = _bind_tables(g, table_values)
    return GraphExecutor(bound).run(feeds)


def _bind_tables(g: ComputeGraph, table_values: Mapping[str, np.ndarray]) -> ComputeGraph:
    ops = []
    for op in g.ops:
        if op.kind is OpKind.SLS and "_table_values" not in op.attrs:
            vals = table_values.get(op.inputs[0])
            if vals is None:
                raise QuantizerError(f"op {op.id}: no values for table {op.inputs[0]}")
            attrs = dict(op.attrs)
            attrs["_table_values"] = np.asarray(vals, dtype=np.float64)
            op = OpNode(op.id, op.kind, op.inputs, op.outputs, attrs,
                        op.device_supported)
        ops.append(op)
    return ComputeGraph(ops=ops, tensors=dict(g.tensors), inputs=g.inputs,
                        outputs=g.outputs, weights=g.weights)


# ---------------------------------------------------------------------------
# Candidate selection
# ---------------------------------------------------------------------------

def _reachable_kinds(g: ComputeGraph) -> dict[str, set[str]]:
    """op id -> ids of downstream FC ops (transitively)."""
    order = g.topo_order()
    consumers = g.consumer_map()
    downstream_fc: dict[str, set[str]] = {op.id: set() for op in g.ops}
    for op in reversed(order):
        acc: set[str] = set()
        for t in op.outputs:
            for nxt in consumers.get(t, ()):
                acc |= downstream_fc[nxt.id]
                if nxt.kind is OpKind.FC:
                    acc.add(nxt.id)
        downstream_fc[op.id] = acc
    return downstream_fc


def select_candidates(g: ComputeGraph) -> tuple[list[str], list[str]]:
    """Returns (int8 candidate op ids, SLS op ids).

    The last FC of any chain (no downstream FC reachable) and the first
    convolution stay out of the int8 pool.
    """
    downstream_fc = _reachable_kinds(g)
    first_conv = next((op.id for op in g.topo_order()
                       if op.kind in (OpKind.CONV, OpKind.CONV3D)), None)
    int8_ids, sls_ids = [], []
    for op in g.topo_order():
        if not op.device_supported:
            continue
        if op.kind is OpKind.SLS:
            sls_ids.append(op.id)
        elif op.kind in INT8_CANDIDATE_KINDS:
            if op.kind is OpKind.FC and not downstream_fc[op.id]:
                continue  # last FC in its chain
            if op.id == first_conv:
                continue
            int8_ids.append(op.id)
    return int8_ids, sls_ids


# ---------------------------------------------------------------------------
# Assignment workflow
# ---------------------------------------------------------------------------

def _layer_errors(g: ComputeGraph, env: Mapping[str, np.ndarray],
                  int8_ids: list[str], sls_ids: list[str],
                  weight_params: Mapping[str, QuantParams],
                  act_params: Mapping[str, QuantParams]) -> dict[str, float]:
    """relative_l2 between each candidate's fp32 output and its quantized
    output, evaluated on the fp32 calibration activations."""
    errors: dict[str, float] = {}
    by_id = {op.id: op for op in g.ops}
    for op_id in int8_ids:
        op = by_id[op_id]
        w = np.asarray(env[op.inputs[1]], dtype=np.float64)
        wp = weight_params[op.inputs[1]]
        if op.kind in (OpKind.FC, OpKind.MATMUL):
            x = np.asarray(env[op.inputs[0]], dtype=np.float64)
            xp = act_params[op.inputs[0]]
            ref = (x @ w).astype(np.float32)
            qout = fc_int8_reference(quantize_int8(x, xp), quantize_int8(w, wp),
                                     xp, wp, out_dtype="fp32")
        else:  # conv: weight-space error (convs have no reference kernel)
            ref = w.astype(np.float32)
            qout = dequantize_int8(quantize_int8(w, wp), wp)
        errors[op_id] = layer_error(ref, qout, "relative_l2")
    for op_id in sls_ids:
        op = by_id[op_id]
        table = np.asarray(env[op.inputs[0]], dtype=np.float64)
        qt = quantize_rowwise(table, 4)
        deq = (qt.codes.astype(np.float32) * qt.scale[:, None].astype(np.float32)
               + qt.bias[:, None].astype(np.float32))
        errors[op_id] = layer_error(table.astype(np.float32), deq, "relative_l2")
    return errors


def assign_precisions(g: ComputeGraph, calib: Mapping[str, np.ndarray],
                      budget: AccuracyBudget,
                      proxy_eval: Optional[Callable[[PrecisionAssignment], float]] = None,
                      ) -> PrecisionAssignment:
    """The iterative search: int8 everywhere it is allowed, int4 row-wise for
    embedding tables, then promote worst-error ops to fp16 until the budget
    holds. Never demotes; terminates after at most one promotion per candidate.
    """
    if not calib:
        raise QuantizerError("calibration set is empty")
    int8_ids, sls_ids = select_candidates(g)

    env = execute_graph(g, calib)
    act_params = {name: activation_qparams(np.asarray(vals))
                  for name, vals in env.items()}
    by_id = {op.id: op for op in g.ops}
    weight_params = {}
    for op_id in int8_ids:
        op = by_id[op_id]
        weight_params[op.inputs[1]] = weight_qparams_for(op, np.asarray(calib[op.inputs[1]]))

    per_op: dict[str, str] = {}
    for op in g.ops:
        if op.id in int8_ids:
            per_op[op.id] = "int8"
        elif op.id in sls_ids:
            per_op[op.id] = "int4rw"
        else:
            per_op[op.id] = "fp16"

    assignment = PrecisionAssignment(per_op=per_op, tensor_qparams=act_params,
                                     weight_qparams=weight_params, budget=budget)
    if proxy_eval is None:
        proxy_eval = ReferenceProxy(g, calib, budget)

    errors = _layer_errors(g, env, int8_ids, sls_ids, weight_params, act_params)
    pool = sorted(int8_ids + sls_ids, key=lambda i: (-errors[i], i))

    promotions: list[str] = []
    iteration = 0
    while True:
        try:
            metric = proxy_eval(assignment)
        except Exception as e:
            raise QuantizerError(f"proxy evaluation failed at iteration "
                                 f"{iteration}: {e}") from e
        assignment.final_metric = metric
        if budget.is_met(metric):
            assignment.status = "meets_budget"
            break
        nxt = next((op_id for op_id in pool if assignment.per_op[op_id] != "fp16"), None)
        if nxt is None:
            assignment.status = "fallback_all_fp16"
            break
        assignment.per_op[nxt] = "fp16"
        promotions.append(nxt)
        iteration += 1
    assignment.promotions = tuple(promotions)
    return assignment


class ReferenceProxy:
    """Default end-to-end metric evaluator over the calibration tensors."""

    def __init__(self, g: ComputeGraph, calib: Mapping[str, np.ndarray],
                 budget: AccuracyBudget, labels: Optional[np.ndarray] = None):
        self.graph = g
        self.calib = calib
        self.budget = budget
        self.labels = None if labels is None else np.asarray(labels)
        self._ref_out = execute_graph(g, calib)[g.outputs[0]]

    def __call__(self, assignment: PrecisionAssignment) -> float:
        rewritten = apply_assignment(self.graph, assignment)
        out = execute_graph(rewritten, self.calib,
                            table_values=self.calib)[rewritten.outputs[0]]
        ref = np.asarray(self._ref_out, dtype=np.float64).ravel()
        cand = np.asarray(out, dtype=np.float64).ravel()
        m = self.budget.metric
        if m == "cosine_similarity":
            return layer_error(ref, cand, "cosine")
        if m == "ne_degradation":
            if self.labels is None:
                raise QuantizerError("ne_degradation proxy needs labels")
            ref_p = 1.0 / (1.0 + np.exp(-ref))
            cand_p = 1.0 / (1.0 + np.exp(-cand))
            return ne_metric(cand_p, self.labels) - ne_metric(ref_p, self.labels)
        if m == "top1_drop":
            ref2 = np.asarray(self._ref_out)
            cand2 = np.asarray(out)
            return float(np.mean(np.argmax(cand2, axis=-1) != np.argmax(ref2, axis=-1)))
        raise QuantizerError(f"metric {m} has no desk-scale proxy")


# ---------------------------------------------------------------------------
# Graph rewrite
# ---------------------------------------------------------------------------

def _params_attr(p: QuantParams) -> dict:
    s = np.asarray(p.scale, dtype=np.float64)
    return {"scheme": p.scheme,
            "scale": s.tolist() if s.ndim else float(s),
            "zero_point": p.zero_point,
            "channel_axis": p.channel_axis}


def apply_assignment(g: ComputeGraph, a: PrecisionAssignment) -> ComputeGraph:
    """Rewrite the graph for the assignment: quantize/dequantize at int8
    region boundaries, fp16 conversion elsewhere, no redundant pairs between
    adjacent int8 ops. Original op flops are preserved exactly.
    """
    for op_id in a.per_op:
        g.op(op_id)  # raises on unknown ids

    weight_names = g.weight_set()
    producer_prec: dict[str, str] = {}   # tensor -> producing domain
    for op in g.ops:
        prec = a.per_op.get(op.id, "fp16")
        domain = "int8" if prec == "int8" else "fp16"
        for t in op.outputs:
            producer_prec[t] = domain

    tensors = dict(g.tensors)
    new_ops: list[OpNode] = []
    converted: dict[tuple[str, str], str] = {}

    def act_params(name: str) -> QuantParams:
        p = a.tensor_qparams.get(name)
        if p is None:
            raise QuantizerError(f"no activation params for tensor {name}")
        return p

    def to_domain(name: str, domain: str) -> str:
        if name in producer_prec:
            src = producer_prec[name]
        else:  # graph input: domain given by its declared dtype
            dt = tensors[name].dtype
            src = {DType.INT8: "int8", DType.FP32: "fp32"}.get(dt, "fp16")
        if src == domain:
            return name
        key = (name, domain)
        if key in converted:
            return converted[key]
        spec = tensors[name]
        if domain == "int8":
            new_name = f"{name}.q8"
            tensors[new_name] = TensorSpec(new_name, spec.shape, DType.INT8,
                                           spec.variable_axes)
            new_ops.append(OpNode(f"quantize.{name}", OpKind.QUANTIZE, (name,),
                                  (new_name,),
                                  {"qparams": _params_attr(act_params(name))}))
        elif src == "int8":
            new_name = f"{name}.f16"
            tensors[new_name] = TensorSpec(new_name, spec.shape, DType.FP16,
                                           spec.variable_axes)
            new_ops.append(OpNode(f"dequantize.{name}", OpKind.DEQUANTIZE, (name,),
                                  (new_name,),
                                  {"qparams": _params_attr(act_params(name))}))
        else:  # fp32 -> fp16 boundary
            new_name = f"{name}.f16"
            tensors[new_name] = TensorSpec(new_name, spec.shape, DType.FP16,
                                           spec.variable_axes)
            new_ops.append(OpNode(f"convert.{name}", OpKind.CONVERT_TO, (name,),
                                  (new_name,), {"to": "fp16"}))
        converted[key] = new_name
        return new_name

    for op in g.ops:
        prec = a.per_op.get(op.id, "fp16")
        attrs = dict(op.attrs)
        new_inputs = []
        if prec == "int8":
            for i, t in enumerate(op.inputs):
                if t in weight_names:
                    wp = a.weight_qparams.get(t)
                    if wp is None:
                        raise QuantizerError(f"no weight params for {t}")
                    tensors[t] = TensorSpec(t, tensors[t].shape, DType.INT8)
                    attrs["weight_qparams"] = _params_attr(wp)
                    new_inputs.append(t)
                else:
                    qt = to_domain(t, "int8")
                    if i == 0:
                        attrs["input_qparams"] = _params_attr(act_params(t))
                    new_inputs.append(qt)
            out = op.outputs[0]
            attrs["output_qparams"] = _params_attr(act_params(out))
            tensors[out] = TensorSpec(out, tensors[out].shape, DType.INT8,
                                      tensors[out].variable_axes)
        else:
            for t in op.inputs:
                if t in weight_names:
                    if prec == "int4rw" and op.kind is OpKind.SLS and t == op.inputs[0]:
                        tensors[t] = TensorSpec(t, tensors[t].shape, DType.INT4RW)
                    elif tensors[t].dtype is DType.FP32:
                        tensors[t] = TensorSpec(t, tensors[t].shape, DType.FP16)
                    new_inputs.append(t)
                else:
                    new_inputs.append(to_domain(t, "fp16"))
            for out in op.outputs:
                if tensors[out].dtype is DType.FP32:
                    tensors[out] = TensorSpec(out, tensors[out].shape, DType.FP16,
                                              tensors[out].variable_axes)
        new_ops.append(OpNode(op.id, op.kind, tuple(new_inputs), op.outputs,
                              attrs, op.device_supported))

    # Graph outputs produced by int8 ops are dequantized back to fp16.
    outputs = []
    for t in g.outputs:
        if producer_prec.get(t) == "int8":
            outputs.append(to_domain(t, "fp16"))
        else:
            outputs.append(t)

    rewritten = ComputeGraph(ops=new_ops, tensors=tensors, inputs=g.inputs,
                             outputs=tuple(outputs), weights=g.weights)
    violations = validate_graph(rewritten)
    if violations:
        raise QuantizerError(f"rewrite produced invalid graph: {violations[:3]}")
    return rewritten
