"""Workload generators: recommendation, CV, video, and NLP model families.

Each generator emits a ComputeGraph whose aggregate cost stats (GFLOPs per
batch, parameter count, dense-stack arithmetic intensity) land on the target
characteristics carried by its WorkloadSpec. Presets are calibrated to those
targets within +/-20%; the architectures themselves are synthetic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .graph_ir import (
    ComputeGraph, DType, GraphError, OpKind, OpNode, TensorSpec,
    infer_shapes, op_cost_stats,
)

RECSYS_PRESETS = ("recsys_less_complex", "recsys_more_complex")
DENSE_PRESETS = ("resnext101", "regnety", "fbnetv3", "resnext3d", "xlmr")
PRESETS = RECSYS_PRESETS + DENSE_PRESETS

XLMR_PADDING_BOUNDARIES = (32, 64, 128, 512)

PRESET_TOLERANCE = 0.20


@dataclass(frozen=True)
class WorkloadSpec:
    """A preset name plus the per-batch totals the generated graph must hit."""
    preset: str
    batch_size: int
    model_mparams: float
    gflops_per_batch: float
    arithmetic_intensity: float
    latency_constraint_ms: float

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise GraphError(f"unknown preset {self.preset!r}")
        if self.batch_size < 1:
            raise GraphError("batch_size must be >= 1")


# Target totals per preset: (mparams, gflops_per_batch, arith intensity,
# latency constraint ms, default batch).
_PRESET_TARGETS = {
    "recsys_less_complex": (70_000.0, 0.02, 90.0, 100.0, 64),
    "recsys_more_complex": (110_000.0, 0.1, 80.0, 100.0, 64),
    "resnext101": (44.0, 15.6, 355.0, 1000.0, 1),
    "regnety": (700.0, 256.0, 395.0, 1000.0, 1),
    "fbnetv3": (28.6, 72.0, 1946.0, 300.0, 1),
    "resnext3d": (58.0, 3.4, 362.0, 350.0, 1),
    "xlmr": (558.0, 20.0, 32.0, 200.0, 1),
}


def workload_spec(preset: str, batch_size: Optional[int] = None) -> WorkloadSpec:
    if preset not in _PRESET_TARGETS:
        raise GraphError(f"unknown preset {preset!r}")
    mparams, gflops, ai, latency, default_batch = _PRESET_TARGETS[preset]
    return WorkloadSpec(preset=preset, batch_size=batch_size or default_batch,
                        model_mparams=mparams, gflops_per_batch=gflops,
                        arithmetic_intensity=ai, latency_constraint_ms=latency)


# ---------------------------------------------------------------------------
# DLRM-style recommendation graphs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DlrmStructure:
    """Explicit recommendation-model layout.

    bottom_mlp/top_mlp are output widths of successive FC layers; the bottom
    stack maps num_dense features down to embedding_dim so its output can join
    the feature interaction. interaction="pairwise" multiplies the stacked
    feature matrix by its own transpose; "none" skips it (pure-MLP graphs).
    """
    num_tables: int
    rows_per_table: int
    embedding_dim: int
    num_dense: int = 0
    bottom_mlp: tuple[int, ...] = ()
    top_mlp: tuple[int, ...] = ()
    interaction: str = "pairwise"
    avg_lookups: int = 8
    max_lookups: int = 64
    num_broadcast_features: int = 0
    # Serving-form graphs carry quantized dtypes: int4rw tables, int8 FC
    # weights/activations, int8 pooled embeddings. Plain form is fp32.
    quantized: bool = False


def _dlrm_structure_for(spec: WorkloadSpec) -> DlrmStructure:
    if spec.preset == "recsys_less_complex":
        return DlrmStructure(
            num_tables=16, rows_per_table=137_000_000, embedding_dim=32,
            num_dense=256, bottom_mlp=(448, 32), top_mlp=(96, 1),
            avg_lookups=6, max_lookups=64, quantized=True)
    if spec.preset == "recsys_more_complex":
        return DlrmStructure(
            num_tables=48, rows_per_table=35_800_000, embedding_dim=64,
            num_dense=512, bottom_mlp=(512, 64), top_mlp=(96, 32, 1),
            avg_lookups=6, max_lookups=64, quantized=True)
    raise GraphError(f"preset {spec.preset!r} is not a recsys preset")


class _Builder:
    """Accumulates tensors/ops with unique names while assembling a graph."""

    def __init__(self):
        self.ops: list[OpNode] = []
        self.tensors: dict[str, TensorSpec] = {}
        self.inputs: list[str] = []
        self.weights: list[str] = []

    def tensor(self, name: str, shape: Sequence[int], dtype: DType,
               variable_axes: tuple[int, ...] = ()) -> str:
        if name in self.tensors:
            raise GraphError(f"duplicate tensor {name}")
        self.tensors[name] = TensorSpec(name=name, shape=tuple(shape), dtype=dtype,
                                        variable_axes=variable_axes)
        return name

    def graph_input(self, name, shape, dtype, variable_axes=()) -> str:
        self.tensor(name, shape, dtype, variable_axes)
        self.inputs.append(name)
        return name

    def weight(self, name, shape, dtype) -> str:
        self.tensor(name, shape, dtype)
        self.weights.append(name)
        return name

    def op(self, op_id: str, kind: OpKind, inputs: Sequence[str], out_name: str,
           out_shape: Sequence[int], out_dtype: DType, attrs: dict | None = None,
           device_supported: bool = True) -> str:
        self.tensor(out_name, out_shape, out_dtype)
        self.ops.append(OpNode(id=op_id, kind=kind, inputs=tuple(inputs),
                               outputs=(out_name,), attrs=attrs or {},
                               device_supported=device_supported))
        return out_name

    def finish(self, outputs: Sequence[str]) -> ComputeGraph:
        g = ComputeGraph(ops=self.ops, tensors=self.tensors,
                         inputs=tuple(self.inputs), outputs=tuple(outputs),
                         weights=tuple(self.weights))
        return infer_shapes(g)


def _fc_chain(b: _Builder, prefix: str, x: str, in_features: int,
              widths: Sequence[int], batch: int, w_dtype: DType, a_dtype: DType,
              last_dtype: DType | None = None) -> str:
    """Emit FC layers `prefix_fc{i}`; returns the final activation name."""
    cur, k = x, in_features
    for i, n in enumerate(widths):
        w = b.weight(f"{prefix}_w{i}", (k, n), w_dtype)
        dt = a_dtype if (last_dtype is None or i < len(widths) - 1) else last_dtype
        cur = b.op(f"{prefix}_fc{i}", OpKind.FC, (cur, w), f"{prefix}_a{i}",
                   (batch, n), dt, attrs={"in_features": k, "out_features": n})
        k = n
    return cur


def gen_dlrm(spec: WorkloadSpec, structure: Optional[DlrmStructure] = None) -> ComputeGraph:
    """Build a recommendation graph: per-table pooled lookups, bottom/top FC
    stacks, and a pairwise feature interaction.
    """
    if structure is None:
        structure = _dlrm_structure_for(spec)
    s = structure
    batch = spec.batch_size

    if s.num_tables > 0 and s.bottom_mlp and s.bottom_mlp[-1] != s.embedding_dim:
        raise GraphError(
            f"bottom_mlp output {s.bottom_mlp[-1]} must equal embedding_dim "
            f"{s.embedding_dim} to join the interaction")
    if s.num_tables < 0 or (s.num_tables > 0 and s.rows_per_table < 1):
        raise GraphError("need rows_per_table >= 1 when tables are present")

    q = s.quantized
    w_dtype = DType.INT8 if q else DType.FP32
    a_dtype = DType.INT8 if q else DType.FP32
    emb_dtype = DType.INT4RW if q else DType.FP32
    pooled_dtype = DType.INT8 if q else DType.FP32

    b = _Builder()
    features: list[str] = []

    bottom_out = None
    if s.num_dense > 0:
        dense_in = b.graph_input("dense_in", (batch, s.num_dense),
                                 DType.FP16 if q else DType.FP32)
        x = dense_in
        if q:
            x = b.op("quantize_dense", OpKind.QUANTIZE, (dense_in,), "dense_q",
                     (batch, s.num_dense), DType.INT8)
        if s.bottom_mlp:
            bottom_out = _fc_chain(b, "bot", x, s.num_dense, s.bottom_mlp,
                                   batch, w_dtype, a_dtype)
        else:
            bottom_out = x
        features.append(bottom_out)

    for t in range(s.num_tables):
        table = b.weight(f"table_{t}", (s.rows_per_table, s.embedding_dim), emb_dtype)
        idx = b.graph_input(f"idx_{t}", (batch * s.max_lookups,), DType.INT32,
                            variable_axes=(0,))
        features.append(b.op(
            f"sls_{t}", OpKind.SLS, (table, idx), f"pooled_{t}",
            (batch, s.embedding_dim), pooled_dtype,
            attrs={"batch": batch, "avg_lookups": s.avg_lookups,
                   "max_lookups": s.max_lookups}))

    for j in range(s.num_broadcast_features):
        bc = b.graph_input(f"bcast_{j}", (1, s.embedding_dim), pooled_dtype)
        features.append(b.op(f"tile_{j}", OpKind.TILE, (bc,), f"bcast_b{j}",
                             (batch, s.embedding_dim), pooled_dtype,
                             attrs={"reps": (batch, 1)}))

    if s.num_tables == 0 and s.num_broadcast_features == 0:
        # Pure-MLP graph: no interaction stage.
        top_in, top_k = bottom_out, (s.bottom_mlp[-1] if s.bottom_mlp else s.num_dense)
    elif s.interaction == "none":
        top_in, top_k = features[-1], s.embedding_dim
    else:
        nfeat = len(features)
        if nfeat > 1:
            stacked = b.op("concat_features", OpKind.CONCAT, tuple(features),
                           "stacked", (batch, nfeat * s.embedding_dim), pooled_dtype,
                           attrs={"axis": 1})
        else:
            stacked = features[0]
        top_in = b.op("interaction", OpKind.BATCH_MATMUL, (stacked, stacked),
                      "interacted", (batch, nfeat * nfeat), a_dtype,
                      attrs={"view_rows": nfeat, "view_cols": s.embedding_dim})
        top_k = nfeat * nfeat

    if s.top_mlp:
        # The last FC stays in fp16 in serving form (it is never quantized).
        out = _fc_chain(b, "top", top_in, top_k, s.top_mlp, batch, w_dtype, a_dtype,
                        last_dtype=DType.FP16 if q else DType.FP32)
        if q:
            last = len(s.top_mlp) - 1
            ops, tensors = b.ops, b.tensors
            wname = f"top_w{last}"
            tensors[wname] = TensorSpec(wname, tensors[wname].shape, DType.FP16)
            if last > 0:
                # fp16 last layer reads a dequantized activation.
                prev = f"top_a{last - 1}"
                deq = b.op("dequantize_top", OpKind.DEQUANTIZE, (prev,),
                           "top_deq", tensors[prev].shape, DType.FP16)
                fixed = ops[-2]
                ops[-2] = OpNode(id=fixed.id, kind=fixed.kind,
                                 inputs=(deq, wname), outputs=fixed.outputs,
                                 attrs=fixed.attrs)
                ops[-2], ops[-1] = ops[-1], ops[-2]
    else:
        out = top_in

    return b.finish([out])


# ---------------------------------------------------------------------------
# Dense workloads: CV / video / NLP
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConvStage:
    """`repeat` square-kernel convs at one resolution, optional residual Add."""
    channels_in: int
    channels_out: int
    spatial: int
    kernel: int = 3
    stride: int = 1
    repeat: int = 1
    residual: bool = False


def _conv_stack(b: _Builder, x: str, batch: int, stages: Sequence[ConvStage],
                w_dtype: DType, a_dtype: DType, prefix: str = "s") -> tuple[str, int, int]:
    """Emit conv stages; returns (activation, channels, spatial)."""
    cur = x
    c = stages[0].channels_in
    hw = stages[0].spatial
    for si, st in enumerate(stages):
        if st.channels_in != c or st.spatial != hw:
            raise GraphError(f"stage {si}: expects {st.channels_in}@{st.spatial}, "
                             f"has {c}@{hw}")
        for r in range(st.repeat):
            cin = st.channels_in if r == 0 else st.channels_out
            stride = st.stride if r == 0 else 1
            pad = st.kernel // 2
            out_hw = (hw + 2 * pad - st.kernel) // stride + 1
            w = b.weight(f"{prefix}{si}_w{r}", (st.channels_out, cin, st.kernel, st.kernel),
                         w_dtype)
            nxt = b.op(f"{prefix}{si}_conv{r}", OpKind.CONV, (cur, w),
                       f"{prefix}{si}_a{r}", (batch, st.channels_out, out_hw, out_hw),
                       a_dtype, attrs={"stride": stride, "padding": pad})
            if st.residual and r > 0 and out_hw == hw:
                nxt = b.op(f"{prefix}{si}_add{r}", OpKind.ADD, (nxt, cur),
                           f"{prefix}{si}_r{r}", (batch, st.channels_out, out_hw, out_hw),
                           a_dtype)
            cur, hw = nxt, out_hw
        c = st.channels_out
    return cur, c, hw


def _classifier_head(b: _Builder, x: str, batch: int, channels: int, hw: int,
                     classes: int, w_dtype: DType) -> str:
    pooled = b.op("global_pool", OpKind.POOL, (x,), "pool_out",
                  (batch, channels, 1, 1), DType.FP16, attrs={"global": True})
    flat = b.op("pool_transpose", OpKind.TRANSPOSE, (pooled,), "pool_flat",
                (batch, 1, 1, channels), DType.FP16, attrs={"perm": (0, 2, 3, 1)})
    squeezed = b.op("pool_squeeze", OpKind.CUSTOM, (flat,), "features",
                    (batch, channels), DType.FP16, attrs={"out_shape": (batch, channels)})
    w = b.weight("head_w", (channels, classes), w_dtype)
    logits = b.op("head_fc", OpKind.FC, (squeezed, w), "logits",
                  (batch, classes), DType.FP16,
                  attrs={"in_features": channels, "out_features": classes})
    return b.op("head_softmax", OpKind.SOFTMAX, (logits,), "probs",
                (batch, classes), DType.FP16)


def _gen_resnext101(batch: int) -> ComputeGraph:
    b = _Builder()
    x = b.graph_input("image", (batch, 3, 224, 224), DType.INT8)
    stem_w = b.weight("stem_w", (64, 3, 7, 7), DType.INT8)
    cur = b.op("stem_conv", OpKind.CONV, (x, stem_w), "stem_a",
               (batch, 64, 112, 112), DType.INT8, attrs={"stride": 2, "padding": 3})
    cur = b.op("stem_pool", OpKind.POOL, (cur,), "stem_p", (batch, 64, 56, 56),
               DType.INT8, attrs={"kernel": 2, "stride": 2})
    stages = [
        ConvStage(64, 64, 56, repeat=2, residual=True),
        ConvStage(64, 128, 56, stride=2),
        ConvStage(128, 128, 28, repeat=2, residual=True),
        ConvStage(128, 256, 28, stride=2),
        ConvStage(256, 256, 14, repeat=58, residual=True),
        ConvStage(256, 512, 14, stride=2),
        ConvStage(512, 512, 7, repeat=3, residual=True),
    ]
    cur, c, hw = _conv_stack(b, cur, batch, stages, DType.INT8, DType.INT8)
    out = _classifier_head(b, cur, batch, c, hw, 1000, DType.INT8)
    return b.finish([out])


def _gen_regnety(batch: int) -> ComputeGraph:
    b = _Builder()
    x = b.graph_input("image", (batch, 3, 224, 224), DType.INT8)
    stem_w = b.weight("stem_w", (32, 3, 3, 3), DType.INT8)
    cur = b.op("stem_conv", OpKind.CONV, (x, stem_w), "stem_a",
               (batch, 32, 112, 112), DType.INT8, attrs={"stride": 2, "padding": 1})
    stages = [
        ConvStage(32, 128, 112, stride=2),
        ConvStage(128, 512, 56, stride=2),
        ConvStage(512, 512, 28, repeat=51, residual=True),
        ConvStage(512, 1024, 28, stride=2),
        ConvStage(1024, 1024, 14, repeat=3, residual=True),
        ConvStage(1024, 2048, 14, stride=2),
        ConvStage(2048, 2048, 7, repeat=14, residual=True),
    ]
    cur, c, hw = _conv_stack(b, cur, batch, stages, DType.INT8, DType.INT8)
    out = _classifier_head(b, cur, batch, c, hw, 1000, DType.INT8)
    return b.finish([out])


def _gen_fbnetv3(batch: int) -> ComputeGraph:
    """Detection-style net: conv backbone, host-only region-proposal tail,
    then a small device-side classification net.
    """
    b = _Builder()
    x = b.graph_input("image", (batch, 3, 512, 512), DType.INT8)
    stem_w = b.weight("stem_w", (32, 3, 3, 3), DType.INT8)
    cur = b.op("stem_conv", OpKind.CONV, (x, stem_w), "stem_a",
               (batch, 32, 256, 256), DType.INT8, attrs={"stride": 2, "padding": 1})
    stages = [
        ConvStage(32, 64, 256, stride=2),
        ConvStage(64, 64, 128, repeat=33, residual=True),
        ConvStage(64, 128, 128, stride=2),
        ConvStage(128, 128, 64, repeat=6, residual=True),
        ConvStage(128, 256, 64, stride=2),
        ConvStage(256, 256, 32, repeat=11, residual=True),
        ConvStage(256, 512, 32, stride=2),
        ConvStage(512, 512, 16, repeat=8, residual=True),
    ]
    cur, c, hw = _conv_stack(b, cur, batch, stages, DType.INT8, DType.INT8)
    rois = b.op("region_proposals", OpKind.ROI_ALIGN_LIKE, (cur,), "rois",
                (batch, 64, c, 7, 7), DType.FP16,
                attrs={"out_shape": (batch, 64, c, 7, 7), "flops": 2.0e7},
                device_supported=False)
    squeezed = b.op("roi_flatten", OpKind.CUSTOM, (rois,), "roi_feats",
                    (batch * 64, c, 7, 7), DType.INT8,
                    attrs={"out_shape": (batch * 64, c, 7, 7)},
                    device_supported=False)
    cls_w = b.weight("cls_w", (128, c, 3, 3), DType.INT8)
    cur = b.op("cls_conv", OpKind.CONV, (squeezed, cls_w), "cls_a",
               (batch * 64, 128, 7, 7), DType.INT8, attrs={"stride": 1, "padding": 1})
    out = _classifier_head(b, cur, batch * 64, 128, 7, 80, DType.INT8)
    return b.finish([out])


def _gen_resnext3d(batch: int) -> ComputeGraph:
    """Video trunk on 4-frame clips; decode runs on the host CPU."""
    b = _Builder()
    enc = b.graph_input("encoded_clip", (batch, 1_048_576), DType.INT8)
    frames = b.op("video_decode", OpKind.HOST_DECODE, (enc,), "clip",
                  (batch, 3, 4, 112, 112), DType.FP16,
                  attrs={"out_shape": (batch, 3, 4, 112, 112), "flops": 5.0e8},
                  device_supported=False)
    stem_w = b.weight("stem_w", (64, 3, 3, 3, 3), DType.INT8)
    cur = b.op("stem_conv", OpKind.CONV3D, (frames, stem_w), "stem_a",
               (batch, 64, 2, 56, 56), DType.INT8, attrs={"stride": 2, "padding": 1})
    cur = b.op("stem_pool", OpKind.POOL, (cur,), "stem_p", (batch, 64, 1, 28, 28),
               DType.INT8, attrs={"kernel": 2, "stride": 2})

    def pointwise(i, x, cin, cout, t, hw, repeat, residual=True):
        for r in range(repeat):
            w = b.weight(f"pw{i}_w{r}", (cout, cin if r == 0 else cout, 1, 1, 1), DType.INT8)
            nxt = b.op(f"pw{i}_conv{r}", OpKind.CONV3D, (x, w), f"pw{i}_a{r}",
                       (batch, cout, t, hw, hw), DType.INT8)
            if residual and r > 0:
                nxt = b.op(f"pw{i}_add{r}", OpKind.ADD, (nxt, x), f"pw{i}_r{r}",
                           (batch, cout, t, hw, hw), DType.INT8)
            x = nxt
        return x

    cur = pointwise(0, cur, 64, 512, 1, 28, repeat=2, residual=False)
    cur = b.op("mid_pool", OpKind.POOL, (cur,), "mid_p", (batch, 512, 1, 14, 14),
               DType.INT8, attrs={"kernel": 2, "stride": 2})
    cur = pointwise(1, cur, 512, 2048, 1, 14, repeat=1, residual=False)
    cur = b.op("late_pool", OpKind.POOL, (cur,), "late_p", (batch, 2048, 1, 5, 5),
               DType.INT8, attrs={"kernel": 2, "stride": 3})
    cur = pointwise(2, cur, 2048, 2048, 1, 5, repeat=12)
    pooled = b.op("global_pool", OpKind.POOL, (cur,), "pool_out",
                  (batch, 2048, 1, 1, 1), DType.FP16, attrs={"global": True})
    feats = b.op("pool_squeeze", OpKind.CUSTOM, (pooled,), "features",
                 (batch, 2048), DType.FP16, attrs={"out_shape": (batch, 2048)})
    w = b.weight("head_w", (2048, 400), DType.INT8)
    logits = b.op("head_fc", OpKind.FC, (feats, w), "logits", (batch, 400), DType.FP16,
                  attrs={"in_features": 2048, "out_features": 400})
    out = b.op("head_softmax", OpKind.SOFTMAX, (logits,), "probs", (batch, 400),
               DType.FP16)
    return b.finish([out])


def _gen_xlmr(batch: int, token_boundary: int) -> ComputeGraph:
    """24-layer transformer encoder compiled at one padding boundary.

    All compute runs in fp16; the token-embedding lookup is a single-lookup
    pooled gather so it can ride the simple-lookup kernel path.
    """
    if token_boundary not in XLMR_PADDING_BOUNDARIES:
        raise GraphError(f"token boundary {token_boundary} not in "
                         f"{XLMR_PADDING_BOUNDARIES}")
    d, heads, layers, vocab = 1024, 16, 24, 250_002
    dh = d // heads
    t = token_boundary
    b = _Builder()

    emb_table = b.weight("token_embedding", (vocab, d), DType.FP16)
    token_ids = b.graph_input("token_ids", (batch * t,), DType.INT32,
                              variable_axes=(0,))
    cur = b.op("embed", OpKind.SLS, (emb_table, token_ids), "emb",
               (batch * t, d), DType.FP16,
               attrs={"batch": batch * t, "avg_lookups": 1, "max_lookups": 1})
    pos = b.weight("pos_embedding", (batch * t, d), DType.FP16)
    cur = b.op("embed_add_pos", OpKind.ADD, (cur, pos), "emb_pos",
               (batch * t, d), DType.FP16)

    def matmul(name, x, k, n):
        w = b.weight(f"{name}_w", (k, n), DType.FP16)
        return b.op(name, OpKind.MATMUL, (x, w), f"{name}_out",
                    (batch * t, n), DType.FP16)

    for li in range(layers):
        p = f"l{li}"
        q = matmul(f"{p}_q", cur, d, d)
        kk = matmul(f"{p}_k", cur, d, d)
        v = matmul(f"{p}_v", cur, d, d)
        kt = b.op(f"{p}_kT", OpKind.TRANSPOSE, (kk,), f"{p}_ktr", (d, batch * t),
                  DType.FP16, attrs={"perm": (1, 0)})
        scores = b.op(f"{p}_scores", OpKind.BATCH_MATMUL, (q, kt), f"{p}_sc",
                      (heads, batch * t, batch * t), DType.FP16,
                      attrs={"form": "qk", "heads": heads, "head_dim": dh})
        probs = b.op(f"{p}_softmax", OpKind.SOFTMAX, (scores,), f"{p}_pb",
                     (heads, batch * t, batch * t), DType.FP16)
        ctx = b.op(f"{p}_context", OpKind.BATCH_MATMUL, (probs, v), f"{p}_cx",
                   (batch * t, d), DType.FP16,
                   attrs={"form": "sv", "heads": heads, "head_dim": dh})
        attn = matmul(f"{p}_o", ctx, d, d)
        res1 = b.op(f"{p}_add1", OpKind.ADD, (attn, cur), f"{p}_r1",
                    (batch * t, d), DType.FP16)
        ln1 = b.op(f"{p}_ln1", OpKind.LAYER_NORM, (res1,), f"{p}_n1",
                   (batch * t, d), DType.FP16)
        ff1 = matmul(f"{p}_ffn1", ln1, d, 4 * d)
        act = b.op(f"{p}_gelu", OpKind.GELU, (ff1,), f"{p}_ge",
                   (batch * t, 4 * d), DType.FP16)
        ff2 = matmul(f"{p}_ffn2", act, 4 * d, d)
        res2 = b.op(f"{p}_add2", OpKind.ADD, (ff2, ln1), f"{p}_r2",
                    (batch * t, d), DType.FP16)
        cur = b.op(f"{p}_ln2", OpKind.LAYER_NORM, (res2,), f"{p}_n2",
                   (batch * t, d), DType.FP16)

    return b.finish([cur])


def gen_dense_workload(spec: WorkloadSpec, token_boundary: Optional[int] = None) -> ComputeGraph:
    """Generate a CV/video/NLP graph matching the preset's Table-style totals."""
    if spec.preset == "resnext101":
        return _gen_resnext101(spec.batch_size)
    if spec.preset == "regnety":
        return _gen_regnety(spec.batch_size)
    if spec.preset == "fbnetv3":
        return _gen_fbnetv3(spec.batch_size)
    if spec.preset == "resnext3d":
        return _gen_resnext3d(spec.batch_size)
    if spec.preset == "xlmr":
        return _gen_xlmr(spec.batch_size, token_boundary or 32)
    raise GraphError(f"unknown dense preset {spec.preset!r}")


def generate(spec: WorkloadSpec, structure: Optional[DlrmStructure] = None,
             token_boundary: Optional[int] = None) -> ComputeGraph:
    if spec.preset in RECSYS_PRESETS:
        return gen_dlrm(spec, structure)
    return gen_dense_workload(spec, token_boundary)


# ---------------------------------------------------------------------------
# Totals used to gate presets against their targets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WorkloadTotals:
    mparams: float
    gflops_per_batch: float
    dense_ai: float


DENSE_STACK_KINDS = (OpKind.FC, OpKind.MATMUL, OpKind.CONV, OpKind.CONV3D)


def workload_totals(g: ComputeGraph) -> WorkloadTotals:
    """Aggregate parameter count, per-batch GFLOPs, and dense-stack AI.

    Dense-stack AI counts FC/MatMul/Conv flops against their weight bytes plus
    each incident activation tensor once (weights + activations, not per-op
    edge traffic), which is how model-level intensity is usually quoted.
    """
    total_flops = sum(op_cost_stats(g, op).flops for op in g.ops)
    weight_names = g.weight_set()
    dense_flops = 0.0
    dense_bytes = 0.0
    seen: set[str] = set()
    for op in g.ops:
        if op.kind not in DENSE_STACK_KINDS:
            continue
        dense_flops += op_cost_stats(g, op).flops
        for name in (*op.inputs, *op.outputs):
            if name in seen:
                continue
            seen.add(name)
            dense_bytes += g.tensor(name).nbytes
    return WorkloadTotals(
        mparams=g.total_params() / 1e6,
        gflops_per_batch=total_flops / 1e9,
        dense_ai=dense_flops / dense_bytes if dense_bytes else 0.0,
    )
