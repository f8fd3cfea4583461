"""Bit-exact reference kernels for low-precision compute, plus accuracy metrics.

Every kernel here is deterministic: fixed rounding (round-half-to-even
everywhere), fixed accumulation order (ascending slice position), and
float64 quantization arithmetic. That makes outputs reproducible bit-for-bit,
which is what the dual-implementation comparison harness at the bottom of
this module checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence, Union

import numpy as np

NE_CLIP_EPS = 1e-7

# Accuracy budget metrics and the documented range of acceptable thresholds.
_BUDGET_RANGES = {
    "ne_degradation": (0.0, 1.0),
    "cosine_similarity": (0.0, 1.0),
    "top1_drop": (0.0, 1.0),
    "bleu_drop": (0.0, 1.0),
}
# Metrics where the measured value must stay at or above the threshold.
_HIGHER_IS_BETTER = frozenset({"cosine_similarity"})


@dataclass(frozen=True)
class AccuracyBudget:
    metric: str
    threshold: float

    def __post_init__(self):
        if self.metric not in _BUDGET_RANGES:
            raise ValueError(f"unknown budget metric {self.metric!r}")
        lo, hi = _BUDGET_RANGES[self.metric]
        if not lo <= self.threshold <= hi:
            raise ValueError(f"{self.metric} threshold {self.threshold} outside "
                             f"[{lo}, {hi}]")

    def is_met(self, value: float) -> bool:
        if self.metric in _HIGHER_IS_BETTER:
            return value >= self.threshold
        return value <= self.threshold


# ---------------------------------------------------------------------------
# Floating-point grids
# ---------------------------------------------------------------------------

def fp16_round(x) -> np.ndarray:
    """Round onto the binary16 grid (round-to-nearest-even), returned as fp32.

    Overflow maps to signed infinity; subnormals and NaN are preserved.
    """
    arr = np.asarray(x, dtype=np.float32)
    with np.errstate(over="ignore"):
        return arr.astype(np.float16).astype(np.float32)


def bf16_round(x) -> np.ndarray:
    """Round onto the bfloat16 grid (truncate mantissa with round-to-nearest-even)."""
    arr = np.asarray(x, dtype=np.float32)
    u = arr.view(np.uint32)
    nan_mask = np.isnan(arr)
    rounded = (u + np.uint32(0x7FFF) + ((u >> np.uint32(16)) & np.uint32(1)))
    rounded &= np.uint32(0xFFFF0000)
    out = rounded.view(np.float32).copy()
    out[nan_mask] = np.float32(np.nan)
    return out


# ---------------------------------------------------------------------------
# int8 quantization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuantParams:
    """Affine int8 parameters: per-tensor asymmetric or per-channel symmetric."""
    scheme: str  # "per_tensor_asymmetric" | "per_channel_symmetric"
    scale: Union[float, np.ndarray]
    zero_point: int = 0
    channel_axis: Optional[int] = None

    def __post_init__(self):
        if self.scheme not in ("per_tensor_asymmetric", "per_channel_symmetric"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        s = np.asarray(self.scale, dtype=np.float64)
        if np.any(s <= 0.0):
            raise ValueError("scale must be > 0")
        if self.scheme == "per_channel_symmetric":
            if self.zero_point != 0:
                raise ValueError("symmetric scheme requires zero_point 0")
            if self.channel_axis is None and s.ndim > 0:
                raise ValueError("per-channel scheme requires a channel axis")
        if not -128 <= self.zero_point <= 127:
            raise ValueError("zero_point outside [-128, 127]")

    def scale_for(self, shape: tuple[int, ...]) -> np.ndarray:
        """Scale broadcast against a tensor of the given shape (float64)."""
        s = np.asarray(self.scale, dtype=np.float64)
        if s.ndim == 0:
            return s
        if self.channel_axis is None:
            raise ValueError("array scale without channel axis")
        if s.shape[0] != shape[self.channel_axis]:
            raise ValueError(f"per-channel scale count {s.shape[0]} != extent "
                             f"{shape[self.channel_axis]}")
        view = [1] * len(shape)
        view[self.channel_axis] = s.shape[0]
        return s.reshape(view)


def quantize_int8(x, params: QuantParams) -> np.ndarray:
    """q = clamp(round_half_even(x / scale) + zero_point, -128, 127).

    Arithmetic runs in float64 so ties land exactly on the .5 grid.
    """
    arr = np.asarray(x, dtype=np.float64)
    scale = params.scale_for(arr.shape)
    q = np.round(arr / scale) + params.zero_point
    return np.clip(q, -128, 127).astype(np.int8)


def dequantize_int8(q, params: QuantParams) -> np.ndarray:
    """(q - zero_point) * scale, evaluated in float64 and stored as fp32."""
    arr = np.asarray(q, dtype=np.int64)
    scale = params.scale_for(arr.shape)
    return ((arr - params.zero_point) * scale).astype(np.float32)


# ---------------------------------------------------------------------------
# Row-wise quantized embedding tables
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RowwiseQuantTable:
    """Embedding table stored as per-row unsigned codes with fp16 scale/bias."""
    codes: np.ndarray  # uint8 [rows, dim], values < 2**width
    scale: np.ndarray  # fp32 values on the fp16 grid, [rows]
    bias: np.ndarray   # fp32 values on the fp16 grid, [rows]
    width: int

    def __post_init__(self):
        if self.width not in (4, 8):
            raise ValueError("width must be 4 or 8")
        if self.codes.max(initial=0) > 2 ** self.width - 1:
            raise ValueError("codes exceed width")

    @property
    def row_count(self) -> int:
        return self.codes.shape[0]

    @property
    def dim(self) -> int:
        return self.codes.shape[1]

    def dequantize_row(self, r: int) -> np.ndarray:
        """code * scale + bias in fp32."""
        return (self.codes[r].astype(np.float32) * np.float32(self.scale[r])
                + np.float32(self.bias[r]))


def quantize_rowwise(table, width: int) -> RowwiseQuantTable:
    """Per-row affine quantization to `width`-bit codes.

    bias = row min, scale = (max - min) / (2**width - 1) (1.0 for constant
    rows); both are stored through fp16_round and the stored values define the
    code grid, so encode and decode agree.
    """
    arr = np.asarray(table, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError("table must be a non-empty 2-D matrix")
    levels = 2 ** width - 1
    lo = arr.min(axis=1)
    hi = arr.max(axis=1)
    raw_scale = np.where(hi > lo, (hi - lo) / levels, 1.0)
    scale = fp16_round(raw_scale).astype(np.float64)
    bias = fp16_round(lo).astype(np.float64)
    codes = np.round((arr - bias[:, None]) / scale[:, None])
    codes = np.clip(codes, 0, levels).astype(np.uint8)
    return RowwiseQuantTable(codes=codes, scale=scale.astype(np.float32),
                             bias=bias.astype(np.float32), width=width)


# ---------------------------------------------------------------------------
# SLS (pooled embedding lookup)
# ---------------------------------------------------------------------------

def _row_fp32(table, r: int) -> np.ndarray:
    if isinstance(table, RowwiseQuantTable):
        return table.dequantize_row(r)
    return np.asarray(table)[r].astype(np.float32)


def sls_reference(table, indices: Sequence[int], lengths: Sequence[int]) -> np.ndarray:
    """Pooled lookup: output row b sums the table rows named by batch b's slice.

    Accumulation is fp32 in ascending slice position, seeded with the first
    row, so a length-1 slice is bit-identical to returning the row directly.
    """
    rows = table.row_count if isinstance(table, RowwiseQuantTable) else np.asarray(table).shape[0]
    dim = table.dim if isinstance(table, RowwiseQuantTable) else np.asarray(table).shape[1]
    idx = list(int(i) for i in indices)
    lens = list(int(n) for n in lengths)
    if any(n < 0 for n in lens):
        raise ValueError("negative length")
    if sum(lens) != len(idx):
        raise ValueError(f"sum(lengths) {sum(lens)} != len(indices) {len(idx)}")
    for i in idx:
        if not 0 <= i < rows:
            raise IndexError(f"index {i} out of range [0, {rows})")

    out = np.zeros((len(lens), dim), dtype=np.float32)
    pos = 0
    for b, n in enumerate(lens):
        if n == 0:
            pos += 0
            continue
        acc = _row_fp32(table, idx[pos]).copy()
        for j in range(1, n):
            acc = acc + _row_fp32(table, idx[pos + j])
        out[b] = acc
        pos += n
    return out


def sls_simple_lookup(table, indices, lengths) -> np.ndarray:
    """Fast path for tables looked up exactly once per batch element."""
    lens = list(int(n) for n in lengths)
    if any(n != 1 for n in lens):
        raise ValueError("simple lookup path requires all lengths == 1")
    dim = table.dim if isinstance(table, RowwiseQuantTable) else np.asarray(table).shape[1]
    out = np.empty((len(lens), dim), dtype=np.float32)
    for b, i in enumerate(indices):
        out[b] = _row_fp32(table, int(i))
    return out


# ---------------------------------------------------------------------------
# int8 fully connected
# ---------------------------------------------------------------------------

_FC_MAX_K = 2 ** 23


def fc_int8_reference(x: np.ndarray, w: np.ndarray, x_params: QuantParams,
                      w_params: QuantParams, out_dtype: str = "fp32") -> np.ndarray:
    """Integer-exact int8 FC: sum (x - zx) * w, scale, optionally fp16-round.

    Accumulation is exact integer arithmetic, so the result is independent of
    any internal tiling or loop order.
    """
    x = np.asarray(x)
    w = np.asarray(w)
    if x.dtype != np.int8 or w.dtype != np.int8:
        raise TypeError("inputs must be int8")
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ValueError(f"shape mismatch {x.shape} x {w.shape}")
    if x.shape[1] > _FC_MAX_K:
        raise ValueError(f"K {x.shape[1]} exceeds exact-accumulation bound {_FC_MAX_K}")
    if out_dtype not in ("fp16", "fp32"):
        raise ValueError(f"unsupported out_dtype {out_dtype!r}")

    zx = x_params.zero_point
    acc = (x.astype(np.int64) - zx) @ w.astype(np.int64)

    w_scale = np.asarray(w_params.scale, dtype=np.float32)
    if w_scale.ndim == 1 and w_scale.shape[0] != w.shape[1]:
        raise ValueError("per-channel w scale must cover output columns")
    combined = np.float32(x_params.scale) * w_scale
    out = acc.astype(np.float32) * combined
    if out_dtype == "fp16":
        out = fp16_round(out)
    return out


def fc_int8_loop_oracle(x, w, x_params, w_params, out_dtype="fp32") -> np.ndarray:
    """Naive O(B*K*N) triple loop; the independent oracle for fc_int8_reference."""
    x = np.asarray(x)
    w = np.asarray(w)
    if x.shape[1] > _FC_MAX_K:
        raise ValueError("K too large")
    zx = x_params.zero_point
    bsz, k = x.shape
    n = w.shape[1]
    acc = np.zeros((bsz, n), dtype=np.int64)
    for b in range(bsz):
        for j in range(n):
            s = 0
            for i in range(k):
                s += (int(x[b, i]) - zx) * int(w[i, j])
            acc[b, j] = s
    w_scale = np.asarray(w_params.scale, dtype=np.float32)
    combined = np.float32(x_params.scale) * w_scale
    out = acc.astype(np.float32) * combined
    if out_dtype == "fp16":
        out = fp16_round(out)
    return out


# ---------------------------------------------------------------------------
# Error metrics
# ---------------------------------------------------------------------------

def layer_error(reference, candidate, metric: str = "relative_l2") -> float:
    """Per-layer error between a reference tensor and a candidate one."""
    r = np.asarray(reference, dtype=np.float64)
    c = np.asarray(candidate, dtype=np.float64)
    if r.shape != c.shape:
        raise ValueError(f"shape mismatch {r.shape} vs {c.shape}")
    if metric == "relative_l2":
        rn = np.linalg.norm(r)
        if rn == 0.0:
            return 0.0 if np.linalg.norm(c) == 0.0 else math.inf
        return float(np.linalg.norm(r - c) / rn)
    if metric == "max_abs":
        return float(np.max(np.abs(r - c))) if r.size else 0.0
    if metric == "cosine":
        rn, cn = np.linalg.norm(r), np.linalg.norm(c)
        if rn == 0.0 or cn == 0.0:
            return 1.0 if rn == cn else 0.0
        return float(np.dot(r.ravel(), c.ravel()) / (rn * cn))
    raise ValueError(f"unknown metric {metric!r}")


def _binary_cross_entropy(preds: np.ndarray, labels: np.ndarray) -> float:
    p = np.clip(preds, NE_CLIP_EPS, 1.0 - NE_CLIP_EPS)
    return float(-np.mean(labels * np.log(p) + (1.0 - labels) * np.log(1.0 - p)))


def ne_metric(predictions, labels) -> float:
    """Normalized cross entropy: model log loss over the base-rate log loss.

    Exactly 1.0 for the constant base-rate predictor; lower is better.
    """
    p = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if p.shape != y.shape:
        raise ValueError("predictions/labels length mismatch")
    if not (np.any(y == 1.0) and np.any(y == 0.0)):
        raise ValueError("labels must contain both classes")
    base = float(np.mean(y))
    num = _binary_cross_entropy(p, y)
    den = _binary_cross_entropy(np.full_like(p, base), y)
    return num / den


# ---------------------------------------------------------------------------
# Dual-implementation bit-exact comparison harness
# ---------------------------------------------------------------------------

Kernel = Callable[..., np.ndarray]

_KERNELS: dict[tuple[str, str], Kernel] = {}


def register_kernel(op: str, name: str, fn: Kernel) -> None:
    _KERNELS[(op, name)] = fn


def get_kernel(op: str, name: str) -> Kernel:
    try:
        return _KERNELS[(op, name)]
    except KeyError:
        raise KeyError(f"no kernel {name!r} registered for op {op!r}") from None


@dataclass(frozen=True)
class KernelCase:
    case_id: str
    inputs: Mapping[str, object]


@dataclass(frozen=True)
class Mismatch:
    case_id: str
    op: str
    flat_index: int           # -1 when a kernel raised instead of returning
    bits_a: str
    bits_b: str
    cause: str = ""

    def line(self) -> str:
        if self.cause:
            return f"{self.case_id} {self.op} error: {self.cause}"
        return (f"{self.case_id} {self.op} idx={self.flat_index} "
                f"a={self.bits_a} b={self.bits_b}")


@dataclass
class BitexactReport:
    op: str
    kernel_a: str
    kernel_b: str
    n_cases: int
    mismatches: list[Mismatch] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.mismatches

    def lines(self) -> list[str]:
        return [m.line() for m in self.mismatches]


_BIT_VIEWS = {1: np.uint8, 2: np.uint16, 4: np.uint32, 8: np.uint64}


def _first_bit_mismatch(a: np.ndarray, b: np.ndarray) -> Optional[tuple[int, str, str]]:
    if a.shape != b.shape or a.dtype != b.dtype:
        return (-1, f"shape/dtype {a.shape}/{a.dtype}", f"{b.shape}/{b.dtype}")
    view = _BIT_VIEWS[a.dtype.itemsize]
    av = np.ascontiguousarray(a).reshape(-1).view(view)
    bv = np.ascontiguousarray(b).reshape(-1).view(view)
    diff = np.nonzero(av != bv)[0]
    if diff.size == 0:
        return None
    i = int(diff[0])
    width = a.dtype.itemsize * 2
    return (i, f"0x{int(av[i]):0{width}x}", f"0x{int(bv[i]):0{width}x}")


def bitexact_compare(op: str, kernel_a: str, kernel_b: str,
                     cases: Sequence[KernelCase]) -> BitexactReport:
    """Run two registered kernels over a case corpus and report bit mismatches.

    A raised exception is recorded as a mismatch with its cause; an empty
    mismatch list means the kernels agree bit-for-bit on every case.
    """
    fa = get_kernel(op, kernel_a)
    fb = get_kernel(op, kernel_b)
    report = BitexactReport(op=op, kernel_a=kernel_a, kernel_b=kernel_b,
                            n_cases=len(cases))
    for case in cases:
        try:
            out_a = fa(**case.inputs)
            out_b = fb(**case.inputs)
        except Exception as e:  # recorded, not raised: the report is the result
            report.mismatches.append(Mismatch(case.case_id, op, -1, "", "",
                                              cause=f"{type(e).__name__}: {e}"))
            continue
        hit = _first_bit_mismatch(np.asarray(out_a), np.asarray(out_b))
        if hit is not None:
            idx, ba, bb = hit
            report.mismatches.append(Mismatch(case.case_id, op, idx, ba, bb))
    return report


# -- scalar-path twins (deliberately different implementations) --------------

def _quantize_int8_scalar(x, params: QuantParams) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    scale = np.broadcast_to(params.scale_for(arr.shape), arr.shape)
    flat = arr.reshape(-1)
    sflat = np.asarray(scale, dtype=np.float64).reshape(-1)
    out = np.empty(flat.shape, dtype=np.int8)
    for i in range(flat.size):
        q = round(flat[i] / sflat[i]) + params.zero_point
        out[i] = min(127, max(-128, q))
    return out.reshape(arr.shape)


def _dequantize_int8_scalar(q, params: QuantParams) -> np.ndarray:
    arr = np.asarray(q, dtype=np.int64)
    scale = np.broadcast_to(params.scale_for(arr.shape), arr.shape)
    flat = arr.reshape(-1)
    sflat = np.asarray(scale, dtype=np.float64).reshape(-1)
    out = np.empty(flat.shape, dtype=np.float32)
    for i in range(flat.size):
        out[i] = np.float32((flat[i] - params.zero_point) * sflat[i])
    return out.reshape(arr.shape)


def _quantize_rowwise_scalar(table, width: int) -> RowwiseQuantTable:
    arr = np.asarray(table, dtype=np.float64)
    levels = 2 ** width - 1
    rows, dim = arr.shape
    codes = np.empty((rows, dim), dtype=np.uint8)
    scales = np.empty(rows, dtype=np.float32)
    biases = np.empty(rows, dtype=np.float32)
    for r in range(rows):
        lo, hi = min(arr[r]), max(arr[r])
        raw = (hi - lo) / levels if hi > lo else 1.0
        s = float(fp16_round(raw))
        b = float(fp16_round(lo))
        scales[r] = np.float32(s)
        biases[r] = np.float32(b)
        for j in range(dim):
            codes[r, j] = min(levels, max(0, round((arr[r, j] - b) / s)))
    return RowwiseQuantTable(codes=codes, scale=scales, bias=biases, width=width)


def _rowwise_pack(t: RowwiseQuantTable) -> np.ndarray:
    """Flatten a table into one comparable fp32 array (codes, scale, bias)."""
    return np.concatenate([t.codes.astype(np.float32).ravel(),
                           t.scale.astype(np.float32),
                           t.bias.astype(np.float32)])


def _register_builtin_kernels() -> None:
    register_kernel("quantize_int8", "vectorized", quantize_int8)
    register_kernel("quantize_int8", "scalar", _quantize_int8_scalar)
    register_kernel("dequantize_int8", "vectorized", dequantize_int8)
    register_kernel("dequantize_int8", "scalar", _dequantize_int8_scalar)
    register_kernel("quantize_rowwise", "vectorized",
                    lambda table, width: _rowwise_pack(quantize_rowwise(table, width)))
    register_kernel("quantize_rowwise", "scalar",
                    lambda table, width: _rowwise_pack(_quantize_rowwise_scalar(table, width)))
    register_kernel("sls", "reference", sls_reference)
    register_kernel("sls", "simple_lookup", sls_simple_lookup)
    register_kernel("fc_int8", "reference", fc_int8_reference)
    register_kernel("fc_int8", "loop_oracle", fc_int8_loop_oracle)
    register_kernel("fp16_round", "reference", fp16_round)


_register_builtin_kernels()


# ---------------------------------------------------------------------------
# Seeded case corpora (1000 cases per op by default)
# ---------------------------------------------------------------------------

DEFAULT_CORPUS_SIZE = 1000


def default_corpus(op: str, n: int = DEFAULT_CORPUS_SIZE, seed: int = 2024,
                   single_lookup: bool = False) -> list[KernelCase]:
    """Deterministic randomized cases for a registered op family."""
    rng = np.random.default_rng(seed)
    cases: list[KernelCase] = []
    for i in range(n):
        cid = f"{op}-{i:04d}"
        if op in ("quantize_int8", "dequantize_int8"):
            shape = (int(rng.integers(1, 9)), int(rng.integers(1, 17)))
            if rng.random() < 0.5:
                params = QuantParams("per_tensor_asymmetric",
                                     scale=float(rng.uniform(1e-3, 2.0)),
                                     zero_point=int(rng.integers(-128, 128)))
            else:
                params = QuantParams("per_channel_symmetric",
                                     scale=rng.uniform(1e-3, 2.0, size=shape[1]),
                                     channel_axis=1)
            if op == "quantize_int8":
                x = rng.uniform(-4.0, 4.0, size=shape)
                # sprinkle exact tie points
                if i % 7 == 0:
                    x.flat[0] = 0.5
                cases.append(KernelCase(cid, {"x": x, "params": params}))
            else:
                q = rng.integers(-128, 128, size=shape).astype(np.int8)
                cases.append(KernelCase(cid, {"q": q, "params": params}))
        elif op == "quantize_rowwise":
            rows = int(rng.integers(1, 9))
            dim = int(rng.integers(1, 17))
            table = rng.uniform(-8.0, 8.0, size=(rows, dim))
            if i % 5 == 0:
                table[0, :] = table[0, 0]  # constant row
            width = 4 if i % 2 == 0 else 8
            cases.append(KernelCase(cid, {"table": table, "width": width}))
        elif op == "sls":
            rows = int(rng.integers(2, 33))
            dim = int(rng.integers(1, 17))
            if rng.random() < 0.5:
                table = quantize_rowwise(rng.uniform(-2, 2, size=(rows, dim)),
                                         4 if i % 2 == 0 else 8)
            else:
                table = rng.uniform(-2, 2, size=(rows, dim)).astype(np.float32)
            batch = int(rng.integers(1, 5))
            if single_lookup:
                lengths = [1] * batch
            else:
                lengths = [int(rng.integers(0, 7)) for _ in range(batch)]
            indices = [int(rng.integers(0, rows)) for _ in range(sum(lengths))]
            cases.append(KernelCase(cid, {"table": table, "indices": indices,
                                          "lengths": lengths}))
        elif op == "fc_int8":
            bsz = int(rng.integers(1, 5))
            k = int(rng.integers(1, 17))
            nn = int(rng.integers(1, 9))
            x = rng.integers(-128, 128, size=(bsz, k)).astype(np.int8)
            w = rng.integers(-128, 128, size=(k, nn)).astype(np.int8)
            xp = QuantParams("per_tensor_asymmetric",
                             scale=float(rng.uniform(1e-3, 1.0)),
                             zero_point=int(rng.integers(-16, 17)))
            if rng.random() < 0.5:
                wp = QuantParams("per_channel_symmetric",
                                 scale=rng.uniform(1e-3, 1.0, size=nn),
                                 channel_axis=1)
            else:
                wp = QuantParams("per_tensor_asymmetric",
                                 scale=float(rng.uniform(1e-3, 1.0)))
            out_dtype = "fp16" if i % 3 == 0 else "fp32"
            cases.append(KernelCase(cid, {"x": x, "w": w, "x_params": xp,
                                          "w_params": wp, "out_dtype": out_dtype}))
        elif op == "fp16_round":
            x = rng.uniform(-70000, 70000, size=int(rng.integers(1, 33))).astype(np.float32)
            cases.append(KernelCase(cid, {"x": x}))
        else:
            raise KeyError(f"no corpus generator for op {op!r}")
    return cases
