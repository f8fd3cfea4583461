"""Graph partitioning and placement: host/device split, multi-card strategies,
core allocation, op parallelization, and list scheduling with rejectable hints.

The recommendation-system strategy follows the sparse/dense scheme: embedding
tables spread across cards model-parallel, the dense stack replicated per card
data-parallel, and each card's cores divided between a sparse and a dense
partition so pipelined requests overlap the two.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Optional, Sequence

from .graph_ir import (
    ComputeGraph, DType, GraphError, OpKind, OpNode, TensorSpec, op_cost_stats,
    validate_graph,
)
from .hardware import Card, CostModel, HardwareConfig, ResidencyPlan, plan_residency


class PlanError(Exception):
    pass


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Partition:
    id: str
    ops: tuple[str, ...]
    device: object               # "host" or a card index
    role: str                    # sparse | dense | host_pre | host_mid | host_post
    cores_assigned: Optional[int] = None
    replica_group: Optional[str] = None


@dataclass(frozen=True)
class Hint:
    kind: str                    # op_to_core | tensor_to_memory | op_order
    payload: tuple

    def describe(self) -> str:
        return f"{self.kind}{self.payload}"


@dataclass
class PlacementPlan:
    partition_id: str
    per_op: dict[str, tuple[int, int]]        # op id -> (core, sequence pos)
    per_core: list[list[str]]                 # op ids in execution order per core
    makespan: float
    hints_applied: list[str] = field(default_factory=list)
    hints_rejected: list[tuple[str, str]] = field(default_factory=list)


@dataclass(frozen=True)
class PlanEdge:
    src: str
    dst: str                     # partition id; replica groups use "<group>@*"
    tensors: tuple[str, ...]
    partial_tensors: tuple[str, ...] = ()   # index-selected subset of `tensors`


@dataclass
class ExecutionPlan:
    strategy: str
    partitions: dict[str, Partition]
    stage_order: list[list[str]]             # per-request pipeline stages
    edges: list[PlanEdge]
    placements: dict[str, PlacementPlan] = field(default_factory=dict)
    residency: dict[int, ResidencyPlan] = field(default_factory=dict)
    simulatable: bool = True
    notes: list[str] = field(default_factory=list)

    def partition(self, pid: str) -> Partition:
        return self.partitions[pid]

    def replica_members(self, group: str) -> list[str]:
        return sorted(p.id for p in self.partitions.values()
                      if p.replica_group == group)

    def covered_ops(self) -> list[str]:
        out = []
        seen_groups = set()
        for p in sorted(self.partitions.values(), key=lambda p: p.id):
            if p.replica_group:
                if p.replica_group in seen_groups:
                    continue
                seen_groups.add(p.replica_group)
            out.extend(p.ops)
        return out


def plan_to_dict(plan: ExecutionPlan) -> dict:
    return {
        "strategy": plan.strategy,
        "partitions": {pid: {
            "ops": list(p.ops), "device": p.device, "role": p.role,
            "cores_assigned": p.cores_assigned, "replica_group": p.replica_group,
        } for pid, p in sorted(plan.partitions.items())},
        "stage_order": plan.stage_order,
        "edges": [{"src": e.src, "dst": e.dst, "tensors": list(e.tensors),
                   "partial_tensors": list(e.partial_tensors)} for e in plan.edges],
        "placements": {pid: {
            "per_op": {k: list(v) for k, v in sorted(pl.per_op.items())},
            "per_core": pl.per_core,
            "makespan": pl.makespan,
            "hints_applied": pl.hints_applied,
            "hints_rejected": pl.hints_rejected,
        } for pid, pl in sorted(plan.placements.items())},
        "residency": {str(ci): {"tier_of": dict(sorted(r.tier_of.items())),
                                "sram_bytes": r.sram_bytes,
                                "lpddr_bytes": r.lpddr_bytes}
                      for ci, r in sorted(plan.residency.items())},
        "simulatable": plan.simulatable,
        "notes": plan.notes,
    }


def plan_from_dict(d: Mapping) -> ExecutionPlan:
    partitions = {pid: Partition(id=pid, ops=tuple(pd["ops"]), device=pd["device"],
                                 role=pd["role"], cores_assigned=pd["cores_assigned"],
                                 replica_group=pd["replica_group"])
                  for pid, pd in d["partitions"].items()}
    placements = {pid: PlacementPlan(
        partition_id=pid,
        per_op={k: (v[0], v[1]) for k, v in pd["per_op"].items()},
        per_core=[list(c) for c in pd["per_core"]],
        makespan=pd["makespan"],
        hints_applied=list(pd["hints_applied"]),
        hints_rejected=[tuple(x) for x in pd["hints_rejected"]],
    ) for pid, pd in d.get("placements", {}).items()}
    residency = {int(ci): ResidencyPlan(tier_of=rd["tier_of"],
                                        sram_bytes=rd["sram_bytes"],
                                        lpddr_bytes=rd["lpddr_bytes"])
                 for ci, rd in d.get("residency", {}).items()}
    return ExecutionPlan(
        strategy=d["strategy"], partitions=partitions,
        stage_order=[list(s) for s in d["stage_order"]],
        edges=[PlanEdge(src=e["src"], dst=e["dst"], tensors=tuple(e["tensors"]),
                        partial_tensors=tuple(e.get("partial_tensors", ())))
               for e in d["edges"]],
        placements=placements, residency=residency,
        simulatable=d.get("simulatable", True), notes=list(d.get("notes", [])))


def serialize_plan(plan: ExecutionPlan) -> str:
    return json.dumps(plan_to_dict(plan), indent=2, sort_keys=True) + "\n"


def parse_plan(text: str) -> ExecutionPlan:
    return plan_from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# Host/device split
# ---------------------------------------------------------------------------

@dataclass
class SplitResult:
    graph: ComputeGraph
    segments: list[tuple[str, list[str]]]    # (role, op ids) in pipeline order
    all_host: bool = False


def _rewrite_broadcasts(g: ComputeGraph) -> ComputeGraph:
    """Collapse N per-table broadcasts into one host concat plus one device
    broadcast: parallel Tile ops fed by graph inputs whose outputs meet in a
    single Concat are merged.
    """
    consumers = g.consumer_map()
    inputs = set(g.inputs)
    groups: dict[tuple, list[OpNode]] = {}
    for op in g.ops:
        if op.kind is not OpKind.TILE or op.inputs[0] not in inputs:
            continue
        cons = consumers.get(op.outputs[0], [])
        if len(cons) != 1 or cons[0].kind is not OpKind.CONCAT:
            continue
        reps = tuple(op.attrs.get("reps", ()))
        groups.setdefault((cons[0].id, reps), []).append(op)

    target = next(((cid, reps, ops) for (cid, reps), ops in sorted(groups.items())
                   if len(ops) >= 2), None)
    if target is None:
        return g
    concat_id, reps, tiles = target
    tiles = sorted(tiles, key=lambda o: o.id)
    tile_ids = {t.id for t in tiles}
    tile_outs = {t.outputs[0] for t in tiles}

    tensors = dict(g.tensors)
    src_names = [t.inputs[0] for t in tiles]
    axis = len(reps) - 1
    stacked_shape = list(tensors[src_names[0]].shape)
    stacked_shape[axis] = sum(tensors[n].shape[axis] for n in src_names)
    dtype = tensors[src_names[0]].dtype
    host_concat_out = "bcast_stacked"
    tensors[host_concat_out] = TensorSpec(host_concat_out, tuple(stacked_shape), dtype)
    tiled_shape = [d * r for d, r in zip(stacked_shape, reps)]
    tiled_out = "bcast_tiled"
    tensors[tiled_out] = TensorSpec(tiled_out, tuple(tiled_shape), dtype)

    host_concat = OpNode("bcast_host_concat", OpKind.CONCAT, tuple(src_names),
                         (host_concat_out,), {"axis": axis, "host_pinned": True})
    device_tile = OpNode("bcast_device_tile", OpKind.TILE, (host_concat_out,),
                         (tiled_out,), {"reps": list(reps)})

    new_ops: list[OpNode] = []
    placed = False
    for op in g.ops:
        if op.id in tile_ids:
            if not placed:
                new_ops.extend([host_concat, device_tile])
                placed = True
            continue
        if op.id == concat_id:
            # replace the run of tiled inputs with the single merged tensor
            new_inputs, swapped = [], False
            for t in op.inputs:
                if t in tile_outs:
                    if not swapped:
                        new_inputs.append(tiled_out)
                        swapped = True
                    continue
                new_inputs.append(t)
            op = OpNode(op.id, op.kind, tuple(new_inputs), op.outputs, op.attrs,
                        op.device_supported)
        new_ops.append(op)
    for name in tile_outs:
        tensors.pop(name, None)
    return ComputeGraph(ops=new_ops, tensors=tensors, inputs=g.inputs,
                        outputs=g.outputs, weights=g.weights)


def split_host_device(g: ComputeGraph) -> SplitResult:
    """Maximal device-supported subgraphs become device nets; unsupported ops
    stay on the host. Frontier ops migrate to the host when that shrinks the
    bytes crossing the cut.
    """
    g = _rewrite_broadcasts(g)
    order = g.topo_order()
    if not any(op.device_supported and not op.attrs.get("host_pinned")
               for op in order):
        return SplitResult(graph=g, segments=[("host_pre", [o.id for o in order])],
                           all_host=True)

    on_host = {op.id: (not op.device_supported) or bool(op.attrs.get("host_pinned"))
               for op in g.ops}
    by_id = {op.id: op for op in g.ops}
    producers = g.producer_map()
    consumers = g.consumer_map()
    sources = set(g.inputs) | g.weight_set()

    def cut_bytes() -> float:
        total = 0.0
        for op in g.ops:
            for t in op.inputs:
                if t in sources:
                    continue
                p = producers.get(t)
                if p is not None and on_host[p.id] != on_host[op.id]:
                    total += g.tensor(t).nbytes
        for t in g.outputs:
            p = producers.get(t)
            if p is not None and not on_host[p.id]:
                total += 0  # device outputs always return to host; constant
        return total

    # Greedy frontier migration: move a supported op to the host when the cut
    # strictly shrinks (cheap ops that only shuffle small tensors).
    improved = True
    while improved:
        improved = False
        for op in order:
            if on_host[op.id] or op.attrs.get("host_pinned"):
                continue
            before = cut_bytes()
            on_host[op.id] = True
            after = cut_bytes()
            if after < before:
                improved = True
            else:
                on_host[op.id] = False

    # Segment the topological order into alternating host/device runs.
    segments: list[tuple[str, list[str]]] = []
    cur_host: Optional[bool] = None
    for op in order:
        h = on_host[op.id]
        if cur_host is None or h != cur_host:
            segments.append(("host" if h else "device", [op.id]))
            cur_host = h
        else:
            segments[-1][1].append(op.id)

    labeled: list[tuple[str, list[str]]] = []
    device_seen = 0
    n_device = sum(1 for role, _ in segments if role == "device")
    for i, (role, ids) in enumerate(segments):
        if role == "device":
            device_seen += 1
            labeled.append((f"device_net_{device_seen - 1}", ids))
        elif device_seen == 0:
            labeled.append(("host_pre", ids))
        elif device_seen == n_device and i == len(segments) - 1:
            labeled.append(("host_post", ids))
        else:
            labeled.append(("host_mid", ids))
    return SplitResult(graph=g, segments=labeled, all_host=False)


# ---------------------------------------------------------------------------
# Cross-partition edges
# ---------------------------------------------------------------------------

def _sls_index_inputs(g: ComputeGraph) -> dict[str, str]:
    """index tensor -> SLS op id, for marking partial transfers."""
    return {op.inputs[1]: op.id for op in g.ops if op.kind is OpKind.SLS
            if len(op.inputs) > 1}


def _derive_edges(g: ComputeGraph, op_to_partition: Mapping[str, str],
                  input_partition: str, output_partition: str,
                  dst_rewrite: Mapping[str, str] | None = None) -> list[PlanEdge]:
    """Edges are exactly the tensors crossing partition boundaries, plus graph
    inputs entering and outputs leaving."""
    dst_rewrite = dst_rewrite or {}
    producers = g.producer_map()
    partial_marks = _sls_index_inputs(g)
    sources = set(g.inputs)
    grouped: dict[tuple[str, str], tuple[list[str], list[str]]] = {}

    def add(src: str, dst: str, tensor: str, partial: bool):
        dst = dst_rewrite.get(dst, dst)
        src = dst_rewrite.get(src, src)
        if src == dst:
            return
        tensors, partials = grouped.setdefault((src, dst), ([], []))
        if tensor not in tensors:
            tensors.append(tensor)
            if partial:
                partials.append(tensor)

    for op in g.ops:
        dst_part = op_to_partition[op.id]
        for t in op.inputs:
            if t in sources:
                add(input_partition, dst_part, t, t in partial_marks)
            else:
                p = producers.get(t)
                if p is None:
                    continue  # weights are resident, not transferred per request
                src_part = op_to_partition[p.id]
                if src_part != dst_part:
                    add(src_part, dst_part, t, False)
    for t in g.outputs:
        p = producers.get(t)
        if p is not None:
            add(op_to_partition[p.id], output_partition, t, False)
    return [PlanEdge(src=s, dst=d, tensors=tuple(ts), partial_tensors=tuple(ps))
            for (s, d), (ts, ps) in sorted(grouped.items())]


# ---------------------------------------------------------------------------
# Strategies
# ---------------------------------------------------------------------------

def _table_bytes(g: ComputeGraph, sls_op: OpNode) -> int:
    return g.tensor(sls_op.inputs[0]).nbytes


def partition_recsys(g: ComputeGraph, hw: HardwareConfig,
                     sparse_core_fraction: float = 1.0 / 3.0,
                     table_assignment: Mapping[str, int] | None = None) -> ExecutionPlan:
    """Model-parallel tables, data-parallel dense stack, split cores per card.

    Tables go largest-first to the card with the most remaining LPDDR (ties to
    the lowest index) unless an explicit assignment (e.g. from balance_sls)
    is provided.
    """
    sls_ops = [op for op in g.topo_order() if op.kind is OpKind.SLS]
    if not sls_ops:
        raise PlanError("partition_recsys needs at least one SLS op")
    ncards = len(hw.cards)
    emb_bytes = sum(_table_bytes(g, op) for op in sls_ops)
    cap = sum(c.lpddr_bytes for c in hw.cards)
    if emb_bytes > cap:
        raise PlanError(f"embedding tables exceed node LPDDR by {emb_bytes - cap} bytes")

    remaining = [c.lpddr_bytes for c in hw.cards]
    cards_for: dict[str, int] = {}
    if table_assignment is not None:
        for op in sls_ops:
            ci = table_assignment[op.inputs[0]]
            cards_for[op.id] = ci
            remaining[ci] -= _table_bytes(g, op)
    else:
        for op in sorted(sls_ops, key=lambda o: (-_table_bytes(g, o), o.id)):
            ci = max(range(ncards), key=lambda i: (remaining[i], -i))
            if remaining[ci] < _table_bytes(g, op):
                raise PlanError(f"table {op.inputs[0]} does not fit any card")
            cards_for[op.id] = ci
            remaining[ci] -= _table_bytes(g, op)

    host_ops = [op.id for op in g.ops if not op.device_supported
                or op.attrs.get("host_pinned")]
    dense_ops = [op.id for op in g.topo_order()
                 if op.kind is not OpKind.SLS and op.id not in host_ops]

    cores = hw.cards[0].cores
    sparse_cores = max(1, math.ceil(sparse_core_fraction * cores))
    dense_cores = cores - sparse_cores
    if dense_cores < 1:
        raise PlanError("sparse core fraction leaves no dense cores")

    partitions: dict[str, Partition] = {
        "host_pre": Partition("host_pre", tuple(host_ops), "host", "host_pre"),
        "host_post": Partition("host_post", (), "host", "host_post"),
    }
    op_to_partition: dict[str, str] = {o: "host_pre" for o in host_ops}
    sparse_ids = []
    for ci in range(ncards):
        ops_here = tuple(op.id for op in sls_ops if cards_for[op.id] == ci)
        pid = f"sparse_{ci}"
        partitions[pid] = Partition(pid, ops_here, ci, "sparse", sparse_cores)
        sparse_ids.append(pid)
        for o in ops_here:
            op_to_partition[o] = pid
    for ci in range(ncards):
        pid = f"dense_{ci}"
        partitions[pid] = Partition(pid, tuple(dense_ops), ci, "dense",
                                    dense_cores, replica_group="dense")
    for o in dense_ops:
        op_to_partition[o] = "dense@*"

    edges = _derive_edges(g, op_to_partition, "host_pre", "host_post")
    stage_order = [["host_pre"], [p for p in sparse_ids if partitions[p].ops],
                   ["dense@*"], ["host_post"]]
    stage_order = [s for s in stage_order if s]
    plan = ExecutionPlan(strategy="recsys", partitions=partitions,
                         stage_order=stage_order, edges=edges)
    _attach_residency(plan, g, hw, cards_for)
    return plan


def _attach_residency(plan: ExecutionPlan, g: ComputeGraph, hw: HardwareConfig,
                      sls_card: Mapping[str, int] | None = None) -> None:
    by_id = {op.id: op for op in g.ops}
    per_card_weights: dict[int, set[str]] = {i: set() for i in range(len(hw.cards))}
    weight_names = g.weight_set()
    for p in plan.partitions.values():
        if p.device == "host":
            continue
        for oid in p.ops:
            for t in by_id[oid].inputs:
                if t in weight_names:
                    per_card_weights[p.device].add(t)
    for ci, names in per_card_weights.items():
        if names:
            plan.residency[ci] = plan_residency(g, hw.cards[ci],
                                                weight_names=sorted(names))


def replicate_data_parallel(g: ComputeGraph, hw: HardwareConfig) -> ExecutionPlan:
    """Whole model on every card; requests round-robin across replicas."""
    weight_bytes = g.total_weight_bytes()
    if weight_bytes > hw.cards[0].lpddr_bytes:
        raise PlanError(
            f"model ({weight_bytes} bytes) exceeds single-card capacity "
            f"({hw.cards[0].lpddr_bytes}); use shard_fc or partition_recsys")
    split = split_host_device(g)
    g = split.graph
    host_pre_ops, host_post_ops, host_mid_ops, device_ops = [], [], [], []
    for role, ids in split.segments:
        if role == "host_pre":
            host_pre_ops.extend(ids)
        elif role == "host_post":
            host_post_ops.extend(ids)
        elif role.startswith("host"):
            host_mid_ops.extend(ids)
        else:
            device_ops.extend(ids)

    partitions = {
        "host_pre": Partition("host_pre", tuple(host_pre_ops), "host", "host_pre"),
        "host_post": Partition("host_post", tuple(host_post_ops), "host", "host_post"),
    }
    stage_mid = []
    if host_mid_ops:
        partitions["host_mid"] = Partition("host_mid", tuple(host_mid_ops), "host",
                                           "host_mid")
        stage_mid = [["host_mid"]]
    op_to_partition = {o: "host_pre" for o in host_pre_ops}
    op_to_partition.update({o: "host_post" for o in host_post_ops})
    op_to_partition.update({o: "host_mid" for o in host_mid_ops})
    for ci in range(len(hw.cards)):
        pid = f"card_{ci}"
        partitions[pid] = Partition(pid, tuple(device_ops), ci, "dense",
                                    hw.cards[ci].cores, replica_group="dense")
    op_to_partition.update({o: "dense@*" for o in device_ops})

    # host_mid sits between two device nets; the stage order reflects the
    # original segment sequence with the device nets merged per replica.
    if host_mid_ops:
        stages = [["host_pre"], ["dense@*"], ["host_mid"], ["dense@*"], ["host_post"]]
        notes = ["device nets share the replica card; host_mid runs between them"]
    else:
        stages = [["host_pre"], ["dense@*"], ["host_post"]]
        notes = []
    plan = ExecutionPlan(strategy="data_parallel", partitions=partitions,
                         stage_order=stages,
                         edges=_derive_edges(g, op_to_partition, "host_pre",
                                             "host_post"),
                         notes=notes)
    plan.simulatable = not host_mid_ops
    _attach_residency(plan, g, hw)
    return plan


def shard_fc(g: ComputeGraph, hw: HardwareConfig,
             fc_ids: Sequence[str]) -> tuple[ComputeGraph, ExecutionPlan]:
    """Column-shard the named FC/MatMul weights across all cards.

    Each card computes its output columns from the full input; a Concat
    gathers shards over P2P. With one card this is the identity transform.
    """
    ncards = len(hw.cards)
    by_id = {op.id: op for op in g.ops}
    for fid in fc_ids:
        op = by_id.get(fid)
        if op is None:
            raise PlanError(f"unknown op {fid}")
        if op.kind not in (OpKind.FC, OpKind.MATMUL):
            raise PlanError(f"op {fid} is {op.kind.value}, not FC/MatMul")

    if ncards == 1:
        plan = replicate_data_parallel(g, hw)
        return g, plan

    tensors = dict(g.tensors)
    weights = list(g.weights)
    new_ops: list[OpNode] = []
    shard_ops: dict[int, list[str]] = {i: [] for i in range(ncards)}
    for op in g.ops:
        if op.id not in fc_ids:
            new_ops.append(op)
            continue
        x_name, w_name = op.inputs[0], op.inputs[1]
        k, n = tensors[w_name].shape
        base, rem = divmod(n, ncards)
        sizes = [base + 1] * rem + [base] * (ncards - rem)
        w_dtype = tensors[w_name].dtype
        out_name = op.outputs[0]
        out_spec = tensors[out_name]
        part_outs = []
        for ci, size in enumerate(sizes):
            if size == 0:
                continue
            wpart = f"{w_name}.shard{ci}"
            tensors[wpart] = TensorSpec(wpart, (k, size), w_dtype)
            weights.append(wpart)
            opart = f"{out_name}.shard{ci}"
            tensors[opart] = TensorSpec(opart, out_spec.shape[:-1] + (size,),
                                        out_spec.dtype)
            new_ops.append(OpNode(f"{op.id}.shard{ci}", op.kind, (x_name, wpart),
                                  (opart,), dict(op.attrs)))
            shard_ops[ci].append(f"{op.id}.shard{ci}")
            part_outs.append(opart)
        new_ops.append(OpNode(f"{op.id}.gather", OpKind.CONCAT, tuple(part_outs),
                              (out_name,), {"axis": len(out_spec.shape) - 1}))
        weights.remove(w_name)
        tensors.pop(w_name)

    sharded = ComputeGraph(ops=new_ops, tensors=tensors, inputs=g.inputs,
                           outputs=g.outputs, weights=tuple(weights))
    violations = validate_graph(sharded)
    if violations:
        raise PlanError(f"sharding produced invalid graph: {violations[:3]}")

    partitions = {
        "host_pre": Partition("host_pre", (), "host", "host_pre"),
        "host_post": Partition("host_post", (), "host", "host_post"),
    }
    op_to_partition: dict[str, str] = {}
    main_ops = []
    for op in new_ops:
        hit = next((ci for ci, ids in shard_ops.items() if op.id in ids), None)
        if hit is None:
            main_ops.append(op.id)
            op_to_partition[op.id] = "main"
        else:
            op_to_partition[op.id] = f"shard_{hit}"
    partitions["main"] = Partition("main", tuple(main_ops), 0, "dense",
                                   hw.cards[0].cores)
    for ci in range(ncards):
        if shard_ops[ci]:
            pid = f"shard_{ci}"
            partitions[pid] = Partition(pid, tuple(shard_ops[ci]), ci, "dense",
                                        hw.cards[ci].cores)
    plan = ExecutionPlan(
        strategy="shard_fc", partitions=partitions,
        stage_order=[["host_pre"],
                     sorted(p for p in partitions if p.startswith("shard_")) + ["main"],
                     ["host_post"]],
        edges=_derive_edges(sharded, op_to_partition, "host_pre", "host_post"),
        simulatable=False,
        notes=["shard stages interleave with main; plan is not stage-simulatable"])
    _attach_residency(plan, sharded, hw)
    return sharded, plan


def allocate_cores(sparse_work: float, dense_work: float, cores_total: int) -> int:
    """Sparse-core count minimizing the slower of the two partitions; the op
    is the exhaustive sweep the paper describes."""
    if cores_total < 2:
        raise PlanError("need at least two cores to split")
    if sparse_work < 0 or dense_work < 0:
        raise PlanError("work must be non-negative")
    if sparse_work == 0:
        return 0
    best_k, best_cost = None, None
    for k in range(1, cores_total):
        cost = max(sparse_work / k, dense_work / (cores_total - k))
        if best_cost is None or cost < best_cost:
            best_k, best_cost = k, cost
    return best_k


# ---------------------------------------------------------------------------
# Op parallelization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MinChunk:
    batch: int = 8
    channels: int = 32


_SPLIT_HEAVY = frozenset({OpKind.FC, OpKind.CONV, OpKind.MATMUL})
_SPLIT_ELEMENTWISE = frozenset({OpKind.ADD, OpKind.MUL, OpKind.GELU,
                                OpKind.SOFTMAX, OpKind.LAYER_NORM,
                                OpKind.QUANTIZE, OpKind.DEQUANTIZE,
                                OpKind.CONVERT_TO})
_PEER_KINDS = _SPLIT_HEAVY | {OpKind.BATCH_MATMUL, OpKind.SLS, OpKind.CONV3D}


def _depth_levels(g: ComputeGraph) -> dict[str, int]:
    producers = g.producer_map()
    level: dict[str, int] = {}
    for op in g.topo_order():
        preds = [producers[t] for t in op.inputs if t in producers]
        level[op.id] = 1 + max((level[p.id] for p in preds), default=-1)
    return level


def parallelize_ops(g: ComputeGraph, cores_available: int,
                    min_chunk: MinChunk = MinChunk()) -> ComputeGraph:
    """Split ops that lack graph-level parallel peers so the cores have work.

    Heavy ops split along batch when it is large enough, else along output
    channels; elementwise ops split along their outermost dim. Split parts
    join through a Concat producing the original tensor, so downstream
    consumers and total flops are untouched.
    """
    if cores_available < 2:
        return g
    levels = _depth_levels(g)
    peer_count: dict[int, int] = {}
    for op in g.ops:
        if op.kind in _PEER_KINDS:
            peer_count[levels[op.id]] = peer_count.get(levels[op.id], 0) + 1

    tensors = dict(g.tensors)
    weights = list(g.weights)
    new_ops: list[OpNode] = []

    def split_sizes(extent: int, parts: int) -> list[int]:
        base, rem = divmod(extent, parts)
        return [base + 1] * rem + [base] * (parts - rem)

    def emit_split_feed(name: str, sizes: list[int], axis: int) -> list[str]:
        spec = tensors[name]
        outs, shapes = [], []
        for i, size in enumerate(sizes):
            part = f"{name}.part{i}"
            shape = list(spec.shape)
            shape[axis] = size
            tensors[part] = TensorSpec(part, tuple(shape), spec.dtype)
            outs.append(part)
            shapes.append(shape)
        new_ops.append(OpNode(f"{name}.split", OpKind.CUSTOM, (name,), tuple(outs),
                              {"op": "split", "axis": axis, "flops": 0,
                               "bytes": 2 * spec.nbytes, "out_shapes": shapes}))
        return outs

    for op in g.ops:
        if peer_count.get(levels[op.id], 0) >= cores_available:
            new_ops.append(op)
            continue
        out_name = op.outputs[0] if op.outputs else None
        if out_name is None or tensors[out_name].shape is None:
            new_ops.append(op)
            continue
        out_spec = tensors[out_name]

        if op.kind in _SPLIT_HEAVY:
            batch = out_spec.shape[0]
            channels = out_spec.shape[-1] if op.kind is not OpKind.CONV else out_spec.shape[1]
            n_batch = min(cores_available, batch // min_chunk.batch)
            n_chan = min(cores_available, channels // min_chunk.channels)
            if batch >= cores_available * min_chunk.batch and n_batch >= 2:
                parts = _split_heavy_batch(op, tensors, new_ops, emit_split_feed,
                                           split_sizes(batch, n_batch))
            elif n_chan >= 2 and op.kind in (OpKind.FC, OpKind.MATMUL):
                parts = _split_fc_channels(op, tensors, weights, new_ops,
                                           split_sizes(channels, n_chan))
            else:
                new_ops.append(op)
                continue
            new_ops.append(parts)
        elif op.kind in _SPLIT_ELEMENTWISE:
            d0 = out_spec.shape[0]
            n = min(cores_available, d0 // min_chunk.batch)
            if n < 2:
                new_ops.append(op)
                continue
            new_ops.append(_split_elementwise(op, tensors, new_ops, emit_split_feed,
                                              split_sizes(d0, n)))
        else:
            new_ops.append(op)

    out = ComputeGraph(ops=new_ops, tensors=tensors, inputs=g.inputs,
                       outputs=g.outputs, weights=tuple(weights))
    violations = validate_graph(out)
    if violations:
        raise PlanError(f"parallelize produced invalid graph: {violations[:3]}")
    return out


def _split_heavy_batch(op, tensors, new_ops, emit_split, sizes) -> OpNode:
    x_name = op.inputs[0]
    xs = emit_split(x_name, sizes, 0)
    out_name = op.outputs[0]
    out_spec = tensors[out_name]
    parts = []
    for i, (xp, size) in enumerate(zip(xs, sizes)):
        part = f"{out_name}.part{i}"
        tensors[part] = TensorSpec(part, (size,) + out_spec.shape[1:], out_spec.dtype)
        new_ops.append(OpNode(f"{op.id}.split{i}", op.kind,
                              (xp,) + tuple(op.inputs[1:]), (part,), dict(op.attrs)))
        parts.append(part)
    return OpNode(f"{op.id}.join", OpKind.CONCAT, tuple(parts), (out_name,),
                  {"axis": 0})


def _split_fc_channels(op, tensors, weights, new_ops, sizes) -> OpNode:
    x_name, w_name = op.inputs[0], op.inputs[1]
    k = tensors[w_name].shape[0]
    out_name = op.outputs[0]
    out_spec = tensors[out_name]
    parts = []
    for i, size in enumerate(sizes):
        wpart = f"{w_name}.part{i}"
        tensors[wpart] = TensorSpec(wpart, (k, size), tensors[w_name].dtype)
        weights.append(wpart)
        part = f"{out_name}.part{i}"
        tensors[part] = TensorSpec(part, out_spec.shape[:-1] + (size,), out_spec.dtype)
        new_ops.append(OpNode(f"{op.id}.split{i}", op.kind, (x_name, wpart),
                              (part,), dict(op.attrs)))
        parts.append(part)
    weights.remove(w_name)
    tensors.pop(w_name)
    return OpNode(f"{op.id}.join", OpKind.CONCAT, tuple(parts), (out_name,),
                  {"axis": len(out_spec.shape) - 1})


def _split_elementwise(op, tensors, new_ops, emit_split, sizes) -> OpNode:
    ins_split = []
    shape0 = tensors[op.inputs[0]].shape
    for t in op.inputs:
        if tensors[t].shape == shape0:
            ins_split.append(emit_split(t, sizes, 0))
        else:  # broadcast operand (e.g. bias) passes through whole
            ins_split.append([t] * len(sizes))
    out_name = op.outputs[0]
    out_spec = tensors[out_name]
    parts = []
    for i, size in enumerate(sizes):
        part = f"{out_name}.part{i}"
        tensors[part] = TensorSpec(part, (size,) + out_spec.shape[1:], out_spec.dtype)
        new_ops.append(OpNode(f"{op.id}.split{i}", op.kind,
                              tuple(col[i] for col in ins_split), (part,),
                              dict(op.attrs)))
        parts.append(part)
    return OpNode(f"{op.id}.join", OpKind.CONCAT, tuple(parts), (out_name,),
                  {"axis": 0})


# ---------------------------------------------------------------------------
# Hints
# ---------------------------------------------------------------------------

@dataclass
class HintContext:
    tier_capacity: Mapping[str, int] = field(default_factory=dict)
    tensor_bytes: Mapping[str, int] = field(default_factory=dict)
    has_path: Optional[object] = None   # callable (a, b) -> bool over op ids
    cores: int = 0
    op_ids: frozenset = frozenset()


def validate_hints(hints: Sequence[Hint], ctx: HintContext
                   ) -> tuple[list[Hint], list[tuple[Hint, str]]]:
    """Memory hints beyond tier capacity and order hints contradicting data
    dependencies are rejected with a machine-readable reason."""
    applied: list[Hint] = []
    rejected: list[tuple[Hint, str]] = []
    for h in hints:
        if h.kind == "tensor_to_memory":
            tensor, tier = h.payload
            cap = ctx.tier_capacity.get(tier)
            if cap is None:
                rejected.append((h, "unknown_tier"))
            elif ctx.tensor_bytes.get(tensor, 0) > cap:
                rejected.append((h, "capacity"))
            else:
                applied.append(h)
        elif h.kind == "op_order":
            before, after = h.payload
            if before not in ctx.op_ids or after not in ctx.op_ids:
                rejected.append((h, "unknown_op"))
            elif ctx.has_path is not None and ctx.has_path(after, before):
                rejected.append((h, "dependency"))
            else:
                applied.append(h)
        elif h.kind == "op_to_core":
            op_id, core = h.payload
            if op_id not in ctx.op_ids:
                rejected.append((h, "unknown_op"))
            elif not 0 <= core < ctx.cores:
                rejected.append((h, "invalid_core"))
            else:
                applied.append(h)
        else:
            rejected.append((h, "unknown_kind"))
    return applied, rejected


# ---------------------------------------------------------------------------
# List scheduling
# ---------------------------------------------------------------------------

def _partition_subgraph(g: ComputeGraph, op_ids: Iterable[str]):
    ids = set(op_ids)
    by_id = {op.id: op for op in g.ops if op.id in ids}
    producers = g.producer_map()
    preds: dict[str, list[str]] = {i: [] for i in ids}
    succs: dict[str, list[str]] = {i: [] for i in ids}
    for op in by_id.values():
        for t in op.inputs:
            p = producers.get(t)
            if p is not None and p.id in ids and p.id != op.id:
                preds[op.id].append(p.id)
                succs[p.id].append(op.id)
    return by_id, preds, succs


def _has_path_fn(succs: Mapping[str, list[str]]):
    def has_path(a: str, b: str) -> bool:
        stack, seen = [a], set()
        while stack:
            cur = stack.pop()
            if cur == b:
                return True
            if cur in seen:
                continue
            seen.add(cur)
            stack.extend(succs.get(cur, ()))
        return False
    return has_path


def place_ops(g: ComputeGraph, partition_ops: Sequence[str], cores: int,
              cost: CostModel, hints: Sequence[Hint] = (),
              latencies: Mapping[str, float] | None = None) -> PlacementPlan:
    """List scheduling: priority is critical-path length to the sink under the
    cost model; each step assigns the highest-priority ready op to the
    earliest-available core. Deterministic; ties break by op id.
    """
    by_id, preds, succs = _partition_subgraph(g, partition_ops)
    if latencies is None:
        latencies = {oid: cost.latency(op, cores=1,
                                       on_host=not op.device_supported)
                     for oid, op in by_id.items()}

    ctx = HintContext(has_path=_has_path_fn(succs), cores=cores,
                      op_ids=frozenset(by_id))
    sched_hints = [h for h in hints if h.kind in ("op_to_core", "op_order")]
    applied, rejected = validate_hints(sched_hints, ctx)
    forced_core = {h.payload[0]: h.payload[1] for h in applied
                   if h.kind == "op_to_core"}
    extra_preds: dict[str, list[str]] = {}
    for h in applied:
        if h.kind == "op_order":
            before, after = h.payload
            extra_preds.setdefault(after, []).append(before)

    all_preds = {oid: preds[oid] + extra_preds.get(oid, []) for oid in by_id}
    all_succs = {oid: list(succs[oid]) for oid in by_id}
    for after, befores in extra_preds.items():
        for b in befores:
            all_succs[b].append(after)

    rank: dict[str, float] = {}
    for oid in reversed(_topo_ids(by_id, all_preds)):
        rank[oid] = latencies[oid] + max((rank[s] for s in all_succs[oid]),
                                         default=0.0)

    indeg = {oid: len(all_preds[oid]) for oid in by_id}
    ready = sorted((oid for oid, d in indeg.items() if d == 0),
                   key=lambda o: (-rank[o], o))
    core_free = [0.0] * cores
    finish: dict[str, float] = {}
    per_op: dict[str, tuple[int, int]] = {}
    per_core: list[list[str]] = [[] for _ in range(cores)]
    seq = 0
    while ready:
        oid = ready.pop(0)
        data_ready = max((finish[p] for p in all_preds[oid]), default=0.0)
        core = forced_core.get(oid)
        if core is None:
            core = min(range(cores), key=lambda c: (core_free[c], c))
        start = max(core_free[core], data_ready)
        end = start + latencies[oid]
        core_free[core] = end
        finish[oid] = end
        per_op[oid] = (core, seq)
        per_core[core].append(oid)
        seq += 1
        for s in all_succs[oid]:
            indeg[s] -= 1
            if indeg[s] == 0:
                ready.append(s)
        ready.sort(key=lambda o: (-rank[o], o))
    makespan = max(finish.values(), default=0.0)
    return PlacementPlan(partition_id="", per_op=per_op, per_core=per_core,
                         makespan=makespan,
                         hints_applied=[h.describe() for h in applied],
                         hints_rejected=[(h.describe(), r) for h, r in rejected])


def _topo_ids(by_id, preds) -> list[str]:
    indeg = {oid: len(preds[oid]) for oid in by_id}
    succs: dict[str, list[str]] = {oid: [] for oid in by_id}
    for oid, ps in preds.items():
        for p in ps:
            succs[p].append(oid)
    ready = sorted(oid for oid, d in indeg.items() if d == 0)
    out = []
    while ready:
        cur = ready.pop(0)
        out.append(cur)
        for s in succs[cur]:
            indeg[s] -= 1
            if indeg[s] == 0:
                ready.append(s)
        ready.sort()
    if len(out) != len(by_id):
        raise PlanError("partition ops are not acyclic")
    return out


def round_robin_placement(g: ComputeGraph, partition_ops: Sequence[str], cores: int,
                          cost: CostModel,
                          latencies: Mapping[str, float] | None = None) -> PlacementPlan:
    """Naive baseline: topological order dealt round-robin across cores."""
    by_id, preds, _succs = _partition_subgraph(g, partition_ops)
    if latencies is None:
        latencies = {oid: cost.latency(op, cores=1,
                                       on_host=not op.device_supported)
                     for oid, op in by_id.items()}
    order = _topo_ids(by_id, preds)
    core_free = [0.0] * cores
    finish: dict[str, float] = {}
    per_op: dict[str, tuple[int, int]] = {}
    per_core: list[list[str]] = [[] for _ in range(cores)]
    for i, oid in enumerate(order):
        core = i % cores
        start = max(core_free[core], max((finish[p] for p in preds[oid]), default=0.0))
        end = start + latencies[oid]
        core_free[core] = end
        finish[oid] = end
        per_op[oid] = (core, i)
        per_core[core].append(oid)
    return PlacementPlan(partition_id="", per_op=per_op, per_core=per_core,
                         makespan=max(finish.values(), default=0.0))


def attach_placements(plan: ExecutionPlan, g: ComputeGraph, hw: HardwareConfig,
                      hints: Sequence[Hint] = ()) -> None:
    """Compute a placement for every partition (replica groups share one)."""
    done_groups: dict[str, PlacementPlan] = {}
    for pid, p in sorted(plan.partitions.items()):
        if not p.ops:
            continue
        if p.replica_group and p.replica_group in done_groups:
            proto = done_groups[p.replica_group]
            plan.placements[pid] = replace_placement_id(proto, pid)
            continue
        if p.device == "host":
            cores, card = 1, hw.cards[0]
        else:
            cores, card = p.cores_assigned or hw.cards[p.device].cores, hw.cards[p.device]
        residency = plan.residency.get(p.device if p.device != "host" else -1)
        cost = CostModel(g, hw, residency=residency.tier_of if residency else None,
                         card=card)
        placement = place_ops(g, p.ops, cores, cost, hints)
        placement.partition_id = pid
        plan.placements[pid] = placement
        if p.replica_group:
            done_groups[p.replica_group] = placement


def replace_placement_id(p: PlacementPlan, pid: str) -> PlacementPlan:
    return PlacementPlan(partition_id=pid, per_op=dict(p.per_op),
                         per_core=[list(c) for c in p.per_core],
                         makespan=p.makespan,
                         hints_applied=list(p.hints_applied),
                         hints_rejected=list(p.hints_rejected))


# ---------------------------------------------------------------------------
# SLS load balancing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TableInfo:
    name: str
    nbytes: int
    dim: int
    element_bytes: float
    avg_lookups: Optional[float] = None

    def est_latency(self, lpddr_bw: float) -> float:
        lookups = self.avg_lookups if self.avg_lookups is not None else 1.0
        return lookups * self.dim * self.element_bytes / lpddr_bw


def tables_from_graph(g: ComputeGraph) -> list[TableInfo]:
    infos = []
    for op in g.topo_order():
        if op.kind is not OpKind.SLS:
            continue
        spec = g.tensor(op.inputs[0])
        infos.append(TableInfo(name=spec.name, nbytes=spec.nbytes,
                               dim=spec.shape[1],
                               element_bytes=spec.dtype.element_bytes,
                               avg_lookups=op.attrs.get("avg_lookups")))
    return infos


def balance_sls(tables: Sequence[TableInfo], num_cards: int,
                lpddr_capacity: int, lpddr_bw: float = 50e9,
                use_annotations: bool = True) -> dict[str, int]:
    """Assign tables to cards. With lookup annotations: longest-processing-time
    on estimated latency, least-loaded card first; without: balance table
    count only. The annotated result never has a higher max-card load than the
    naive one (the naive assignment is the fallback when it somehow would).
    """
    if num_cards < 1:
        raise PlanError("need at least one card")

    def naive() -> dict[str, int]:
        counts = [0] * num_cards
        free = [lpddr_capacity] * num_cards
        out = {}
        for t in tables:
            order = sorted(range(num_cards), key=lambda c: (counts[c], c))
            ci = next((c for c in order if free[c] >= t.nbytes), None)
            if ci is None:
                raise PlanError(f"table {t.name} does not fit any card")
            out[t.name] = ci
            counts[ci] += 1
            free[ci] -= t.nbytes
        return out

    def max_load(assign: Mapping[str, int]) -> float:
        loads = [0.0] * num_cards
        for t in tables:
            loads[assign[t.name]] += t.est_latency(lpddr_bw)
        return max(loads, default=0.0)

    naive_assign = naive()
    if not use_annotations or not any(t.avg_lookups is not None for t in tables):
        return naive_assign

    loads = [0.0] * num_cards
    free = [lpddr_capacity] * num_cards
    lpt: dict[str, int] = {}
    for t in sorted(tables, key=lambda t: (-t.est_latency(lpddr_bw), t.name)):
        order = sorted(range(num_cards), key=lambda c: (loads[c], c))
        ci = next((c for c in order if free[c] >= t.nbytes), None)
        if ci is None:
            raise PlanError(f"table {t.name} does not fit any card")
        lpt[t.name] = ci
        loads[ci] += t.est_latency(lpddr_bw)
        free[ci] -= t.nbytes
    if max_load(lpt) > max_load(naive_assign):
        return naive_assign
    return lpt
