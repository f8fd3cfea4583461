"""Deterministic discrete-event simulation of requests flowing through a plan.

Requests enter through the NIC, are staged by host partitions, fan out to
sparse partitions, converge on one dense replica, and return through the
host. Every partition, link, and the NIC is a FIFO resource; a partition
starts its next request the moment its cores free, which is what pipelines
sparse lookups of one request under dense compute of another.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .graph_ir import (
    ComputeGraph, DType, OpKind, OpNode, ROWWISE_ROW_OVERHEAD_BYTES,
)
from .hardware import (
    CostModel, HardwareConfig, HardwareError, op_latency, transfer_latency,
)
from .partitioner import (
    ExecutionPlan, PlanEdge, PlacementPlan, PlanError, attach_placements,
)

INDEX_BYTES = 4  # int32 lookup indices
WARMUP_FRACTION = 0.10


class SimError(Exception):
    pass


# ---------------------------------------------------------------------------
# Requests and traffic
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Request:
    rid: int
    arrival: float
    batch_items: int
    lookups: Mapping[str, int]          # table tensor -> actual index count
    token_length: Optional[int] = None
    deadline: Optional[float] = None


@dataclass(frozen=True)
class TrafficSpec:
    kind: str                            # open_loop | closed_loop
    rate: float = 0.0                    # requests/s (open loop)
    duration: float = 0.0                # seconds (open loop)
    concurrency: int = 1                 # clients (closed loop)
    count: int = 0                       # total requests (closed loop)
    seed: int = 0
    lookup_fraction: Optional[float] = None  # of compiled max; None -> avg
    latency_constraint_s: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("open_loop", "closed_loop"):
            raise SimError(f"unknown traffic kind {self.kind!r}")


@dataclass(frozen=True)
class SlsInput:
    op_id: str
    table: str
    index_tensor: str
    max_count: int
    avg_count: int


def sls_inputs(g: ComputeGraph) -> list[SlsInput]:
    out = []
    for op in g.topo_order():
        if op.kind is not OpKind.SLS:
            continue
        batch = int(op.attrs.get("batch", 1))
        max_l = int(op.attrs["max_lookups"])
        avg_l = int(op.attrs.get("avg_lookups", max_l))
        out.append(SlsInput(op_id=op.id, table=op.inputs[0],
                            index_tensor=op.inputs[1],
                            max_count=batch * max_l, avg_count=batch * avg_l))
    return out


def request_lookups(g: ComputeGraph, traffic: TrafficSpec) -> dict[str, int]:
    """Actual per-table index counts for one request (uniform across requests
    so partial-transfer scaling is exactly linear)."""
    counts = {}
    for si in sls_inputs(g):
        if traffic.lookup_fraction is None:
            counts[si.table] = si.avg_count
        else:
            counts[si.table] = max(0, int(round(traffic.lookup_fraction * si.max_count)))
    return counts


# ---------------------------------------------------------------------------
# Batching
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BatchPolicy:
    kind: str                            # fixed_size | length_bucketed
    size: int = 1
    boundaries: tuple[int, ...] = ()


@dataclass(frozen=True)
class FormedBatch:
    requests: tuple[int, ...]            # request ids, FIFO
    boundary: Optional[int] = None
    wasted_compute_fraction: float = 0.0


def form_batches(queue: Sequence[Request], policy: BatchPolicy) -> list[FormedBatch]:
    """fixed_size groups FIFO up to n; length_bucketed pads each item to its
    smallest covering boundary and groups only same-boundary items."""
    if policy.kind == "fixed_size":
        out = []
        for i in range(0, len(queue), policy.size):
            chunk = queue[i:i + policy.size]
            out.append(FormedBatch(requests=tuple(r.rid for r in chunk)))
        return out
    if policy.kind != "length_bucketed":
        raise SimError(f"unknown batch policy {policy.kind!r}")
    bounds = sorted(policy.boundaries)
    if not bounds:
        raise SimError("length_bucketed needs boundaries")
    pending: dict[int, list[Request]] = {b: [] for b in bounds}
    out: list[FormedBatch] = []

    def flush(b: int):
        items = pending[b]
        if not items:
            return
        padded = b * len(items)
        actual = sum(r.token_length for r in items)
        out.append(FormedBatch(requests=tuple(r.rid for r in items), boundary=b,
                               wasted_compute_fraction=(padded - actual) / padded))
        pending[b] = []

    for r in queue:
        if r.token_length is None:
            raise SimError(f"request {r.rid} has no token length")
        b = next((x for x in bounds if r.token_length <= x), None)
        if b is None:
            raise SimError(f"request {r.rid} length {r.token_length} exceeds "
                           f"largest boundary {bounds[-1]}")
        pending[b].append(r)
        if len(pending[b]) == policy.size:
            flush(b)
    for b in bounds:
        flush(b)
    return out


# ---------------------------------------------------------------------------
# Transfer planning
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TransferSpec:
    edge: PlanEdge
    route: str          # ingress | egress | host_mediated | p2p | device_resident
    batching: str       # command_batched | per_tensor


@dataclass
class TransferPlan:
    specs: list[TransferSpec]

    def for_edge(self, edge: PlanEdge) -> TransferSpec:
        for s in self.specs:
            if s.edge is edge or (s.edge.src == edge.src and s.edge.dst == edge.dst):
                return s
        raise SimError(f"no transfer spec for edge {edge.src}->{edge.dst}")


def plan_transfers(plan: ExecutionPlan, g: ComputeGraph,
                   hw: HardwareConfig) -> TransferPlan:
    """Route and batching per edge.

    Host-adjacent edges dispatch in one event window per request and are
    command-batched into a single transaction. Card-to-card intermediates are
    forwarded per tensor as each producer finishes; they ride P2P through the
    switch (one traversal) when enabled, else stage through host memory (two
    traversals). Same-card edges with P2P also get device-resident tensors
    (no transfer at all).
    """
    specs = []
    for edge in plan.edges:
        src_is_host = edge.src in plan.partitions and \
            plan.partitions[edge.src].device == "host"
        dst_is_host = edge.dst in plan.partitions and \
            plan.partitions[edge.dst].device == "host"
        if src_is_host:
            specs.append(TransferSpec(edge, "ingress", "command_batched"))
        elif dst_is_host:
            specs.append(TransferSpec(edge, "egress", "command_batched"))
        else:
            route = "p2p" if hw.p2p_enabled else "host_mediated"
            specs.append(TransferSpec(edge, route, "per_tensor"))
    return TransferPlan(specs=specs)


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------

@dataclass
class SimReport:
    completed: int = 0
    latencies: list[float] = field(default_factory=list)
    latency_p50: Optional[float] = None
    latency_p90: Optional[float] = None
    latency_p99: Optional[float] = None
    throughput_rps: float = 0.0
    throughput_items: float = 0.0
    span: float = 0.0
    warmup_completions: int = 0
    per_core_busy: dict[str, float] = field(default_factory=dict)
    op_kind_share: dict[str, float] = field(default_factory=dict)
    pcie: dict[str, dict[str, float]] = field(default_factory=dict)
    nic_bytes: float = 0.0
    deadline_misses: int = 0
    edge_traversals: dict[str, float] = field(default_factory=dict)

    def total_pcie_transactions(self) -> float:
        return sum(v["transactions"] for v in self.pcie.values())

    def total_pcie_bytes(self) -> float:
        return sum(v["bytes"] for v in self.pcie.values())


def nearest_rank(sorted_values: Sequence[float], pct: float) -> float:
    n = len(sorted_values)
    if n == 0:
        raise SimError("no values for percentile")
    idx = max(1, math.ceil(pct / 100.0 * n))
    return sorted_values[idx - 1]


def report_to_dict(r: SimReport) -> dict:
    return {
        "completed": r.completed,
        "latency_p50": r.latency_p50,
        "latency_p90": r.latency_p90,
        "latency_p99": r.latency_p99,
        "throughput_rps": r.throughput_rps,
        "throughput_items": r.throughput_items,
        "span": r.span,
        "warmup_completions": r.warmup_completions,
        "per_core_busy": dict(sorted(r.per_core_busy.items())),
        "op_kind_share": dict(sorted(r.op_kind_share.items())),
        "pcie": dict(sorted(r.pcie.items())),
        "nic_bytes": r.nic_bytes,
        "deadline_misses": r.deadline_misses,
        "edge_traversals": dict(sorted(r.edge_traversals.items())),
        "per_request_latency": r.latencies,
    }


def summarize_report(r: SimReport) -> str:
    """Human-readable rendering: op-kind breakdown (descending), the
    latency/throughput row, and the interconnect traffic table."""
    lines = ["== op kind breakdown =="]
    for kind, share in sorted(r.op_kind_share.items(), key=lambda kv: (-kv[1], kv[0])):
        lines.append(f"  {kind:16s} {share * 100:6.1f}%")
    lines.append("== latency / throughput ==")
    if r.completed and r.latency_p50 is not None:
        lines.append(f"  completed={r.completed} p50={r.latency_p50 * 1e3:.3f}ms "
                     f"p90={r.latency_p90 * 1e3:.3f}ms p99={r.latency_p99 * 1e3:.3f}ms "
                     f"throughput={r.throughput_rps:.1f}req/s "
                     f"({r.throughput_items:.1f} items/s) "
                     f"deadline_misses={r.deadline_misses}")
    else:
        lines.append(f"  completed={r.completed}")
    lines.append("== interconnect ==")
    lines.append(f"  nic_bytes={r.nic_bytes:.0f}")
    for link, st in sorted(r.pcie.items()):
        lines.append(f"  {link:16s} bytes={st['bytes']:.0f} "
                     f"transactions={st['transactions']:.0f}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# The engine
# ---------------------------------------------------------------------------

class _EventLoop:
    """Deterministic time-ordered callback queue (ties break by insertion)."""

    def __init__(self):
        self._heap: list = []
        self._seq = 0
        self.now = 0.0

    def schedule(self, t: float, fn) -> None:
        heapq.heappush(self._heap, (t, self._seq, fn))
        self._seq += 1

    def run(self) -> None:
        while self._heap:
            t, _, fn = heapq.heappop(self._heap)
            self.now = t
            fn()


class _FifoResource:
    """Single server with a FIFO queue, driven by the event loop."""

    __slots__ = ("loop", "busy", "queue")

    def __init__(self, loop: _EventLoop):
        self.loop = loop
        self.busy = False
        self.queue: list = []

    def submit(self, duration: float, on_done) -> None:
        self.queue.append((duration, on_done))
        if not self.busy:
            self._start_next()

    def _start_next(self) -> None:
        if not self.queue:
            self.busy = False
            return
        self.busy = True
        duration, on_done = self.queue.pop(0)

        def finish():
            on_done()
            self._start_next()

        self.loop.schedule(self.loop.now + duration, finish)


class Simulation:
    def __init__(self, g: ComputeGraph, plan: ExecutionPlan, hw: HardwareConfig,
                 traffic: TrafficSpec,
                 transfer_plan: Optional[TransferPlan] = None):
        if not plan.simulatable:
            raise PlanError(f"plan is not simulatable: {plan.notes}")
        self.g = g
        self.plan = plan
        self.hw = hw
        self.traffic = traffic
        self.transfers = transfer_plan or plan_transfers(plan, g, hw)
        if not plan.placements:
            attach_placements(plan, g, hw)
        self._check_core_budget()
        self._core_offsets = self._assign_core_offsets()
        self.ops_by_id = {op.id: op for op in g.ops}
        self._base_latency: dict[str, dict[str, float]] = {}
        self._sls_tables = {si.op_id: si for si in sls_inputs(g)}
        self._service_cache: dict = {}

        # resources
        self.loop = _EventLoop()
        self.nic = _FifoResource(self.loop)
        self.partition_res = {pid: _FifoResource(self.loop) for pid in plan.partitions}
        self.links: dict[str, _FifoResource] = {"host_switch": _FifoResource(self.loop)}
        for ci in range(len(hw.cards)):
            self.links[f"card_switch[{ci}]"] = _FifoResource(self.loop)

        # accounting
        self.core_busy: dict[str, float] = {}
        self.kind_time: dict[str, float] = {}
        self.link_stats: dict[str, dict[str, float]] = {
            name: {"bytes": 0.0, "transactions": 0.0} for name in self.links}
        self.nic_bytes = 0.0
        self.edge_traversals: dict[str, float] = {}

    # -- validation -----------------------------------------------------

    def _check_core_budget(self):
        per_card: dict[int, int] = {}
        for p in self.plan.partitions.values():
            if p.device == "host" or p.cores_assigned is None:
                continue
            per_card[p.device] = per_card.get(p.device, 0) + p.cores_assigned
        for ci, total in per_card.items():
            if total > self.hw.cards[ci].cores:
                raise PlanError(f"core oversubscription on card {ci}: "
                                f"{total} > {self.hw.cards[ci].cores}")

    def _assign_core_offsets(self) -> dict[str, int]:
        offsets: dict[str, int] = {}
        used: dict[int, int] = {}
        for pid in sorted(self.plan.partitions):
            p = self.plan.partitions[pid]
            if p.device == "host" or p.cores_assigned is None:
                offsets[pid] = 0
                continue
            offsets[pid] = used.get(p.device, 0)
            used[p.device] = offsets[pid] + p.cores_assigned
        return offsets

    # -- per-request service --------------------------------------------

    def _op_latency(self, op: OpNode, partition, lookups: Mapping[str, int]) -> float:
        if op.kind is OpKind.SLS:
            return self._sls_latency(op, partition, lookups)
        pid = partition.id
        cache = self._base_latency.setdefault(pid, {})
        if op.id not in cache:
            on_host = partition.device == "host"
            card = self.hw.cards[0 if on_host else partition.device]
            residency = self.plan.residency.get(partition.device) \
                if not on_host else None
            cache[op.id] = op_latency(
                self.g, op, self.hw, cores_assigned=1,
                residency=residency.tier_of if residency else None,
                card=card, on_host=on_host or not op.device_supported)
        return cache[op.id]

    def _sls_latency(self, op: OpNode, partition, lookups: Mapping[str, int]) -> float:
        table = self.g.tensor(op.inputs[0])
        out = self.g.tensor(op.outputs[0])
        count = lookups.get(op.inputs[0])
        if count is None:
            count = int(op.attrs.get("avg_lookups", op.attrs["max_lookups"])) * \
                int(op.attrs.get("batch", 1))
        dim = table.shape[1]
        row_bytes = dim * table.dtype.element_bytes
        if table.dtype is DType.INT4RW:
            row_bytes += ROWWISE_ROW_OVERHEAD_BYTES
        nbytes = count * row_bytes + out.nbytes
        flops = float(count * dim)
        card = self.hw.cards[partition.device]
        residency = self.plan.residency.get(partition.device)
        tier = residency.tier(op.inputs[0]) if residency else "lpddr"
        bw = card.sram_bw if tier == "sram" else card.lpddr_bw
        compute = flops / (self.hw.eff(op.kind) * card.peak_fp16_flops / card.cores)
        return max(compute, nbytes / bw) + self.hw.op_launch_overhead_s

    def _service_time(self, pid: str, lookups: Mapping[str, int]) -> float:
        """Replay the partition's placed per-core sequences with per-request
        op latencies; returns the makespan."""
        p = self.plan.partitions[pid]
        if not p.ops:
            return 0.0
        sig = (pid, tuple(sorted((t, lookups.get(t, -1))
                                 for t in {self.ops_by_id[o].inputs[0]
                                           for o in p.ops
                                           if self.ops_by_id[o].kind is OpKind.SLS})))
        if sig in self._service_cache:
            makespan, kind_times, core_times = self._service_cache[sig]
        else:
            placement = self.plan.placements.get(pid)
            if placement is None:
                raise PlanError(f"partition {pid} has no placement")
            lat = {oid: self._op_latency(self.ops_by_id[oid], p, lookups)
                   for oid in p.ops}
            makespan, core_times = _replay_schedule(self.g, placement, lat)
            kind_times = {}
            for oid in p.ops:
                k = self.ops_by_id[oid].kind.value
                kind_times[k] = kind_times.get(k, 0.0) + lat[oid]
            self._service_cache[sig] = (makespan, kind_times, core_times)
        for k, t in kind_times.items():
            self.kind_time[k] = self.kind_time.get(k, 0.0) + t
        base = self._core_offsets[pid]
        if p.device != "host":
            for c, busy in enumerate(core_times):
                key = f"card{p.device}.core{base + c}"
                self.core_busy[key] = self.core_busy.get(key, 0.0) + busy
        return makespan

    # -- transfers --------------------------------------------------------

    def _edge_bytes(self, edge: PlanEdge, lookups: Mapping[str, int]
                    ) -> tuple[float, int]:
        """(bytes, tensor count) for one request over this edge."""
        total = 0.0
        for t in edge.tensors:
            if t in edge.partial_tensors:
                table = self._table_for_index(t)
                count = lookups.get(table, 0)
                total += count * INDEX_BYTES
            else:
                total += self.g.tensor(t).nbytes
        return total, len(edge.tensors)

    def _table_for_index(self, index_tensor: str) -> str:
        for si in self._sls_tables.values():
            if si.index_tensor == index_tensor:
                return si.table
        return index_tensor

    def _legs_for(self, spec: TransferSpec, src_dev, dst_dev
                  ) -> list[tuple[str, list[str]]]:
        """Sequential traversals for one edge: (queuing link, stat links).

        Each leg serializes on its narrowest port (the x4 card link); bytes
        and transactions are logged on every link it crosses.
        """
        if src_dev == "host" and dst_dev == "host":
            return []
        if src_dev == "host":
            return [(f"card_switch[{dst_dev}]",
                     ["host_switch", f"card_switch[{dst_dev}]"])]
        if dst_dev == "host":
            return [(f"card_switch[{src_dev}]",
                     [f"card_switch[{src_dev}]", "host_switch"])]
        if spec.route == "p2p":
            if src_dev == dst_dev:
                return []    # device-resident tensor
            return [(f"card_switch[{dst_dev}]",
                     [f"card_switch[{src_dev}]", f"card_switch[{dst_dev}]"])]
        # host_mediated: card -> host, then host -> card
        return [(f"card_switch[{src_dev}]",
                 [f"card_switch[{src_dev}]", "host_switch"]),
                (f"card_switch[{dst_dev}]",
                 ["host_switch", f"card_switch[{dst_dev}]"])]

    def _start_transfer(self, spec: TransferSpec, src_pid: str, dst_pid: str,
                        lookups: Mapping[str, int], on_done) -> None:
        nbytes, ntensors = self._edge_bytes(spec.edge, lookups)
        txns = 1 if spec.batching == "command_batched" else max(1, ntensors)
        src_dev = self.plan.partitions[src_pid].device
        dst_dev = self.plan.partitions[dst_pid].device
        legs = self._legs_for(spec, src_dev, dst_dev)
        if not legs:
            on_done()
            return
        ekey = f"{spec.edge.src}->{spec.edge.dst}"
        self.edge_traversals[ekey] = self.edge_traversals.get(ekey, 0.0) \
            + len(legs) * (1 if spec.batching == "command_batched" else ntensors)

        def run_leg(i: int):
            queue_link, stat_links = legs[i]
            dur = transfer_latency(nbytes, "card_switch", self.hw, txns)
            for name in stat_links:
                self.link_stats[name]["bytes"] += nbytes
                self.link_stats[name]["transactions"] += txns

            def done():
                if i + 1 < len(legs):
                    run_leg(i + 1)
                else:
                    on_done()

            self.links[queue_link].submit(dur, done)

        run_leg(0)

    # -- request lifecycle -------------------------------------------------

    def _resolve(self, token: str, rid: int) -> str:
        if token.endswith("@*"):
            group = token[:-2]
            members = self.plan.replica_members(group)
            if not members:
                raise PlanError(f"no replicas for group {group}")
            return members[rid % len(members)]
        return token

    def _ingress_bytes(self, lookups: Mapping[str, int]) -> float:
        total = 0.0
        index_tensors = {si.index_tensor: si.table for si in self._sls_tables.values()}
        for name in self.g.inputs:
            if name in index_tensors:
                total += lookups[index_tensors[name]] * INDEX_BYTES
            else:
                total += self.g.tensor(name).nbytes
        return total

    def _launch_request(self, req: Request, on_complete) -> None:
        """Wire up the request's partition DAG and feed it into the resources.

        Every callback runs at the event time it models: ingress completion
        activates source partitions, each finished transfer decrements its
        destination's pending count, and the request completes when every
        terminal partition has finished.
        """
        rid = req.rid
        lookups = req.lookups

        edges: list[tuple[TransferSpec, str, str]] = []
        for spec in self.transfers.specs:
            src = self._resolve(spec.edge.src, rid)
            dst = self._resolve(spec.edge.dst, rid)
            if src != dst:
                edges.append((spec, src, dst))
        partition_ids = {p for _, s, d in edges for p in (s, d)}
        for token in (t for stage in self.plan.stage_order for t in stage):
            partition_ids.add(self._resolve(token, rid))
        outbound: dict[str, list[tuple[TransferSpec, str]]] = {p: [] for p in partition_ids}
        pending_in: dict[str, int] = {p: 0 for p in partition_ids}
        for spec, src, dst in edges:
            outbound[src].append((spec, dst))
            pending_in[dst] += 1
        terminals = {p for p in partition_ids if not outbound[p]}
        state = {"left": len(terminals), "last": 0.0}

        def partition_finished(pid: str):
            now = self.loop.now
            if pid in terminals:
                state["left"] -= 1
                state["last"] = max(state["last"], now)
                if state["left"] == 0:
                    on_complete(state["last"])
            for spec, dst in outbound[pid]:
                self._start_transfer(spec, pid, dst, lookups,
                                     _edge_done_fn(dst))

        def _edge_done_fn(dst: str):
            def edge_done():
                pending_in[dst] -= 1
                if pending_in[dst] == 0:
                    start_partition(dst)
            return edge_done

        def start_partition(pid: str):
            service = self._service_time(pid, lookups)
            self.partition_res[pid].submit(service, lambda: partition_finished(pid))

        def ingress_done():
            for pid in sorted(partition_ids):
                if pending_in[pid] == 0:
                    start_partition(pid)
            if not partition_ids:
                on_complete(self.loop.now)

        nbytes_in = self._ingress_bytes(lookups)
        self.nic_bytes += nbytes_in

        def arrive():
            self.nic.submit(nbytes_in / self.hw.nic_bw_bytes, ingress_done)

        self.loop.schedule(req.arrival, arrive)

    # -- top level ----------------------------------------------------------

    def run(self) -> SimReport:
        traffic = self.traffic
        lookups = request_lookups(self.g, traffic)
        batch_items = self._batch_items()
        completions: list[tuple[float, float]] = []   # (completion, latency)

        def make_request(rid: int, arrival: float) -> Request:
            return Request(rid=rid, arrival=arrival, batch_items=batch_items,
                           lookups=lookups,
                           deadline=None if traffic.latency_constraint_s is None
                           else arrival + traffic.latency_constraint_s)

        if traffic.kind == "open_loop":
            if traffic.rate <= 0:
                raise SimError("open_loop needs a positive rate")
            rng = np.random.default_rng(traffic.seed)
            t = 0.0
            rid = 0
            while True:
                t += rng.exponential(1.0 / traffic.rate)
                if t > traffic.duration:
                    break
                req = make_request(rid, t)
                self._launch_request(
                    req, lambda done, arr=t: completions.append((done, done - arr)))
                rid += 1
        else:
            issued = {"n": 0}

            def admit(client: int, arrival: float):
                if issued["n"] >= traffic.count:
                    return
                req = make_request(issued["n"], arrival)
                issued["n"] += 1

                def complete(done: float, arr=arrival):
                    completions.append((done, done - arr))
                    self.loop.schedule(done, lambda: admit(client, done))

                self._launch_request(req, complete)

            for c in range(traffic.concurrency):
                admit(c, 0.0)

        self.loop.run()
        return self._build_report(completions, batch_items, traffic)

    def _batch_items(self) -> int:
        for name in self.g.inputs:
            spec = self.g.tensor(name)
            if spec.shape and len(spec.shape) >= 2:
                return spec.shape[0]
        return 1

    def _build_report(self, completions, batch_items, traffic) -> SimReport:
        r = SimReport()
        r.pcie = {k: dict(v) for k, v in self.link_stats.items()}
        r.nic_bytes = self.nic_bytes
        r.edge_traversals = dict(sorted(self.edge_traversals.items()))
        if not completions:
            return r
        completions.sort(key=lambda cl: cl[0])
        n = len(completions)
        r.completed = n
        r.latencies = [lat for _, lat in completions]
        warm = int(WARMUP_FRACTION * n)
        r.warmup_completions = warm
        steady = completions[warm:]
        lats = sorted(lat for _, lat in steady)
        if lats:
            r.latency_p50 = nearest_rank(lats, 50)
            r.latency_p90 = nearest_rank(lats, 90)
            r.latency_p99 = nearest_rank(lats, 99)
        if len(steady) >= 2:
            window = steady[-1][0] - steady[0][0]
            if window > 0:
                r.throughput_rps = (len(steady) - 1) / window
                r.throughput_items = r.throughput_rps * batch_items
        r.span = completions[-1][0]
        if r.span > 0:
            r.per_core_busy = {k: min(1.0, v / r.span)
                               for k, v in sorted(self.core_busy.items())}
        total_kind = sum(self.kind_time.values())
        if total_kind > 0:
            r.op_kind_share = {k: v / total_kind
                               for k, v in sorted(self.kind_time.items())}
        if traffic.latency_constraint_s is not None:
            r.deadline_misses = sum(1 for _, lat in completions
                                    if lat > traffic.latency_constraint_s)
        return r


def _replay_schedule(g: ComputeGraph, placement: PlacementPlan,
                     latencies: Mapping[str, float]) -> float:
    """Replay placed per-core sequences with the given op latencies,
    honoring intra-partition data dependencies."""
    producers = g.producer_map()
    in_partition = set(placement.per_op)
    preds: dict[str, list[str]] = {}
    for oid in in_partition:
        op = g.op(oid)
        preds[oid] = [producers[t].id for t in op.inputs
                      if t in producers and producers[t].id in in_partition]

    core_idx = [0] * len(placement.per_core)
    core_free = [0.0] * len(placement.per_core)
    core_busy = [0.0] * len(placement.per_core)
    finish: dict[str, float] = {}
    remaining = len(in_partition)
    while remaining:
        progressed = False
        for c, seq in enumerate(placement.per_core):
            while core_idx[c] < len(seq):
                oid = seq[core_idx[c]]
                if any(p not in finish for p in preds[oid]):
                    break
                ready = max((finish[p] for p in preds[oid]), default=0.0)
                start = max(core_free[c], ready)
                end = start + latencies[oid]
                core_free[c] = end
                core_busy[c] += latencies[oid]
                finish[oid] = end
                core_idx[c] += 1
                remaining -= 1
                progressed = True
        if not progressed and remaining:
            raise PlanError("placement sequences deadlock")
    return max(finish.values(), default=0.0), core_busy


# ---------------------------------------------------------------------------
# simulate() entry point
# ---------------------------------------------------------------------------

def simulate(g: ComputeGraph, plan: ExecutionPlan, hw: HardwareConfig,
             traffic: TrafficSpec,
             transfer_plan: Optional[TransferPlan] = None) -> SimReport:
    """Run the full pipeline simulation and return the report."""
    return Simulation(g, plan, hw, traffic, transfer_plan).run()
