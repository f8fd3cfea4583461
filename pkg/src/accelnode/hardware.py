"""Node topology and the analytic roofline cost model.

A node is six low-power accelerator cards behind a PCIe switch, hanging off a
host CPU with its own DRAM and a NIC. Cards expose int8 and fp16 peaks, local
SRAM, and LPDDR. Every default the silicon does not pin down (core count,
SRAM size, PCIe generation, per-op efficiency) lives in the config and ships
in ``configs/default_node.json``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Mapping, Optional

from .graph_ir import (
    ComputeGraph, DType, OpKind, OpNode, ROWWISE_ROW_OVERHEAD_BYTES,
    op_cost_stats,
)

GiB = 1024 ** 3
MiB = 1024 ** 2


class HardwareError(Exception):
    pass


@dataclass(frozen=True)
class Card:
    cores: int = 12
    peak_int8_ops: float = 30e12
    peak_fp16_flops: float = 4e12
    sram_bytes: int = 24 * MiB
    sram_bw: float = 400e9
    lpddr_bytes: int = 16 * GiB
    lpddr_bw: float = 50e9
    power_w: float = 13.0

    def __post_init__(self):
        if self.cores < 1:
            raise HardwareError("card needs at least one core")
        if self.peak_int8_ops < self.peak_fp16_flops:
            raise HardwareError("int8 peak must be >= fp16 peak")
        for name in ("peak_int8_ops", "peak_fp16_flops", "sram_bytes", "sram_bw",
                     "lpddr_bytes", "lpddr_bw", "power_w"):
            if getattr(self, name) <= 0:
                raise HardwareError(f"card.{name} must be positive")


@dataclass(frozen=True)
class HostSpec:
    cpu_peak_flops: float = 1e12
    dram_bw: float = 80e9
    dram_bytes: int = 64 * GiB

    def __post_init__(self):
        for name in ("cpu_peak_flops", "dram_bw", "dram_bytes"):
            if getattr(self, name) <= 0:
                raise HardwareError(f"host.{name} must be positive")


_VALID_LANES = (1, 2, 4, 8, 16)


@dataclass(frozen=True)
class LinkSpec:
    lanes: int
    per_lane_bw: float = 0.985e9
    per_transaction_overhead_s: float = 5e-6

    def __post_init__(self):
        if self.lanes not in _VALID_LANES:
            raise HardwareError(f"lane count {self.lanes} not in {_VALID_LANES}")
        if self.per_lane_bw <= 0:
            raise HardwareError("per_lane_bw must be positive")

    @property
    def bandwidth(self) -> float:
        return self.lanes * self.per_lane_bw


@dataclass(frozen=True)
class HardwareConfig:
    cards: tuple[Card, ...] = tuple(Card() for _ in range(6))
    host: HostSpec = HostSpec()
    nic_bw_bits: float = 50e9
    switch_present: bool = True
    switch_power_w: float = 13.0
    host_link: LinkSpec = LinkSpec(lanes=16)
    card_link: LinkSpec = LinkSpec(lanes=4)
    p2p_enabled: bool = False
    # Per-op-kind compute efficiency in (0, 1]; emulates unoptimized kernels.
    efficiency: Mapping[str, float] = field(default_factory=dict)
    op_launch_overhead_s: float = 1e-6

    def __post_init__(self):
        object.__setattr__(self, "cards", tuple(self.cards))
        object.__setattr__(self, "efficiency", dict(self.efficiency))
        if not self.cards:
            raise HardwareError("at least one card")
        if self.nic_bw_bits <= 0:
            raise HardwareError("nic_bw must be positive")
        for k, v in self.efficiency.items():
            if not 0.0 < v <= 1.0:
                raise HardwareError(f"efficiency[{k}] must be in (0, 1]")

    @property
    def nic_bw_bytes(self) -> float:
        return self.nic_bw_bits / 8.0

    def eff(self, kind: OpKind) -> float:
        return float(self.efficiency.get(kind.value, 1.0))


@dataclass(frozen=True)
class HardwareSummary:
    num_cards: int
    card_memory_gb: float
    total_memory_gb: float
    aggregate_int8_tops: float
    aggregate_fp16_tflops: float
    total_power_w: float
    tops_per_watt: float

    def lines(self) -> list[str]:
        return [
            f"cards: {self.num_cards} x {self.card_memory_gb / self.num_cards:.0f} GB "
            f"= {self.card_memory_gb:.0f} GB card memory",
            f"total memory (cards + host): {self.total_memory_gb:.0f} GB",
            f"peak compute: {self.aggregate_int8_tops:.0f} TOPS (int8) / "
            f"{self.aggregate_fp16_tflops:.0f} TFLOPS (fp16)",
            f"power: {self.total_power_w:.0f} W (incl. switch)",
            f"efficiency: {self.tops_per_watt:.2f} TOPS/W",
        ]


def summarize(hw: HardwareConfig) -> HardwareSummary:
    card_mem = sum(c.lpddr_bytes for c in hw.cards)
    tops = sum(c.peak_int8_ops for c in hw.cards) / 1e12
    power = sum(c.power_w for c in hw.cards)
    if hw.switch_present:
        power += hw.switch_power_w
    return HardwareSummary(
        num_cards=len(hw.cards),
        card_memory_gb=card_mem / GiB,
        total_memory_gb=(card_mem + hw.host.dram_bytes) / GiB,
        aggregate_int8_tops=tops,
        aggregate_fp16_tflops=sum(c.peak_fp16_flops for c in hw.cards) / 1e12,
        total_power_w=power,
        tops_per_watt=tops / power,
    )


# ---------------------------------------------------------------------------
# Config file I/O
# ---------------------------------------------------------------------------

def config_to_dict(hw: HardwareConfig) -> dict:
    def link(l: LinkSpec) -> dict:
        return {"lanes": l.lanes, "per_lane_bw": l.per_lane_bw,
                "per_transaction_overhead_s": l.per_transaction_overhead_s}

    return {
        "cards": [{
            "cores": c.cores, "peak_int8_ops": c.peak_int8_ops,
            "peak_fp16_flops": c.peak_fp16_flops, "sram_bytes": c.sram_bytes,
            "sram_bw": c.sram_bw, "lpddr_bytes": c.lpddr_bytes,
            "lpddr_bw": c.lpddr_bw, "power_w": c.power_w,
        } for c in hw.cards],
        "host": {"cpu_peak_flops": hw.host.cpu_peak_flops,
                 "dram_bw": hw.host.dram_bw, "dram_bytes": hw.host.dram_bytes},
        "nic_bw_bits": hw.nic_bw_bits,
        "switch": {"present": hw.switch_present, "power_w": hw.switch_power_w},
        "host_link": link(hw.host_link),
        "card_link": link(hw.card_link),
        "p2p_enabled": hw.p2p_enabled,
        "efficiency": dict(hw.efficiency),
        "op_launch_overhead_s": hw.op_launch_overhead_s,
    }


def config_from_dict(d: Mapping) -> HardwareConfig:
    try:
        cards = tuple(Card(**cd) for cd in d["cards"])
        switch = d.get("switch", {})
        return HardwareConfig(
            cards=cards,
            host=HostSpec(**d.get("host", {})),
            nic_bw_bits=d.get("nic_bw_bits", 50e9),
            switch_present=switch.get("present", True),
            switch_power_w=switch.get("power_w", 13.0),
            host_link=LinkSpec(**d.get("host_link", {"lanes": 16})),
            card_link=LinkSpec(**d.get("card_link", {"lanes": 4})),
            p2p_enabled=d.get("p2p_enabled", False),
            efficiency=d.get("efficiency", {}),
            op_launch_overhead_s=d.get("op_launch_overhead_s", 1e-6),
        )
    except (KeyError, TypeError) as e:
        raise HardwareError(f"bad hardware config: {e}") from e


def load_hw_config(text: str) -> HardwareConfig:
    """Parse and validate a hardware config from its JSON text form."""
    try:
        d = json.loads(text)
    except json.JSONDecodeError as e:
        raise HardwareError(f"unparseable hardware config: {e}") from e
    return config_from_dict(d)


def default_config() -> HardwareConfig:
    text = resources.files("accelnode").joinpath("configs/default_node.json").read_text()
    return load_hw_config(text)


# ---------------------------------------------------------------------------
# Roofline pricing
# ---------------------------------------------------------------------------

_CARD_PEAK = {
    DType.INT8: "peak_int8_ops",
    DType.FP16: "peak_fp16_flops",
    DType.BF16: "peak_fp16_flops",
    # int4 rows are unpacked and accumulated by the fp16 vector pipeline.
    DType.INT4RW: "peak_fp16_flops",
    DType.INT32: "peak_int8_ops",
}


def op_precision(g: ComputeGraph, op: OpNode) -> DType:
    """Compute precision implied by the op's tensors: weight dtype if any,
    else the output dtype."""
    weight_names = g.weight_set()
    for name in op.inputs:
        if name in weight_names:
            return g.tensor(name).dtype
    if op.outputs:
        return g.tensor(op.outputs[0]).dtype
    return DType.FP16


def op_latency(g: ComputeGraph, op: OpNode, hw: HardwareConfig,
               cores_assigned: Optional[int] = None,
               residency: Mapping[str, str] | None = None,
               precision: Optional[DType] = None,
               card: Optional[Card] = None,
               on_host: bool = False) -> float:
    """Roofline latency: max over compute and per-tier-memory terms plus a
    fixed launch overhead. Compute scales with the fraction of cores assigned;
    memory terms do not (bandwidth is shared per card).
    """
    card = card or hw.cards[0]
    stats = op_cost_stats(g, op, residency)
    if precision is None:
        precision = op_precision(g, op)

    if on_host or not op.device_supported:
        peak = hw.host.cpu_peak_flops
        terms = [stats.bytes_moved / hw.host.dram_bw]
    else:
        attr = _CARD_PEAK.get(precision)
        if attr is None:
            raise HardwareError(
                f"no {precision.value} compute peak defined for card ops (op {op.id})")
        cores = card.cores if cores_assigned is None else cores_assigned
        if cores < 1:
            raise HardwareError("cores_assigned must be >= 1")
        peak = getattr(card, attr) * (cores / card.cores)
        tier_bw = {"sram": card.sram_bw, "lpddr": card.lpddr_bw,
                   "host_dram": hw.host.dram_bw}
        terms = []
        for tier, nbytes in stats.bytes_by_tier.items():
            if tier not in tier_bw:
                raise HardwareError(f"unknown memory tier {tier!r}")
            terms.append(nbytes / tier_bw[tier])

    compute = stats.flops / (hw.eff(op.kind) * peak)
    return max([compute, *terms], default=0.0) + hw.op_launch_overhead_s


def transfer_latency(nbytes: float, link: str, hw: HardwareConfig,
                     transaction_count: int = 1) -> float:
    """Interconnect time: per-transaction overhead plus serialized bytes."""
    if nbytes < 0:
        raise HardwareError("negative transfer size")
    if link == "nic":
        return nbytes / hw.nic_bw_bytes
    if link == "host_switch":
        spec = hw.host_link
    elif link == "card_switch":
        spec = hw.card_link
    else:
        raise HardwareError(f"unknown link {link!r}")
    return transaction_count * spec.per_transaction_overhead_s + nbytes / spec.bandwidth


class CostModel:
    """op_latency with bound hardware context; the handle passed to the
    profiler, the list scheduler, and the simulator."""

    def __init__(self, g: ComputeGraph, hw: HardwareConfig,
                 residency: Mapping[str, str] | None = None,
                 card: Optional[Card] = None,
                 cores_assigned: Optional[int] = None):
        self.graph = g
        self.hw = hw
        self.residency = residency
        self.card = card or hw.cards[0]
        self.cores_assigned = cores_assigned

    def latency(self, op: OpNode, cores: Optional[int] = None,
                on_host: bool = False) -> float:
        return op_latency(self.graph, op, self.hw,
                          cores_assigned=cores or self.cores_assigned,
                          residency=self.residency, card=self.card,
                          on_host=on_host)


# ---------------------------------------------------------------------------
# Weight residency planning
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ResidencyPlan:
    tier_of: Mapping[str, str]
    sram_bytes: int
    lpddr_bytes: int

    def tier(self, name: str) -> str:
        return self.tier_of.get(name, "lpddr")


def weight_bytes_at(g: ComputeGraph, name: str,
                    precision_map: Mapping[str, DType] | None = None) -> int:
    spec = g.tensor(name)
    if precision_map and name in precision_map:
        dtype = precision_map[name]
        n = spec.numel * dtype.element_bytes
        if dtype is DType.INT4RW:
            n += spec.shape[0] * ROWWISE_ROW_OVERHEAD_BYTES
        return int(n)
    return spec.nbytes


def plan_residency(g: ComputeGraph, card: Card,
                   precision_map: Mapping[str, DType] | None = None,
                   weight_names=None) -> ResidencyPlan:
    """Greedy SRAM fill by reuse benefit (bytes x consumer count), remainder
    to LPDDR. Deterministic: ties broken by tensor name. `weight_names`
    restricts planning to the subset of weights resident on this card.
    """
    consumers = g.consumer_map()
    entries = []
    for name in (g.weights if weight_names is None else weight_names):
        nbytes = weight_bytes_at(g, name, precision_map)
        accesses = max(1, len(consumers.get(name, ())))
        entries.append((nbytes * accesses, name, nbytes))
    entries.sort(key=lambda e: (-e[0], e[1]))

    tier_of: dict[str, str] = {}
    sram_left = card.sram_bytes
    sram_used = 0
    lpddr_used = 0
    for _, name, nbytes in entries:
        if nbytes <= sram_left:
            tier_of[name] = "sram"
            sram_left -= nbytes
            sram_used += nbytes
        else:
            tier_of[name] = "lpddr"
            lpddr_used += nbytes
    if lpddr_used > card.lpddr_bytes:
        deficit = lpddr_used - card.lpddr_bytes
        raise HardwareError(f"weights exceed LPDDR capacity by {deficit} bytes")
    return ResidencyPlan(tier_of=tier_of, sram_bytes=sram_used, lpddr_bytes=lpddr_used)
