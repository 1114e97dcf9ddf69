"""Hardware descriptions: devices, memory hierarchies, interconnects, tech nodes.

A device is a compute throughput table plus an ordered memory hierarchy
(fastest level first, exactly one off-chip level at the end). Clusters wire
devices together with an intra-node and an inter-node link. Technology nodes
scale the on-chip parts of a device; off-chip memory and network links are
swapped between named presets instead, because their speeds are set by the
interface standard rather than by the logic process.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

__all__ = [
    "PRECISION_BYTES",
    "MemoryLevel",
    "DeviceSpec",
    "NetworkLink",
    "ClusterSpec",
    "TechNode",
    "TECH_NODES",
    "DesignPoint",
    "CalibrationAnchor",
    "resolve_device",
    "scale_node",
    "derive_from_budget",
]

# Bytes per element for each supported precision key.
PRECISION_BYTES = {
    "fp32": 4,
    "tf32": 4,
    "fp16": 2,
    "bf16": 2,
    "fp8": 1,
    "int8": 1,
}

# Synthesized L1 defaults, as a fraction of the L2 when a config omits L1.
_L1_CAPACITY_RATIO = 0.25
_L1_BANDWIDTH_RATIO = 4.0


@dataclass(frozen=True)
class MemoryLevel:
    """One level of the memory hierarchy."""

    name: str
    capacity_bytes: float
    bandwidth_bytes_per_s: float
    is_offchip: bool = False

    def validate(self) -> None:
        if self.capacity_bytes <= 0:
            raise ValueError(f"memory level {self.name!r}: capacity must be positive")
        if self.bandwidth_bytes_per_s <= 0:
            raise ValueError(f"memory level {self.name!r}: bandwidth must be positive")


@dataclass(frozen=True)
class DeviceSpec:
    """A single accelerator: peak throughput per precision plus its hierarchy.

    ``memory_levels`` is ordered fastest-first; the last level must be the
    (single) off-chip one.
    """

    name: str
    throughput: dict  # precision key -> FLOP/s
    memory_levels: tuple  # tuple[MemoryLevel, ...]

    def validate(self) -> None:
        if not self.throughput:
            raise ValueError(f"device {self.name!r}: empty throughput table")
        for key, value in self.throughput.items():
            if key not in PRECISION_BYTES:
                raise ValueError(f"device {self.name!r}: unknown precision {key!r}")
            if value <= 0:
                raise ValueError(f"device {self.name!r}: non-positive throughput for {key!r}")
        offchip = [m for m in self.memory_levels if m.is_offchip]
        if len(offchip) != 1:
            raise ValueError(f"device {self.name!r}: exactly one off-chip level required")
        if not self.memory_levels[-1].is_offchip:
            raise ValueError(f"device {self.name!r}: off-chip level must come last")
        for level in self.memory_levels:
            level.validate()

    @property
    def dram(self) -> MemoryLevel:
        return self.memory_levels[-1]

    @property
    def onchip_levels(self) -> tuple:
        return tuple(m for m in self.memory_levels if not m.is_offchip)

    def peak_flops(self, precision: str) -> float:
        if precision not in self.throughput:
            raise ValueError(f"device {self.name!r}: no throughput entry for {precision!r}")
        return self.throughput[precision]

    def with_dram(self, dram: MemoryLevel) -> "DeviceSpec":
        levels = self.onchip_levels + (replace(dram, is_offchip=True),)
        return replace(self, memory_levels=levels)


@dataclass(frozen=True)
class NetworkLink:
    """A point-to-point or collective fabric with a flat latency cost."""

    name: str
    bandwidth_bytes_per_s: float
    latency_s: float = 0.0
    topology: str = "ring"  # default collective algorithm on this link

    def validate(self) -> None:
        if self.bandwidth_bytes_per_s <= 0:
            raise ValueError(f"link {self.name!r}: bandwidth must be positive")
        if self.latency_s < 0:
            raise ValueError(f"link {self.name!r}: latency must be non-negative")
        if self.topology not in ("ring", "double_binary_tree"):
            raise ValueError(f"link {self.name!r}: unknown topology {self.topology!r}")


@dataclass(frozen=True)
class ClusterSpec:
    """A homogeneous cluster of devices grouped into nodes."""

    name: str
    device: DeviceSpec
    total_devices: int
    devices_per_node: int
    intra_node: NetworkLink
    inter_node: NetworkLink

    def validate(self) -> None:
        self.device.validate()
        self.intra_node.validate()
        self.inter_node.validate()
        if self.total_devices < 1:
            raise ValueError("cluster: total_devices must be >= 1")
        if self.devices_per_node < 1:
            raise ValueError("cluster: devices_per_node must be >= 1")
        if self.intra_node.bandwidth_bytes_per_s < self.inter_node.bandwidth_bytes_per_s:
            # Legal (some fabrics invert this) but almost always a config typo.
            warnings.warn(
                f"cluster {self.name!r}: intra-node bandwidth below inter-node bandwidth",
                stacklevel=2,
            )

    def link_for_group(self, group_size: int) -> NetworkLink:
        """Pick the link a communicator group of this size runs over."""
        if group_size <= self.devices_per_node:
            return self.intra_node
        return self.inter_node


# --- technology nodes -------------------------------------------------------

# One full node step multiplies logic density by AREA_SCALE and the achievable
# switching budget by POWER_SCALE. These are per-step constants, compounding
# across the ladder below.
NODE_AREA_SCALE = 1.8
NODE_POWER_SCALE = 1.3

TECH_NODES = ("N12", "N10", "N7", "N5", "N3", "N2", "N1")


@dataclass(frozen=True)
class TechNode:
    name: str

    def __post_init__(self):
        if self.name not in TECH_NODES:
            raise ValueError(f"unknown tech node {self.name!r}; expected one of {TECH_NODES}")

    @property
    def index(self) -> int:
        return TECH_NODES.index(self.name)

    def steps_from(self, other: "TechNode") -> int:
        """Signed number of shrink steps from `other` to this node."""
        return self.index - other.index


def scale_node(device: DeviceSpec, from_node: TechNode, to_node: TechNode) -> DeviceSpec:
    """Project a device across tech nodes.

    Compute throughput and every on-chip level (capacity and bandwidth) scale
    with logic density; the off-chip level is untouched because DRAM interface
    speed is set by the memory standard, not the logic process. Scaling is
    multiplicative and invertible: going back the same number of steps returns
    the original values.
    """
    steps = to_node.steps_from(from_node)
    if steps == 0:
        return device
    factor = NODE_AREA_SCALE**steps
    throughput = {k: v * factor for k, v in device.throughput.items()}
    levels = []
    for level in device.memory_levels:
        if level.is_offchip:
            levels.append(level)
        else:
            levels.append(
                replace(
                    level,
                    capacity_bytes=level.capacity_bytes * factor,
                    bandwidth_bytes_per_s=level.bandwidth_bytes_per_s * factor,
                )
            )
    return replace(
        device,
        name=f"{device.name}@{to_node.name}",
        throughput=throughput,
        memory_levels=tuple(levels),
    )


# --- design points and budget derivation ------------------------------------

DESIGN_COMPONENTS = ("compute", "l2_cache", "dram_interface", "network_interface")


@dataclass(frozen=True)
class DesignPoint:
    """Allocation of a die budget across the four modeled components.

    Both maps assign a fraction of the area and power budgets to each
    component in DESIGN_COMPONENTS; each map must sum to 1.
    """

    area_fractions: dict
    power_fractions: dict
    node: TechNode = field(default_factory=lambda: TechNode("N7"))

    def validate(self) -> None:
        for label, fractions in (("area", self.area_fractions), ("power", self.power_fractions)):
            if set(fractions) != set(DESIGN_COMPONENTS):
                raise ValueError(f"{label} fractions must cover exactly {DESIGN_COMPONENTS}")
            total = sum(fractions.values())
            if abs(total - 1.0) > 1e-9:
                raise ValueError(f"{label} fractions sum to {total}, expected 1")
            for name, value in fractions.items():
                if value < 0:
                    raise ValueError(f"{label} fraction for {name} is negative")


@dataclass(frozen=True)
class CalibrationAnchor:
    """A real device pinned to a known budget split.

    The linear budget model below is anchored here: feeding the anchor's own
    design point and budgets back through derive_from_budget reproduces the
    anchor device exactly.
    """

    device: DeviceSpec
    point: DesignPoint
    area_mm2: float
    power_w: float

    def validate(self) -> None:
        self.device.validate()
        self.point.validate()
        if self.area_mm2 <= 0 or self.power_w <= 0:
            raise ValueError("calibration budgets must be positive")
        for name in DESIGN_COMPONENTS:
            if self.point.area_fractions[name] <= 0 or self.point.power_fractions[name] <= 0:
                raise ValueError(f"calibration fraction for {name} must be positive")


def derive_from_budget(
    point: DesignPoint,
    area_mm2: float,
    power_w: float,
    calibration: CalibrationAnchor,
) -> DeviceSpec:
    """Turn a budget split into a concrete device.

    Each derived quantity is linear in its allocated budget share and clipped
    by the smaller of the area-limited and power-limited values. Compute and
    the on-chip cache additionally ride the logic-density (area side) and
    switching-efficiency (power side) scaling of the target node relative to
    the calibration node. The DRAM and network interfaces do not: their speeds
    per unit area/power are set by the interface technology, so node shrinks
    buy them nothing, and swapping interface presets is the only way to move
    them beyond budget reallocation.
    """
    point.validate()
    calibration.validate()
    if area_mm2 <= 0 or power_w <= 0:
        raise ValueError("budgets must be positive")

    steps = point.node.steps_from(calibration.point.node)
    density = NODE_AREA_SCALE**steps
    efficiency = NODE_POWER_SCALE**steps

    def limited(component: str, node_scaled: bool) -> float:
        area_ratio = (point.area_fractions[component] * area_mm2) / (
            calibration.point.area_fractions[component] * calibration.area_mm2
        )
        power_ratio = (point.power_fractions[component] * power_w) / (
            calibration.point.power_fractions[component] * calibration.power_w
        )
        if node_scaled:
            area_ratio *= density
            power_ratio *= efficiency
        return min(area_ratio, power_ratio)

    compute_scale = limited("compute", node_scaled=True)
    l2_scale = limited("l2_cache", node_scaled=True)
    dram_scale = limited("dram_interface", node_scaled=False)
    net_scale = limited("network_interface", node_scaled=False)
    if compute_scale <= 0 or l2_scale <= 0 or dram_scale <= 0 or net_scale <= 0:
        raise ValueError("design point starves a component (zero budget share)")

    base = calibration.device
    throughput = {k: v * compute_scale for k, v in base.throughput.items()}
    levels = []
    for level in base.memory_levels:
        if level.is_offchip:
            levels.append(replace(level, bandwidth_bytes_per_s=level.bandwidth_bytes_per_s * dram_scale))
        else:
            levels.append(
                replace(
                    level,
                    capacity_bytes=level.capacity_bytes * l2_scale,
                    bandwidth_bytes_per_s=level.bandwidth_bytes_per_s * l2_scale,
                )
            )
    derived = replace(
        base,
        name=f"{base.name}-derived@{point.node.name}",
        throughput=throughput,
        memory_levels=tuple(levels),
    )
    # Stash the network scale for the caller (cluster assembly) without
    # widening the DeviceSpec contract.
    object.__setattr__(derived, "_network_scale", net_scale)
    return derived


def network_scale_of(device: DeviceSpec) -> float:
    """Network-interface scale attached by derive_from_budget (1.0 otherwise)."""
    return getattr(device, "_network_scale", 1.0)


def resolve_device(record: dict) -> DeviceSpec:
    """Build a validated DeviceSpec from a plain config record.

    The record carries `name`, a `throughput` map (precision -> FLOP/s) and a
    `memory` list of level records ordered fastest-first. A missing L1 is
    synthesized from the L2 (capacity 0.25x, bandwidth 4x) so the hierarchy
    always has at least two on-chip levels above DRAM.
    """
    try:
        name = record["name"]
        # float() also rescues YAML 1.1 exponents like 312.0e12 parsed as str
        throughput = {k: float(v) for k, v in record["throughput"].items()}
        memory = list(record["memory"])
    except (KeyError, TypeError) as exc:
        raise ValueError(f"device record missing required field: {exc}") from exc

    levels = [
        MemoryLevel(
            name=m["name"],
            capacity_bytes=float(m["capacity_bytes"]),
            bandwidth_bytes_per_s=float(m["bandwidth_bytes_per_s"]),
            is_offchip=bool(m.get("is_offchip", False)),
        )
        for m in memory
    ]
    names = {m.name.lower() for m in levels}
    if "l1" not in names:
        l2 = next((m for m in levels if m.name.lower() == "l2"), None)
        if l2 is not None:
            levels.insert(
                0,
                MemoryLevel(
                    name="L1",
                    capacity_bytes=l2.capacity_bytes * _L1_CAPACITY_RATIO,
                    bandwidth_bytes_per_s=l2.bandwidth_bytes_per_s * _L1_BANDWIDTH_RATIO,
                ),
            )
    device = DeviceSpec(name=name, throughput=throughput, memory_levels=tuple(levels))
    device.validate()
    return device


def device_to_record(device: DeviceSpec) -> dict:
    """Inverse of resolve_device (modulo the synthesized L1)."""
    return {
        "name": device.name,
        "throughput": dict(device.throughput),
        "memory": [
            {
                "name": m.name,
                "capacity_bytes": m.capacity_bytes,
                "bandwidth_bytes_per_s": m.bandwidth_bytes_per_s,
                "is_offchip": m.is_offchip,
            }
            for m in device.memory_levels
        ],
    }
