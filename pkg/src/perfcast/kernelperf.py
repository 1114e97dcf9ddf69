"""Single-kernel cost model: hierarchical roofline with capacity-aware tiling.

A GEMM is priced as the max of its compute time and, per memory level, the
time to move the traffic a capacity-constrained tiling generates at that
level. Skinny GEMMs (few output rows) take the GEMV path, which derates the
DRAM bandwidth by a measured utilization factor. Elementwise kernels are a
pure DRAM stream. Every GEMM/GEMV launch additionally drags a fixed byte
charge through DRAM to stand in for launch and tail effects; elementwise
kernels, which fuse cheaply, are exempt.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .arch import PRECISION_BYTES, DeviceSpec

__all__ = [
    "UtilizationPolicy",
    "KernelEstimate",
    "min_level_traffic",
    "estimate_gemm",
    "estimate_gemv",
    "estimate_elementwise",
    "price_kernel",
]

_TILE_EDGE_CAP = 1024


@dataclass(frozen=True)
class UtilizationPolicy:
    """Knobs mapping peak hardware numbers to sustained kernel behavior."""

    compute_efficiency: float = 0.85
    gemv_dram_utilization: float = 0.7
    elementwise_dram_utilization: float = 0.8
    network_inference_utilization: float = 0.75
    kernel_overhead_bytes: float = 5.0e6
    gemv_m_threshold: int = 16
    fuse_elementwise: bool = False

    def validate(self) -> None:
        for fname in (
            "compute_efficiency",
            "gemv_dram_utilization",
            "elementwise_dram_utilization",
            "network_inference_utilization",
        ):
            value = getattr(self, fname)
            if not 0.0 < value <= 1.0:
                raise ValueError(f"policy.{fname} must be in (0, 1], got {value}")
        if self.kernel_overhead_bytes < 0:
            raise ValueError("policy.kernel_overhead_bytes must be >= 0")
        if self.gemv_m_threshold < 1:
            raise ValueError("policy.gemv_m_threshold must be >= 1")


@dataclass(frozen=True)
class KernelEstimate:
    """Roofline verdict for one kernel (or one fused launch group)."""

    name: str
    compute_time: float
    memory_time: dict  # level name -> seconds
    effective_time: float
    bound: str  # "compute", "L1", "L2", "DRAM", ...
    flops: float
    dram_traffic_bytes: float


@lru_cache(maxsize=200000)
def _tile_traffic(m: int, n: int, k: int, prec_bytes: int, capacity: float) -> float:
    """Minimum bytes moved at a level with the given tile budget.

    Tile edges are powers of two clamped to the problem dims (cap 1024);
    each tile pass loads the A, B and C tiles once, double-buffered, hence
    the factor 2 in the capacity constraint. Traffic never reports below the
    compulsory minimum of touching each matrix once.
    """
    compulsory = float(m * k + k * n + m * n) * prec_bytes

    def edges(dim):
        # power-of-two tiles up to 1024, plus the whole extent: a level big
        # enough to hold the full operands reports exactly compulsory traffic
        vals = {min(1 << i, dim) for i in range(11)}
        vals.add(dim)
        return np.array(sorted(vals), dtype=np.float64)

    tm = edges(m)[:, None, None]
    tn = edges(n)[None, :, None]
    tk = edges(k)[None, None, :]
    tile_elems = tm * tk + tk * tn + tm * tn
    feasible = 2.0 * tile_elems * prec_bytes <= capacity
    if not feasible.any():
        return float("inf")
    passes = np.ceil(m / tm) * np.ceil(n / tn) * np.ceil(k / tk)
    traffic = passes * tile_elems * prec_bytes
    best = float(traffic[feasible].min())
    return max(best, compulsory)


def min_level_traffic(m: int, n: int, k: int, precision: str, capacity_bytes: float) -> float:
    """Public wrapper over the cached tile search."""
    return _tile_traffic(int(m), int(n), int(k), PRECISION_BYTES[precision], float(capacity_bytes))


def _classify(compute_time: float, memory_time: dict, device: DeviceSpec) -> tuple:
    worst_level, worst = None, 0.0
    for level in device.memory_levels:
        t = memory_time.get(level.name, 0.0)
        if t > worst:
            worst_level, worst = level, t
    effective = max(compute_time, worst)
    if compute_time >= worst or worst_level is None:
        return effective, "compute"
    return effective, "DRAM" if worst_level.is_offchip else worst_level.name


def estimate_gemm(
    m: int,
    n: int,
    k: int,
    precision: str,
    device: DeviceSpec,
    policy: UtilizationPolicy,
    count: int = 1,
    fused: int = 1,
    name: str = "gemm",
) -> KernelEstimate:
    """Price `count` launches of `fused` (m, n, k) GEMMs each.

    The skinny-m case routes through the GEMV DRAM derating automatically.
    """
    if min(m, n, k) < 1:
        raise ValueError(f"gemm dims must be >= 1, got ({m}, {n}, {k})")
    p = PRECISION_BYTES[precision]
    reps = count * fused
    flops = 2.0 * m * n * k * reps
    compute_time = flops / (device.peak_flops(precision) * policy.compute_efficiency)
    is_gemv = m <= policy.gemv_m_threshold

    memory_time = {}
    dram_traffic = 0.0
    for level in device.memory_levels:
        traffic = _tile_traffic(m, n, k, p, level.capacity_bytes) * reps
        utilization = 1.0
        if level.is_offchip:
            traffic += policy.kernel_overhead_bytes * count
            dram_traffic = traffic
            if is_gemv:
                utilization = policy.gemv_dram_utilization
        memory_time[level.name] = traffic / (level.bandwidth_bytes_per_s * utilization)

    effective, bound = _classify(compute_time, memory_time, device)
    return KernelEstimate(
        name=name,
        compute_time=compute_time,
        memory_time=memory_time,
        effective_time=effective,
        bound=bound,
        flops=flops,
        dram_traffic_bytes=dram_traffic,
    )


def estimate_gemv(
    m: int,
    n: int,
    k: int,
    precision: str,
    device: DeviceSpec,
    policy: UtilizationPolicy,
    count: int = 1,
    fused: int = 1,
    name: str = "gemv",
) -> KernelEstimate:
    """GEMV-path pricing; requires m at or below the skinny threshold."""
    if m > policy.gemv_m_threshold:
        raise ValueError(f"gemv path requires m <= {policy.gemv_m_threshold}, got m={m}")
    return estimate_gemm(m, n, k, precision, device, policy, count=count, fused=fused, name=name)


def estimate_elementwise(
    bytes_moved: float,
    device: DeviceSpec,
    policy: UtilizationPolicy,
    count: int = 1,
    name: str = "elementwise",
) -> KernelEstimate:
    """A pure DRAM-streaming pass: zero FLOPs, derated DRAM bandwidth."""
    if bytes_moved <= 0:
        raise ValueError("bytes_moved must be positive")
    total = float(bytes_moved) * count
    if policy.fuse_elementwise:
        # fused producer/consumer chains skip the intermediate round trip
        total *= 0.5
    dram = device.dram
    time = total / (dram.bandwidth_bytes_per_s * policy.elementwise_dram_utilization)
    return KernelEstimate(
        name=name,
        compute_time=0.0,
        memory_time={dram.name: time},
        effective_time=time,
        bound="DRAM",
        flops=0.0,
        dram_traffic_bytes=total,
    )


def price_kernel(node, device: DeviceSpec, policy: UtilizationPolicy) -> KernelEstimate:
    """Dispatch a workload KernelNode to the right estimator."""
    if node.kind == "gemm":
        return estimate_gemm(
            node.m, node.n, node.k, node.precision, device, policy,
            count=node.count, fused=node.fused, name=node.name,
        )
    return estimate_elementwise(node.bytes, device, policy, count=node.count, name=node.name)
