"""Closed-form costs for collectives and point-to-point transfers.

Ring and double-binary-tree all-reduce share the bandwidth-optimal volume
term 2K(N-1)/(N*BW); they differ in how many latency hops the critical path
crosses. All-gather and reduce-scatter are each one stage of the two-stage
all-reduce and cost half of it. Training collectives default to ring,
inference to tree: tiny decode messages live or die on the latency term.
"""

from __future__ import annotations

import math

from .arch import ClusterSpec, NetworkLink

__all__ = [
    "ring_allreduce",
    "tree_allreduce",
    "allreduce_time",
    "price_comm_op",
]


def ring_allreduce(volume_bytes: float, group_size: int, link: NetworkLink, utilization: float = 1.0) -> float:
    if group_size <= 1:
        return 0.0
    # K=0 still pays the latency hops; keeps the cost exactly linear in K
    bw = link.bandwidth_bytes_per_s * utilization
    n = group_size
    return 2.0 * volume_bytes * (n - 1) / (n * bw) + 2.0 * link.latency_s * (n - 1)


def tree_allreduce(volume_bytes: float, group_size: int, link: NetworkLink, utilization: float = 1.0) -> float:
    if group_size <= 1:
        return 0.0
    bw = link.bandwidth_bytes_per_s * utilization
    n = group_size
    return 2.0 * volume_bytes * (n - 1) / (n * bw) + 2.0 * link.latency_s * math.log2(n)


def allreduce_time(
    volume_bytes: float,
    group_size: int,
    link: NetworkLink,
    algorithm: str = "ring",
    utilization: float = 1.0,
) -> float:
    if algorithm == "ring":
        return ring_allreduce(volume_bytes, group_size, link, utilization)
    if algorithm in ("tree", "double_binary_tree"):
        return tree_allreduce(volume_bytes, group_size, link, utilization)
    raise ValueError(f"unknown collective algorithm {algorithm!r}")


def p2p_time(volume_bytes: float, link: NetworkLink, utilization: float = 1.0) -> float:
    if volume_bytes <= 0:
        return 0.0
    return volume_bytes / (link.bandwidth_bytes_per_s * utilization) + link.latency_s


def price_comm_op(
    op,
    group_size: int,
    cluster: ClusterSpec,
    algorithm: str = "ring",
    utilization: float = 1.0,
) -> float:
    """Price one workload CommOp on the link its group runs over.

    TP groups stay inside a node; DP and PP groups cross nodes. A half
    all-reduce prices the one-stage collectives.
    """
    if group_size <= 1 and op.kind != "p2p":
        return 0.0
    link = cluster.intra_node if op.group == "tp" else cluster.inter_node
    if op.group == "tp" and group_size > cluster.devices_per_node:
        link = cluster.inter_node
    if op.kind == "all_reduce":
        t = allreduce_time(op.volume_bytes, group_size, link, algorithm, utilization)
    elif op.kind in ("reduce_scatter", "all_gather"):
        t = 0.5 * allreduce_time(op.volume_bytes, group_size, link, algorithm, utilization)
    elif op.kind == "p2p":
        t = p2p_time(op.volume_bytes, link, utilization)
    else:
        raise ValueError(f"unknown comm op kind {op.kind!r}")
    return t * op.count
