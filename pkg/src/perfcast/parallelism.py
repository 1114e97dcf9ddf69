"""Parallelism configuration, graph sharding, and pipeline schedule math.

Sharding follows the Megatron mapping: attention QKV and MLP up-projections
are column-split, their mates row-split, and the per-head attention GEMMs
are distributed whole heads at a time. Each MHA and each MLP block then
needs exactly one all-reduce per pass; sequence parallelism trades every
all-reduce for a reduce-scatter + all-gather pair of the same total volume
and shards the norm/dropout tensors by sp.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .arch import PRECISION_BYTES
from .workload import CommOp, LayerWork, ModelConfig, parameter_count

__all__ = [
    "ParallelismConfig",
    "shard_kernels",
    "shard_comm",
    "shard_graph",
    "pipeline_time",
    "inflight_activation_multiplier",
    "grad_sync_op",
    "pipeline_p2p_op",
]

SCHEDULES = ("gpipe", "pipedream_flush", "interleaved_1f1b")
RECOMPUTE_MODES = ("none", "selective", "full")


@dataclass(frozen=True)
class ParallelismConfig:
    """Degrees and schedule for one training or inference run."""

    dp: int = 1
    tp: int = 1
    pp: int = 1
    sp: int = 1
    microbatch_size: int = 1
    schedule: str = "pipedream_flush"
    recompute: str = "none"
    interleave: int = 1
    n_checkpoints: int = 0  # 0 = pick the optimum

    @property
    def devices(self) -> int:
        return self.dp * self.tp * self.pp

    def validate(self, total_devices: int = None) -> None:
        for fname in ("dp", "tp", "pp", "sp", "microbatch_size", "interleave"):
            if getattr(self, fname) < 1:
                raise ValueError(f"parallelism.{fname} must be >= 1")
        if self.sp not in (1, self.tp):
            raise ValueError("sp must be 1 or equal to tp (sequence parallel rides the tp group)")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"unknown schedule {self.schedule!r}; expected one of {SCHEDULES}")
        if self.recompute not in RECOMPUTE_MODES:
            raise ValueError(f"unknown recompute mode {self.recompute!r}")
        if self.schedule == "interleaved_1f1b" and self.interleave < 2:
            raise ValueError("interleaved_1f1b requires interleave >= 2")
        if self.n_checkpoints < 0:
            raise ValueError("n_checkpoints must be >= 0 (0 = auto)")
        if total_devices is not None and self.devices != total_devices:
            raise ValueError(
                f"dp*tp*pp = {self.devices} does not match total devices {total_devices}"
            )


def _shard_dims(node, tp: int, sp: int):
    """Return the node with its annotated dimension divided by the degree."""
    axis = node.shard
    if axis is None:
        return node
    if axis in ("m", "n", "k"):
        if tp == 1:
            return node
        size = getattr(node, axis)
        if size % tp:
            raise ValueError(f"kernel {node.name!r}: {axis}-extent {size} not divisible by tp={tp}")
        return replace(node, **{axis: size // tp})
    if axis == "heads":
        if tp == 1:
            return node
        # per-head launches split by whole heads; fully fused launches split
        # their fused multiplicity instead
        if node.count > 1:
            if node.count % tp:
                raise ValueError(f"kernel {node.name!r}: {node.count} heads not divisible by tp={tp}")
            return replace(node, count=node.count // tp)
        if node.fused % tp:
            raise ValueError(f"kernel {node.name!r}: fused {node.fused} not divisible by tp={tp}")
        return replace(node, fused=node.fused // tp)
    if axis == "tp_bytes":
        return replace(node, bytes=node.bytes / tp) if tp > 1 else node
    if axis == "sp_bytes":
        return replace(node, bytes=node.bytes / sp) if sp > 1 else node
    return node


def shard_kernels(kernels, par: ParallelismConfig, model: ModelConfig) -> list:
    return [_shard_dims(node, par.tp, par.sp) for node in kernels]


def shard_comm(comm_ops, par: ParallelismConfig) -> list:
    """TP collectives for one pass: plain all-reduce, or RS+AG under SP."""
    if par.tp == 1:
        return []
    out = []
    for op in comm_ops:
        if op.group == "tp" and op.kind == "all_reduce" and par.sp > 1:
            out.append(replace(op, name=f"{op.name}_rs", kind="reduce_scatter"))
            out.append(replace(op, name=f"{op.name}_ag", kind="all_gather"))
        else:
            out.append(op)
    return out


def shard_graph(work: LayerWork, par: ParallelismConfig, model: ModelConfig) -> LayerWork:
    """Apply TP/SP to a layer graph built at degree 1."""
    return LayerWork(
        forward=shard_kernels(work.forward, par, model),
        backward=shard_kernels(work.backward, par, model),
        recompute=shard_kernels(work.recompute, par, model),
        fwd_comm=shard_comm(work.fwd_comm, par),
        bwd_comm=shard_comm(work.bwd_comm, par),
        recompute_comm=shard_comm(work.recompute_comm, par),
    )


def pipeline_time(stage_time: float, par: ParallelismConfig, microbatches: int) -> tuple:
    """(steady_time, bubble_time) for one optimizer step.

    stage_time is the per-microbatch time of the bottleneck stage, forward
    plus backward plus recompute plus its TP collectives.
    """
    if stage_time < 0 or microbatches < 1:
        raise ValueError("stage_time must be >= 0 and microbatches >= 1")
    steady = microbatches * stage_time
    if par.pp == 1:
        return steady, 0.0
    bubble = (par.pp - 1) * stage_time
    if par.schedule == "interleaved_1f1b":
        bubble /= par.interleave
    return steady, bubble


def inflight_activation_multiplier(par: ParallelismConfig, microbatches: int) -> int:
    """How many microbatches' activations coexist at the peak."""
    if par.pp == 1:
        return 1
    if par.schedule == "gpipe":
        return microbatches
    if par.schedule == "pipedream_flush":
        return min(par.pp, microbatches)
    v = par.interleave
    return math.ceil(par.pp * (1.0 + (v - 1.0) / v))


def grad_sync_op(model: ModelConfig, par: ParallelismConfig, precision: str = "fp16") -> CommOp:
    """DP gradient all-reduce: each rank owns 1/(tp*pp) of the parameters."""
    local_bytes = parameter_count(model) * PRECISION_BYTES[precision] / (par.tp * par.pp)
    return CommOp("grad_sync", "all_reduce", float(local_bytes), "dp")


def pipeline_p2p_op(model: ModelConfig, par: ParallelismConfig, seq: int, precision: str = "fp16") -> CommOp:
    """One stage-boundary activation transfer for one microbatch."""
    vol = par.microbatch_size * seq * model.hidden * PRECISION_BYTES[precision]
    if par.sp > 1:
        vol /= par.sp
    return CommOp("pp_boundary", "p2p", float(vol), "pp")
