"""End-to-end predictors: training step time, inference latency, memory.

A prediction walks the sharded kernel graph, prices every kernel and
collective, and assembles phase totals whose sum is the reported total by
construction. Reports carry a versioned, serialization-stable schema.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

from .arch import PRECISION_BYTES, ClusterSpec
from .comm import price_comm_op
from .kernelperf import UtilizationPolicy, price_kernel
from .memory import (
    MemoryFootprint,
    RecomputePlan,
    activation_memory,
    fits,
    kv_cache_size,
    optimal_checkpoints,
    static_memory,
)
from .parallelism import (
    ParallelismConfig,
    grad_sync_op,
    inflight_activation_multiplier,
    pipeline_p2p_op,
    pipeline_time,
    shard_graph,
)
from .workload import (
    ModelConfig,
    activation_profile,
    build_embedding_work,
    build_inference_graph,
    build_logits_work,
    build_training_layer,
)

__all__ = [
    "SCHEMA_VERSION",
    "MemoryOverflowError",
    "PredictionReport",
    "predict_training_step",
    "predict_inference",
    "predict_memory",
    "bound_breakdown",
]

SCHEMA_VERSION = 1

TRAINING_PHASES = (
    "forward",
    "backward",
    "recompute",
    "tp_comm",
    "pp_comm",
    "dp_comm",
    "bubble",
    "weight_update",
)
INFERENCE_PHASES = ("prefill", "decode", "tp_comm")


class MemoryOverflowError(RuntimeError):
    """Raised when a configuration cannot fit; carries the footprint."""

    def __init__(self, footprint: MemoryFootprint, capacity: float):
        self.footprint = footprint
        self.capacity = capacity
        deficit = footprint.total - capacity
        super().__init__(
            f"memory footprint {footprint.total / 1e9:.2f} GB exceeds device "
            f"capacity {capacity / 1e9:.2f} GB by {deficit / 1e9:.2f} GB"
        )


@dataclass
class PredictionReport:
    kind: str  # "training" | "inference" | "memory"
    total_time: float
    phases: dict
    bound_histogram: dict
    memory: MemoryFootprint
    per_kernel: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def validate(self) -> None:
        phase_sum = sum(self.phases.values())
        if self.total_time > 0 and abs(phase_sum - self.total_time) > 1e-9 * max(self.total_time, 1e-30):
            raise AssertionError(f"phase sum {phase_sum} != total {self.total_time}")

    def as_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": self.kind,
            "total_time_s": self.total_time,
            "phases_s": dict(self.phases),
            "bound_histogram_s": dict(self.bound_histogram),
            "memory_bytes": self.memory.as_dict(),
            "per_kernel": list(self.per_kernel),
            "meta": dict(self.meta),
        }

    def to_json(self, include_kernels: bool = True) -> str:
        payload = self.as_dict()
        if not include_kernels:
            payload.pop("per_kernel")
        return json.dumps(payload, sort_keys=True, indent=2)

    def scalar_fields(self) -> dict:
        """Flat key -> value map used by the CSV emitter."""
        flat = {
            "schema_version": SCHEMA_VERSION,
            "kind": self.kind,
            "total_time_s": self.total_time,
        }
        for name, value in sorted(self.phases.items()):
            flat[f"phase.{name}"] = value
        for name, value in sorted(self.bound_histogram.items()):
            flat[f"bound.{name}"] = value
        for name, value in self.memory.as_dict().items():
            flat[f"memory.{name}"] = value
        for name, value in sorted(self.meta.items()):
            flat[f"meta.{name}"] = value
        return flat

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["field", "value"])
        for key, value in self.scalar_fields().items():
            writer.writerow([key, repr(value) if isinstance(value, float) else value])
        return buf.getvalue()


def _price_list(kernels, device, policy):
    """Price a kernel list; returns (total_time, estimates)."""
    estimates = [price_kernel(node, device, policy) for node in kernels]
    return sum(e.effective_time for e in estimates), estimates


def _comm_time(ops, groups, cluster, algorithm, utilization=1.0):
    total = 0.0
    for op in ops:
        total += price_comm_op(op, groups[op.group], cluster, algorithm, utilization)
    return total


def _histogram(weighted_estimates) -> dict:
    hist = {}
    for weight, est in weighted_estimates:
        hist[est.bound] = hist.get(est.bound, 0.0) + weight * est.effective_time
    return hist


def _kernel_rows(weighted_estimates, phase) -> list:
    rows = []
    for weight, est in weighted_estimates:
        rows.append(
            {
                "phase": phase,
                "name": est.name,
                "bound": est.bound,
                "time_s": weight * est.effective_time,
                "flops": weight * est.flops,
                "dram_bytes": weight * est.dram_traffic_bytes,
            }
        )
    return rows


def _training_footprint(
    model: ModelConfig,
    par: ParallelismConfig,
    seq: int,
    precision: str,
    microbatches: int,
) -> MemoryFootprint:
    layers_per_stage = model.layers // par.pp
    static = static_memory(model, tp=par.tp, pp=par.pp)
    profile = activation_profile(
        model, par.microbatch_size, seq, precision=precision, tp=par.tp, sp=par.sp
    )
    inflight = inflight_activation_multiplier(par, microbatches)
    n_ckp = par.n_checkpoints
    if par.recompute == "full" and n_ckp == 0:
        n_ckp = optimal_checkpoints(layers_per_stage, profile.a_inp, profile.a_tot, inflight)
    plan = RecomputePlan(par.recompute, max(1, n_ckp))
    act = activation_memory(profile, layers_per_stage, plan, inflight)
    return MemoryFootprint(activations=act, **static)


def predict_training_step(
    model: ModelConfig,
    par: ParallelismConfig,
    cluster: ClusterSpec,
    policy: UtilizationPolicy = None,
    global_batch: int = None,
    seq: int = None,
    precision: str = "fp16",
) -> PredictionReport:
    """Time and memory for one optimizer step over the global batch."""
    policy = policy or UtilizationPolicy()
    policy.validate()
    model.validate()
    par.validate(cluster.total_devices)
    seq = seq or model.seq_len
    global_batch = global_batch or par.dp * par.microbatch_size
    if model.layers % par.pp:
        raise ValueError(f"layers {model.layers} not divisible by pp={par.pp}")
    per_rank = par.dp * par.microbatch_size
    if global_batch % per_rank:
        raise ValueError(
            f"global batch {global_batch} not divisible by dp*microbatch_size={per_rank}"
        )
    microbatches = global_batch // per_rank
    layers_per_stage = model.layers // par.pp

    footprint = _training_footprint(model, par, seq, precision, microbatches)
    ok, _ = fits(footprint, cluster.device)
    if not ok:
        raise MemoryOverflowError(footprint, cluster.device.dram.capacity_bytes)

    device = cluster.device
    b = par.microbatch_size
    layer = shard_graph(
        build_training_layer(model, b, seq, precision=precision, recompute=par.recompute),
        par,
        model,
    )
    embed = shard_graph(build_embedding_work(model, b, seq, precision=precision), par, model)
    logits = shard_graph(build_logits_work(model, b, seq, precision=precision), par, model)

    fwd_t, fwd_est = _price_list(layer.forward, device, policy)
    bwd_t, bwd_est = _price_list(layer.backward, device, policy)
    rec_t, rec_est = _price_list(layer.recompute, device, policy)
    embed_fwd_t, embed_fwd_est = _price_list(embed.forward, device, policy)
    embed_bwd_t, embed_bwd_est = _price_list(embed.backward, device, policy)
    logit_fwd_t, logit_fwd_est = _price_list(logits.forward, device, policy)
    logit_bwd_t, logit_bwd_est = _price_list(logits.backward, device, policy)

    # the last stage carries the vocabulary projection and bounds the pipeline
    if par.pp == 1:
        extra_fwd, extra_bwd = embed_fwd_t + logit_fwd_t, embed_bwd_t + logit_bwd_t
        extra_est_fwd = embed_fwd_est + logit_fwd_est
        extra_est_bwd = embed_bwd_est + logit_bwd_est
    elif logit_fwd_t + logit_bwd_t >= embed_fwd_t + embed_bwd_t:
        extra_fwd, extra_bwd = logit_fwd_t, logit_bwd_t
        extra_est_fwd, extra_est_bwd = logit_fwd_est, logit_bwd_est
    else:
        extra_fwd, extra_bwd = embed_fwd_t, embed_bwd_t
        extra_est_fwd, extra_est_bwd = embed_fwd_est, embed_bwd_est

    stage_fwd = layers_per_stage * fwd_t + extra_fwd
    stage_bwd = layers_per_stage * bwd_t + extra_bwd
    stage_rec = layers_per_stage * rec_t

    groups = {"tp": par.tp, "dp": par.dp, "pp": par.pp}
    layer_comm = (
        _comm_time(layer.fwd_comm, groups, cluster, "ring")
        + _comm_time(layer.bwd_comm, groups, cluster, "ring")
        + _comm_time(layer.recompute_comm, groups, cluster, "ring")
    )
    stage_comm = layers_per_stage * layer_comm

    stage_time = stage_fwd + stage_bwd + stage_rec + stage_comm
    steady, bubble = pipeline_time(stage_time, par, microbatches)

    pp_comm = 0.0
    if par.pp > 1:
        p2p = pipeline_p2p_op(model, par, seq, precision)
        # one boundary on the critical path, once forward and once backward,
        # for every microbatch
        pp_comm = 2.0 * microbatches * price_comm_op(p2p, par.pp, cluster, "ring")

    dp_comm = price_comm_op(grad_sync_op(model, par, precision), par.dp, cluster, "ring")

    optimizer_bytes = static_memory(model, tp=par.tp, pp=par.pp)["optimizer"]
    weight_update = optimizer_bytes / device.dram.bandwidth_bytes_per_s

    phases = {
        "forward": microbatches * stage_fwd,
        "backward": microbatches * stage_bwd,
        "recompute": microbatches * stage_rec,
        "tp_comm": microbatches * stage_comm,
        "pp_comm": pp_comm,
        "dp_comm": dp_comm,
        "bubble": bubble,
        "weight_update": weight_update,
    }
    total = sum(phases.values())

    weighted = []
    weighted += [(microbatches * layers_per_stage, e) for e in fwd_est + bwd_est + rec_est]
    weighted += [(microbatches, e) for e in extra_est_fwd + extra_est_bwd]
    report = PredictionReport(
        kind="training",
        total_time=total,
        phases=phases,
        bound_histogram=_histogram(weighted),
        memory=footprint,
        per_kernel=(
            _kernel_rows([(microbatches * layers_per_stage, e) for e in fwd_est], "forward")
            + _kernel_rows([(microbatches, e) for e in extra_est_fwd], "forward")
            + _kernel_rows([(microbatches * layers_per_stage, e) for e in bwd_est], "backward")
            + _kernel_rows([(microbatches, e) for e in extra_est_bwd], "backward")
            + _kernel_rows([(microbatches * layers_per_stage, e) for e in rec_est], "recompute")
        ),
        meta={
            "model": model.name,
            "cluster": cluster.name,
            "devices": cluster.total_devices,
            "global_batch": global_batch,
            "microbatches": microbatches,
            "seq_len": seq,
            "precision": precision,
            "dp": par.dp,
            "tp": par.tp,
            "pp": par.pp,
            "sp": par.sp,
            "schedule": par.schedule,
            "recompute": par.recompute,
        },
    )
    report.validate()
    return report


def predict_inference(
    model: ModelConfig,
    tp: int,
    cluster: ClusterSpec,
    policy: UtilizationPolicy = None,
    batch: int = 1,
    prompt_len: int = 200,
    generate_len: int = 200,
    precision: str = "fp16",
    kv_cache_enabled: bool = True,
) -> PredictionReport:
    """Latency of one batched request: prefill plus token-by-token decode."""
    policy = policy or UtilizationPolicy()
    policy.validate()
    model.validate()
    if tp > cluster.devices_per_node:
        raise ValueError(f"inference tp={tp} must fit in one node ({cluster.devices_per_node} devices)")
    par = ParallelismConfig(tp=tp)
    par.validate()
    device = cluster.device
    p = PRECISION_BYTES[precision]

    graph = build_inference_graph(
        model, batch, prompt_len, generate_len, precision=precision,
        kv_cache_enabled=kv_cache_enabled,
    )
    weights = static_memory(model, tp=tp, pp=1)["weights"]
    kv = kv_cache_size(model, batch, graph.context_len, p, tp=tp) if kv_cache_enabled else 0.0
    footprint = MemoryFootprint(weights=weights, kv_cache=kv)
    ok, _ = fits(footprint, device)
    if not ok:
        raise MemoryOverflowError(footprint, device.dram.capacity_bytes)

    groups = {"tp": tp, "dp": 1, "pp": 1}
    util = policy.network_inference_utilization

    prefill_layer = shard_graph(graph.prefill_layer, par, model)
    prefill_logits = shard_graph(graph.prefill_logits, par, model)
    layer_t, layer_est = _price_list(prefill_layer.forward, device, policy)
    logit_t, logit_est = _price_list(prefill_logits.forward, device, policy)
    prefill_time = model.layers * layer_t + logit_t
    prefill_comm = model.layers * _comm_time(prefill_layer.fwd_comm, groups, cluster, "tree", util)
    prefill_weighted = [(model.layers, e) for e in layer_est] + [(1, e) for e in logit_est]

    decode_time = 0.0
    decode_comm = 0.0
    decode_weighted = []
    for t in range(graph.decode_steps):
        step_layer = shard_graph(graph.decode_layer(t), par, model)
        step_logits = shard_graph(graph.decode_logits(t), par, model)
        lt, lest = _price_list(step_layer.forward, device, policy)
        gt, gest = _price_list(step_logits.forward, device, policy)
        decode_time += model.layers * lt + gt
        decode_comm += model.layers * _comm_time(step_layer.fwd_comm, groups, cluster, "tree", util)
        decode_weighted += [(model.layers, e) for e in lest] + [(1, e) for e in gest]

    phases = {
        "prefill": prefill_time,
        "decode": decode_time,
        "tp_comm": prefill_comm + decode_comm,
    }
    total = sum(phases.values())

    report = PredictionReport(
        kind="inference",
        total_time=total,
        phases=phases,
        bound_histogram=_histogram(prefill_weighted + decode_weighted),
        memory=footprint,
        per_kernel=(
            _kernel_rows(prefill_weighted, "prefill") + _kernel_rows(decode_weighted, "decode")
        ),
        meta={
            "model": model.name,
            "cluster": cluster.name,
            "tp": tp,
            "batch": batch,
            "prompt_len": prompt_len,
            "generate_len": generate_len,
            "precision": precision,
            "kv_cache": kv_cache_enabled,
        },
    )
    report.validate()
    return report


def predict_memory(
    model: ModelConfig,
    par: ParallelismConfig,
    seq: int = None,
    precision: str = "fp16",
    microbatches: int = 1,
) -> MemoryFootprint:
    """Training footprint only, without requiring it to fit anywhere."""
    model.validate()
    par.validate()
    if model.layers % par.pp:
        raise ValueError(f"layers {model.layers} not divisible by pp={par.pp}")
    return _training_footprint(model, par, seq or model.seq_len, precision, microbatches)


def bound_breakdown(report: PredictionReport, scope: str = "per_phase", gemm_only: bool = False) -> dict:
    """Fractions of kernel time per bound type.

    per_phase: one row per phase. per_layer: a single row over every layer
    kernel (stage extras excluded). Fractions in each row sum to 1. With
    gemm_only, elementwise kernels (flops = 0) are left out, matching a
    GEMM-time breakdown.
    """
    if scope not in ("per_phase", "per_layer"):
        raise ValueError(f"unknown scope {scope!r}")
    rows = {}
    for entry in report.per_kernel:
        if gemm_only and entry["flops"] == 0.0:
            continue
        if scope == "per_phase":
            key = entry["phase"]
        else:
            key = "layer"
            if entry["name"] in ("embedding", "embedding_bwd") or entry["name"].startswith("logits"):
                continue
        bucket = rows.setdefault(key, {})
        bucket[entry["bound"]] = bucket.get(entry["bound"], 0.0) + entry["time_s"]
    out = {}
    for key, bucket in rows.items():
        total = sum(bucket.values())
        out[key] = {bound: t / total for bound, t in bucket.items()} if total > 0 else {}
    return out
