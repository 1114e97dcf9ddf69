"""Per-device memory footprint: static state, activations, KV-cache.

Activation accounting splits stored tensors from transient ones. Stored
activations (checkpoints, or everything when nothing is recomputed) persist
until the matching backward pass and therefore multiply by the number of
in-flight microbatches; the workspace rebuilt while re-running one
checkpointed segment exists only during that segment's backward and is
counted once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .arch import DeviceSpec
from .workload import ActivationProfile, ModelConfig, parameter_count

__all__ = [
    "MemoryFootprint",
    "RecomputePlan",
    "activation_memory",
    "optimal_checkpoints",
    "static_memory",
    "kv_cache_size",
    "fits",
]

OPTIMIZER_BYTES_PER_PARAM = 12  # fp32 master weights + two fp32 moments
PARAM_BYTES = 2  # mixed-precision weights and gradients


@dataclass(frozen=True)
class MemoryFootprint:
    weights: float = 0.0
    gradients: float = 0.0
    optimizer: float = 0.0
    activations: float = 0.0
    kv_cache: float = 0.0

    @property
    def total(self) -> float:
        return self.weights + self.gradients + self.optimizer + self.activations + self.kv_cache

    def as_dict(self) -> dict:
        return {
            "weights": self.weights,
            "gradients": self.gradients,
            "optimizer": self.optimizer,
            "activations": self.activations,
            "kv_cache": self.kv_cache,
            "total": self.total,
        }


@dataclass(frozen=True)
class RecomputePlan:
    mode: str = "none"  # none | selective | full
    n_ckp: int = 1

    def validate(self, layers: int) -> None:
        if self.mode not in ("none", "selective", "full"):
            raise ValueError(f"unknown recompute mode {self.mode!r}")
        if self.mode == "full" and not 1 <= self.n_ckp <= layers:
            raise ValueError(f"n_ckp must be in [1, {layers}], got {self.n_ckp}")


def activation_memory(
    profile: ActivationProfile,
    layers: int,
    plan: RecomputePlan,
    inflight_multiplier: int = 1,
) -> float:
    """Peak activation bytes for the layers of one pipeline stage.

    none:      every layer keeps everything            -> inflight * L * A_tot
    selective: score-shaped buffers recomputed         -> inflight * L * (A_tot - saved)
    full:      only segment checkpoints persist        -> inflight * N_ckp * A_inp
               plus one segment's rebuilt workspace    ->          + L/N_ckp * (A_tot - A_inp)
    """
    plan.validate(layers)
    if inflight_multiplier < 1:
        raise ValueError("inflight_multiplier must be >= 1")
    if plan.mode == "none":
        return inflight_multiplier * layers * profile.a_tot
    if plan.mode == "selective":
        return inflight_multiplier * layers * (profile.a_tot - profile.selective_saved)
    stored = plan.n_ckp * profile.a_inp
    transient = layers / plan.n_ckp * (profile.a_tot - profile.a_inp)
    return inflight_multiplier * stored + transient


def _full_cost(profile: ActivationProfile, layers: int, n_ckp: int, inflight: int) -> float:
    return activation_memory(profile, layers, RecomputePlan("full", n_ckp), inflight)


def optimal_checkpoints(
    layers: int,
    a_inp: float,
    a_tot: float,
    inflight_multiplier: int = 1,
) -> int:
    """Checkpoint count minimizing the full-recompute peak.

    The continuous optimum of I*N*A_inp + L/N*(A_tot - A_inp) sits at
    sqrt(L*(A_tot - A_inp)/(I*A_inp)); evaluate floor and ceil, keep the
    better, clamp to [1, L].
    """
    if a_inp <= 0 or a_tot < a_inp:
        raise ValueError("need a_tot >= a_inp > 0")
    if a_tot == a_inp:
        return 1
    profile = ActivationProfile(a_inp=a_inp, a_tot=a_tot, a_sm=0.0, a_do_mask=0.0, a_do_out=0.0)
    star = math.sqrt(layers * (a_tot - a_inp) / (inflight_multiplier * a_inp))
    candidates = {max(1, min(layers, int(math.floor(star)))), max(1, min(layers, int(math.ceil(star))))}
    return min(candidates, key=lambda n: (_full_cost(profile, layers, n, inflight_multiplier), n))


def static_memory(model: ModelConfig, tp: int = 1, pp: int = 1, optimizer_bytes_per_param: int = OPTIMIZER_BYTES_PER_PARAM) -> dict:
    """Weights, gradients, optimizer state per device.

    TP and PP shard the parameters; DP replicates them (no ZeRO-style
    partitioning).
    """
    p_local = parameter_count(model) / (tp * pp)
    return {
        "weights": p_local * PARAM_BYTES,
        "gradients": p_local * PARAM_BYTES,
        "optimizer": p_local * optimizer_bytes_per_param,
    }


def kv_cache_size(model: ModelConfig, batch: int, context: int, precision_bytes: int, tp: int = 1) -> float:
    """2 (K and V) x batch x context x precision x layers x hidden, tp-sharded."""
    if context < 0:
        raise ValueError("context must be >= 0")
    return 2.0 * batch * context * precision_bytes * model.layers * model.hidden / tp


def fits(footprint: MemoryFootprint, device: DeviceSpec) -> tuple:
    """(fits, headroom_bytes); headroom is negative on overflow."""
    capacity = device.dram.capacity_bytes
    headroom = capacity - footprint.total
    return footprint.total <= capacity, headroom
