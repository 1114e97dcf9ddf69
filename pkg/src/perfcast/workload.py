"""Transformer workload description: kernel graphs and activation accounting.

The builders in this module emit *unsharded* per-layer kernel lists annotated
with how tensor/sequence parallelism splits them; applying a parallelism
config to a graph lives in perfcast.parallelism. Every priced operation is a
KernelNode: a GEMM (possibly many small ones fused into one launch) or an
elementwise pass over a known byte volume.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .arch import PRECISION_BYTES

__all__ = [
    "ModelConfig",
    "KernelNode",
    "CommOp",
    "LayerWork",
    "InferenceWork",
    "ActivationProfile",
    "parameter_count",
    "build_training_layer",
    "build_embedding_work",
    "build_logits_work",
    "build_inference_graph",
    "activation_profile",
]


@dataclass(frozen=True)
class ModelConfig:
    """Decoder-only transformer dimensions."""

    name: str
    layers: int
    hidden: int
    heads: int
    ffn_hidden: int
    vocab: int
    seq_len: int

    @property
    def head_dim(self) -> int:
        return self.hidden // self.heads

    def validate(self) -> None:
        for fname in ("layers", "hidden", "heads", "ffn_hidden", "vocab", "seq_len"):
            if getattr(self, fname) < 1:
                raise ValueError(f"model {self.name!r}: {fname} must be >= 1")
        if self.hidden % self.heads != 0:
            raise ValueError(f"model {self.name!r}: hidden must be divisible by heads")

    @classmethod
    def from_record(cls, name: str, record: dict) -> "ModelConfig":
        model = cls(
            name=name,
            layers=int(record["layers"]),
            hidden=int(record["hidden"]),
            heads=int(record["heads"]),
            ffn_hidden=int(record.get("ffn_hidden", 4 * int(record["hidden"]))),
            vocab=int(record["vocab"]),
            seq_len=int(record["seq_len"]),
        )
        model.validate()
        return model


def parameter_count(model: ModelConfig) -> int:
    """Total parameters: per-layer GEMM weights, biases, norms, embeddings."""
    h, f = model.hidden, model.ffn_hidden
    per_layer = 4 * h * h + 2 * h * f  # qkv + out + two mlp matrices
    per_layer += 9 * h + f  # biases and the two layernorm weight/bias pairs
    return model.layers * per_layer + model.vocab * h + model.seq_len * h


# Shard annotations: which dimension tensor parallelism divides.
#   "m" / "n" / "k"  - that GEMM dimension is split across tp ranks
#   "heads"          - the per-head launch count is split across tp ranks
#   "tp_bytes"       - elementwise volume is split across tp ranks
#   "sp_bytes"       - elementwise volume is split across sp ranks
SHARD_AXES = (None, "m", "n", "k", "heads", "tp_bytes", "sp_bytes")


@dataclass(frozen=True)
class KernelNode:
    """One priced kernel launch group.

    `count` separate launches, each fusing `fused` instances of the base
    shape. Traffic and flops scale with count*fused; per-launch overhead is
    charged `count` times.
    """

    name: str
    kind: str  # "gemm" or "elementwise"
    m: int = 0
    n: int = 0
    k: int = 0
    bytes: float = 0.0
    count: int = 1
    fused: int = 1
    precision: str = "fp16"
    shard: str = None

    def __post_init__(self):
        if self.kind not in ("gemm", "elementwise"):
            raise ValueError(f"kernel {self.name!r}: unknown kind {self.kind!r}")
        if self.shard not in SHARD_AXES:
            raise ValueError(f"kernel {self.name!r}: unknown shard axis {self.shard!r}")
        if self.kind == "gemm" and min(self.m, self.n, self.k) < 1:
            raise ValueError(f"kernel {self.name!r}: gemm dims must be >= 1")
        if self.count < 1 or self.fused < 1:
            raise ValueError(f"kernel {self.name!r}: count and fused must be >= 1")

    @property
    def flops(self) -> float:
        if self.kind != "gemm":
            return 0.0
        return 2.0 * self.m * self.n * self.k * self.count * self.fused


@dataclass(frozen=True)
class CommOp:
    """A collective or point-to-point transfer to price on a link."""

    name: str
    kind: str  # all_reduce | reduce_scatter | all_gather | p2p
    volume_bytes: float
    group: str  # tp | dp | pp
    count: int = 1

    def __post_init__(self):
        if self.kind not in ("all_reduce", "reduce_scatter", "all_gather", "p2p"):
            raise ValueError(f"comm op {self.name!r}: unknown kind {self.kind!r}")
        if self.volume_bytes < 0:
            raise ValueError(f"comm op {self.name!r}: negative volume")


@dataclass
class LayerWork:
    """Kernels and communication for one transformer layer (or stage extra)."""

    forward: list = field(default_factory=list)
    backward: list = field(default_factory=list)
    recompute: list = field(default_factory=list)
    fwd_comm: list = field(default_factory=list)
    bwd_comm: list = field(default_factory=list)
    recompute_comm: list = field(default_factory=list)


_DGRAD_SHARD = {None: None, "n": "k", "k": "n", "heads": "heads"}
_WGRAD_SHARD = {None: None, "n": "n", "k": "m", "heads": "heads"}


def _backward_of_gemm(node: KernelNode) -> list:
    """Two backward GEMMs per forward GEMM: input grad and weight grad."""
    dgrad = replace(
        node,
        name=f"{node.name}_dgrad",
        m=node.m,
        n=node.k,
        k=node.n,
        shard=_DGRAD_SHARD[node.shard],
    )
    wgrad = replace(
        node,
        name=f"{node.name}_wgrad",
        m=node.k,
        n=node.n,
        k=node.m,
        shard=_WGRAD_SHARD[node.shard],
    )
    return [dgrad, wgrad]


def _backward_of_elementwise(node: KernelNode) -> KernelNode:
    # Backward of a pointwise op touches the same volume it produced.
    return replace(node, name=f"{node.name}_bwd")


def build_training_layer(
    model: ModelConfig,
    batch: int,
    seq: int,
    precision: str = "fp16",
    recompute: str = "none",
    training: bool = True,
) -> LayerWork:
    """Kernel graph for one transformer layer.

    With training=False the dropout passes disappear and no backward or
    recompute lists are produced (used for the inference prefill).
    recompute is one of none | selective | full.
    """
    if recompute not in ("none", "selective", "full"):
        raise ValueError(f"unknown recompute mode {recompute!r}")
    p = PRECISION_BYTES[precision]
    b, s, h, a, f, d = batch, seq, model.hidden, model.heads, model.ffn_hidden, model.head_dim
    bs = b * s

    gemm = lambda name, m, n, k, shard, count=1, fused=1: KernelNode(
        name=name, kind="gemm", m=m, n=n, k=k, shard=shard,
        count=count, fused=fused, precision=precision,
    )
    elem = lambda name, nbytes, shard: KernelNode(
        name=name, kind="elementwise", bytes=float(nbytes), shard=shard, precision=precision,
    )

    sbh = bs * h  # elements
    score_elems = b * a * s * s

    fwd = [
        elem("ln1", 2 * sbh * p, "sp_bytes"),
        gemm("qkv", bs, 3 * h, h, "n"),
        # one launch per head, the batch fused into it
        gemm("attn_score", s, s, d, "heads", count=a, fused=b),
        elem("softmax", 2 * score_elems * p, "tp_bytes"),
    ]
    if training:
        # dropout reads+writes activations plus a one-byte mask per element
        fwd.append(elem("attn_dropout", 2 * score_elems * p + score_elems, "tp_bytes"))
    fwd += [
        gemm("attn_context", s, d, s, "heads", count=a, fused=b),
        gemm("attn_out", bs, h, h, "k"),
    ]
    if training:
        fwd.append(elem("out_dropout", 2 * sbh * p + sbh, "sp_bytes"))
    fwd += [
        elem("ln2", 2 * sbh * p, "sp_bytes"),
        gemm("mlp1", bs, f, h, "n"),
        elem("gelu", 2 * bs * f * p, "tp_bytes"),
        gemm("mlp2", bs, h, f, "k"),
    ]
    if training:
        fwd.append(elem("mlp_dropout", 2 * sbh * p + sbh, "sp_bytes"))

    # one collective after each of the two row-parallel GEMMs
    block_vol = float(sbh * p)
    fwd_comm = [
        CommOp("attn_allreduce", "all_reduce", block_vol, "tp"),
        CommOp("mlp_allreduce", "all_reduce", block_vol, "tp"),
    ]

    work = LayerWork(forward=fwd, fwd_comm=fwd_comm)
    if not training:
        return work

    for node in fwd:
        if node.kind == "gemm":
            work.backward.extend(_backward_of_gemm(node))
        else:
            work.backward.append(_backward_of_elementwise(node))
    work.bwd_comm = [
        CommOp("attn_allreduce_bwd", "all_reduce", block_vol, "tp"),
        CommOp("mlp_allreduce_bwd", "all_reduce", block_vol, "tp"),
    ]

    if recompute == "full":
        work.recompute = list(fwd)
        work.recompute_comm = list(fwd_comm)
    elif recompute == "selective":
        selective = {"attn_score", "softmax", "attn_dropout", "attn_context"}
        work.recompute = [n for n in fwd if n.name in selective]
    return work


def build_embedding_work(
    model: ModelConfig, batch: int, seq: int, precision: str = "fp16", training: bool = True
) -> LayerWork:
    """Token embedding lookup on the first pipeline stage: one pass over the
    output activations each way."""
    p = PRECISION_BYTES[precision]
    nbytes = batch * seq * model.hidden * p
    work = LayerWork(forward=[KernelNode("embedding", "elementwise", bytes=float(nbytes), precision=precision)])
    if training:
        work.backward = [KernelNode("embedding_bwd", "elementwise", bytes=float(nbytes), precision=precision)]
    return work


def build_logits_work(
    model: ModelConfig, batch: int, seq: int, precision: str = "fp16", training: bool = True
) -> LayerWork:
    """Vocabulary projection on the last pipeline stage."""
    node = KernelNode(
        "logits", "gemm", m=batch * seq, n=model.vocab, k=model.hidden,
        shard="n", precision=precision,
    )
    work = LayerWork(forward=[node])
    if training:
        work.backward = _backward_of_gemm(node)
    return work


@dataclass
class InferenceWork:
    """Per-request inference kernel graph.

    prefill_* run once over the prompt; decode_step(t) gives the kernels for
    generated token t (0-based), whose attention reads a context of
    prompt_len + t + 1 tokens from the KV-cache. With the cache disabled the
    step instead replays the full forward over the whole context.
    """

    model: ModelConfig
    batch: int
    prompt_len: int
    generate_len: int
    precision: str
    kv_cache_enabled: bool
    prefill_layer: LayerWork
    prefill_logits: LayerWork

    @property
    def decode_steps(self) -> int:
        return self.generate_len

    @property
    def context_len(self) -> int:
        return self.prompt_len + self.generate_len

    def decode_context(self, t: int) -> int:
        if not 0 <= t < self.generate_len:
            raise ValueError(f"decode step {t} outside [0, {self.generate_len})")
        return self.prompt_len + t + 1

    def decode_layer(self, t: int) -> LayerWork:
        ctx = self.decode_context(t)
        if not self.kv_cache_enabled:
            # no cache: replay the whole context through the layer
            return build_training_layer(
                self.model, self.batch, ctx, precision=self.precision, training=False
            )
        p = PRECISION_BYTES[self.precision]
        b = self.batch
        h, a, f, d = self.model.hidden, self.model.heads, self.model.ffn_hidden, self.model.head_dim

        gemm = lambda name, m, n, k, shard, count=1, fused=1: KernelNode(
            name=name, kind="gemm", m=m, n=n, k=k, shard=shard,
            count=count, fused=fused, precision=self.precision,
        )
        elem = lambda name, nbytes, shard: KernelNode(
            name=name, kind="elementwise", bytes=float(nbytes), shard=shard,
            precision=self.precision,
        )
        kernels = [
            elem("ln1", 2 * b * h * p, "sp_bytes"),
            gemm("qkv", b, 3 * h, h, "n"),
            # all heads and the whole batch share one fused launch per step
            gemm("attn_score", 1, ctx, d, "heads", count=1, fused=a * b),
            elem("softmax", 2 * b * a * ctx * p, "tp_bytes"),
            gemm("attn_context", 1, d, ctx, "heads", count=1, fused=a * b),
            gemm("attn_out", b, h, h, "k"),
            elem("ln2", 2 * b * h * p, "sp_bytes"),
            gemm("mlp1", b, f, h, "n"),
            elem("gelu", 2 * b * f * p, "tp_bytes"),
            gemm("mlp2", b, h, f, "k"),
        ]
        vol = float(b * h * p)
        comm = [
            CommOp("attn_allreduce", "all_reduce", vol, "tp"),
            CommOp("mlp_allreduce", "all_reduce", vol, "tp"),
        ]
        return LayerWork(forward=kernels, fwd_comm=comm)

    def decode_logits(self, t: int) -> LayerWork:
        self.decode_context(t)  # range check
        return build_logits_work(self.model, self.batch, 1, precision=self.precision, training=False)


def build_inference_graph(
    model: ModelConfig,
    batch: int,
    prompt_len: int,
    generate_len: int,
    precision: str = "fp16",
    kv_cache_enabled: bool = True,
) -> InferenceWork:
    if prompt_len < 1:
        raise ValueError("prompt_len must be >= 1")
    if generate_len < 0:
        raise ValueError("generate_len must be >= 0")
    if batch < 1:
        raise ValueError("batch must be >= 1")
    return InferenceWork(
        model=model,
        batch=batch,
        prompt_len=prompt_len,
        generate_len=generate_len,
        precision=precision,
        kv_cache_enabled=kv_cache_enabled,
        prefill_layer=build_training_layer(model, batch, prompt_len, precision=precision, training=False),
        prefill_logits=build_logits_work(model, batch, 1, precision=precision, training=False),
    )


def kv_cache_bytes(model: ModelConfig, batch: int, context_len: int, precision: str, tp: int = 1) -> float:
    """Key/value cache for a full request at its final context length."""
    p = PRECISION_BYTES[precision]
    return 2.0 * batch * context_len * p * model.layers * model.hidden / tp


@dataclass(frozen=True)
class ActivationProfile:
    """Per-layer stored-activation sizes under a tp/sp sharding.

    a_inp is the layer-boundary checkpoint; a_tot everything a layer stores
    with no recomputation; a_sm / a_do_mask / a_do_out are the score-shaped
    buffers (softmax output, attention-dropout mask and output) that
    selective recomputation avoids storing.
    """

    a_inp: float
    a_tot: float
    a_sm: float
    a_do_mask: float
    a_do_out: float

    @property
    def selective_saved(self) -> float:
        return self.a_sm + self.a_do_mask + self.a_do_out


def activation_profile(
    model: ModelConfig,
    batch: int,
    seq: int,
    precision: str = "fp16",
    tp: int = 1,
    sp: int = 1,
) -> ActivationProfile:
    """Stored activations per layer for one in-flight microbatch.

    The layer-norm/dropout tensors (the 10 sbh term) are sequence-sharded
    under SP; the block internals (24 sbh) and the score-shaped buffers are
    split by TP. At tp = sp = 1 this is the standard
    sbh (34 + 5 a s / h) (precision / 2) accounting.
    """
    p = PRECISION_BYTES[precision]
    b, s, h, a = batch, seq, model.hidden, model.heads
    sbh = s * b * h
    score = b * a * s * s
    a_tot = sbh * p / 2.0 * (10.0 / sp + 24.0 / tp + 5.0 * a * s / (h * tp))
    return ActivationProfile(
        a_inp=float(sbh * p),
        a_tot=float(a_tot),
        a_sm=float(score * p / tp),
        a_do_mask=float(score / tp),
        a_do_out=float(score * p / tp),
    )


def gemm_flops_of(nodes) -> float:
    """Total GEMM FLOPs in a kernel list."""
    return sum(node.flops for node in nodes if node.kind == "gemm")
