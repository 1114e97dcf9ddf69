"""Graph sharding and pipeline schedule accounting."""

import math

import pytest

from perfcast.arch import PRECISION_BYTES
from perfcast.parallelism import (
    ParallelismConfig,
    grad_sync_op,
    inflight_activation_multiplier,
    pipeline_p2p_op,
    pipeline_time,
    shard_comm,
    shard_graph,
    shard_kernels,
)
from perfcast.workload import (
    build_inference_graph,
    build_training_layer,
    gemm_flops_of,
    parameter_count,
)


def by_name(nodes, name):
    return next(n for n in nodes if n.name == name)


def test_config_devices_and_validate():
    par = ParallelismConfig(dp=4, tp=2, pp=8)
    assert par.devices == 64
    par.validate(total_devices=64)
    with pytest.raises(ValueError):
        par.validate(total_devices=128)
    with pytest.raises(ValueError):
        ParallelismConfig(tp=4, sp=2).validate()
    with pytest.raises(ValueError):
        ParallelismConfig(schedule="zigzag").validate()
    with pytest.raises(ValueError):
        ParallelismConfig(recompute="most").validate()
    with pytest.raises(ValueError):
        ParallelismConfig(schedule="interleaved_1f1b", interleave=1).validate()
    with pytest.raises(ValueError):
        ParallelismConfig(dp=0).validate()
    ParallelismConfig(tp=4, sp=4, schedule="gpipe", recompute="full").validate()


def test_shard_column_and_row_gemms(gpt_7b):
    par = ParallelismConfig(tp=4)
    work = build_training_layer(gpt_7b, batch=1, seq=2048)
    sharded = shard_kernels(work.forward, par, gpt_7b)
    assert by_name(sharded, "qkv").n == 3 * gpt_7b.hidden // 4
    assert by_name(sharded, "qkv").k == gpt_7b.hidden
    assert by_name(sharded, "attn_out").k == gpt_7b.hidden // 4
    assert by_name(sharded, "mlp1").n == gpt_7b.ffn_hidden // 4
    assert by_name(sharded, "mlp2").k == gpt_7b.ffn_hidden // 4
    # m extents and unsharded dims stay put
    assert by_name(sharded, "mlp1").m == 2048


def test_shard_heads_by_count(llama2_13b):
    par = ParallelismConfig(tp=8)
    work = build_training_layer(llama2_13b, batch=2, seq=512)
    score = by_name(shard_kernels(work.forward, par, llama2_13b), "attn_score")
    # 40 heads over 8 ranks: 5 per-head launches each, batch fusion intact
    assert (score.count, score.fused) == (5, 2)


def test_shard_heads_by_fused_multiplicity(llama2_13b):
    par = ParallelismConfig(tp=8)
    graph = build_inference_graph(llama2_13b, batch=2, prompt_len=64, generate_len=4)
    decode = graph.decode_layer(0)
    score = by_name(shard_kernels(decode.forward, par, llama2_13b), "attn_score")
    # decode fuses all heads into one launch, so the fusion factor splits
    assert (score.count, score.fused) == (1, 40 * 2 // 8)


def test_shard_elementwise_bytes(gpt_7b):
    par = ParallelismConfig(tp=4, sp=4)
    work = build_training_layer(gpt_7b, batch=1, seq=2048)
    sharded = shard_kernels(work.forward, par, gpt_7b)
    assert by_name(sharded, "softmax").bytes == by_name(work.forward, "softmax").bytes / 4
    assert by_name(sharded, "ln1").bytes == by_name(work.forward, "ln1").bytes / 4
    # without sp the norm tensors are replicated
    tp_only = shard_kernels(work.forward, ParallelismConfig(tp=4), gpt_7b)
    assert by_name(tp_only, "ln1").bytes == by_name(work.forward, "ln1").bytes


def test_shard_divisibility_errors(gpt_7b):
    work = build_training_layer(gpt_7b, batch=1, seq=128)
    with pytest.raises(ValueError):
        shard_kernels(work.forward, ParallelismConfig(tp=3), gpt_7b)


def test_gemm_flops_conserved_under_tp(gpt_7b):
    work = build_training_layer(gpt_7b, batch=2, seq=1024)
    base = gemm_flops_of(work.forward)
    for tp in (2, 4, 8):
        sharded = shard_kernels(work.forward, ParallelismConfig(tp=tp), gpt_7b)
        assert gemm_flops_of(sharded) * tp == pytest.approx(base, rel=1e-12)


def test_shard_comm_sp_swaps_collectives(gpt_7b):
    work = build_training_layer(gpt_7b, batch=1, seq=512)
    plain = shard_comm(work.fwd_comm, ParallelismConfig(tp=4))
    assert [op.kind for op in plain] == ["all_reduce", "all_reduce"]
    swapped = shard_comm(work.fwd_comm, ParallelismConfig(tp=4, sp=4))
    assert [op.kind for op in swapped] == ["reduce_scatter", "all_gather"] * 2
    for op in swapped:
        assert op.volume_bytes == work.fwd_comm[0].volume_bytes
    assert shard_comm(work.fwd_comm, ParallelismConfig(tp=1)) == []


def test_shard_graph_covers_all_lists(gpt_7b):
    par = ParallelismConfig(tp=2, sp=2, recompute="full")
    work = build_training_layer(gpt_7b, 1, 512, recompute="full")
    sharded = shard_graph(work, par, gpt_7b)
    assert len(sharded.forward) == len(work.forward)
    assert len(sharded.backward) == len(work.backward)
    assert len(sharded.recompute) == len(work.recompute)
    assert gemm_flops_of(sharded.recompute) == gemm_flops_of(sharded.forward)


def test_pipeline_bubble_oracle():
    par = ParallelismConfig(pp=8)
    steady, bubble = pipeline_time(0.01, par, microbatches=64)
    assert steady == pytest.approx(0.64, rel=1e-12)
    assert bubble == pytest.approx(0.07, rel=1e-12)
    assert bubble / steady == pytest.approx(7 / 64, rel=1e-12)


def test_pipeline_no_bubble_without_pp():
    steady, bubble = pipeline_time(0.02, ParallelismConfig(pp=1), 16)
    assert (steady, bubble) == (pytest.approx(0.32), 0.0)


def test_interleaving_divides_bubble():
    base = ParallelismConfig(pp=8)
    inter = ParallelismConfig(pp=8, schedule="interleaved_1f1b", interleave=4)
    _, b0 = pipeline_time(0.01, base, 32)
    _, b1 = pipeline_time(0.01, inter, 32)
    assert b1 == pytest.approx(b0 / 4, rel=1e-12)


def test_bubble_fraction_shrinks_with_microbatches():
    par = ParallelismConfig(pp=8)
    fractions = []
    for m in (8, 16, 32, 64, 128):
        steady, bubble = pipeline_time(0.01, par, m)
        fractions.append(bubble / (steady + bubble))
    assert fractions == sorted(fractions, reverse=True)


def test_pipeline_time_validation():
    with pytest.raises(ValueError):
        pipeline_time(-1.0, ParallelismConfig(), 4)
    with pytest.raises(ValueError):
        pipeline_time(1.0, ParallelismConfig(), 0)


def test_inflight_multipliers():
    assert inflight_activation_multiplier(ParallelismConfig(pp=1, schedule="gpipe"), 64) == 1
    assert inflight_activation_multiplier(ParallelismConfig(pp=8, schedule="gpipe"), 64) == 64
    assert inflight_activation_multiplier(ParallelismConfig(pp=8), 64) == 8
    assert inflight_activation_multiplier(ParallelismConfig(pp=8), 4) == 4
    got = inflight_activation_multiplier(
        ParallelismConfig(pp=8, schedule="interleaved_1f1b", interleave=4), 64
    )
    assert got == math.ceil(8 * (1 + 3 / 4)) == 14


def test_grad_sync_volume(gpt_7b):
    par = ParallelismConfig(dp=4, tp=2, pp=4)
    op = grad_sync_op(gpt_7b, par)
    assert op.group == "dp" and op.kind == "all_reduce"
    assert op.volume_bytes == parameter_count(gpt_7b) * 2 / 8


def test_pipeline_p2p_volume(gpt_7b):
    par = ParallelismConfig(pp=4, microbatch_size=2)
    op = pipeline_p2p_op(gpt_7b, par, seq=1024)
    assert op.group == "pp" and op.kind == "p2p"
    assert op.volume_bytes == 2 * 1024 * gpt_7b.hidden * PRECISION_BYTES["fp16"]
    sp = pipeline_p2p_op(gpt_7b, ParallelismConfig(pp=4, tp=4, sp=4, microbatch_size=2), seq=1024)
    assert sp.volume_bytes == op.volume_bytes / 4
