"""Numeric calibration harness: replay every validation fixture and report
relative errors, orderings, and the trend-suite margins. Run from the repo
root with the package installed."""

from __future__ import annotations

import sys
from dataclasses import replace

from perfcast import presets
from perfcast.engine import predict_inference, predict_training_step
from perfcast.kernelperf import UtilizationPolicy
from perfcast.parallelism import ParallelismConfig
from perfcast.workload import ModelConfig


def load_model(name):
    return ModelConfig.from_record(name, presets.get_model_record(name))


def training_rows():
    doc = presets.load_yaml(presets.find_config("fixtures/training.yaml"))
    policy = UtilizationPolicy(**doc.get("policy", {}))
    rows = []
    for fx in doc["fixtures"]:
        model = load_model(fx["model"])
        par = ParallelismConfig(
            dp=fx["parallelism"]["dp"],
            tp=fx["parallelism"]["tp"],
            pp=fx["parallelism"]["pp"],
            sp=fx["parallelism"]["sp"],
            recompute=fx["recompute"],
        )
        cluster = presets.get_cluster(fx["cluster"], total_devices=fx["devices"])
        report = predict_training_step(model, par, cluster, policy, global_batch=fx["global_batch"])
        rows.append((fx["name"], fx["target_s"], report))
    return rows


def inference_rows():
    doc = presets.load_yaml(presets.find_config("fixtures/inference.yaml"))
    defaults = doc.get("defaults", {})
    rows = []
    for fx in doc["fixtures"]:
        model = load_model(fx["model"])
        cluster = presets.get_cluster(fx["cluster"])
        policy = UtilizationPolicy(**doc.get("policy", {}).get(fx["cluster"], {}))
        report = predict_inference(
            model,
            fx["tp"],
            cluster,
            policy,
            batch=defaults.get("batch", 1),
            prompt_len=defaults.get("prompt_len", 200),
            generate_len=defaults.get("generate_len", 200),
            precision=defaults.get("precision", "fp16"),
        )
        rows.append((fx["name"], fx["target_s"], report))
    return rows


def main():
    print("=== training fixtures (tolerance 25%) ===")
    trows = training_rows()
    worst = 0.0
    for name, target, report in trows:
        err = (report.total_time - target) / target
        worst = max(worst, abs(err))
        flag = "OK " if abs(err) <= 0.25 else "FAIL"
        print(f"{flag} {name:22s} pred {report.total_time:8.3f}  target {target:7.2f}  err {err:+6.1%}")
    pred_order = [n for n, _, r in sorted(trows, key=lambda x: x[2].total_time)]
    target_order = [n for n, t, _ in sorted(trows, key=lambda x: x[1])]
    print("ordering preserved:", pred_order == target_order)
    if pred_order != target_order:
        print("  pred  :", pred_order)
        print("  target:", target_order)
    print(f"worst training error: {worst:.1%}")

    print("\n=== inference fixtures (tolerance 25%) ===")
    irows = inference_rows()
    worst = 0.0
    for name, target, report in irows:
        err = (report.total_time - target) / target
        worst = max(worst, abs(err))
        flag = "OK " if abs(err) <= 0.25 else "FAIL"
        print(f"{flag} {name:22s} pred {report.total_time:8.3f}  target {target:7.3f}  err {err:+6.1%}")
    print(f"worst inference error: {worst:.1%}")

    print("\n=== tp monotonicity (1 -> 2 -> 4 must strictly decrease) ===")
    by_key = {}
    for name, target, report in irows:
        m = report.meta
        by_key[(m["model"], m["cluster"], m["tp"])] = report.total_time
    for model in ("llama2_7b", "llama2_13b", "llama2_70b"):
        for cl in ("a100_cluster", "h100_cluster"):
            seq = [by_key.get((model, cl, t)) for t in (1, 2, 4, 8)]
            present = [(t, v) for t, v in zip((1, 2, 4, 8), seq) if v is not None]
            chain = " > ".join(f"tp{t}:{v:.3f}" for t, v in present)
            decreasing = all(
                present[i][1] > present[i + 1][1]
                for i in range(len(present) - 1)
                if present[i + 1][0] <= 4
            )
            print(f"{model:12s} {cl:13s} {chain}   1->2->4 strict: {decreasing}")


if __name__ == "__main__":
    sys.exit(main())
