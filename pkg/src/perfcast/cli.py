"""Command line front end.

Subcommands map one-to-one onto the engine entry points (train, infer, mem),
the exploration helpers (sweep, dse), and a validate mode that replays the
bundled reference fixtures. Configuration is plain YAML plus repeatable
``--set key=value`` dotted-path overrides, so any file value can be changed
from the shell without editing the file.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import dataclass, field, replace

import yaml

from . import presets
from .arch import TechNode, resolve_device
from .dse import (
    A100_AREA_MM2,
    A100_POWER_W,
    Budgets,
    InfeasibleBudgetError,
    SearchConfig,
    WorkloadSpec,
    search,
    sweep,
)
from .engine import (
    MemoryOverflowError,
    PredictionReport,
    predict_inference,
    predict_memory,
    predict_training_step,
)
from .kernelperf import UtilizationPolicy
from .parallelism import ParallelismConfig
from .workload import ModelConfig

__all__ = ["main", "RunConfig", "ConfigError"]

_TOP_LEVEL_KEYS = {
    "model",
    "cluster",
    "devices",
    "dram",
    "network",
    "precision",
    "global_batch",
    "seq",
    "workload",
    "parallelism",
    "inference",
    "policy",
    "sweep",
    "dse",
    "output",
    "seed",
}
_PARALLELISM_KEYS = {
    "dp",
    "tp",
    "pp",
    "sp",
    "microbatch_size",
    "schedule",
    "recompute",
    "interleave",
    "n_checkpoints",
}
_INFERENCE_KEYS = {"tp", "batch", "prompt_len", "generate_len", "kv_cache"}
_SWEEP_KEYS = {"nodes", "drams", "networks", "base_node"}
_DSE_KEYS = {"node", "area_mm2", "power_w", "step_size", "max_iters", "restarts", "tolerance", "seed"}


class ConfigError(ValueError):
    """Bad config file or override; maps to exit code 2."""


def _check_keys(section: dict, allowed: set, where: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown {where} key(s): {', '.join(sorted(unknown))}")


@dataclass
class RunConfig:
    """Merged file + override configuration for one invocation."""

    mode: str
    data: dict = field(default_factory=dict)

    def __post_init__(self):
        if not isinstance(self.data, dict):
            raise ConfigError("config root must be a mapping")
        _check_keys(self.data, _TOP_LEVEL_KEYS, "config")

    # --- builders ------------------------------------------------------------

    def model(self) -> ModelConfig:
        entry = self.data.get("model")
        if entry is None:
            raise ConfigError("config needs a 'model' (preset name or inline record)")
        if isinstance(entry, str):
            try:
                record = presets.get_model_record(entry)
            except (KeyError, ValueError) as exc:
                raise ConfigError(f"unknown model preset {entry!r}") from exc
            return ModelConfig.from_record(entry, record)
        if isinstance(entry, dict):
            name = entry.get("name", "custom")
            try:
                return ModelConfig.from_record(name, entry)
            except (KeyError, ValueError) as exc:
                raise ConfigError(f"bad inline model record: {exc}") from exc
        raise ConfigError("'model' must be a preset name or a mapping")

    def cluster(self):
        entry = self.data.get("cluster")
        if entry is None:
            raise ConfigError("config needs a 'cluster' (preset name or inline record)")
        if isinstance(entry, str):
            try:
                cluster = presets.get_cluster(entry, total_devices=self.data.get("devices"))
            except (KeyError, ValueError) as exc:
                raise ConfigError(f"unknown cluster preset {entry!r}") from exc
        elif isinstance(entry, dict):
            cluster = self._inline_cluster(entry)
        else:
            raise ConfigError("'cluster' must be a preset name or a mapping")
        try:
            if self.data.get("dram"):
                device = presets.apply_dram_preset(cluster.device, self.data["dram"])
                cluster = replace(cluster, device=device)
            if self.data.get("network"):
                cluster = presets.apply_network_preset(cluster, self.data["network"])
        except (KeyError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        return cluster

    def _inline_cluster(self, entry: dict):
        from .arch import ClusterSpec, NetworkLink

        try:
            device_entry = entry["device"]
            if isinstance(device_entry, str):
                device = presets.get_device(device_entry)
            else:
                device = resolve_device(device_entry)

            def link(record):
                return NetworkLink(
                    name=record["name"],
                    bandwidth_bytes_per_s=float(record["bandwidth_bytes_per_s"]),
                    latency_s=float(record.get("latency_s", 0.0)),
                    topology=record.get("topology", "ring"),
                )

            cluster = ClusterSpec(
                name=entry.get("name", "custom"),
                device=device,
                total_devices=int(entry["total_devices"]),
                devices_per_node=int(entry["devices_per_node"]),
                intra_node=link(entry["intra_node"]),
                inter_node=link(entry["inter_node"]),
            )
            cluster.validate()
            return cluster
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigError(f"bad inline cluster record: {exc}") from exc

    def parallelism(self) -> ParallelismConfig:
        section = self.data.get("parallelism", {}) or {}
        _check_keys(section, _PARALLELISM_KEYS, "parallelism")
        try:
            par = ParallelismConfig(**section)
            par.validate()
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad parallelism config: {exc}") from exc
        return par

    def policy(self) -> UtilizationPolicy:
        section = self.data.get("policy")
        if not section:
            return None
        try:
            policy = UtilizationPolicy(**section)
            policy.validate()
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad policy config: {exc}") from exc
        return policy

    def workload(self) -> WorkloadSpec:
        kind = self.data.get("workload", "train")
        if kind not in ("train", "infer"):
            raise ConfigError(f"workload must be 'train' or 'infer', got {kind!r}")
        if kind == "train":
            return WorkloadSpec(
                kind="train",
                model=self.model(),
                parallelism=self.parallelism(),
                global_batch=self.data.get("global_batch"),
                seq=self.data.get("seq"),
                precision=self.data.get("precision", "fp16"),
            )
        section = self.data.get("inference", {}) or {}
        _check_keys(section, _INFERENCE_KEYS, "inference")
        return WorkloadSpec(
            kind="infer",
            model=self.model(),
            precision=self.data.get("precision", "fp16"),
            tp=int(section.get("tp", 1)),
            batch=int(section.get("batch", 1)),
            prompt_len=int(section.get("prompt_len", 200)),
            generate_len=int(section.get("generate_len", 200)),
            kv_cache_enabled=bool(section.get("kv_cache", True)),
        )


# --- config loading -----------------------------------------------------------


def load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}" if mark is not None else ""
        raise ConfigError(f"config parse error{where}: {exc}") from exc
    if data is None:
        raise ConfigError(f"config file is empty: {path}")
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    return data


def apply_overrides(data: dict, assignments) -> dict:
    """Apply --set key=value pairs; dotted keys descend into sections."""
    for raw in assignments or ():
        if "=" not in raw:
            raise ConfigError(f"override {raw!r} is not of the form key=value")
        key, _, text = raw.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError(f"override {raw!r} has an empty key")
        try:
            value = yaml.safe_load(text)
        except yaml.YAMLError:
            value = text
        node = data
        parts = key.split(".")
        for part in parts[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigError(f"override {key!r} descends through non-mapping {part!r}")
            node = child
        node[parts[-1]] = value
    return data


def _merged(args) -> dict:
    return apply_overrides(load_config(args.config), args.set)


# --- output helpers -----------------------------------------------------------


def _emit(text: str, args) -> None:
    if args.out_file:
        with open(args.out_file, "w") as fh:
            fh.write(text if text.endswith("\n") else text + "\n")
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _kv_table(pairs) -> str:
    pairs = list(pairs)
    width = max((len(k) for k, _ in pairs), default=0)
    return "\n".join(f"{k:<{width}}  {v}" for k, v in pairs)


def _report_table(report: PredictionReport) -> str:
    lines = [f"kind            {report.kind}", f"total_time_s    {report.total_time:.6f}", ""]
    if report.phases:
        lines.append("phases (s)")
        lines.append(_kv_table((f"  {k}", f"{v:.6f}") for k, v in report.phases.items()))
        lines.append("")
    if report.bound_histogram:
        lines.append("kernel time by bound (s)")
        lines.append(
            _kv_table((f"  {k}", f"{v:.6f}") for k, v in sorted(report.bound_histogram.items()))
        )
        lines.append("")
    lines.append("memory (GB)")
    lines.append(
        _kv_table((f"  {k}", f"{v / 1e9:.3f}") for k, v in report.memory.as_dict().items())
    )
    if report.meta:
        lines.append("")
        lines.append("meta")
        lines.append(_kv_table((f"  {k}", str(v)) for k, v in sorted(report.meta.items())))
    return "\n".join(lines)


def _emit_report(report: PredictionReport, args) -> None:
    if args.output == "json":
        _emit(report.to_json(), args)
    elif args.output == "csv":
        _emit(report.to_csv(), args)
    else:
        _emit(_report_table(report), args)


def _rows_csv(rows: list) -> str:
    keys = []
    for row in rows:
        for key in row:
            if key not in keys:
                keys.append(key)
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    return buf.getvalue()


def _rows_table(rows: list, columns) -> str:
    header = list(columns)
    table = [header] + [[str(row.get(c, "")) for c in header] for row in rows]
    widths = [max(len(r[i]) for r in table) for i in range(len(header))]
    return "\n".join("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in table)


def _fail(kind: str, message: str, **extra) -> None:
    payload = {"error": kind, "message": message}
    payload.update(extra)
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)


# --- subcommands ----------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = RunConfig("train", _merged(args))
    report = predict_training_step(
        cfg.model(),
        cfg.parallelism(),
        cfg.cluster(),
        cfg.policy(),
        global_batch=cfg.data.get("global_batch"),
        seq=cfg.data.get("seq"),
        precision=cfg.data.get("precision", "fp16"),
    )
    _emit_report(report, args)
    return 0


def cmd_infer(args) -> int:
    cfg = RunConfig("infer", _merged(args))
    section = cfg.data.get("inference", {}) or {}
    _check_keys(section, _INFERENCE_KEYS, "inference")
    report = predict_inference(
        cfg.model(),
        int(section.get("tp", 1)),
        cfg.cluster(),
        cfg.policy(),
        batch=int(section.get("batch", 1)),
        prompt_len=int(section.get("prompt_len", 200)),
        generate_len=int(section.get("generate_len", 200)),
        precision=cfg.data.get("precision", "fp16"),
        kv_cache_enabled=bool(section.get("kv_cache", True)),
    )
    _emit_report(report, args)
    return 0


def cmd_mem(args) -> int:
    cfg = RunConfig("mem", _merged(args))
    model = cfg.model()
    par = cfg.parallelism()
    global_batch = cfg.data.get("global_batch")
    per_rank = par.dp * par.microbatch_size
    if global_batch:
        if global_batch % per_rank:
            raise ConfigError(
                f"global batch {global_batch} not divisible by dp*microbatch_size={per_rank}"
            )
        microbatches = global_batch // per_rank
    else:
        microbatches = 1
    footprint = predict_memory(
        model,
        par,
        seq=cfg.data.get("seq"),
        precision=cfg.data.get("precision", "fp16"),
        microbatches=microbatches,
    )
    report = PredictionReport(
        kind="memory",
        total_time=0.0,
        phases={},
        bound_histogram={},
        memory=footprint,
        meta={
            "model": model.name,
            "dp": par.dp,
            "tp": par.tp,
            "pp": par.pp,
            "sp": par.sp,
            "recompute": par.recompute,
            "microbatches": microbatches,
        },
    )
    _emit_report(report, args)
    return 0


def cmd_sweep(args) -> int:
    cfg = RunConfig("sweep", _merged(args))
    section = cfg.data.get("sweep", {}) or {}
    _check_keys(section, _SWEEP_KEYS, "sweep")
    budgets, search_config = None, None
    if cfg.data.get("dse"):
        budgets, _, search_config = _dse_settings(cfg, args)
    rows = sweep(
        cfg.workload(),
        cfg.cluster(),
        nodes=section.get("nodes"),
        drams=section.get("drams"),
        networks=section.get("networks"),
        base_node=section.get("base_node", "N7"),
        policy=cfg.policy(),
        budgets=budgets,
        search_config=search_config,
    )
    if args.output == "json":
        _emit(json.dumps(rows, sort_keys=True, indent=2), args)
    elif args.output == "csv":
        _emit(_rows_csv(rows), args)
    else:
        columns = ["node", "dram", "network", "total_time_s", "error"]
        present = [c for c in columns if any(c in row for row in rows)]
        _emit(_rows_table(rows, present), args)
    return 0


def _dse_settings(cfg: RunConfig, args):
    section = cfg.data.get("dse", {}) or {}
    _check_keys(section, _DSE_KEYS, "dse")
    budgets = Budgets(
        area_mm2=float(section.get("area_mm2", A100_AREA_MM2)),
        power_w=float(section.get("power_w", A100_POWER_W)),
    )
    try:
        node = TechNode(section.get("node", "N7"))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    seed = args.seed if args.seed is not None else int(section.get("seed", 0))
    search_config = SearchConfig(
        step_size=float(section.get("step_size", 0.05)),
        max_iters=int(section.get("max_iters", 100)),
        restarts=int(section.get("restarts", 8)),
        tolerance=float(section.get("tolerance", 1e-4)),
        seed=seed,
    )
    try:
        budgets.validate()
        search_config.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return budgets, node, search_config


def cmd_dse(args) -> int:
    cfg = RunConfig("dse", _merged(args))
    budgets, node, search_config = _dse_settings(cfg, args)
    result = search(cfg.workload(), cfg.cluster(), node, budgets, search_config, policy=cfg.policy())
    summary = {
        "node": node.name,
        "area_mm2": budgets.area_mm2,
        "power_w": budgets.power_w,
        "best_time_s": result.best_time,
        "area_fractions": dict(sorted(result.best.area_fractions.items())),
        "power_fractions": dict(sorted(result.best.power_fractions.items())),
        "evaluations": len(result.trace),
    }
    if args.output == "json":
        summary["trace"] = [
            {
                "time_s": value,
                "area_fractions": dict(sorted(point.area_fractions.items())),
                "power_fractions": dict(sorted(point.power_fractions.items())),
            }
            for point, value in result.trace
        ]
        _emit(json.dumps(summary, sort_keys=True, indent=2), args)
    elif args.output == "csv":
        _emit(result.trace_csv(), args)
    else:
        pairs = [("node", node.name), ("best_time_s", f"{result.best_time:.6f}")]
        pairs += [(f"area.{k}", f"{v:.4f}") for k, v in sorted(result.best.area_fractions.items())]
        pairs += [(f"power.{k}", f"{v:.4f}") for k, v in sorted(result.best.power_fractions.items())]
        _emit(_kv_table(pairs), args)
    return 0


# --- validate -------------------------------------------------------------------


def _validate_training(rows: list) -> None:
    data = presets.load_yaml(presets.find_config("fixtures/training.yaml"))
    policy = UtilizationPolicy(**(data.get("policy") or {}))
    tolerance = float(data.get("tolerance", 0.25))
    for fixture in data["fixtures"]:
        model = ModelConfig.from_record(fixture["model"], presets.get_model_record(fixture["model"]))
        cluster = presets.get_cluster(fixture["cluster"], total_devices=fixture["devices"])
        par = ParallelismConfig(**fixture["parallelism"], recompute=fixture.get("recompute", "none"))
        report = predict_training_step(
            model, par, cluster, policy, global_batch=fixture["global_batch"]
        )
        rows.append(
            (fixture["name"], report.total_time, fixture["target_s"], fixture.get("tolerance", tolerance))
        )


def _validate_inference(rows: list) -> None:
    data = presets.load_yaml(presets.find_config("fixtures/inference.yaml"))
    defaults = data.get("defaults") or {}
    tolerance = float(data.get("tolerance", 0.25))
    policies = {
        name: UtilizationPolicy(**(section or {}))
        for name, section in (data.get("policy") or {}).items()
    }
    for fixture in data["fixtures"]:
        model = ModelConfig.from_record(fixture["model"], presets.get_model_record(fixture["model"]))
        cluster = presets.get_cluster(fixture["cluster"])
        report = predict_inference(
            model,
            fixture["tp"],
            cluster,
            policies.get(fixture["cluster"]),
            batch=int(fixture.get("batch", defaults.get("batch", 1))),
            prompt_len=int(fixture.get("prompt_len", defaults.get("prompt_len", 200))),
            generate_len=int(fixture.get("generate_len", defaults.get("generate_len", 200))),
            precision=fixture.get("precision", defaults.get("precision", "fp16")),
        )
        rows.append(
            (fixture["name"], report.total_time, fixture["target_s"], fixture.get("tolerance", tolerance))
        )


def cmd_validate(args) -> int:
    which = args.suite
    rows = []
    if which in ("training", "all"):
        _validate_training(rows)
    if which in ("inference", "all"):
        _validate_inference(rows)
    if not rows:
        raise ConfigError(f"no fixtures selected by {which!r}")

    name_width = max(len(name) for name, *_ in rows)
    lines = [f"{'fixture':<{name_width}}  predicted_s  expected_s  rel_err  status"]
    failures = 0
    for name, predicted, expected, tolerance in rows:
        rel = (predicted - expected) / expected
        ok = abs(rel) <= tolerance
        failures += 0 if ok else 1
        lines.append(
            f"{name:<{name_width}}  {predicted:>11.3f}  {expected:>10.3f}  {rel:>+7.1%}  "
            + ("pass" if ok else "FAIL")
        )
    lines.append(f"{len(rows) - failures}/{len(rows)} fixtures within tolerance")
    _emit("\n".join(lines), args)
    return 1 if failures else 0


# --- entry point ----------------------------------------------------------------


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="YAML config file")
    parser.add_argument(
        "--set",
        action="append",
        metavar="KEY=VALUE",
        help="override a config value (dotted keys, repeatable)",
    )
    parser.add_argument("--output", choices=("table", "csv", "json"), default="table")
    parser.add_argument("--out-file", help="write the report here instead of stdout")
    parser.add_argument("--seed", type=int, default=None, help="seed for the design search")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="perfcast",
        description="Analytical performance predictions for transformer training and inference.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    specs = (
        ("train", cmd_train, "predict one training step"),
        ("infer", cmd_infer, "predict one inference request"),
        ("mem", cmd_mem, "predict the training memory footprint"),
        ("sweep", cmd_sweep, "evaluate a preset grid (nodes, DRAM, network)"),
        ("dse", cmd_dse, "search budget allocations at a tech node"),
        ("validate", cmd_validate, "replay bundled reference fixtures"),
    )
    for name, func, help_text in specs:
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
        if name == "validate":
            p.add_argument(
                "suite",
                nargs="?",
                default="all",
                choices=("training", "inference", "all"),
            )
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        _fail("config", str(exc))
        return 2
    except MemoryOverflowError as exc:
        _fail(
            "memory_overflow",
            str(exc),
            footprint_bytes=exc.footprint.as_dict(),
            capacity_bytes=exc.capacity,
        )
        return 1
    except InfeasibleBudgetError as exc:
        _fail("infeasible_budget", str(exc))
        return 1
    except (ValueError, KeyError) as exc:
        _fail("invalid_input", str(exc))
        return 2


if __name__ == "__main__":
    sys.exit(main(argv=sys.argv[1:]))
