"""Design-space exploration: budget-constrained search over component splits.

Given fixed area and power budgets at a technology node, the search looks for
the split of those budgets across {compute, l2_cache, dram_interface,
network_interface} that minimizes the predicted time of a workload. Splits
live on two probability simplexes (area fractions, power fractions), so the
optimizer is a projected finite-difference descent with seeded
low-discrepancy restarts. A grid sweep over (node, DRAM preset, network
preset) axes is built on the same workload runner.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, replace

import numpy as np

from .arch import (
    DESIGN_COMPONENTS,
    CalibrationAnchor,
    ClusterSpec,
    DesignPoint,
    DeviceSpec,
    TechNode,
    derive_from_budget,
    network_scale_of,
    scale_node,
)
from .engine import (
    MemoryOverflowError,
    PredictionReport,
    predict_inference,
    predict_training_step,
)
from .kernelperf import UtilizationPolicy
from .parallelism import ParallelismConfig
from .workload import ModelConfig

__all__ = [
    "Budgets",
    "SearchConfig",
    "SearchResult",
    "WorkloadSpec",
    "InfeasibleBudgetError",
    "default_calibration",
    "make_objective",
    "minimize_on_simplex",
    "search",
    "sweep",
]

# A100 anchor: die budget and a plausible split of it across the four
# modeled components. Budget derivation is linear around this point.
A100_AREA_MM2 = 826.0
A100_POWER_W = 400.0
A100_AREA_FRACTIONS = {
    "compute": 0.50,
    "l2_cache": 0.22,
    "dram_interface": 0.17,
    "network_interface": 0.11,
}
A100_POWER_FRACTIONS = {
    "compute": 0.55,
    "l2_cache": 0.10,
    "dram_interface": 0.22,
    "network_interface": 0.13,
}


class InfeasibleBudgetError(ValueError):
    """No design point under the given budgets can run the workload."""


@dataclass(frozen=True)
class Budgets:
    """Fixed die-level budgets the search allocates between components."""

    area_mm2: float
    power_w: float

    def validate(self) -> None:
        if self.area_mm2 <= 0 or self.power_w <= 0:
            raise ValueError("budgets must be positive")


@dataclass(frozen=True)
class SearchConfig:
    """Knobs for the descent loop.

    step_size is both the finite-difference stencil width and the initial
    descent step; it halves whenever a step fails to improve. tolerance is
    the relative improvement below which an accepted step ends the run.
    """

    step_size: float = 0.05
    max_iters: int = 100
    restarts: int = 8
    tolerance: float = 1e-4
    seed: int = 0

    def validate(self) -> None:
        if not 0 < self.step_size < 0.5:
            raise ValueError("step_size must be in (0, 0.5)")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.tolerance < 0:
            raise ValueError("tolerance must be non-negative")


@dataclass(frozen=True)
class WorkloadSpec:
    """What to predict when evaluating a candidate system.

    kind selects the engine entry point: "train" runs one optimizer step
    (parallelism required), "infer" runs one batched request.
    """

    kind: str
    model: ModelConfig
    parallelism: ParallelismConfig = None
    global_batch: int = None
    seq: int = None
    precision: str = "fp16"
    # inference-only knobs
    tp: int = 1
    batch: int = 1
    prompt_len: int = 200
    generate_len: int = 200
    kv_cache_enabled: bool = True

    def validate(self) -> None:
        if self.kind not in ("train", "infer"):
            raise ValueError(f"unknown workload kind {self.kind!r}")
        if self.kind == "train" and self.parallelism is None:
            raise ValueError("training workload needs a parallelism config")

    def run(self, cluster: ClusterSpec, policy: UtilizationPolicy = None) -> PredictionReport:
        self.validate()
        if self.kind == "train":
            return predict_training_step(
                self.model,
                self.parallelism,
                cluster,
                policy,
                global_batch=self.global_batch,
                seq=self.seq,
                precision=self.precision,
            )
        return predict_inference(
            self.model,
            self.tp,
            cluster,
            policy,
            batch=self.batch,
            prompt_len=self.prompt_len,
            generate_len=self.generate_len,
            precision=self.precision,
            kv_cache_enabled=self.kv_cache_enabled,
        )


def default_calibration(device: DeviceSpec = None) -> CalibrationAnchor:
    """A100 anchor used when the caller does not supply one."""
    if device is None:
        from . import presets

        device = presets.get_device("a100")
    return CalibrationAnchor(
        device=device,
        point=DesignPoint(
            area_fractions=dict(A100_AREA_FRACTIONS),
            power_fractions=dict(A100_POWER_FRACTIONS),
            node=TechNode("N7"),
        ),
        area_mm2=A100_AREA_MM2,
        power_w=A100_POWER_W,
    )


# --- simplex geometry ---------------------------------------------------------


def _project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto {x >= 0, sum x = 1}."""
    u = np.sort(v)[::-1]
    cumulative = np.cumsum(u)
    positions = np.arange(1, v.size + 1)
    rho = np.nonzero(u + (1.0 - cumulative) / positions > 0)[0][-1]
    theta = (1.0 - cumulative[rho]) / (rho + 1)
    return np.maximum(v + theta, 0.0)


def _project_blocks(v: np.ndarray, blocks) -> np.ndarray:
    out = np.array(v, dtype=float)
    for block in blocks:
        out[block] = _project_simplex(out[block])
    return out


def _rd_sequence(dim: int, count: int, seed: int) -> np.ndarray:
    """Kronecker low-discrepancy points in the unit cube, offset by seed."""
    if count <= 0:
        return np.empty((0, dim))
    phi = 1.5
    for _ in range(64):  # fixed point of x = (1 + x)^(1/(dim+1))
        phi = (1.0 + phi) ** (1.0 / (dim + 1))
    alpha = phi ** -np.arange(1, dim + 1)
    start = (seed % 100003) + 1
    k = np.arange(start, start + count, dtype=float)
    return np.mod(0.5 + np.outer(k, alpha), 1.0)


def _cube_to_simplex(u: np.ndarray) -> np.ndarray:
    """Map d-1 cube coordinates to a point on the d-simplex (gap trick)."""
    cuts = np.sort(u)
    return np.diff(np.concatenate(([0.0], cuts, [1.0])))


# --- descent core -------------------------------------------------------------


def minimize_on_simplex(objective, x0, config: SearchConfig, blocks=None):
    """Projected finite-difference descent over simplex-constrained blocks.

    blocks is a tuple of slices partitioning x; each block is kept on its own
    probability simplex (default: all of x is one simplex). The objective may
    raise or return non-finite values for infeasible points; those never
    become the incumbent. Returns (x, f(x), trace) with trace a list of
    (x copy, value) for every accepted iterate.
    """
    config.validate()
    x = np.asarray(x0, dtype=float)
    if blocks is None:
        blocks = (slice(0, x.size),)
    x = _project_blocks(x, blocks)

    memo = {}

    def f(v: np.ndarray) -> float:
        key = np.round(v, 12).tobytes()
        if key not in memo:
            try:
                value = float(objective(v))
            except (ArithmeticError, ValueError):
                value = math.inf
            memo[key] = value if math.isfinite(value) else math.inf
        return memo[key]

    fx = f(x)
    trace = [(x.copy(), fx)] if math.isfinite(fx) else []
    step = config.step_size
    floor = config.step_size * 2.0**-40

    for _ in range(config.max_iters):
        if not math.isfinite(fx) or step < floor:
            break
        grad = np.zeros_like(x)
        for i in range(x.size):
            bump = np.zeros_like(x)
            bump[i] = step
            plus = f(_project_blocks(x + bump, blocks))
            minus = f(_project_blocks(x - bump, blocks))
            if math.isfinite(plus) and math.isfinite(minus):
                grad[i] = (plus - minus) / (2.0 * step)
            elif math.isfinite(minus):
                grad[i] = 1.0 / step  # increasing x_i leaves the feasible set
            elif math.isfinite(plus):
                grad[i] = -1.0 / step
        norm = float(np.linalg.norm(grad))
        if norm == 0.0:
            step *= 0.5
            continue
        candidate = _project_blocks(x - step * grad / norm, blocks)
        fc = f(candidate)
        if fc < fx:
            improvement = (fx - fc) / abs(fx) if fx else 0.0
            x, fx = candidate, fc
            trace.append((x.copy(), fx))
            if improvement < config.tolerance:
                break
        else:
            step *= 0.5
    return x, fx, trace


# --- workload objective -------------------------------------------------------


def _point_from_vector(x: np.ndarray, node: TechNode) -> DesignPoint:
    d = len(DESIGN_COMPONENTS)
    return DesignPoint(
        area_fractions=dict(zip(DESIGN_COMPONENTS, (float(v) for v in x[:d]))),
        power_fractions=dict(zip(DESIGN_COMPONENTS, (float(v) for v in x[d:]))),
        node=node,
    )


def _vector_from_point(point: DesignPoint) -> np.ndarray:
    return np.array(
        [point.area_fractions[c] for c in DESIGN_COMPONENTS]
        + [point.power_fractions[c] for c in DESIGN_COMPONENTS]
    )


def _cluster_around(cluster: ClusterSpec, device: DeviceSpec) -> ClusterSpec:
    """Swap the device in and scale both fabrics by its network share."""
    scale = network_scale_of(device)

    def scaled(link):
        return replace(link, bandwidth_bytes_per_s=link.bandwidth_bytes_per_s * scale)

    return replace(
        cluster,
        device=device,
        intra_node=scaled(cluster.intra_node),
        inter_node=scaled(cluster.inter_node),
    )


def make_objective(
    workload: WorkloadSpec,
    cluster: ClusterSpec,
    node: TechNode,
    budgets: Budgets,
    calibration: CalibrationAnchor,
    policy: UtilizationPolicy = None,
):
    """Objective over the concatenated (area, power) fraction vector.

    Returns predicted workload time at the derived device, or +inf when the
    point is infeasible (starved component or memory overflow).
    """
    budgets.validate()

    def objective(x: np.ndarray) -> float:
        point = _point_from_vector(x, node)
        try:
            device = derive_from_budget(point, budgets.area_mm2, budgets.power_w, calibration)
            report = workload.run(_cluster_around(cluster, device), policy)
        except (MemoryOverflowError, ValueError, ZeroDivisionError, OverflowError):
            return math.inf
        return report.total_time

    return objective


@dataclass
class SearchResult:
    best: DesignPoint
    best_time: float
    best_device: DeviceSpec
    trace: list  # list[tuple[DesignPoint, float]], accepted iterates only

    def trace_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        header = (
            ["iteration", "time_s"]
            + [f"area.{c}" for c in DESIGN_COMPONENTS]
            + [f"power.{c}" for c in DESIGN_COMPONENTS]
        )
        writer.writerow(header)
        for i, (point, value) in enumerate(self.trace):
            writer.writerow(
                [i, repr(value)]
                + [repr(point.area_fractions[c]) for c in DESIGN_COMPONENTS]
                + [repr(point.power_fractions[c]) for c in DESIGN_COMPONENTS]
            )
        return buf.getvalue()


def search(
    workload: WorkloadSpec,
    cluster: ClusterSpec,
    node: TechNode,
    budgets: Budgets,
    config: SearchConfig = None,
    calibration: CalibrationAnchor = None,
    policy: UtilizationPolicy = None,
) -> SearchResult:
    """Find the budget split minimizing workload time at the given node.

    Restart 0 starts from the calibration split, so the result is never worse
    than the published device's own allocation; remaining restarts start from
    a seeded low-discrepancy sequence over the two simplexes. Every trace
    entry is feasible.
    """
    config = config or SearchConfig()
    config.validate()
    calibration = calibration or default_calibration()
    objective = make_objective(workload, cluster, node, budgets, calibration, policy)

    d = len(DESIGN_COMPONENTS)
    blocks = (slice(0, d), slice(d, 2 * d))
    starts = [_vector_from_point(calibration.point)]
    extra = _rd_sequence(2 * (d - 1), config.restarts - 1, config.seed)
    for row in extra:
        starts.append(
            np.concatenate([_cube_to_simplex(row[: d - 1]), _cube_to_simplex(row[d - 1 :])])
        )

    best_x, best_f = None, math.inf
    full_trace = []
    for x0 in starts:
        x, fx, trace = minimize_on_simplex(objective, x0, config, blocks)
        full_trace.extend((_point_from_vector(v, node), value) for v, value in trace)
        if fx < best_f:
            best_x, best_f = x, fx

    if best_x is None or not math.isfinite(best_f):
        raise InfeasibleBudgetError(
            f"no feasible design point under area={budgets.area_mm2} mm2, "
            f"power={budgets.power_w} W at {node.name}"
        )
    best_point = _point_from_vector(best_x, node)
    best_device = derive_from_budget(best_point, budgets.area_mm2, budgets.power_w, calibration)
    return SearchResult(best=best_point, best_time=best_f, best_device=best_device, trace=full_trace)


# --- preset grid sweep --------------------------------------------------------


def sweep(
    workload: WorkloadSpec,
    cluster: ClusterSpec,
    nodes=None,
    drams=None,
    networks=None,
    base_node: str = "N7",
    policy: UtilizationPolicy = None,
    budgets: Budgets = None,
    calibration: CalibrationAnchor = None,
    search_config: SearchConfig = None,
) -> list:
    """Evaluate the workload over a (node, dram, network) preset grid.

    Returns one flat row dict per cell in long format; the row count always
    equals the product of the axis lengths. A cell that fails keeps its key
    columns and carries the failure text in an "error" column instead of
    metrics. When budgets are given, each cell runs the design search at that
    cell's node (the anchor device picks up the cell's DRAM preset) and
    reports the optimized time plus the winning fractions.
    """
    from . import presets

    node_axis = list(nodes) if nodes else [None]
    dram_axis = list(drams) if drams else [None]
    net_axis = list(networks) if networks else [None]
    anchor = TechNode(base_node)

    rows = []
    for node_name in node_axis:
        for dram_name in dram_axis:
            for net_name in net_axis:
                row = {
                    "node": node_name or "",
                    "dram": dram_name or "",
                    "network": net_name or "",
                }
                try:
                    cell_cluster = cluster
                    if net_name:
                        cell_cluster = presets.apply_network_preset(cell_cluster, net_name)
                    cell_node = TechNode(node_name) if node_name else anchor
                    if budgets is not None:
                        cell_anchor = calibration or default_calibration()
                        if dram_name:
                            cell_anchor = replace(
                                cell_anchor,
                                device=presets.apply_dram_preset(cell_anchor.device, dram_name),
                            )
                        result = search(
                            workload,
                            cell_cluster,
                            cell_node,
                            budgets,
                            search_config,
                            cell_anchor,
                            policy,
                        )
                        row["total_time_s"] = result.best_time
                        for c in DESIGN_COMPONENTS:
                            row[f"area.{c}"] = result.best.area_fractions[c]
                            row[f"power.{c}"] = result.best.power_fractions[c]
                    else:
                        device = cell_cluster.device
                        if node_name:
                            device = scale_node(device, anchor, cell_node)
                        if dram_name:
                            device = presets.apply_dram_preset(device, dram_name)
                        report = workload.run(replace(cell_cluster, device=device), policy)
                        row.update(report.scalar_fields())
                except (MemoryOverflowError, InfeasibleBudgetError, ValueError) as exc:
                    row["error"] = str(exc)
                rows.append(row)
    return rows
