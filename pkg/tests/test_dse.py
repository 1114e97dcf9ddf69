"""Design-space search: simplex geometry, descent, and the sweep grid."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from perfcast.arch import DESIGN_COMPONENTS, TechNode
from perfcast.dse import (
    Budgets,
    InfeasibleBudgetError,
    SearchConfig,
    WorkloadSpec,
    _cube_to_simplex,
    _project_simplex,
    _rd_sequence,
    default_calibration,
    make_objective,
    minimize_on_simplex,
    search,
    sweep,
)
from perfcast.parallelism import ParallelismConfig


def infer_spec(model, **kw):
    kw.setdefault("tp", 2)
    kw.setdefault("batch", 1)
    kw.setdefault("prompt_len", 32)
    kw.setdefault("generate_len", 4)
    return WorkloadSpec(kind="infer", model=model, **kw)


def test_budgets_validation():
    Budgets(area_mm2=826.0, power_w=400.0).validate()
    with pytest.raises(ValueError):
        Budgets(area_mm2=0.0, power_w=400.0).validate()
    with pytest.raises(ValueError):
        Budgets(area_mm2=826.0, power_w=-1.0).validate()


def test_search_config_validation():
    SearchConfig().validate()
    with pytest.raises(ValueError):
        SearchConfig(step_size=0.5).validate()
    with pytest.raises(ValueError):
        SearchConfig(step_size=0.0).validate()
    with pytest.raises(ValueError):
        SearchConfig(max_iters=0).validate()
    with pytest.raises(ValueError):
        SearchConfig(restarts=0).validate()
    with pytest.raises(ValueError):
        SearchConfig(tolerance=-1e-6).validate()


def test_workload_spec_validation(gpt_7b):
    with pytest.raises(ValueError):
        WorkloadSpec(kind="benchmark", model=gpt_7b).validate()
    with pytest.raises(ValueError):
        WorkloadSpec(kind="train", model=gpt_7b).validate()
    WorkloadSpec(kind="train", model=gpt_7b, parallelism=ParallelismConfig(tp=8)).validate()
    infer_spec(gpt_7b).validate()


# minimum of 1/x + 4/(1-x) sits at x = 1/3
def test_descent_solves_toy_problem():
    objective = lambda x: 1.0 / x[0] + 4.0 / x[1] if min(x) > 1e-12 else math.inf
    config = SearchConfig(step_size=0.1, max_iters=300, tolerance=1e-9)
    x, fx, trace = minimize_on_simplex(objective, np.array([0.5, 0.5]), config)
    assert x[0] == pytest.approx(1.0 / 3.0, abs=1e-3)
    assert fx == pytest.approx(9.0, rel=1e-5)
    assert trace
    values = [value for _, value in trace]
    assert values == sorted(values, reverse=True)


def test_descent_respects_blocks():
    # two independent toy problems, one per simplex block
    def objective(x):
        if min(x) <= 1e-12:
            return math.inf
        return 1.0 / x[0] + 4.0 / x[1] + 9.0 / x[2] + 1.0 / x[3]

    blocks = (slice(0, 2), slice(2, 4))
    config = SearchConfig(step_size=0.1, max_iters=300, tolerance=1e-9)
    x0 = np.array([0.5, 0.5, 0.5, 0.5])
    x, fx, _ = minimize_on_simplex(objective, x0, config, blocks=blocks)
    assert float(np.sum(x[:2])) == pytest.approx(1.0, abs=1e-9)
    assert float(np.sum(x[2:])) == pytest.approx(1.0, abs=1e-9)
    # block 2 optimum: 9/x + 1/(1-x) -> x = 3/4
    assert x[2] == pytest.approx(0.75, abs=2e-3)


@given(st.lists(st.floats(min_value=-10, max_value=10), min_size=2, max_size=8))
@settings(max_examples=80)
def test_simplex_projection_properties(values):
    v = np.array(values)
    p = _project_simplex(v)
    assert float(np.sum(p)) == pytest.approx(1.0, abs=1e-9)
    assert np.all(p >= 0)
    again = _project_simplex(p)
    assert np.allclose(p, again, atol=1e-9)


def test_projection_fixes_points_on_simplex():
    v = np.array([0.2, 0.3, 0.5])
    assert np.allclose(_project_simplex(v), v, atol=1e-12)


def test_rd_sequence_shape_and_range():
    pts = _rd_sequence(6, 40, seed=11)
    assert pts.shape == (40, 6)
    assert np.all((pts >= 0.0) & (pts < 1.0))
    assert np.array_equal(pts, _rd_sequence(6, 40, seed=11))
    assert not np.array_equal(pts, _rd_sequence(6, 40, seed=12))
    assert _rd_sequence(6, 0, seed=1).shape == (0, 6)


@given(st.lists(st.floats(min_value=0.0, max_value=1.0, exclude_max=True), min_size=1, max_size=7))
@settings(max_examples=60)
def test_cube_to_simplex_properties(values):
    gaps = _cube_to_simplex(np.array(values))
    assert gaps.size == len(values) + 1
    assert float(np.sum(gaps)) == pytest.approx(1.0, abs=1e-9)
    assert np.all(gaps >= 0.0)


def test_search_never_worse_than_calibration(llama2_13b, a100_cluster):
    workload = infer_spec(llama2_13b)
    calibration = default_calibration()
    budgets = Budgets(area_mm2=calibration.area_mm2, power_w=calibration.power_w)
    node = TechNode("N7")
    objective = make_objective(workload, a100_cluster, node, budgets, calibration)
    from perfcast.dse import _vector_from_point

    baseline = objective(_vector_from_point(calibration.point))
    assert math.isfinite(baseline)
    config = SearchConfig(step_size=0.08, max_iters=8, restarts=2, seed=3)
    result = search(workload, a100_cluster, node, budgets, config, calibration)
    assert result.best_time <= baseline + 1e-15
    assert result.best_time > 0
    assert sum(result.best.area_fractions.values()) == pytest.approx(1.0, abs=1e-9)
    assert sum(result.best.power_fractions.values()) == pytest.approx(1.0, abs=1e-9)
    assert result.trace
    # every trace entry is a feasible evaluation
    assert all(math.isfinite(v) for _, v in result.trace)


def test_search_is_deterministic(llama2_13b, a100_cluster):
    workload = infer_spec(llama2_13b, generate_len=2)
    budgets = Budgets(826.0, 400.0)
    config = SearchConfig(step_size=0.08, max_iters=4, restarts=2, seed=5)
    one = search(workload, a100_cluster, TechNode("N7"), budgets, config)
    two = search(workload, a100_cluster, TechNode("N7"), budgets, config)
    assert one.best_time == two.best_time
    assert one.best.area_fractions == two.best.area_fractions
    assert len(one.trace) == len(two.trace)


def test_search_infeasible_raises(llama2_70b, a100_cluster):
    # 70B training state cannot fit 8 devices at any budget split
    workload = WorkloadSpec(
        kind="train", model=llama2_70b, parallelism=ParallelismConfig(tp=8), global_batch=8
    )
    config = SearchConfig(step_size=0.1, max_iters=2, restarts=2, seed=1)
    with pytest.raises(InfeasibleBudgetError):
        search(workload, a100_cluster, TechNode("N7"), Budgets(826.0, 400.0), config)


def test_trace_csv_header(llama2_13b, a100_cluster):
    workload = infer_spec(llama2_13b, generate_len=2)
    config = SearchConfig(step_size=0.1, max_iters=3, restarts=1, seed=0)
    result = search(workload, a100_cluster, TechNode("N7"), Budgets(826.0, 400.0), config)
    lines = result.trace_csv().splitlines()
    expected = ["iteration", "time_s"]
    expected += [f"area.{c}" for c in DESIGN_COMPONENTS]
    expected += [f"power.{c}" for c in DESIGN_COMPONENTS]
    assert lines[0] == ",".join(expected)
    assert len(lines) == len(result.trace) + 1
    first = lines[1].split(",")
    assert first[0] == "0"
    assert float(first[1]) > 0


def test_sweep_grid_shape_and_cell_equality(llama2_13b, a100_cluster):
    workload = infer_spec(llama2_13b)
    rows = sweep(workload, a100_cluster, nodes=["N7", "N5"], drams=["hbm2e", "hbm3"])
    assert len(rows) == 4
    assert [(r["node"], r["dram"]) for r in rows] == [
        ("N7", "hbm2e"), ("N7", "hbm3"), ("N5", "hbm2e"), ("N5", "hbm3"),
    ]
    assert all(r["network"] == "" for r in rows)
    single = sweep(workload, a100_cluster)
    assert len(single) == 1
    direct = workload.run(a100_cluster)
    assert single[0]["total_time_s"] == direct.total_time


def test_sweep_marks_failed_cells(llama2_70b, a100_cluster):
    workload = WorkloadSpec(
        kind="train", model=llama2_70b, parallelism=ParallelismConfig(tp=8), global_batch=8
    )
    rows = sweep(workload, a100_cluster, drams=["hbm2e", "hbm3e"])
    assert len(rows) == 2
    for row in rows:
        assert "error" in row
        assert "total_time_s" not in row
        assert row["dram"] in ("hbm2e", "hbm3e")


def test_sweep_runs_search_when_budgeted(llama2_13b, a100_cluster):
    workload = infer_spec(llama2_13b, generate_len=2)
    rows = sweep(
        workload,
        a100_cluster,
        nodes=["N7"],
        budgets=Budgets(826.0, 400.0),
        search_config=SearchConfig(step_size=0.1, max_iters=3, restarts=1, seed=0),
    )
    assert len(rows) == 1
    row = rows[0]
    assert row["total_time_s"] > 0
    area = [row[f"area.{c}"] for c in DESIGN_COMPONENTS]
    power = [row[f"power.{c}"] for c in DESIGN_COMPONENTS]
    assert sum(area) == pytest.approx(1.0, abs=1e-9)
    assert sum(power) == pytest.approx(1.0, abs=1e-9)
