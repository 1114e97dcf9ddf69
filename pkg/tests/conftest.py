import pytest

from perfcast import presets
from perfcast.kernelperf import UtilizationPolicy
from perfcast.workload import ModelConfig


@pytest.fixture(scope="session")
def a100():
    return presets.get_device("a100")


@pytest.fixture(scope="session")
def h100():
    return presets.get_device("h100")


@pytest.fixture(scope="session")
def a100_cluster():
    return presets.get_cluster("a100_cluster")


@pytest.fixture(scope="session")
def h100_cluster():
    return presets.get_cluster("h100_cluster")


@pytest.fixture(scope="session")
def pure_policy():
    """Roofline-only policy: no launch overhead, unit efficiencies."""
    return UtilizationPolicy(
        compute_efficiency=1.0,
        gemv_dram_utilization=1.0,
        elementwise_dram_utilization=1.0,
        network_inference_utilization=1.0,
        kernel_overhead_bytes=0.0,
    )


def model(name: str) -> ModelConfig:
    return ModelConfig.from_record(name, presets.get_model_record(name))


@pytest.fixture(scope="session")
def gpt_7b():
    return model("gpt_7b")


@pytest.fixture(scope="session")
def llama2_13b():
    return model("llama2_13b")


@pytest.fixture(scope="session")
def llama2_70b():
    return model("llama2_70b")
