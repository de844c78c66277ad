import numpy as np
import pytest

from app.core.config import ArchitectureConfig, ExperimentConfig, TrainConfig
from app.core.models import NoiseSource, build_model


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run full training runs")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: trains models end to end; needs --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def noise():
    return NoiseSource(0)


@pytest.fixture
def small_arch():
    return ArchitectureConfig(latent_dim=1, data_dim=2, hidden=(8, 8), noise_variance=[0.1, 0.1])


@pytest.fixture
def small_model(small_arch):
    return build_model(small_arch, seed=0)


@pytest.fixture
def tiny_model():
    """Few enough parameters for coordinate-wise finite differences."""
    arch = ArchitectureConfig(latent_dim=1, data_dim=2, hidden=(4,), noise_variance=[0.1, 0.1])
    return build_model(arch, seed=1)


@pytest.fixture
def discrete_model():
    arch = ArchitectureConfig(latent_dim=1, data_dim=2, hidden=(4,), label_kind="discrete", n_classes=2,
                              noise_variance=[0.1, 0.1])
    return build_model(arch, seed=2)


@pytest.fixture
def continuous_model():
    arch = ArchitectureConfig(latent_dim=1, data_dim=2, hidden=(4,), label_kind="continuous",
                              noise_variance=[0.1, 0.1])
    return build_model(arch, seed=3)


@pytest.fixture
def quick_config():
    return TrainConfig(epochs=3, encoder_init_epochs=1, gt_restarts=1, random_restarts=1, batch_size=50,
                       learning_rate=1e-2)


@pytest.fixture
def small_experiment(tmp_path):
    return ExperimentConfig(n_train=100, n_validation=40, n_test=40, versions=[0], epochs=2,
                            encoder_init_epochs=1, gt_restarts=1, random_restarts=1, batch_size=50,
                            hidden=(8, 8), knn_permutations=50, output_dir=str(tmp_path))
