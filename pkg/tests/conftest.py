import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """Two categories, three instances each (one held out), three views."""
    from shapepose.data.synthetic import GeneratorSpec, generate_synthetic_dataset
    spec = GeneratorSpec(categories=("mug", "laptop"), instances_per_category=3, test_instances=1,
                         views_per_instance=3, n_points=512)
    root = tmp_path_factory.mktemp("tiny")
    return generate_synthetic_dataset(spec, 7, root)


def pytest_configure(config):
    config.acceptance_lines = []


def pytest_terminal_summary(terminalreporter, config):
    if config.acceptance_lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in config.acceptance_lines:
            terminalreporter.write_line(line)
