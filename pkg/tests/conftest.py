import json
import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dpal.data import find_mnist_dir, synth_blobs
from dpal.model import Architecture, init_params
from dpal.pipeline import ExperimentData

settings.register_profile("dpal", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "dpal"))

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"

# lines reported by the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def blob_data():
    """Small 3-class problem in 6 dimensions, split three ways."""
    parts = [synth_blobs(3, n, 6, 1.0, seed=[7, i], separation=6.0) for i, n in enumerate((200, 100, 100))]
    return ExperimentData(
        parts[0].with_role("private_train"), parts[1].with_role("public"), parts[2].with_role("test")
    )


@pytest.fixture
def small_arch():
    return Architecture(6, (5,), 3)


@pytest.fixture
def small_params(small_arch):
    return init_params(small_arch, 0)


def blob_config(**overrides):
    """Config dict for a fast blobs experiment; nested dicts are merged."""
    cfg = json.loads((CONFIGS / "smoke_blobs.json").read_text())
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(cfg.get(key), dict):
            cfg[key] = {**cfg[key], **value}
        else:
            cfg[key] = value
    return cfg


mnist_available = pytest.mark.skipif(find_mnist_dir() is None, reason="MNIST IDX files not found")
