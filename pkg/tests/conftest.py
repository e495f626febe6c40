import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

from vpr_integrity.core import SynthConfig, Traverse, generate_synthetic  # noqa: E402
from vpr_integrity.experiments import build_query_table  # noqa: E402

settings.register_profile("default", max_examples=50, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# criterion number -> (passed, report line), filled in by test_acceptance
ACCEPTANCE = {}

STANDARD = SynthConfig(n=500, m=128, spacing=0.3, aliasing_rate=0.2, noise_sigma=0.05, seed=42)
TRAINING = SynthConfig(n=500, m=128, spacing=0.3, aliasing_rate=0.2, noise_sigma=0.05, seed=1)


def straight_traverse(n, spacing=1.0, m=4, seed=0):
    rng = np.random.default_rng(seed)
    poses = np.zeros((n, 3))
    poses[:, 0] = np.arange(n) * spacing
    return Traverse(poses, rng.normal(size=(n, m)), label="line")


@pytest.fixture(scope="session")
def small_dataset():
    return generate_synthetic(SynthConfig(n=120, m=32, seed=3))


@pytest.fixture(scope="session")
def standard_fixture():
    traverse, queries = generate_synthetic(STANDARD)
    return traverse, queries, build_query_table(traverse, queries)


@pytest.fixture(scope="session")
def training_fixture():
    traverse, queries = generate_synthetic(TRAINING)
    return traverse, queries, build_query_table(traverse, queries)


def random_model(sizes, seed=0, scale=0.5, threshold=0.5):
    """MlpModel with Gaussian weights; ``sizes`` runs input -> ... -> 1."""
    from vpr_integrity.mlp import MlpModel

    rng = np.random.default_rng(seed)
    weights = tuple((scale * rng.normal(size=(o, i))).astype(np.float32) for i, o in zip(sizes[:-1], sizes[1:]))
    biases = tuple((scale * rng.normal(size=o)).astype(np.float32) for o in sizes[1:])
    mean = rng.normal(size=sizes[0]).astype(np.float32)
    std = rng.uniform(0.5, 2.0, size=sizes[0]).astype(np.float32)
    return MlpModel(weights, biases, mean, std, threshold=threshold)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number][1])
