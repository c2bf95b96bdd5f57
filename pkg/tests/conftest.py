import numpy as np
import pytest

from ttrl.env import generate_dataset
from ttrl.policy import PolicyParameters, init_policy

_CRITERIA: list[str] = []


def record_criterion(line: str) -> None:
    _CRITERIA.append(line)


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)


def random_policy(rng: np.random.Generator, n_questions=3, k=3, scale=1.0) -> PolicyParameters:
    return PolicyParameters(
        scale * rng.standard_normal((3, 3 + k)),
        scale * rng.standard_normal((n_questions, k)),
        snapshot_id=int(rng.integers(0, 1000)),
    )


@pytest.fixture
def small_dataset():
    return generate_dataset(12, 4, 1.0, seed=5)


@pytest.fixture
def small_policy(small_dataset):
    return init_policy(small_dataset, 2.0, seed=5, noise_scale=0.5)
