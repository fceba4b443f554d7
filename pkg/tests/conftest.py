import numpy as np
import pytest

from posegate import generate_scene, generate_split


@pytest.fixture(scope="session")
def scene():
    """Medium synthetic world shared by read-only tests."""
    return generate_scene(42, n_landmarks=500)


@pytest.fixture(scope="session")
def split(scene):
    """300 train / 100 test split with 30% of queries far from the training region."""
    return generate_split(scene, seed=7, n_train=300, n_test=100, coverage_bias=0.3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def write_lines(path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
