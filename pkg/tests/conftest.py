import numpy as np
import pytest

from bodyik.bodymodel import generate_synthetic_model
from bodyik.rotmath import axis_angle_to_matrix


@pytest.fixture(scope="session")
def model():
    return generate_synthetic_model(0, 600)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_rotation(rng, max_angle=np.pi):
    return axis_angle_to_matrix(rng.normal(size=3), rng.uniform(0.0, max_angle))


def random_rotations(rng, n, max_angle=np.pi):
    return np.stack([random_rotation(rng, max_angle) for _ in range(n)])
