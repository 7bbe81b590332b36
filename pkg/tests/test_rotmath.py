import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bodyik.errors import DegenerateRepresentationError, PreconditionError
from bodyik.rotmath import (
    axis_angle_to_matrix,
    is_rotation,
    matrix_to_rot6d,
    rodrigues,
    rot6d_to_matrix,
    skew,
)

from conftest import random_rotations

finite = st.floats(-1e3, 1e3, allow_nan=False)
vec3 = st.tuples(finite, finite, finite).map(np.array)


def test_skew_zero_and_z():
    assert np.array_equal(skew([0, 0, 0]), np.zeros((3, 3)))
    assert np.array_equal(skew([0, 0, 1]), [[0, -1, 0], [1, 0, 0], [0, 0, 0]])


def test_skew_matches_cross(rng):
    for _ in range(100):
        v, w = rng.normal(size=(2, 3))
        assert np.max(np.abs(skew(v) @ w - np.cross(v, w))) < 1e-12


@given(vec3)
def test_skew_antisymmetric(v):
    S = skew(v)
    assert np.array_equal(S, -S.T)


def test_rodrigues_hand_cases():
    assert np.array_equal(rodrigues([1, 0, 0], 1.0, 0.0), np.eye(3))
    R = rodrigues([0, 0, 1], np.cos(np.pi / 2), np.sin(np.pi / 2))
    assert np.max(np.abs(R - [[0, -1, 0], [1, 0, 0], [0, 0, 1]])) < 1e-12
    R = rodrigues([1, 0, 0], -1.0, 0.0)
    assert np.max(np.abs(R - np.diag([1.0, -1.0, -1.0]))) < 1e-12


def test_rodrigues_rejects_bad_axis_and_angle():
    with pytest.raises(PreconditionError):
        rodrigues([1, 1, 0], 1.0, 0.0)
    with pytest.raises(PreconditionError):
        rodrigues([1, 0, 0], 1.0, 0.5)


@settings(max_examples=200)
@given(vec3, st.floats(-10, 10))
def test_rodrigues_invariants(v, angle):
    if np.linalg.norm(v) < 1e-3:
        return
    n = v / np.linalg.norm(v)
    R = rodrigues(n, np.cos(angle), np.sin(angle))
    assert np.max(np.abs(R.T @ R - np.eye(3))) < 1e-9
    assert abs(np.linalg.det(R) - 1.0) < 1e-9
    assert np.max(np.abs(R @ n - n)) < 1e-12


def test_rot6d_examples():
    assert np.array_equal(rot6d_to_matrix([1, 0, 0, 0, 1, 0]), np.eye(3))
    assert np.array_equal(rot6d_to_matrix([2, 0, 0, 0, 3, 0]), np.eye(3))
    assert np.array_equal(matrix_to_rot6d(np.eye(3)), [1, 0, 0, 0, 1, 0])
    assert np.array_equal(matrix_to_rot6d(np.diag([1.0, -1.0, -1.0])), [1, 0, 0, 0, -1, 0])


def test_rot6d_round_trip(rng):
    R = random_rotations(rng, 100)
    back = rot6d_to_matrix(matrix_to_rot6d(R))
    assert np.max(np.abs(back - R)) < 1e-9
    # the 6D encoding of a valid rotation needs no renormalisation
    assert np.max(np.abs(back - R)) < 1e-15
    assert np.max(np.abs(matrix_to_rot6d(back) - matrix_to_rot6d(R))) < 1e-15


def test_rot6d_output_is_rotation(rng):
    for r in rng.normal(size=(50, 6)):
        assert is_rotation(rot6d_to_matrix(r))


@pytest.mark.parametrize("r", [[0, 0, 0, 0, 1, 0], [1, 0, 0, 2, 0, 0], [1, 2, 3, 0, 0, 0]])
def test_rot6d_degenerate(r):
    with pytest.raises(DegenerateRepresentationError):
        rot6d_to_matrix(r)


def test_axis_angle(rng):
    R = axis_angle_to_matrix([0, 0, 3], np.pi / 2)
    assert np.allclose(R @ [1, 0, 0], [0, 1, 0], atol=1e-15)
