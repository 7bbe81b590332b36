"""Rotation algebra: skew matrices, Rodrigues rotations and the 6D encoding.

Angles are passed as ``(cos, sin)`` pairs rather than radians. All arrays are
float64.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateRepresentationError, PreconditionError

DEGENERACY_TOL = 1e-8


def skew(v) -> np.ndarray:
    """Return the cross-product matrix ``[v]x`` so that ``skew(v) @ w == cross(v, w)``."""
    x, y, z = (float(c) for c in np.asarray(v, dtype=np.float64).reshape(3))
    return np.array(
        [[0.0, -z, y],
         [z, 0.0, -x],
         [-y, x, 0.0]]
    )


def rodrigues(axis, cos_a: float, sin_a: float) -> np.ndarray:
    """Rotation by the angle ``(cos_a, sin_a)`` about the unit vector ``axis``.

    Computes ``I + sin_a [n]x + (1 - cos_a) [n]x^2``.

    Raises:
        PreconditionError: if ``axis`` is not unit length (1e-8) or the
            angle pair is off the unit circle by more than 1e-6.
    """
    n = np.asarray(axis, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(n)) or abs(np.linalg.norm(n) - 1.0) > DEGENERACY_TOL:
        raise PreconditionError(f"rotation axis must be unit length, got norm {np.linalg.norm(n)!r}")
    if abs(cos_a * cos_a + sin_a * sin_a - 1.0) > 1e-6:
        raise PreconditionError(f"(cos, sin) = ({cos_a}, {sin_a}) is not on the unit circle")
    k = skew(n)
    return np.eye(3) + sin_a * k + (1.0 - cos_a) * (k @ k)


def rot6d_to_matrix(r) -> np.ndarray:
    """Gram-Schmidt a 6D encoding (two stacked columns) into a rotation matrix.

    Accepts shape ``(..., 6)`` and returns ``(..., 3, 3)``.
    """
    r = np.asarray(r, dtype=np.float64)
    if r.shape[-1] != 6:
        raise PreconditionError(f"6D rotation must have trailing dimension 6, got {r.shape}")
    a1 = r[..., 0:3]
    a2 = r[..., 3:6]
    n1 = np.linalg.norm(a1, axis=-1, keepdims=True)
    if np.any(n1 < DEGENERACY_TOL):
        raise DegenerateRepresentationError("first 6D column is (near) zero")
    c1 = a1 / n1
    resid = a2 - np.sum(c1 * a2, axis=-1, keepdims=True) * c1
    n2 = np.linalg.norm(resid, axis=-1, keepdims=True)
    if np.any(n2 < DEGENERACY_TOL):
        raise DegenerateRepresentationError("6D columns are parallel or the second is zero")
    c2 = resid / n2
    c3 = np.cross(c1, c2)
    return np.stack([c1, c2, c3], axis=-1)


def matrix_to_rot6d(R) -> np.ndarray:
    """First two columns of ``R`` concatenated: ``(..., 3, 3) -> (..., 6)``."""
    R = np.asarray(R, dtype=np.float64)
    return np.concatenate([R[..., :, 0], R[..., :, 1]], axis=-1)


def axis_angle_to_matrix(axis, angle: float) -> np.ndarray:
    """Rotation about ``axis`` (normalised here) by ``angle`` radians."""
    n = np.asarray(axis, dtype=np.float64).reshape(3)
    n = n / np.linalg.norm(n)
    return rodrigues(n, float(np.cos(angle)), float(np.sin(angle)))


def is_rotation(R, tol: float = 1e-9) -> bool:
    R = np.asarray(R, dtype=np.float64)
    ortho = np.max(np.abs(R.T @ R - np.eye(3)))
    return bool(ortho < tol and abs(np.linalg.det(R) - 1.0) < tol)
