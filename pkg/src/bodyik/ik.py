"""Analytic inverse kinematics by twist-and-swing decomposition.

Each joint's local rotation is written ``R = R_swing @ R_twist``: the swing is
the minimal rotation taking the template bone onto the observed bone, the
twist spins about the template bone and cannot be read from a skeleton, so it
is supplied as a ``(cos, sin)`` pair. Joints are solved in topological order
with target bones expressed in the parent's accumulated frame.

Joint-to-bone convention: a joint's rotation moves the bone to its *child*.
Joints with several children (pelvis, spine3) swing onto their primary child
and fit the twist in closed form from the remaining children. Leaf joints
(feet, head, hands) have no outgoing bone; their rotation is taken to be a
pure twist about the incoming bone.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _pykernels, kernels
from .bodymodel import NUM_BETAS, NUM_JOINTS, BodyModel, MeshParams, shaped_rest_joints_batch
from .errors import PreconditionError, ShapeMismatchError
from .rotmath import matrix_to_rot6d

LENGTH_TOL = _pykernels.LENGTH_TOL
CAMERA_INIT = (0.9, 0.0, 0.0)


def _vec3(v, name):
    v = np.asarray(v, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(v)) or np.linalg.norm(v) <= LENGTH_TOL:
        raise PreconditionError(f"{name} must be a finite vector longer than {LENGTH_TOL}")
    return v


def swing_from_vectors(t, p) -> np.ndarray:
    """Minimal rotation with ``R @ t/|t| == p/|p|``.

    The axis is ``t x p`` normalised and the angle comes from the normalised
    dot and cross products. Parallel inputs give the identity; antiparallel
    inputs give a half turn about the global x axis projected perpendicular
    to ``t`` (y axis if x is parallel to ``t``).
    """
    return _pykernels.swing(_vec3(t, "t"), _vec3(p, "p"))


def twist_matrix(t, c_phi: float, s_phi: float) -> np.ndarray:
    """Rotation by ``(c_phi, s_phi)`` about the (unnormalised) bone axis ``t``."""
    t = _vec3(t, "twist axis")
    if abs(c_phi * c_phi + s_phi * s_phi - 1.0) > 1e-6:
        raise PreconditionError(f"twist pair ({c_phi}, {s_phi}) is not on the unit circle")
    return _pykernels.twist(t, float(c_phi), float(s_phi))


def twist_axes_batch(model: BodyModel, betas) -> np.ndarray:
    """(B, 24, 3) template bone axis of every joint; the root row is its primary bone."""
    rest = shaped_rest_joints_batch(model, betas)
    tree = model.tree
    child = tree.primary_child
    leaf = child < 0
    head = np.where(leaf, np.arange(NUM_JOINTS), child)
    tail = np.where(leaf, tree.parents, np.arange(NUM_JOINTS))
    return rest[:, head] - rest[:, tail]


def twist_axes(model: BodyModel, beta) -> np.ndarray:
    """(24, 3) template bone axes under shape ``beta``."""
    return twist_axes_batch(model, np.asarray(beta, dtype=np.float64).reshape(1, NUM_BETAS))[0]


@dataclass
class IKResult:
    rotations: np.ndarray  # (24, 3, 3)
    theta: np.ndarray  # (24, 6)
    degenerate: np.ndarray  # (24,) bool

    @property
    def ok(self) -> bool:
        return not bool(self.degenerate.any())


def _check_batch(model, skeletons, twists, betas):
    skeletons = np.asarray(skeletons, dtype=np.float64)
    twists = np.asarray(twists, dtype=np.float64)
    betas = np.asarray(betas, dtype=np.float64)
    if skeletons.ndim != 3 or skeletons.shape[1:] != (NUM_JOINTS, 3):
        raise ShapeMismatchError(f"skeletons must be (B, 24, 3), got {skeletons.shape}")
    B = skeletons.shape[0]
    if twists.shape != (B, NUM_JOINTS, 2):
        raise ShapeMismatchError(f"twists must be (B, 24, 2), got {twists.shape}")
    if betas.shape != (B, NUM_BETAS):
        raise ShapeMismatchError(f"betas must be (B, 10), got {betas.shape}")
    if not np.all(np.isfinite(skeletons)):
        raise PreconditionError("skeleton contains non-finite joints")
    return skeletons, twists, betas


def solve_ik_batch(model: BodyModel, skeletons, twists, betas) -> IKResult:
    """Batched :func:`solve_ik`: arrays carry a leading person axis."""
    skeletons, twists, betas = _check_batch(model, skeletons, twists, betas)
    rest = shaped_rest_joints_batch(model, betas)
    tree = model.tree
    rots, flags = kernels.ik_batch(
        tree.parents, tree.primary_child, tree.secondary_children, rest, skeletons, twists
    )
    return IKResult(rots, matrix_to_rot6d(rots), flags.astype(bool))


def solve_ik(model: BodyModel, skeleton, twists, beta, *, return_info: bool = False):
    """Recover 6D joint rotations reproducing ``skeleton`` under FK.

    Args:
        skeleton: (24, 3) joint positions in meters. Only bone directions are
            used, so global translation and bone-length mismatch are ignored.
        twists: (24, 2) twist (cos, sin) pairs; renormalised before use. The
            root entry and entries of multi-child joints are not used.
        beta: (10,) shape used for the template bones.
        return_info: also return the :class:`IKResult` with rotation
            matrices and per-joint degeneracy flags (identity fallback).

    Returns:
        (24, 6) 6D rotations, optionally with the IKResult.
    """
    res = solve_ik_batch(
        model,
        np.asarray(skeleton, dtype=np.float64)[None],
        np.asarray(twists, dtype=np.float64)[None],
        np.asarray(beta, dtype=np.float64)[None],
    )
    single = IKResult(res.rotations[0], res.theta[0], res.degenerate[0])
    return (single.theta, single) if return_info else single.theta


def extract_twist_batch(model: BodyModel, rotations, betas) -> np.ndarray:
    rotations = np.asarray(rotations, dtype=np.float64)
    if rotations.ndim != 4 or rotations.shape[1:] != (NUM_JOINTS, 3, 3):
        raise ShapeMismatchError(f"rotations must be (B, 24, 3, 3), got {rotations.shape}")
    rest = shaped_rest_joints_batch(model, betas)
    return kernels.twist_batch(model.tree.parents, model.tree.primary_child, rest, rotations)


def extract_twist(model: BodyModel, rotations, beta=None) -> np.ndarray:
    """Twist (cos, sin) of each local rotation about its template bone axis.

    ``R = swing(t, R t) @ twist`` with ``twist`` a rotation about ``t``; the
    root entry is (1, 0).
    """
    beta = np.zeros(NUM_BETAS) if beta is None else np.asarray(beta, dtype=np.float64)
    return extract_twist_batch(model, np.asarray(rotations)[None], beta[None])[0]


def init_params(model: BodyModel, skeletons, twists, betas) -> list[MeshParams]:
    """IK every person independently; camera starts at (0.9, 0, 0)."""
    skeletons = list(skeletons)
    twists = list(twists)
    betas = list(betas)
    if not (len(skeletons) == len(twists) == len(betas)):
        raise ShapeMismatchError("skeletons, twists and betas must have equal length")
    if not skeletons:
        return []
    res = solve_ik_batch(model, np.stack(skeletons), np.stack(twists), np.stack(betas))
    return [
        MeshParams(res.theta[i], betas[i], np.array(CAMERA_INIT))
        for i in range(len(skeletons))
    ]
