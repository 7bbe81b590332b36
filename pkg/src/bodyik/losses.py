"""Training objectives as differentiable functions on :class:`~bodyik.autograd.Tensor`.

Reduction convention (fixed here, used everywhere):

* L1 terms of the skeleton loss are means over all elements.
* Plain norms ``||x||_2`` are Euclidean norms of the flattened per-person
  tensor; squared norms ``||x||_2^2`` are plain sums of squares.
* Adversarial norms act on a scalar discriminator output, i.e. ``|D(x) - y|``.
* Batched inputs (leading person axis) are reduced by the mean over persons.

Every function accepts numpy arrays or Tensors and returns a scalar Tensor;
call ``float()`` on it for the value or ``.backward()`` for gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import Tensor, as_tensor, l2norm, parameter
from .errors import ShapeMismatchError

K = 24


@dataclass
class SkeletonGT:
    abs3d: np.ndarray
    rel3d: np.ndarray
    joints2d: np.ndarray

    @classmethod
    def from_abs(cls, abs3d, joints2d, root: int = 0) -> "SkeletonGT":
        abs3d = np.asarray(abs3d, dtype=np.float64)
        return cls(abs3d, reroot(abs3d, root), np.asarray(joints2d, dtype=np.float64))


def reroot(joints, root: int = 0):
    """Root-relative joints (works on arrays and Tensors, with or without a batch axis)."""
    if isinstance(joints, Tensor):
        return joints - joints[..., root:root + 1, :]
    joints = np.asarray(joints, dtype=np.float64)
    return joints - joints[..., root:root + 1, :]


def _person_mean(per_person: Tensor) -> Tensor:
    return per_person if per_person.ndim == 0 else per_person.mean()


def project_ortho(P, camera):
    """Weak-perspective projection ``(x, y) -> (s x + tx, s y + ty)``; z is ignored."""
    P = as_tensor(P)
    camera = as_tensor(camera)
    s = camera[..., 0:1]
    t = camera[..., 1:3]
    if P.ndim == 3:
        s = s.reshape(-1, 1, 1)
        t = t.reshape(-1, 1, 2)
    return P[..., 0:2] * s + t


def loss_skeleton(pred_abs, pred_rel, pred_2d, gt: SkeletonGT, camera) -> Tensor:
    """Four mean-L1 terms: absolute 3D, relative 3D, direct 2D, projected relative 3D vs 2D."""
    pred_abs, pred_rel, pred_2d = as_tensor(pred_abs), as_tensor(pred_rel), as_tensor(pred_2d)
    proj = project_ortho(pred_rel, camera)
    return (
        (pred_abs - gt.abs3d).abs().mean()
        + (pred_rel - gt.rel3d).abs().mean()
        + (pred_2d - gt.joints2d).abs().mean()
        + (proj - gt.joints2d).abs().mean()
    )


def loss_angle(pred_cos_sin, gt_cos_sin) -> Tensor:
    """Mean over joints of the Euclidean error of (cos, sin) pairs."""
    diff = as_tensor(pred_cos_sin) - np.asarray(gt_cos_sin, dtype=np.float64)
    return _person_mean(l2norm(diff, axis=-1).mean(axis=-1))


def loss_shape(pred_beta, gt_beta) -> Tensor:
    diff = as_tensor(pred_beta) - np.asarray(gt_beta, dtype=np.float64)
    return _person_mean(l2norm(diff, axis=-1))


def loss_twist_shape(pred_cos_sin, pred_beta, gt_twists, gt_beta) -> Tensor:
    return loss_angle(pred_cos_sin, gt_twists) + loss_shape(pred_beta, gt_beta)


def _flat_person(x: Tensor, trailing: int) -> Tensor:
    return x.reshape(-1) if x.ndim == trailing else x.reshape(x.shape[0], -1)


def loss_mesh(theta_ref, beta_ref, gt_theta, gt_beta) -> Tensor:
    """``||theta_ref - theta_gt||_2 + ||beta_ref - beta_gt||_2`` on 6D pose and shape."""
    dtheta = _flat_person(as_tensor(theta_ref) - np.asarray(gt_theta, dtype=np.float64), 2)
    dbeta = as_tensor(beta_ref) - np.asarray(gt_beta, dtype=np.float64)
    return _person_mean(l2norm(dtheta, axis=-1)) + _person_mean(l2norm(dbeta, axis=-1))


def loss_pose(P_ref, camera, gt_rel3d, gt_2d) -> Tensor:
    """Squared-L2 3D error of root-relative joints plus squared-L2 reprojection error."""
    P_ref = as_tensor(P_ref)
    d3 = P_ref - np.asarray(gt_rel3d, dtype=np.float64)
    d2 = project_ortho(P_ref, camera) - np.asarray(gt_2d, dtype=np.float64)
    axes = (-2, -1)
    return _person_mean((d3 * d3).sum(axis=axes)) + _person_mean((d2 * d2).sum(axis=axes))


class Discriminator:
    """Two-layer perceptron ``x -> tanh(x W1 + b1) W2 + b2`` with a scalar output."""

    HIDDEN = 64

    def __init__(self, in_dim: int, rng=None, hidden: int = HIDDEN, scale: float | None = None):
        rng = np.random.default_rng(rng)
        s1 = 1.0 / np.sqrt(in_dim) if scale is None else scale
        s2 = 1.0 / np.sqrt(hidden) if scale is None else scale
        self.in_dim = in_dim
        self.params = {
            "w1": parameter(rng.normal(0.0, s1, (in_dim, hidden))),
            "b1": parameter(np.zeros(hidden)),
            "w2": parameter(rng.normal(0.0, s2, (hidden, 1))),
            "b2": parameter(np.zeros(1)),
        }

    @classmethod
    def zeros(cls, in_dim: int, hidden: int = HIDDEN) -> "Discriminator":
        return cls(in_dim, hidden=hidden, scale=0.0)

    def __call__(self, sample) -> Tensor:
        return disc_forward(self, sample)


def disc_forward(D: Discriminator, sample) -> Tensor:
    """Scalar score per sample: ``(in_dim,) -> ()`` or ``(B, in_dim) -> (B,)``."""
    x = as_tensor(sample)
    if x.ndim >= 2 and x.shape[-1] != D.in_dim:
        x = x.reshape(x.shape[0], -1)
    elif x.ndim == 1 and x.shape[0] != D.in_dim:
        x = x.reshape(-1)
    if x.shape[-1] != D.in_dim:
        raise ShapeMismatchError(f"discriminator expects {D.in_dim} inputs, got {x.shape}")
    p = D.params
    h = (x @ p["w1"] + p["b1"]).tanh()
    out = h @ p["w2"] + p["b2"]
    return out[..., 0]


def _abs_gap(scores: Tensor, target: float) -> Tensor:
    return _person_mean((scores - target).abs())


def loss_adv_discriminator(D_theta, D_beta, fake_theta, fake_beta, real_theta, real_beta) -> Tensor:
    """Least-squares discriminator objective: fakes towards 0, reals towards 1."""
    return (
        _abs_gap(disc_forward(D_theta, fake_theta), 0.0)
        + _abs_gap(disc_forward(D_theta, real_theta), 1.0)
        + _abs_gap(disc_forward(D_beta, fake_beta), 0.0)
        + _abs_gap(disc_forward(D_beta, real_beta), 1.0)
    )


def loss_adv_generator(D_theta, D_beta, theta_ref, beta_ref) -> Tensor:
    return _abs_gap(disc_forward(D_theta, theta_ref), 1.0) + _abs_gap(disc_forward(D_beta, beta_ref), 1.0)


REFINE_TERMS = ("mesh", "pose", "adv_generator", "adv_discriminator")


def loss_total_refine(mesh, pose, adv_generator, adv_discriminator, weights=None):
    """Sum of the four refinement terms, plus a breakdown dict of floats.

    ``weights`` maps term names to multipliers (default 1.0 each).
    """
    weights = weights or {}
    terms = dict(zip(REFINE_TERMS, (mesh, pose, adv_generator, adv_discriminator)))
    total = as_tensor(0.0)
    for name, value in terms.items():
        total = total + as_tensor(value) * float(weights.get(name, 1.0))
    breakdown = {name: float(value) for name, value in terms.items()}
    breakdown["total"] = float(total)
    return total, breakdown


def loss_total(skeleton, twist_shape, refine) -> Tensor:
    """Overall objective: skeleton + twist/shape + refinement."""
    return as_tensor(skeleton) + as_tensor(twist_shape) + as_tensor(refine)


def flatten_theta(theta):
    t = as_tensor(theta)
    return t.reshape(-1) if t.ndim == 2 else t.reshape(t.shape[0], -1)


__all__ = [
    "Discriminator",
    "SkeletonGT",
    "disc_forward",
    "flatten_theta",
    "loss_adv_discriminator",
    "loss_adv_generator",
    "loss_angle",
    "loss_mesh",
    "loss_pose",
    "loss_shape",
    "loss_skeleton",
    "loss_total",
    "loss_total_refine",
    "loss_twist_shape",
    "project_ortho",
    "reroot",
]
