"""Differentiable parameters -> mesh -> joints path on autograd Tensors.

Numerically identical (up to rounding) to :func:`bodyik.bodymodel.params_to_mesh`,
but batched over persons and traceable for gradients.
"""

from __future__ import annotations

from .autograd import Tensor, as_tensor, concat, cross, stack
from .bodymodel import NUM_BETAS, NUM_JOINTS, BodyModel


def rot6d_to_matrix_t(x: Tensor) -> Tensor:
    """(..., 6) -> (..., 3, 3) Gram-Schmidt on Tensors."""
    x = as_tensor(x)
    a1 = x[..., 0:3]
    a2 = x[..., 3:6]
    c1 = a1 / (a1 * a1).sum(axis=-1, keepdims=True).sqrt()
    r = a2 - (c1 * a2).sum(axis=-1, keepdims=True) * c1
    c2 = r / (r * r).sum(axis=-1, keepdims=True).sqrt()
    c3 = cross(c1, c2)
    return stack([c1, c2, c3], axis=-1)


def shaped_vertices_t(model: BodyModel, beta: Tensor) -> Tensor:
    """(B, 10) -> (B, V, 3)."""
    beta = as_tensor(beta)
    V = model.num_vertices
    dirs = model.shape_dirs.reshape(V * 3, NUM_BETAS).T
    return (beta @ dirs).reshape(beta.shape[0], V, 3) + model.template_vertices


def forward_kinematics_t(model: BodyModel, rots: Tensor, rest: Tensor):
    """Batched FK: rots (B, 24, 3, 3), rest (B, 24, 3) -> joints (B, 24, 3), global rots."""
    parents = model.parents
    grots = []
    joints = []
    for k in range(NUM_JOINTS):
        q = parents[k]
        if q < 0:
            grots.append(rots[:, k])
            joints.append(rest[:, k])
        else:
            offset = rest[:, k] - rest[:, q]
            joints.append(joints[q] + (grots[q] @ offset.reshape(-1, 3, 1)).reshape(-1, 3))
            grots.append(grots[q] @ rots[:, k])
    return stack(joints, axis=1), stack(grots, axis=1)


def params_to_mesh_t(model: BodyModel, theta, beta):
    """theta (B, 24, 6), beta (B, 10) -> (vertices (B, V, 3), regressed joints (B, 24, 3))."""
    theta = as_tensor(theta)
    beta = as_tensor(beta)
    B = theta.shape[0]
    verts = shaped_vertices_t(model, beta)
    rest = model.joint_regressor @ verts
    rots = rot6d_to_matrix_t(theta)
    joints, grots = forward_kinematics_t(model, rots, rest)
    # per-joint affine [R | j - R rest], blended per vertex
    trans = joints - (grots @ rest.reshape(B, NUM_JOINTS, 3, 1)).reshape(B, NUM_JOINTS, 3)
    affine = concat([grots, trans.reshape(B, NUM_JOINTS, 3, 1)], axis=-1).reshape(B, NUM_JOINTS, 12)
    blended = (model.skin_weights @ affine).reshape(B, -1, 3, 4)
    posed = (blended[..., :3] @ verts.reshape(B, -1, 3, 1)).reshape(B, -1, 3) + blended[..., 3]
    return posed, model.joint_regressor @ posed


def params_to_joints_t(model: BodyModel, theta, beta) -> Tensor:
    return params_to_mesh_t(model, theta, beta)[1]
