"""SMPL-style deformable body model: shape blendshapes, kinematic tree,
forward kinematics, linear blend skinning and mesh-to-joint regression.

Licensed SMPL assets are not shipped. :func:`generate_synthetic_model` builds a
stand-in with the same 24-joint topology and array contracts, and
:func:`load_model` reads externally supplied models from JSON.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .errors import PreconditionError, ShapeMismatchError
from .rotmath import rot6d_to_matrix

NUM_JOINTS = 24
NUM_BETAS = 10

SMPL_PARENTS = np.array(
    [-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21],
    dtype=np.int64,
)

JOINT_NAMES = (
    "pelvis", "left_hip", "right_hip", "spine1", "left_knee", "right_knee",
    "spine2", "left_ankle", "right_ankle", "spine3", "left_foot", "right_foot",
    "neck", "left_collar", "right_collar", "head", "left_shoulder",
    "right_shoulder", "left_elbow", "right_elbow", "left_wrist", "right_wrist",
    "left_hand", "right_hand",
)

# Child whose bone carries the swing/twist axis for multi-child joints.
_PRIMARY_OVERRIDE = {0: 3, 9: 12}

# Rest joints of a generic adult (meters, y up, +x = subject's left, pelvis at origin).
_REST_JOINTS = np.array([
    [0.00, 0.00, 0.00],
    [0.06, -0.09, 0.00],
    [-0.06, -0.09, 0.00],
    [0.00, 0.11, -0.01],
    [0.10, -0.47, 0.00],
    [-0.10, -0.47, 0.00],
    [0.00, 0.24, 0.00],
    [0.09, -0.87, -0.04],
    [-0.09, -0.87, -0.04],
    [0.00, 0.30, 0.02],
    [0.11, -0.93, 0.08],
    [-0.11, -0.93, 0.08],
    [0.00, 0.51, -0.01],
    [0.08, 0.43, 0.00],
    [-0.08, 0.43, 0.00],
    [0.00, 0.60, 0.04],
    [0.19, 0.46, -0.01],
    [-0.19, 0.46, -0.01],
    [0.45, 0.45, -0.03],
    [-0.45, 0.45, -0.03],
    [0.70, 0.46, -0.02],
    [-0.70, 0.46, -0.02],
    [0.78, 0.45, -0.03],
    [-0.78, 0.45, -0.03],
])

_RING = 4
_HELIX_TURN = 6


@dataclass(frozen=True)
class KinematicTree:
    parents: np.ndarray
    names: tuple = JOINT_NAMES
    primary_child: np.ndarray = field(init=False, repr=False)
    secondary_children: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        parents = np.asarray(self.parents, dtype=np.int64)
        if parents.shape != (NUM_JOINTS,):
            raise ShapeMismatchError(f"kinematic tree must have {NUM_JOINTS} joints, got {parents.shape}")
        if np.count_nonzero(parents < 0) != 1 or parents[0] != -1:
            raise PreconditionError("tree must have exactly one root at index 0")
        if np.any(parents[1:] >= np.arange(1, NUM_JOINTS)):
            raise PreconditionError("parents must be topologically ordered (parent[k] < k)")
        children = [[int(c) for c in np.flatnonzero(parents == k)] for k in range(NUM_JOINTS)]
        primary = np.full(NUM_JOINTS, -1, dtype=np.int64)
        secondary = np.full((NUM_JOINTS, 2), -1, dtype=np.int64)
        for k, ch in enumerate(children):
            if not ch:
                continue
            p = _PRIMARY_OVERRIDE.get(k, ch[0]) if len(ch) > 1 else ch[0]
            if p not in ch:
                p = ch[0]
            primary[k] = p
            rest = [c for c in ch if c != p]
            if len(rest) > secondary.shape[1]:
                secondary = np.pad(secondary, ((0, 0), (0, len(rest) - secondary.shape[1])), constant_values=-1)
            secondary[k, : len(rest)] = rest
        object.__setattr__(self, "parents", parents)
        object.__setattr__(self, "primary_child", primary)
        object.__setattr__(self, "secondary_children", secondary)

    @property
    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.primary_child < 0)


@dataclass(frozen=True, eq=False)
class BodyModel:
    """Immutable body model arrays.

    Attributes:
        template_vertices: (V, 3) rest mesh in meters.
        faces: (F, 3) vertex indices.
        shape_dirs: (V, 3, 10) displacement per unit shape coefficient.
        skin_weights: (V, 24) convex skinning weights.
        joint_regressor: (24, V) mesh-to-joint regressor, rows sum to one.
        tree: the 24-joint kinematic tree.
    """

    template_vertices: np.ndarray
    faces: np.ndarray
    shape_dirs: np.ndarray
    skin_weights: np.ndarray
    joint_regressor: np.ndarray
    tree: KinematicTree

    def __post_init__(self):
        for name in ("template_vertices", "shape_dirs", "skin_weights", "joint_regressor"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        faces = np.array(self.faces, dtype=np.int64)
        faces.setflags(write=False)
        object.__setattr__(self, "faces", faces)

    @property
    def num_vertices(self) -> int:
        return self.template_vertices.shape[0]

    @property
    def parents(self) -> np.ndarray:
        return self.tree.parents

    @property
    def rest_joints(self) -> np.ndarray:
        return self.joint_regressor @ self.template_vertices

    def validate(self) -> None:
        """Raise if any array invariant is violated."""
        V = self.num_vertices
        if V < 100:
            raise PreconditionError(f"body model needs at least 100 vertices, got {V}")
        if self.template_vertices.shape != (V, 3):
            raise ShapeMismatchError("template_vertices must be (V, 3)")
        if self.shape_dirs.shape != (V, 3, NUM_BETAS):
            raise ShapeMismatchError(f"shape_dirs must be (V, 3, {NUM_BETAS})")
        if self.skin_weights.shape != (V, NUM_JOINTS):
            raise ShapeMismatchError(f"skin_weights must be (V, {NUM_JOINTS})")
        if self.joint_regressor.shape != (NUM_JOINTS, V):
            raise ShapeMismatchError(f"joint_regressor must be ({NUM_JOINTS}, V)")
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise ShapeMismatchError("faces must be (F, 3)")
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= V):
            raise PreconditionError("faces reference vertices out of range")
        w = self.skin_weights
        if np.any(w < 0) or np.max(np.abs(w.sum(axis=1) - 1.0)) > 1e-9:
            raise PreconditionError("skin weights must be non-negative and sum to one")
        if np.max(np.count_nonzero(w, axis=1)) > 4:
            raise PreconditionError("at most 4 skinning influences per vertex")
        if np.max(np.abs(self.joint_regressor.sum(axis=1) - 1.0)) > 1e-9:
            raise PreconditionError("joint regressor rows must sum to one")
        for name in ("template_vertices", "shape_dirs", "skin_weights", "joint_regressor"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise PreconditionError(f"{name} contains non-finite values")


@dataclass
class MeshParams:
    """Per-person parameters: 6D joint rotations, shape coefficients, camera."""

    theta: np.ndarray
    beta: np.ndarray
    camera: np.ndarray

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64).reshape(NUM_JOINTS, 6)
        self.beta = np.asarray(self.beta, dtype=np.float64).reshape(NUM_BETAS)
        self.camera = np.asarray(self.camera, dtype=np.float64).reshape(3)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.theta.ravel(), self.beta, self.camera])

    @classmethod
    def from_flat(cls, vec) -> "MeshParams":
        vec = np.asarray(vec, dtype=np.float64)
        n = NUM_JOINTS * 6
        return cls(vec[:n], vec[n:n + NUM_BETAS], vec[n + NUM_BETAS:n + NUM_BETAS + 3])

    @classmethod
    def zeros(cls) -> "MeshParams":
        return cls(np.zeros((NUM_JOINTS, 6)), np.zeros(NUM_BETAS), np.zeros(3))


@dataclass(frozen=True, eq=False)
class BodyMesh:
    vertices: np.ndarray
    faces: np.ndarray


def _perpendicular_frame(axis):
    axis = axis / np.linalg.norm(axis)
    helper = np.array([1.0, 0.0, 0.0]) if abs(axis[0]) < 0.9 else np.array([0.0, 0.0, 1.0])
    e1 = np.cross(axis, helper)
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(axis, e1)


def generate_synthetic_model(seed: int = 0, V: int = 600) -> BodyModel:
    """Build a deterministic humanoid body model with ``V`` vertices.

    Every joint owns a ring of 4 vertices centred on it and rigidly bound to
    it; the regressor averages that ring, so regressed joints coincide with FK
    joints in every pose. The remaining vertices form helical tubes along the
    bones, skinned to the bone's parent joint with a blend towards the child.
    The first six shape directions are linear maps of the body about the
    pelvis (they change bone lengths); the last four are per-bone radial
    bulges that leave joints fixed.
    """
    V = int(V)
    n_ring = NUM_JOINTS * _RING
    if V < max(100, n_ring + 1):
        raise PreconditionError(f"V must be at least 100, got {V}")
    rng = np.random.default_rng(seed)
    tree = KinematicTree(SMPL_PARENTS)
    parents = tree.parents

    scale = rng.uniform(0.92, 1.08)
    joints = _REST_JOINTS * scale + rng.uniform(-0.004, 0.004, size=(NUM_JOINTS, 3))
    joints[0] = 0.0

    bones = np.arange(1, NUM_JOINTS)
    lengths = np.linalg.norm(joints[bones] - joints[parents[bones]], axis=1)
    n_bone_total = V - n_ring
    alloc = np.floor(n_bone_total * lengths / lengths.sum()).astype(int)
    for i in np.argsort(-lengths)[: n_bone_total - alloc.sum()]:
        alloc[i] += 1

    verts = np.zeros((V, 3))
    weights = np.zeros((V, NUM_JOINTS))
    regressor = np.zeros((NUM_JOINTS, V))
    radial = np.zeros((V, 3))  # unit outward direction used by bulge shapes
    bone_of = np.full(V, -1)
    faces = []

    ring_radius = 0.03 * scale
    for k in range(NUM_JOINTS):
        e1, e2 = _perpendicular_frame(rng.normal(size=3))
        idx = np.arange(k * _RING, (k + 1) * _RING)
        offsets = np.array([e1, -e1, e2, -e2]) * ring_radius
        verts[idx] = joints[k] + offsets
        radial[idx] = offsets / ring_radius
        weights[idx, k] = 1.0
        regressor[k, idx] = 1.0 / _RING
        faces += [(idx[0], idx[2], idx[1]), (idx[1], idx[3], idx[0])]

    start = n_ring
    for b, c in enumerate(bones):
        n = int(alloc[b])
        if n == 0:
            continue
        p = parents[c]
        axis = joints[c] - joints[p]
        e1, e2 = _perpendicular_frame(axis)
        radius = rng.uniform(0.03, 0.06) * scale
        i = np.arange(n)
        u = (i + 0.5) / n
        ang = 2.0 * np.pi * i / _HELIX_TURN
        out = np.cos(ang)[:, None] * e1 + np.sin(ang)[:, None] * e2
        idx = start + i
        verts[idx] = joints[p] + u[:, None] * axis + radius * out
        radial[idx] = out
        bone_of[idx] = b
        ramp = np.clip((u - 0.7) / 0.3, 0.0, 1.0)
        w_child = 0.5 * ramp * ramp * (3.0 - 2.0 * ramp)
        weights[idx, p] = 1.0 - w_child
        weights[idx, c] += w_child
        for a in range(n - _HELIX_TURN):
            faces.append((start + a, start + a + 1, start + a + _HELIX_TURN))
            if a + _HELIX_TURN + 1 < n:
                faces.append((start + a + 1, start + a + _HELIX_TURN + 1, start + a + _HELIX_TURN))
        if n < _HELIX_TURN + 1:
            for a in range(1, n - 1):
                faces.append((start, start + a, start + a + 1))
        start += n

    shape_dirs = np.zeros((V, 3, NUM_BETAS))
    centred = verts - joints[0]
    for j in range(6):
        A = rng.uniform(-0.015, 0.015, size=(3, 3))
        A = 0.5 * (A + A.T)
        shape_dirs[:, :, j] = centred @ A.T
    for j in range(6, NUM_BETAS):
        per_bone = rng.uniform(-0.01, 0.01, size=len(bones))
        per_joint = rng.uniform(-0.005, 0.005, size=NUM_JOINTS)
        amp = np.where(bone_of >= 0, per_bone[np.maximum(bone_of, 0)], 0.0)
        amp[:n_ring] = np.repeat(per_joint, _RING)
        shape_dirs[:, :, j] = amp[:, None] * radial

    model = BodyModel(
        template_vertices=verts,
        faces=np.array(faces, dtype=np.int64),
        shape_dirs=shape_dirs,
        skin_weights=weights,
        joint_regressor=regressor,
        tree=tree,
    )
    model.validate()
    return model


def shaped_rest(model: BodyModel, beta) -> tuple[np.ndarray, np.ndarray]:
    """Rest-pose vertices and regressed rest joints for shape ``beta``."""
    beta = np.asarray(beta, dtype=np.float64).reshape(NUM_BETAS)
    vertices = model.template_vertices + model.shape_dirs @ beta
    return vertices, model.joint_regressor @ vertices


def shaped_rest_joints_batch(model: BodyModel, betas) -> np.ndarray:
    """(B, 10) shapes -> (B, 24, 3) rest joints, without materialising meshes."""
    betas = np.asarray(betas, dtype=np.float64).reshape(-1, NUM_BETAS)
    joint_dirs = np.einsum("kv,vcj->kcj", model.joint_regressor, model.shape_dirs)
    return model.rest_joints[None] + np.einsum("kcj,bj->bkc", joint_dirs, betas)


def forward_kinematics(model: BodyModel, rotations, beta) -> tuple[np.ndarray, np.ndarray]:
    """Pose the kinematic tree.

    Args:
        rotations: (24, 3, 3) local joint rotations.
        beta: (10,) shape coefficients.

    Returns:
        joints (24, 3) and global transforms (24, 4, 4); the root stays at its
        rest position.
    """
    rotations = np.asarray(rotations, dtype=np.float64)
    if rotations.shape != (NUM_JOINTS, 3, 3):
        raise ShapeMismatchError(f"expected (24, 3, 3) rotations, got {rotations.shape}")
    _, rest = shaped_rest(model, beta)
    joints, grots = kernels.fk_batch(model.parents, rest[None], rotations[None])
    transforms = np.zeros((NUM_JOINTS, 4, 4))
    transforms[:, :3, :3] = grots[0]
    transforms[:, :3, 3] = joints[0]
    transforms[:, 3, 3] = 1.0
    return joints[0], transforms


def skin(model: BodyModel, global_transforms, beta) -> BodyMesh:
    """Linear blend skinning of the shaped rest mesh by ``global_transforms``."""
    G = np.asarray(global_transforms, dtype=np.float64)
    vertices, rest = shaped_rest(model, beta)
    rel = vertices[:, None, :] - rest[None, :, :]  # (V, K, 3)
    moved = np.einsum("kij,vkj->vki", G[:, :3, :3], rel) + G[None, :, :3, 3]
    posed = np.einsum("vk,vki->vi", model.skin_weights, moved)
    return BodyMesh(posed, model.faces)


def params_to_mesh(model: BodyModel, params: MeshParams) -> tuple[BodyMesh, np.ndarray]:
    """6D pose + shape -> skinned mesh and regressed joints (24, 3)."""
    rotations = rot6d_to_matrix(params.theta)
    _, transforms = forward_kinematics(model, rotations, params.beta)
    mesh = skin(model, transforms, params.beta)
    return mesh, model.joint_regressor @ mesh.vertices


def _sparse(mat):
    rows, cols = np.nonzero(mat)
    return [[int(r), int(c), float(mat[r, c])] for r, c in zip(rows, cols)]


def _dense(triplets, shape):
    out = np.zeros(shape)
    for r, c, v in triplets:
        out[int(r), int(c)] = v
    return out


def model_to_dict(model: BodyModel) -> dict:
    return {
        "template_vertices": model.template_vertices.tolist(),
        "faces": model.faces.tolist(),
        "shape_dirs": model.shape_dirs.tolist(),
        "skin_weights": _sparse(model.skin_weights),
        "joint_regressor": _sparse(model.joint_regressor),
        "parents": model.parents.tolist(),
    }


def model_from_dict(doc: dict) -> BodyModel:
    try:
        verts = np.asarray(doc["template_vertices"], dtype=np.float64)
        V = verts.shape[0]
        model = BodyModel(
            template_vertices=verts,
            faces=np.asarray(doc["faces"], dtype=np.int64).reshape(-1, 3),
            shape_dirs=np.asarray(doc["shape_dirs"], dtype=np.float64),
            skin_weights=_dense(doc["skin_weights"], (V, NUM_JOINTS)),
            joint_regressor=_dense(doc["joint_regressor"], (NUM_JOINTS, V)),
            tree=KinematicTree(np.asarray(doc["parents"], dtype=np.int64)),
        )
    except KeyError as exc:
        raise PreconditionError(f"model file is missing field {exc.args[0]!r}") from None
    model.validate()
    return model


def save_model(model: BodyModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model)))


def load_model(path) -> BodyModel:
    """Load a model JSON document (real SMPL-derived or synthetic)."""
    with open(path) as fh:
        return model_from_dict(json.load(fh))
