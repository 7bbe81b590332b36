"""Relation-aware Transformer refiner over multi-person parameter tokens.

Each person contributes K tokens; token ``(i, k)`` is the person's image
feature slice for joint ``k`` followed by the joint's 6D rotation, the
person's 10 shape coefficients and 3 camera values, so a token is
``feat_dim + 19`` wide (2067 for 2048-d features). Up to N persons share one
sequence; empty slots are zero-filled and excluded from attention. The
encoder predicts a residual update that is added to the initial parameters.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .autograd import Tensor, as_tensor, gelu, layer_norm, parameter, softmax
from .bodymodel import NUM_BETAS, NUM_JOINTS, MeshParams
from .errors import NumericFailureError, PreconditionError, ShapeMismatchError

PARAM_WIDTH = 6 + NUM_BETAS + 3
CHECKPOINT_FORMAT = "bodyik-refiner-v1"


@dataclass
class RefinerConfig:
    N: int = 3
    K: int = NUM_JOINTS
    feat_dim: int = 64
    layers: int = 4
    heads: int = 8
    d_model: int = 128
    d_ff: int = 512
    mask_ratio_max: float = 0.3
    use_positional_embedding: bool = False

    def __post_init__(self):
        if self.K != NUM_JOINTS:
            raise PreconditionError(f"K must be {NUM_JOINTS} to match the body model")
        if self.N < 1 or self.layers < 1 or self.feat_dim < 0:
            raise PreconditionError("N and layers must be positive, feat_dim non-negative")
        if self.d_model % self.heads:
            raise PreconditionError(f"heads ({self.heads}) must divide d_model ({self.d_model})")
        if not 0.0 <= self.mask_ratio_max <= 1.0:
            raise PreconditionError("mask_ratio_max must lie in [0, 1]")

    @property
    def d_token(self) -> int:
        return self.feat_dim + PARAM_WIDTH

    @property
    def seq_len(self) -> int:
        return self.N * self.K

    @classmethod
    def desk(cls, **overrides) -> "RefinerConfig":
        """Small configuration for CPU-scale experiments and gradient checks."""
        base = dict(feat_dim=64, layers=2, heads=4, d_model=32, d_ff=128)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "RefinerConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise PreconditionError(f"unknown refiner config fields: {sorted(unknown)}")
        return cls(**doc)


@dataclass
class RefinerInput:
    tokens: np.ndarray  # (N*K, d_token)
    pad_mask: np.ndarray  # (N,) True where the slot holds a person
    mask_flags: np.ndarray  # (N*K,) True where the token was masked out

    @property
    def occupied_tokens(self) -> np.ndarray:
        K = self.tokens.shape[0] // self.pad_mask.shape[0]
        return np.repeat(self.pad_mask, K)


@dataclass
class RefinerWeights:
    """Named weight arrays plus the config they were built for."""

    config: RefinerConfig
    arrays: dict = field(default_factory=dict)

    def tensors(self, requires_grad: bool = False) -> dict:
        if requires_grad:
            return {k: parameter(v) for k, v in self.arrays.items()}
        return {k: Tensor(v) for k, v in self.arrays.items()}

    def copy(self) -> "RefinerWeights":
        return RefinerWeights(self.config, {k: v.copy() for k, v in self.arrays.items()})


def init_weights(config: RefinerConfig, seed: int = 0, zero_head: bool = True) -> RefinerWeights:
    """Random encoder weights; the output head starts at zero so the refiner is an identity map."""
    rng = np.random.default_rng(seed)
    d, f = config.d_model, config.d_ff

    def dense(n_in, n_out):
        return rng.normal(0.0, 1.0 / math.sqrt(n_in), (n_in, n_out))

    w = {"in_w": dense(config.d_token, d), "in_b": np.zeros(d)}
    if config.use_positional_embedding:
        w["pos"] = rng.normal(0.0, 0.02, (config.seq_len, d))
    for i in range(config.layers):
        p = f"l{i}."
        w[p + "ln1_g"] = np.ones(d)
        w[p + "ln1_b"] = np.zeros(d)
        for name in ("q", "k", "v", "o"):
            w[p + name + "_w"] = dense(d, d)
            w[p + name + "_b"] = np.zeros(d)
        w[p + "ln2_g"] = np.ones(d)
        w[p + "ln2_b"] = np.zeros(d)
        w[p + "ff1_w"] = dense(d, f)
        w[p + "ff1_b"] = np.zeros(f)
        w[p + "ff2_w"] = dense(f, d)
        w[p + "ff2_b"] = np.zeros(d)
    w["lnf_g"] = np.ones(d)
    w["lnf_b"] = np.zeros(d)
    head_scale = 0.0 if zero_head else 1.0 / math.sqrt(d)
    w["theta_w"] = rng.normal(0.0, 1.0, (d, 6)) * head_scale
    w["theta_b"] = np.zeros(6)
    w["shape_cam_w"] = rng.normal(0.0, 1.0, (d, NUM_BETAS + 3)) * head_scale
    w["shape_cam_b"] = np.zeros(NUM_BETAS + 3)
    return RefinerWeights(config, w)


def assemble_tokens(persons, config: RefinerConfig) -> RefinerInput:
    """Build the (N*K, d_token) token matrix from ``[(MeshParams, features (K, feat_dim)), ...]``."""
    persons = list(persons)
    if not 1 <= len(persons) <= config.N:
        raise PreconditionError(f"expected 1..{config.N} persons, got {len(persons)}")
    K = config.K
    tokens = np.zeros((config.seq_len, config.d_token))
    pad = np.zeros(config.N, dtype=bool)
    for i, (params, feats) in enumerate(persons):
        feats = np.asarray(feats, dtype=np.float64)
        if feats.shape != (K, config.feat_dim):
            raise ShapeMismatchError(f"person {i}: features must be ({K}, {config.feat_dim}), got {feats.shape}")
        rows = slice(i * K, (i + 1) * K)
        tokens[rows, : config.feat_dim] = feats
        tokens[rows, config.feat_dim: config.feat_dim + 6] = params.theta
        tokens[rows, config.feat_dim + 6: config.feat_dim + 6 + NUM_BETAS] = params.beta
        tokens[rows, config.feat_dim + 6 + NUM_BETAS:] = params.camera
        pad[i] = True
    return RefinerInput(tokens, pad, np.zeros(config.seq_len, dtype=bool))


def mask_patches(inp: RefinerInput, seed, ratio: float, config: RefinerConfig | None = None) -> RefinerInput:
    """Zero ``floor(ratio * occupied)`` occupied tokens chosen uniformly without replacement."""
    limit = config.mask_ratio_max if config is not None else 1.0
    if not 0.0 <= ratio <= limit:
        raise PreconditionError(f"mask ratio {ratio} outside [0, {limit}]")
    occupied = np.flatnonzero(inp.occupied_tokens & ~inp.mask_flags)
    n = int(math.floor(ratio * occupied.size))
    tokens = inp.tokens.copy()
    flags = inp.mask_flags.copy()
    if n:
        rng = np.random.default_rng(seed)
        chosen = rng.choice(occupied, size=n, replace=False)
        tokens[chosen] = 0.0
        flags[chosen] = True
    return RefinerInput(tokens, inp.pad_mask.copy(), flags)


@dataclass
class RefinerOutput:
    theta: Tensor  # (B, N, K, 6)
    shape_cam: Tensor  # (B, N, 13)
    attention: list  # per layer (B, heads, T, T) arrays

    def deltas(self, b: int = 0, persons: int | None = None) -> list[MeshParams]:
        th = self.theta.data[b]
        sc = self.shape_cam.data[b]
        n = th.shape[0] if persons is None else persons
        return [MeshParams(th[i], sc[i, :NUM_BETAS], sc[i, NUM_BETAS:]) for i in range(n)]


def encode(params: dict, config: RefinerConfig, tokens, occupied) -> RefinerOutput:
    """Batched encoder on Tensors.

    Args:
        params: name -> Tensor (from :meth:`RefinerWeights.tensors`).
        tokens: (B, N*K, d_token).
        occupied: (B, N*K) bool, False for padded slots.
    """
    x_in = as_tensor(tokens)
    occ = np.asarray(occupied, dtype=bool)
    if x_in.ndim != 3 or x_in.shape[1:] != (config.seq_len, config.d_token):
        raise ShapeMismatchError(
            f"tokens must be (B, {config.seq_len}, {config.d_token}), got {x_in.shape}"
        )
    if occ.shape != x_in.shape[:2]:
        raise ShapeMismatchError("occupancy mask does not match tokens")
    B, T, _ = x_in.shape
    H = config.heads
    dh = config.d_model // H
    qmask = occ[:, :, None].astype(np.float64)
    kmask = occ[:, None, None, :]

    x = x_in @ params["in_w"] + params["in_b"]
    if config.use_positional_embedding:
        x = x + params["pos"]
    attention = []
    for i in range(config.layers):
        p = f"l{i}."
        h = layer_norm(x, params[p + "ln1_g"], params[p + "ln1_b"])

        def heads(t):
            return t.reshape(B, T, H, dh).transpose(0, 2, 1, 3)

        q = heads(h @ params[p + "q_w"] + params[p + "q_b"])
        k = heads(h @ params[p + "k_w"] + params[p + "k_b"])
        v = heads(h @ params[p + "v_w"] + params[p + "v_b"])
        logits = (q @ k.swapaxes(-1, -2)) * (1.0 / math.sqrt(dh))
        attn = softmax(logits, axis=-1, mask=kmask)
        attention.append(attn.data)
        o = (attn @ v).transpose(0, 2, 1, 3).reshape(B, T, config.d_model)
        x = x + (o @ params[p + "o_w"] + params[p + "o_b"]) * qmask
        h = layer_norm(x, params[p + "ln2_g"], params[p + "ln2_b"])
        ff = gelu(h @ params[p + "ff1_w"] + params[p + "ff1_b"]) @ params[p + "ff2_w"] + params[p + "ff2_b"]
        x = x + ff * qmask
    x = layer_norm(x, params["lnf_g"], params["lnf_b"]) * qmask

    theta = (x @ params["theta_w"] + params["theta_b"]).reshape(B, config.N, config.K, 6)
    pooled = x.reshape(B, config.N, config.K, config.d_model).mean(axis=2)
    shape_cam = pooled @ params["shape_cam_w"] + params["shape_cam_b"]
    if not (np.all(np.isfinite(theta.data)) and np.all(np.isfinite(shape_cam.data))):
        raise NumericFailureError("refiner produced non-finite activations")
    return RefinerOutput(theta, shape_cam, attention)


def forward(weights: RefinerWeights, config: RefinerConfig, inp: RefinerInput,
            return_attention: bool = False):
    """Per-person parameter deltas for the occupied slots of ``inp``.

    Returns a list of :class:`MeshParams` deltas (one per occupied slot, in
    slot order), or ``(deltas, attention)`` with per-layer (heads, T, T)
    attention weights when ``return_attention`` is set.
    """
    if inp.tokens.shape != (config.seq_len, config.d_token):
        raise ShapeMismatchError(
            f"tokens must be ({config.seq_len}, {config.d_token}), got {inp.tokens.shape}"
        )
    out = encode(weights.tensors(), config, inp.tokens[None], inp.occupied_tokens[None])
    deltas = out.deltas(0)
    deltas = [d for d, occ in zip(deltas, inp.pad_mask) if occ]
    if return_attention:
        return deltas, [a[0] for a in out.attention]
    return deltas


def refine(theta_init: MeshParams, delta: MeshParams) -> MeshParams:
    """Residual update: every parameter block is added elementwise."""
    return MeshParams(
        theta_init.theta + delta.theta,
        theta_init.beta + delta.beta,
        theta_init.camera + delta.camera,
    )


def sample_training_groups(M: int, N: int, seed, count: int | None = None) -> list[list[int]]:
    """Person index groups for one scene and epoch.

    Scenes with at most N persons form a single group; larger scenes yield
    ``count`` (default ceil(M/N)) uniformly random N-subsets.
    """
    if M < 1:
        raise PreconditionError("a scene needs at least one person")
    if M <= N:
        return [list(range(M))]
    rng = np.random.default_rng(seed)
    count = math.ceil(M / N) if count is None else int(count)
    return [sorted(int(i) for i in rng.choice(M, size=N, replace=False)) for _ in range(count)]


def select_inference_contexts(target: int, roots, N: int) -> list[int]:
    """``target`` followed by its N-1 nearest persons by root distance (ties: lower index).

    ``roots`` is a sequence of root positions (3,) or of full skeletons (24, 3).
    """
    pts = [np.asarray(r, dtype=np.float64) for r in roots]
    pts = np.stack([p[0] if p.ndim == 2 else p for p in pts])
    if not 0 <= target < len(pts):
        raise PreconditionError(f"target {target} out of range for {len(pts)} persons")
    dist = np.linalg.norm(pts - pts[target], axis=1)
    others = sorted((float(dist[j]), j) for j in range(len(pts)) if j != target)
    return [target] + [j for _, j in others[: N - 1]]


class GlobalPoolFeatureProvider:
    """Global-average-pool an (H, W, C) feature map and broadcast it to all K tokens."""

    def __init__(self, K: int = NUM_JOINTS):
        self.K = K

    def __call__(self, feature_map) -> np.ndarray:
        fm = np.asarray(feature_map, dtype=np.float64)
        pooled = fm.reshape(-1, fm.shape[-1]).mean(axis=0)
        return np.broadcast_to(pooled, (self.K, pooled.size)).copy()


class SyntheticFeatureProvider:
    """Per-joint features from noisy 2D joint observations.

    Token ``k`` gets a fixed per-joint code plus a fixed linear embedding of
    the joint's 2D position (with Gaussian noise of ``noise_2d``) and of its
    2D offset from the root joint.
    """

    def __init__(self, feat_dim: int, noise_2d: float = 0.005, seed: int = 1234, K: int = NUM_JOINTS):
        rng = np.random.default_rng(seed)
        self.feat_dim = feat_dim
        self.noise_2d = noise_2d
        self.K = K
        self.joint_code = rng.normal(0.0, 0.5, (K, feat_dim))
        self.embed = rng.normal(0.0, 1.0, (4, feat_dim))

    def __call__(self, joints2d, rng=None) -> np.ndarray:
        uv = np.asarray(joints2d, dtype=np.float64).reshape(self.K, 2)
        if self.noise_2d > 0:
            uv = uv + np.random.default_rng(rng).normal(0.0, self.noise_2d, uv.shape)
        obs = np.concatenate([uv, uv - uv[0]], axis=1)
        return self.joint_code + obs @ self.embed


def save_weights(weights: RefinerWeights, path) -> None:
    """Write a single ``.npz`` checkpoint with a JSON header (format tag + config)."""
    header = json.dumps({"format": CHECKPOINT_FORMAT, "config": weights.config.to_dict()}, sort_keys=True)
    buf = io.BytesIO()
    np.savez(buf, __header__=np.array(header), **weights.arrays)
    Path(path).write_bytes(buf.getvalue())


def load_weights(path) -> RefinerWeights:
    with np.load(path, allow_pickle=False) as data:
        if "__header__" not in data:
            raise PreconditionError(f"{path}: not a refiner checkpoint")
        header = json.loads(str(data["__header__"]))
        if header.get("format") != CHECKPOINT_FORMAT:
            raise PreconditionError(f"{path}: unsupported checkpoint format {header.get('format')!r}")
        config = RefinerConfig.from_dict(header["config"])
        arrays = {k: data[k].astype(np.float64) for k in data.files if k != "__header__"}
    expected = init_weights(config).arrays
    if set(arrays) != set(expected) or any(arrays[k].shape != v.shape for k, v in expected.items()):
        raise ShapeMismatchError(f"{path}: tensors do not match the stored config")
    return RefinerWeights(config, arrays)
