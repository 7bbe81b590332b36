"""Synthetic scenes, end-to-end experiments and report/scene file I/O."""

from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import losses, metrics
from .autograd import Tensor
from .bodymodel import (
    NUM_BETAS,
    NUM_JOINTS,
    BodyModel,
    MeshParams,
    forward_kinematics,
    params_to_mesh,
    shaped_rest_joints_batch,
)
from .diffbody import params_to_joints_t
from .errors import NumericFailureError, PreconditionError, ShapeMismatchError
from .kernels import fk_batch
from .ik import extract_twist_batch, init_params, solve_ik_batch, twist_axes_batch
from .optim import LR_DECAY, OTHER_LR, REFINER_LR, Adam, decayed_lr
from .refiner import (
    RefinerConfig,
    RefinerWeights,
    SyntheticFeatureProvider,
    assemble_tokens,
    encode,
    init_weights,
    mask_patches,
    refine,
    sample_training_groups,
    select_inference_contexts,
)
from .rotmath import matrix_to_rot6d

REPORT_SCHEMA = "bodyik-report-v1"
MAX_JOINT_ANGLE_DEG = 60.0
MIN_ROOT_SEPARATION = 0.3
GT_CAMERA_SCALE = (0.8, 1.0)
GT_CAMERA_SHIFT = 0.1


@dataclass
class Person:
    params: MeshParams  # ground truth
    joints3d: np.ndarray  # (24, 3) absolute GT
    joints2d: np.ndarray  # (24, 2) GT
    twists: np.ndarray  # (24, 2) GT
    observed: np.ndarray  # (24, 3) noisy estimate of joints3d
    features: np.ndarray | None = None  # (24, feat_dim)

    @property
    def rel3d(self) -> np.ndarray:
        return self.joints3d - self.joints3d[0]

    @property
    def root(self) -> np.ndarray:
        return self.joints3d[0]


@dataclass
class Scene:
    persons: list
    noise_level: float = 0.0
    seed: object = 0


@dataclass
class ExperimentReport:
    kind: str
    config: dict = field(default_factory=dict)
    rows: list = field(default_factory=list)
    aggregates: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)
    wall_clock_s: float = 0.0

    def metric_names(self) -> list[str]:
        names = []
        for row in self.rows:
            for k, v in row.items():
                if k not in names and isinstance(v, float):
                    names.append(k)
        return names

    def recompute_aggregates(self) -> dict:
        agg = {}
        for name in self.metric_names():
            vals = np.array([r[name] for r in self.rows if isinstance(r.get(name), float)])
            vals = vals[np.isfinite(vals)]
            if vals.size:
                agg[name] = {"mean": float(vals.mean()), "median": float(np.median(vals))}
        self.aggregates = {**agg, **{k: v for k, v in self.aggregates.items() if k not in agg}}
        return self.aggregates

    def to_dict(self, include_timing: bool = False) -> dict:
        doc = {
            "schema": REPORT_SCHEMA,
            "kind": self.kind,
            "config": self.config,
            "aggregates": self.aggregates,
            "extras": self.extras,
            "rows": self.rows,
        }
        if include_timing:
            doc["wall_clock_s"] = self.wall_clock_s
        return doc


# ---------------------------------------------------------------------------
# scene synthesis


def _axis_angle_batch(axes, angles):
    """Rodrigues on stacked axes (..., 3) and angles (...)."""
    n = axes / np.linalg.norm(axes, axis=-1, keepdims=True)
    K = np.zeros(n.shape + (3,))
    K[..., 0, 1], K[..., 0, 2] = -n[..., 2], n[..., 1]
    K[..., 1, 0], K[..., 1, 2] = n[..., 2], -n[..., 0]
    K[..., 2, 0], K[..., 2, 1] = -n[..., 1], n[..., 0]
    s = np.sin(angles)[..., None, None]
    c = np.cos(angles)[..., None, None]
    return np.eye(3) + s * K + (1.0 - c) * (K @ K)


def sample_poses(model: BodyModel, rng, betas, max_angle_deg: float = MAX_JOINT_ANGLE_DEG) -> np.ndarray:
    """Random local rotations (B, 24, 3, 3); leaf joints get a pure twist about their bone."""
    betas = np.asarray(betas, dtype=np.float64).reshape(-1, NUM_BETAS)
    B = betas.shape[0]
    max_angle = math.radians(max_angle_deg)
    axes = rng.normal(size=(B, NUM_JOINTS, 3))
    short = np.linalg.norm(axes, axis=-1) < 1e-6
    axes[short] = (1.0, 0.0, 0.0)
    angles = rng.uniform(0.0, max_angle, (B, NUM_JOINTS))
    leaves = list(model.tree.leaves)
    axes[:, leaves] = twist_axes_batch(model, betas)[:, leaves]
    angles[:, leaves] = rng.uniform(-max_angle, max_angle, (B, len(leaves)))
    return _axis_angle_batch(axes, angles)


def sample_real_params(model: BodyModel, rng, n: int, max_angle_deg: float = MAX_JOINT_ANGLE_DEG):
    """Draws from the GT prior, used as 'real' samples for the discriminators."""
    betas = rng.uniform(-2.0, 2.0, (n, NUM_BETAS))
    return matrix_to_rot6d(sample_poses(model, rng, betas, max_angle_deg)), betas


def _place_roots(rng, M):
    roots = []
    while len(roots) < M:
        cand = np.array([rng.uniform(-2.0, 2.0), 0.0, rng.uniform(3.0, 7.0)])
        if all(np.linalg.norm(cand - r) >= MIN_ROOT_SEPARATION for r in roots):
            roots.append(cand)
    return np.array(roots)


def synth_scene(model: BodyModel, seed, M: int, noise_level: float = 0.0,
                provider: SyntheticFeatureProvider | None = None,
                max_angle_deg: float = MAX_JOINT_ANGLE_DEG) -> Scene:
    """Generate ``M`` persons with consistent GT and noisy observed skeletons.

    GT, observation noise and feature noise use independent RNG streams, so
    the GT of a seed does not depend on the noise level.
    """
    if M < 1:
        raise PreconditionError("a scene needs at least one person")
    gt_ss, noise_ss, feat_ss = np.random.SeedSequence(seed).spawn(3)
    rng = np.random.default_rng(gt_ss)
    noise_rng = np.random.default_rng(noise_ss)
    feat_rng = np.random.default_rng(feat_ss)

    betas = rng.uniform(-2.0, 2.0, (M, NUM_BETAS))
    rots = sample_poses(model, rng, betas, max_angle_deg)
    roots = _place_roots(rng, M)
    cams = np.stack([
        np.array([rng.uniform(*GT_CAMERA_SCALE), *rng.uniform(-GT_CAMERA_SHIFT, GT_CAMERA_SHIFT, 2)])
        for _ in range(M)
    ])
    rest = shaped_rest_joints_batch(model, betas)
    joints, _ = fk_batch(model.parents, rest, rots)
    twists = extract_twist_batch(model, rots, betas)
    persons = []
    for i in range(M):
        abs3d = joints[i] - joints[i, 0] + roots[i]
        rel = abs3d - abs3d[0]
        j2d = np.asarray(losses.project_ortho(rel, cams[i]).data)
        noise = noise_rng.normal(0.0, 1.0, (NUM_JOINTS, 3)) * noise_level
        observed = abs3d + noise if noise_level > 0 else abs3d.copy()
        feats = provider(j2d, feat_rng) if provider is not None else None
        persons.append(Person(
            params=MeshParams(matrix_to_rot6d(rots[i]), betas[i], cams[i]),
            joints3d=abs3d,
            joints2d=j2d,
            twists=twists[i],
            observed=observed,
            features=feats,
        ))
    return Scene(persons, float(noise_level), seed)


def make_scenes(model: BodyModel, n_scenes: int, persons_per_scene: int, noise_level: float,
                seed: int, provider=None, max_angle_deg: float = MAX_JOINT_ANGLE_DEG) -> list[Scene]:
    """Scene ``i`` uses seed ``[seed, i]`` so scenes are independent of each other and of order."""
    return [
        synth_scene(model, [int(seed), i], persons_per_scene, noise_level, provider, max_angle_deg)
        for i in range(n_scenes)
    ]


def scene_consistency_error(model: BodyModel, scene: Scene) -> float:
    """Max deviation between stored GT skeleton/twists and those recomputed from GT params."""
    from .rotmath import rot6d_to_matrix

    worst = 0.0
    for p in scene.persons:
        R = rot6d_to_matrix(p.params.theta)
        J, _ = forward_kinematics(model, R, p.params.beta)
        worst = max(worst, float(np.max(np.abs((J - J[0]) - p.rel3d))))
        tw = extract_twist_batch(model, R[None], p.params.beta[None])[0]
        worst = max(worst, float(np.max(np.abs(tw - p.twists))))
    return worst


def reobserve(scene: Scene, noise_level: float, seed, provider=None) -> Scene:
    """Fresh noisy observations (and features) for a scene's GT."""
    _, noise_ss, feat_ss = np.random.SeedSequence(seed).spawn(3)
    noise_rng = np.random.default_rng(noise_ss)
    feat_rng = np.random.default_rng(feat_ss)
    persons = []
    for p in scene.persons:
        noise = noise_rng.normal(0.0, 1.0, (NUM_JOINTS, 3)) * noise_level
        observed = p.joints3d + noise if noise_level > 0 else p.joints3d.copy()
        feats = provider(p.joints2d, feat_rng) if provider is not None else p.features
        persons.append(Person(p.params, p.joints3d, p.joints2d, p.twists, observed, feats))
    return Scene(persons, float(noise_level), seed)


# ---------------------------------------------------------------------------
# scoring


def _placed_joints(joints, root_position):
    return joints - joints[0] + root_position


def score_person(model: BodyModel, pred: MeshParams, pred_root, gt: Person) -> dict:
    """Pose/mesh errors of one prediction against one GT person."""
    mesh, joints = params_to_mesh(model, pred)
    gt_mesh, _ = params_to_mesh(model, gt.params)
    pred_abs = _placed_joints(joints, pred_root)
    return {
        "mpjpe": metrics.mpjpe(pred_abs, gt.joints3d),
        "pa_mpjpe": metrics.pa_mpjpe(pred_abs, gt.joints3d),
        "mve": metrics.mve(mesh.vertices, gt_mesh.vertices, model.joint_regressor),
        "pck3d": metrics.pck3d(pred_abs, gt.joints3d),
    }


def score_scene(model: BodyModel, scene: Scene, preds: list, pred_roots, radius_mm=metrics.MATCH_RADIUS_MM):
    """Match predictions to GT by root position and score matched pairs.

    Returns ``(rows, MatchResult)``; rows carry the GT and prediction index.
    """
    pred_skels = [np.asarray(r, dtype=np.float64)[None] for r in pred_roots]
    gt_skels = [p.joints3d[:1] for p in scene.persons]
    match = metrics.match_predictions(pred_skels, gt_skels, radius_mm=radius_mm)
    rows = []
    for i, j in match.pairs:
        row = {"person": j, "pred": i}
        row.update(score_person(model, preds[i], pred_roots[i], scene.persons[j]))
        rows.append(row)
    return rows, match


def _ik_scene(model: BodyModel, scene: Scene):
    obs = np.stack([p.observed for p in scene.persons])
    tw = np.stack([p.twists for p in scene.persons])
    betas = np.stack([p.params.beta for p in scene.persons])
    res = solve_ik_batch(model, obs, tw, betas)
    params = init_params(model, obs, tw, betas)
    return params, res.degenerate.sum(axis=1)


def _as_scene_list(scenes):
    return [scenes] if isinstance(scenes, Scene) else list(scenes)


def _finalise(report: ExperimentReport, t0: float) -> ExperimentReport:
    report.recompute_aggregates()
    report.wall_clock_s = time.perf_counter() - t0
    return report


def run_roundtrip(model: BodyModel, scenes) -> ExperimentReport:
    """IK on observed skeletons with GT twists and shapes, scored against GT."""
    t0 = time.perf_counter()
    scenes = _as_scene_list(scenes)
    rows = []
    for s_idx, scene in enumerate(scenes):
        params, degenerate = _ik_scene(model, scene)
        for i, (pred, gt) in enumerate(zip(params, scene.persons)):
            row = {"scene": s_idx, "person": i, "degenerate_joints": int(degenerate[i])}
            row.update(score_person(model, pred, gt.observed[0], gt))
            rows.append(row)
    report = ExperimentReport(
        "roundtrip",
        config={"scenes": len(scenes), "noise_level": scenes[0].noise_level if scenes else 0.0},
        rows=rows,
    )
    return _finalise(report, t0)


# ---------------------------------------------------------------------------
# refinement: training


@dataclass
class TrainConfig:
    lr_refiner: float = REFINER_LR
    lr_other: float = OTHER_LR
    lr_decay: float = LR_DECAY
    batch_size: int = 64
    steps_per_epoch: int | None = None
    groups_per_scene: int | None = None
    masking: bool = True
    adversarial: bool = True
    loss_weights: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "lr_refiner": self.lr_refiner,
            "lr_other": self.lr_other,
            "lr_decay": self.lr_decay,
            "batch_size": self.batch_size,
            "steps_per_epoch": self.steps_per_epoch,
            "groups_per_scene": self.groups_per_scene,
            "masking": self.masking,
            "adversarial": self.adversarial,
            "loss_weights": dict(sorted(self.loss_weights.items())),
        }


def _prepare_training_scenes(model, scenes, config):
    prepared = []
    for scene in scenes:
        params, _ = _ik_scene(model, scene)
        for p in scene.persons:
            if p.features is None or p.features.shape != (NUM_JOINTS, config.feat_dim):
                raise ShapeMismatchError("training scenes need features of width config.feat_dim")
        prepared.append((scene, params))
    return prepared


def _draw_groups(prepared, config, seed, count=None):
    """All (scene index, person group) pairs for one pass over the training scenes."""
    out = []
    for s_idx, (scene, _) in enumerate(prepared):
        groups = sample_training_groups(len(scene.persons), config.N, [*seed, s_idx], count)
        out += [(s_idx, g) for g in groups]
    return out


def _make_batch(items, prepared, config, rng, masking):
    """Tokens, occupancy, valid-slot indices and per-slot init/GT for a list of groups."""
    tokens, occupied, init, gt, idx = [], [], [], [], []
    for b, (s_idx, group) in enumerate(items):
        scene, params = prepared[s_idx]
        inp = assemble_tokens([(params[i], scene.persons[i].features) for i in group], config)
        if masking and config.mask_ratio_max > 0:
            inp = mask_patches(inp, rng.integers(2**32), rng.uniform(0.0, config.mask_ratio_max), config)
        tokens.append(inp.tokens)
        occupied.append(inp.occupied_tokens)
        for slot, i in enumerate(group):
            idx.append(b * config.N + slot)
            init.append(params[i])
            gt.append(scene.persons[i])
    return np.stack(tokens), np.stack(occupied), np.array(idx), init, gt


def refined_tensors(out, idx, init, config):
    """Apply the residual update on Tensors for the valid person slots ``idx``."""
    B = out.theta.shape[0]
    theta_d = out.theta.reshape(B * config.N, config.K, 6)[idx]
    sc_d = out.shape_cam.reshape(B * config.N, NUM_BETAS + 3)[idx]
    theta0 = np.stack([p.theta for p in init])
    beta0 = np.stack([p.beta for p in init])
    cam0 = np.stack([p.camera for p in init])
    return theta_d + theta0, sc_d[:, :NUM_BETAS] + beta0, sc_d[:, NUM_BETAS:] + cam0


def refinement_losses(model, out, idx, init, gt, config, D_theta=None, D_beta=None):
    """Generator-side terms for a batch: mesh, pose and (optionally) adversarial."""
    theta_ref, beta_ref, cam_ref = refined_tensors(out, idx, init, config)
    gt_theta = np.stack([p.params.theta for p in gt])
    gt_beta = np.stack([p.params.beta for p in gt])
    gt_rel = np.stack([p.rel3d for p in gt])
    gt_2d = np.stack([p.joints2d for p in gt])
    l_mesh = losses.loss_mesh(theta_ref, beta_ref, gt_theta, gt_beta)
    P_ref = losses.reroot(params_to_joints_t(model, theta_ref, beta_ref))
    l_pose = losses.loss_pose(P_ref, cam_ref, gt_rel, gt_2d)
    terms = {"mesh": l_mesh, "pose": l_pose}
    if D_theta is not None:
        terms["adv_generator"] = losses.loss_adv_generator(
            D_theta, D_beta, losses.flatten_theta(theta_ref), beta_ref
        )
    return terms, (theta_ref, beta_ref)


def train_refiner(model: BodyModel, config: RefinerConfig, scenes, epochs: int, seed: int = 0,
                  train: TrainConfig | None = None, weights: RefinerWeights | None = None):
    """Fit the refiner (and the two discriminators) on IK initialisations of ``scenes``.

    Each step runs the refiner on a minibatch of person groups, takes an Adam
    step on mesh + pose + generator-adversarial loss, then an Adam step of the
    discriminators on their least-squares objective with real samples from
    the synthetic GT prior. Learning rates decay by ``lr_decay`` per epoch.

    Returns ``(weights, report)``; report rows are the per-step loss history
    (unweighted terms, weighted total, refiner lr).
    """
    t0 = time.perf_counter()
    train = train or TrainConfig()
    scenes = _as_scene_list(scenes)
    if not scenes:
        raise PreconditionError("train_refiner needs at least one scene")
    rng = np.random.default_rng(seed)
    weights = (weights or init_weights(config, seed=int(rng.integers(2**31)))).copy()
    params = weights.tensors(requires_grad=True)
    opt = Adam(params, train.lr_refiner)
    prepared = _prepare_training_scenes(model, scenes, config)

    D_theta = D_beta = None
    if train.adversarial:
        D_theta = losses.Discriminator(NUM_JOINTS * 6, rng=int(rng.integers(2**31)))
        D_beta = losses.Discriminator(NUM_BETAS, rng=int(rng.integers(2**31)))
        d_params = {f"theta.{k}": v for k, v in D_theta.params.items()}
        d_params.update({f"beta.{k}": v for k, v in D_beta.params.items()})
        d_opt = Adam(d_params, train.lr_other)

    history = []
    step = 0
    for epoch in range(epochs):
        opt.lr = decayed_lr(train.lr_refiner, epoch, train.lr_decay)
        if train.adversarial:
            d_opt.lr = decayed_lr(train.lr_other, epoch, train.lr_decay)
        sweep = 0
        items = _draw_groups(prepared, config, (seed, epoch, sweep), train.groups_per_scene)
        items = [items[i] for i in rng.permutation(len(items))]
        n_batches = max(1, math.ceil(len(items) / train.batch_size))
        steps = train.steps_per_epoch or n_batches
        for s in range(steps):
            b = s % n_batches
            if b == 0 and s > 0:
                sweep += 1
                items = _draw_groups(prepared, config, (seed, epoch, sweep), train.groups_per_scene)
                items = [items[i] for i in rng.permutation(len(items))]
            batch = items[b * train.batch_size:(b + 1) * train.batch_size]
            tokens, occupied, idx, init, gt = _make_batch(batch, prepared, config, rng, train.masking)
            out = encode(params, config, tokens, occupied)
            terms, (theta_ref, beta_ref) = refinement_losses(model, out, idx, init, gt, config, D_theta, D_beta)
            gen_total = Tensor(0.0)
            for name, value in terms.items():
                gen_total = gen_total + value * float(train.loss_weights.get(name, 1.0))
            if not np.isfinite(gen_total.data):
                raise NumericFailureError(f"non-finite refiner loss at epoch {epoch} step {step}")
            opt.zero_grad()
            gen_total.backward()
            opt.step()

            record = {"epoch": epoch, "step": step, "lr": opt.lr}
            record.update({k: float(v) for k, v in terms.items()})
            if train.adversarial:
                d_opt.zero_grad()
                real_theta, real_beta = sample_real_params(model, rng, len(idx))
                l_d = losses.loss_adv_discriminator(
                    D_theta, D_beta,
                    losses.flatten_theta(theta_ref.data), beta_ref.data,
                    real_theta.reshape(len(idx), -1), real_beta,
                )
                if not np.isfinite(l_d.data):
                    raise NumericFailureError(f"non-finite discriminator loss at epoch {epoch} step {step}")
                (l_d * float(train.loss_weights.get("adv_discriminator", 1.0))).backward()
                d_opt.step()
                record["adv_discriminator"] = float(l_d)
            _, breakdown = losses.loss_total_refine(
                record["mesh"], record["pose"],
                record.get("adv_generator", 0.0), record.get("adv_discriminator", 0.0),
                train.loss_weights,
            )
            record["total"] = breakdown["total"]
            history.append(record)
            step += 1

    trained = RefinerWeights(config, {k: v.data.copy() for k, v in params.items()})
    report = ExperimentReport(
        "train_refiner",
        config={"refiner": config.to_dict(), "train": train.to_dict(), "epochs": epochs,
                "seed": seed, "scenes": len(scenes)},
        rows=[{k: (float(v) if k not in ("epoch", "step") else v) for k, v in r.items()} for r in history],
        extras={"history_length": len(history)},
    )
    report.extras["initial_mesh_loss"] = history[0]["mesh"] if history else None
    report.extras["final_mesh_loss"] = history[-1]["mesh"] if history else None
    return trained, _finalise(report, t0)


# ---------------------------------------------------------------------------
# evaluation


def refine_scene(weights: RefinerWeights, scene: Scene, init: list, call_log: list | None = None):
    """Refine every person once, as the target with its N-1 nearest persons as context."""
    config = weights.config
    roots = [p.observed[0] for p in scene.persons]
    refined = []
    for t in range(len(scene.persons)):
        group = select_inference_contexts(t, roots, config.N)
        inp = assemble_tokens([(init[i], scene.persons[i].features) for i in group], config)
        out = encode(weights.tensors(), config, inp.tokens[None], inp.occupied_tokens[None])
        delta = out.deltas(0, persons=1)[0]
        refined.append(refine(init[t], delta))
        if call_log is not None:
            call_log.append({"target": t, "group": group})
    return refined


def mesh_loss(model: BodyModel, weights: RefinerWeights | None, scenes) -> float:
    """Mean L_mesh over all persons, refined at inference (no masking); Θ_init when ``weights`` is None."""
    total, count = 0.0, 0
    for scene in _as_scene_list(scenes):
        init, _ = _ik_scene(model, scene)
        final = refine_scene(weights, scene, init) if weights is not None else init
        theta = np.stack([p.theta for p in final])
        beta = np.stack([p.beta for p in final])
        gt_theta = np.stack([p.params.theta for p in scene.persons])
        gt_beta = np.stack([p.params.beta for p in scene.persons])
        total += float(losses.loss_mesh(theta, beta, gt_theta, gt_beta)) * len(final)
        count += len(final)
    return total / count


def _evaluate_scene(model, weights, scene, s_idx):
    init, _ = _ik_scene(model, scene)
    roots = [p.observed[0] for p in scene.persons]
    rows_init, match = score_scene(model, scene, init, roots)
    calls = []
    rows_ref = None
    refined = None
    if weights is not None:
        refined = refine_scene(weights, scene, init, calls)
        rows_ref, _ = score_scene(model, scene, refined, roots)
    rows = []
    for k, row in enumerate(rows_init):
        out = {"scene": s_idx, "person": row["person"]}
        for name in ("mpjpe", "pa_mpjpe", "mve", "pck3d"):
            out[name] = row[name]
            if rows_ref is not None:
                out[f"{name}_refined"] = rows_ref[k][name]
        rows.append(out)
    return rows, match, [{"scene": s_idx, **c} for c in calls], refined if refined is not None else init


def evaluate(model: BodyModel, weights: RefinerWeights | None, scenes, workers: int = 1,
             dump_obj: str | Path | None = None) -> ExperimentReport:
    """Score IK initialisations (and refined parameters when ``weights`` is given).

    Aggregates include NMJE/NMVE normalised by the F1 of the root matching
    over all scenes. ``extras['refiner_calls']`` lists each refiner
    invocation with its target and context group.
    """
    t0 = time.perf_counter()
    scenes = _as_scene_list(scenes)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda a: _evaluate_scene(model, weights, *a),
                                    [(s, i) for i, s in enumerate(scenes)]))
    else:
        results = [_evaluate_scene(model, weights, s, i) for i, s in enumerate(scenes)]

    rows, calls = [], []
    matched = n_pred = n_gt = 0
    for s_idx, (r, match, c, final) in enumerate(results):
        rows += r
        calls += c
        matched += len(match.pairs)
        n_pred += len(match.pairs) + match.false_alarms
        n_gt += len(match.pairs) + match.misses
        if dump_obj is not None:
            out_dir = Path(dump_obj)
            out_dir.mkdir(parents=True, exist_ok=True)
            for i, params in enumerate(final):
                mesh, _ = params_to_mesh(model, params)
                write_obj(out_dir / f"scene{s_idx:04d}_person{i:02d}.obj", mesh.vertices, mesh.faces)

    report = ExperimentReport(
        "evaluate",
        config={"scenes": len(scenes), "refined": weights is not None,
                "refiner": weights.config.to_dict() if weights is not None else None},
        rows=rows,
        extras={"refiner_calls": calls, "n_refiner_calls": len(calls)},
    )
    report.recompute_aggregates()
    f1 = metrics.f1_score(matched, n_pred, n_gt)
    report.aggregates["f1"] = f1
    report.aggregates["matches"] = {"matched": matched, "predictions": n_pred, "ground_truth": n_gt}
    if f1 > 0 and rows:
        for suffix in ("", "_refined"):
            if f"mpjpe{suffix}" in report.aggregates:
                nmje, nmve = metrics.nmje_nmve(
                    report.aggregates[f"mpjpe{suffix}"]["mean"], report.aggregates[f"mve{suffix}"]["mean"], f1
                )
                report.aggregates[f"nmje{suffix}"] = nmje
                report.aggregates[f"nmve{suffix}"] = nmve
    report.wall_clock_s = time.perf_counter() - t0
    return report


# ---------------------------------------------------------------------------
# files


def write_obj(path, vertices, faces) -> None:
    lines = [f"v {x:.6f} {y:.6f} {z:.6f}" for x, y, z in np.asarray(vertices)]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in np.asarray(faces)]
    Path(path).write_text("\n".join(lines) + "\n")


def _dumps(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=False, allow_nan=True)


def export_report(report: ExperimentReport, path, format: str = "json", include_timing: bool = False) -> None:
    """Write ``report`` as JSON (full document) or CSV (one line per row)."""
    path = Path(path)
    try:
        if format == "json":
            path.write_text(_dumps(report.to_dict(include_timing)) + "\n")
        elif format == "csv":
            cols = []
            for row in report.rows:
                cols += [k for k in row if k not in cols]
            buf = io.StringIO()
            buf.write(f"# schema={REPORT_SCHEMA} kind={report.kind}\n")
            writer = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
            writer.writeheader()
            for row in report.rows:
                writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
            path.write_text(buf.getvalue())
        else:
            raise PreconditionError(f"unknown report format {format!r}")
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc.strerror or exc}") from exc


def load_report(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def scenes_to_dict(scenes) -> dict:
    return {
        "scenes": [
            {
                "persons": [
                    {
                        "joints3d": p.joints3d.tolist(),
                        "joints2d": p.joints2d.tolist(),
                        "theta6d": p.params.theta.tolist(),
                        "beta": p.params.beta.tolist(),
                        "twists": p.twists.tolist(),
                        "camera": p.params.camera.tolist(),
                    }
                    for p in s.persons
                ]
            }
            for s in _as_scene_list(scenes)
        ]
    }


def scenes_from_dict(doc: dict, noise_level: float = 0.0, seed: int = 0, provider=None) -> list[Scene]:
    """Parse a scene document; observed skeletons get fresh noise seeded per scene."""
    scenes = []
    try:
        for s_idx, s in enumerate(doc["scenes"]):
            persons = []
            for p in s["persons"]:
                j3 = np.asarray(p["joints3d"], dtype=np.float64)
                if j3.shape != (NUM_JOINTS, 3):
                    raise ShapeMismatchError(f"scene {s_idx}: joints3d must be 24x3")
                camera = p.get("camera", [0.9, 0.0, 0.0])
                persons.append(Person(
                    params=MeshParams(p["theta6d"], p["beta"], camera),
                    joints3d=j3,
                    joints2d=np.asarray(p["joints2d"], dtype=np.float64).reshape(NUM_JOINTS, 2),
                    twists=np.asarray(p["twists"], dtype=np.float64).reshape(NUM_JOINTS, 2),
                    observed=j3.copy(),
                ))
            scenes.append(reobserve(Scene(persons), noise_level, [int(seed), s_idx], provider))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ShapeMismatchError):
            raise
        raise PreconditionError(f"malformed scene document: {exc}") from None
    return scenes


def save_scenes(scenes, path) -> None:
    Path(path).write_text(json.dumps(scenes_to_dict(scenes)) + "\n")


def load_scenes(path, noise_level: float = 0.0, seed: int = 0, provider=None) -> list[Scene]:
    with open(path) as fh:
        return scenes_from_dict(json.load(fh), noise_level, seed, provider)
