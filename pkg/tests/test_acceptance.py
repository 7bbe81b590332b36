"""Acceptance suite: one PASS/FAIL line per criterion.

Run under pytest (lines go straight to the terminal) or directly with
``python3 tests/test_acceptance.py``.
"""

from __future__ import annotations

import json
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest

from bodyik import harness as H
from bodyik import losses as L
from bodyik import metrics
from bodyik.autograd import Tensor, parameter, relative_error
from bodyik.bodymodel import (
    NUM_BETAS,
    NUM_JOINTS,
    MeshParams,
    generate_synthetic_model,
    shaped_rest_joints_batch,
)
from bodyik.cli import main as cli_main
from bodyik.errors import PreconditionError
from bodyik.ik import (
    CAMERA_INIT,
    extract_twist_batch,
    init_params,
    solve_ik_batch,
    swing_from_vectors,
    twist_axes_batch,
    twist_matrix,
)
from bodyik.kernels import fk_batch
from bodyik.optim import LR_DECAY, OTHER_LR, REFINER_LR, decayed_lr
from bodyik.refiner import (
    RefinerConfig,
    RefinerWeights,
    SyntheticFeatureProvider,
    assemble_tokens,
    encode,
    forward,
    init_weights,
    mask_patches,
    refine,
    save_weights,
    select_inference_contexts,
)
from bodyik.rotmath import axis_angle_to_matrix, is_rotation, rodrigues

_MODEL = None


def _model():
    global _MODEL
    if _MODEL is None:
        _MODEL = generate_synthetic_model(0)
    return _MODEL


def _random_rotations(rng, n):
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    w, x, y, z = q.T
    return np.stack([
        np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
        np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
        np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
    ], 1)


# ---------------------------------------------------------------------------
# checks: each returns (passed, detail)


def check_1():
    model = _model()
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    betas = rng.uniform(-2.0, 2.0, (500, NUM_BETAS))
    rots = H.sample_poses(model, rng, betas)
    rest = shaped_rest_joints_batch(model, betas)
    joints, _ = fk_batch(model.parents, rest, rots)
    twists = extract_twist_batch(model, rots, betas)
    res = solve_ik_batch(model, joints, twists, betas)
    back, _ = fk_batch(model.parents, rest, res.rotations)
    elapsed = time.perf_counter() - t0
    joint_err = float(np.max(np.linalg.norm(back - joints, axis=-1)))
    rot_err = float(np.max(np.abs(res.rotations - rots)))
    ok = joint_err < 1e-6 and rot_err < 1e-5 and elapsed < 10.0 and not res.degenerate.any()
    return ok, f"joint err {joint_err:.2e} m, rotation err {rot_err:.2e}, {elapsed:.2f} s"


def check_2():
    model = _model()
    rng = np.random.default_rng(7)
    persons = 44
    betas = rng.uniform(-2.0, 2.0, (persons, NUM_BETAS))
    rots = _random_rotations(rng, persons * NUM_JOINTS).reshape(persons, NUM_JOINTS, 3, 3)
    twists = extract_twist_batch(model, rots, betas)
    axes = twist_axes_batch(model, betas)
    worst, count = 0.0, 0
    for b in range(persons):
        for k in range(1, NUM_JOINTS):
            t = axes[b, k]
            R = rots[b, k]
            recomposed = swing_from_vectors(t, R @ t) @ twist_matrix(t, *twists[b, k])
            worst = max(worst, float(np.max(np.abs(recomposed - R))))
            count += 1
    return count >= 1000 and worst < 1e-9, f"{count} rotations, max recomposition err {worst:.2e}"


def check_3():
    cases = [
        (rodrigues([0, 0, 1], 0.0, 1.0), np.array([[0.0, -1, 0], [1, 0, 0], [0, 0, 1]])),
        (axis_angle_to_matrix([1, 0, 0], np.pi), np.diag([1.0, -1.0, -1.0])),
        (swing_from_vectors([1, 0, 0], [0, 1, 0]), np.array([[0.0, -1, 0], [1, 0, 0], [0, 0, 1]])),
        (twist_matrix([0, 0, 2], -1.0, 0.0), np.diag([-1.0, -1.0, 1.0])),
    ]
    err = max(float(np.max(np.abs(a - b))) for a, b in cases)
    flipped = swing_from_vectors([0, 0, 1], [0, 0, -1])
    flip_err = float(np.max(np.abs(flipped @ [0, 0, 1] - [0, 0, -1])))
    ortho = all(is_rotation(R, 1e-9) for R in [a for a, _ in cases] + [flipped])
    ok = err < 1e-12 and flip_err < 1e-12 and ortho
    return ok, f"hand cases max err {err:.1e}, antiparallel R t - p {flip_err:.1e}, orthonormal {ortho}"


def check_4():
    model = _model()
    cfg = RefinerConfig()
    params = init_params(model, [np.zeros((24, 3))], [np.tile([1.0, 0.0], (24, 1))], [np.zeros(10)])
    train = H.TrainConfig()
    small = RefinerConfig(feat_dim=8)
    probe = assemble_tokens([(MeshParams.zeros(), np.zeros((24, 8)))], small)
    try:
        mask_patches(probe, 0, 0.31, small)
        ratio_guard = False
    except PreconditionError:
        ratio_guard = mask_patches(probe, 0, 0.3, small).mask_flags.sum() == 7
    facts = {
        "C_init": list(CAMERA_INIT) == [0.9, 0.0, 0.0] and params[0].camera.tolist() == [0.9, 0.0, 0.0],
        "K": NUM_JOINTS == 24 and cfg.K == 24,
        "token width": RefinerConfig(feat_dim=2048).d_token == 2067
        and all(RefinerConfig(feat_dim=f).d_token == f + 19 for f in (8, 64, 512)),
        "mask ratio": cfg.mask_ratio_max == 0.3 and ratio_guard,
        "N": cfg.N == 3,
        "PCK": metrics.PCK_THRESHOLD_MM == 150.0,
        "lr": REFINER_LR == 5e-5 and OTHER_LR == 1e-4 and train.lr_refiner == 5e-5 and train.lr_other == 1e-4,
        "decay": LR_DECAY == 0.9 and train.lr_decay == 0.9 and decayed_lr(1.0, 3) == 0.9 ** 3,
    }
    bad = [k for k, v in facts.items() if not v]
    return not bad, "all constants match" if not bad else f"mismatch: {', '.join(bad)}"


def _fd_pair(f, x, rng, max_coords=None, analytic=None):
    """Analytic and central-difference gradients of ``f`` at ``x`` on (sampled) coordinates."""
    if analytic is None:
        p = parameter(x.copy())
        f(p).backward()
        analytic = p.grad
    flat = x.reshape(-1)
    coords = np.arange(flat.size)
    if max_coords is not None and flat.size > max_coords:
        coords = rng.choice(flat.size, max_coords, replace=False)
    numeric = np.empty(coords.size)
    h = 1e-5
    for n, i in enumerate(coords):
        xp, xm = flat.copy(), flat.copy()
        xp[i] += h
        xm[i] -= h
        numeric[n] = (float(f(Tensor(xp.reshape(x.shape)))) - float(f(Tensor(xm.reshape(x.shape))))) / (2 * h)
    return np.asarray(analytic).reshape(-1)[coords], numeric


def _fd_error(f, x, rng, max_coords=None):
    return relative_error(*_fd_pair(f, x, rng, max_coords))


def _transformer_error(rng):
    """Relative error over the sampled gradient of every weight tensor, taken jointly.

    Some tensors have an exactly zero gradient (attention key biases cancel in
    the softmax), so per-tensor ratios would only measure rounding noise.
    """
    cfg = RefinerConfig.desk()
    w = init_weights(cfg, seed=int(rng.integers(2**31)), zero_head=False)
    for k, v in w.arrays.items():
        if k.endswith("_g") or k.endswith("_b"):
            w.arrays[k] = v + rng.normal(0.0, 0.1, v.shape)
    persons = int(rng.integers(1, cfg.N + 1))
    inp = assemble_tokens(
        [(MeshParams(rng.normal(size=(24, 6)), rng.normal(size=10), rng.normal(size=3)),
          rng.normal(size=(24, cfg.feat_dim))) for _ in range(persons)],
        cfg,
    )
    proj_t = rng.normal(size=(1, cfg.N, cfg.K, 6))
    proj_s = rng.normal(size=(1, cfg.N, NUM_BETAS + 3))

    def loss(params):
        out = encode(params, cfg, inp.tokens[None], inp.occupied_tokens[None])
        return (out.theta * proj_t).sum() + (out.shape_cam * proj_s).sum()

    params = w.tensors(requires_grad=True)
    loss(params).backward()
    analytic, numeric = [], []
    for name in w.arrays:
        def f(x, name=name):
            trial = w.tensors()
            trial[name] = x
            return loss(trial)
        a, n = _fd_pair(f, w.arrays[name], rng, max_coords=4, analytic=params[name].grad)
        analytic.append(a)
        numeric.append(n)
    return relative_error(np.concatenate(analytic), np.concatenate(numeric))


def check_5():
    rng = np.random.default_rng(5)
    t0 = time.perf_counter()
    errs = {name: 0.0 for name in ("L_mesh", "L_pose", "L_adv(G)", "L_adv(D)", "L_angle", "L_shape", "transformer")}
    points = 20
    for _ in range(points):
        gth, gtb = rng.normal(size=(24, 6)), rng.normal(size=10)
        th, b = gth + rng.normal(size=(24, 6)), gtb + rng.normal(size=10)
        errs["L_mesh"] = max(errs["L_mesh"], _fd_error(lambda t: L.loss_mesh(t, b, gth, gtb), th, rng),
                             _fd_error(lambda x: L.loss_mesh(th, x, gth, gtb), b, rng))
        rel, j2d = rng.normal(size=(24, 3)), rng.normal(size=(24, 2))
        P = rel + rng.normal(0.0, 0.1, (24, 3))
        cam = np.array([rng.uniform(0.8, 1.0), *rng.normal(0.0, 0.1, 2)])
        errs["L_pose"] = max(errs["L_pose"], _fd_error(lambda x: L.loss_pose(x, cam, rel, j2d), P, rng),
                             _fd_error(lambda c: L.loss_pose(P, c, rel, j2d), cam, rng))
        D_t = L.Discriminator(24 * 6, rng=int(rng.integers(2**31)))
        D_b = L.Discriminator(NUM_BETAS, rng=int(rng.integers(2**31)))
        fake_t, fake_b = rng.normal(size=(3, 144)), rng.normal(size=(3, NUM_BETAS))
        real_t, real_b = rng.normal(size=(3, 144)), rng.normal(size=(3, NUM_BETAS))
        errs["L_adv(G)"] = max(errs["L_adv(G)"],
                               _fd_error(lambda x: L.loss_adv_generator(D_t, D_b, x, fake_b), fake_t, rng, 40),
                               _fd_error(lambda x: L.loss_adv_generator(D_t, D_b, fake_t, x), fake_b, rng))
        for D in (D_t, D_b):
            for key in D.params:
                def f(x, D=D, key=key):
                    saved = D.params[key]
                    D.params[key] = x
                    try:
                        return L.loss_adv_discriminator(D_t, D_b, fake_t, fake_b, real_t, real_b)
                    finally:
                        D.params[key] = saved
                errs["L_adv(D)"] = max(errs["L_adv(D)"], _fd_error(f, D.params[key].data, rng, 40))
        phi = rng.uniform(-np.pi, np.pi, 24)
        tw = np.c_[np.cos(phi), np.sin(phi)]
        errs["L_angle"] = max(errs["L_angle"],
                              _fd_error(lambda x: L.loss_angle(x, tw), tw + rng.normal(0.0, 0.2, (24, 2)), rng))
        errs["L_shape"] = max(errs["L_shape"], _fd_error(lambda x: L.loss_shape(x, gtb), b, rng))
        errs["transformer"] = max(errs["transformer"], _transformer_error(rng))
    elapsed = time.perf_counter() - t0
    worst = max(errs.values())
    ok = worst < 1e-4 and elapsed < 60.0
    detail = ", ".join(f"{k} {v:.1e}" for k, v in errs.items())
    return ok, f"{points} points each, max rel err {worst:.1e} ({detail}), {elapsed:.1f} s"


def _similarity(rng):
    R = _random_rotations(rng, 1)[0]
    return rng.uniform(0.5, 2.0), R, rng.normal(size=3)


def check_6():
    rng = np.random.default_rng(6)
    order_ok = True
    for _ in range(1000):
        gt = rng.normal(size=(24, 3))
        pred = gt + rng.normal(0.0, rng.uniform(0.01, 0.3), (24, 3))
        order_ok &= metrics.pa_mpjpe(pred, gt) <= metrics.mpjpe(pred, gt) + 1e-9
    pa_residual = 0.0
    for _ in range(100):
        gt = rng.normal(size=(24, 3))
        s, R, t = _similarity(rng)
        pa_residual = max(pa_residual, metrics.pa_mpjpe(s * gt @ R.T + t, gt))
    gt = rng.normal(size=(24, 3))
    pred = gt.copy()
    pred[5] += [0.2, 0.0, 0.0]
    pck = metrics.pck3d(pred, gt)
    f1 = 91.6 / 110.4
    nmje, _ = metrics.nmje_nmve(91.6, 86.7, f1)
    ok = (order_ok and pa_residual < 1e-9 and abs(pck - 95.833) <= 0.001
          and abs(f1 - 0.8297) <= 0.001 and abs(nmje - 110.4) < 1e-9)
    return ok, (f"pa<=mpjpe on 1000 pairs {order_ok}, PA residual {pa_residual:.1e} mm, "
                f"pck {pck:.4f}, implied F1 {f1:.4f}")


def check_7():
    rng = np.random.default_rng(8)
    cfg = RefinerConfig.desk()
    w = init_weights(cfg, seed=3, zero_head=False)
    ps = [(MeshParams(rng.normal(size=(24, 6)), rng.normal(size=10), rng.normal(size=3)),
           rng.normal(size=(24, cfg.feat_dim))) for _ in range(3)]

    def diff(a, b):
        return max(float(np.max(np.abs(x.flat() - y.flat()))) for x, y in zip(a, b))

    two = forward(w, cfg, assemble_tokens(ps[:2], cfg))
    wide = RefinerConfig.desk(N=4)
    padding = diff(two, forward(RefinerWeights(wide, w.arrays), wide, assemble_tokens(ps[:2], wide)))

    a = forward(w, cfg, assemble_tokens(ps, cfg))
    b = forward(w, cfg, assemble_tokens([ps[0], ps[2], ps[1]], cfg))
    perm = diff([a[0], a[1], a[2]], [b[0], b[2], b[1]])

    zero = init_weights(cfg, seed=3)
    init = ps[0][0]
    exact = all(
        np.array_equal(refine(init, d).flat(), init.flat())
        for d in forward(zero, cfg, assemble_tokens(ps, cfg))
    )

    scene = H.synth_scene(_model(), 77, 5, 0.02, SyntheticFeatureProvider(cfg.feat_dim))
    report = H.evaluate(_model(), w, [scene])
    calls = report.extras["refiner_calls"]
    roots = np.array([p.observed[0] for p in scene.persons])
    nearest_ok = len(calls) == 5
    for c in calls:
        t = c["target"]
        d = np.linalg.norm(roots - roots[t], axis=1)
        d[t] = np.inf
        expected = set(np.argsort(d, kind="stable")[:2].tolist())
        nearest_ok &= c["group"][0] == t and set(c["group"][1:]) == expected
    nearest_ok &= select_inference_contexts(0, [[0, 0, 0], [1, 0, 0], [5, 0, 0], [2, 0, 0]], 3) == [0, 1, 3]

    ok = padding < 1e-9 and perm < 1e-9 and exact and nearest_ok
    return ok, (f"padding {padding:.1e}, permutation {perm:.1e}, zero-delta exact {exact}, "
                f"{len(calls)} calls with 2 nearest contexts {nearest_ok}")


def _train_overfit(model, scenes):
    train = H.TrainConfig(lr_refiner=3e-3, batch_size=64, groups_per_scene=64, steps_per_epoch=200)
    return H.train_refiner(model, RefinerConfig.desk(), scenes, 1, seed=1, train=train)


def check_8():
    model = _model()
    scenes = H.make_scenes(model, 1, 8, 0.02, 3, SyntheticFeatureProvider(64))
    before = H.mesh_loss(model, None, scenes)
    t0 = time.perf_counter()
    w, report = _train_overfit(model, scenes)
    elapsed = time.perf_counter() - t0
    after = H.mesh_loss(model, w, scenes)
    w2, report2 = _train_overfit(model, scenes)
    same = report.rows == report2.rows and all(np.array_equal(w.arrays[k], w2.arrays[k]) for k in w.arrays)
    ratio = after / before
    ok = ratio <= 0.5 and same and elapsed < 120.0
    return ok, (f"L_mesh {before:.3f} -> {after:.3f} (ratio {ratio:.3f}) after {len(report.rows)} steps, "
                f"deterministic {same}, {elapsed:.1f} s")


def check_9():
    model = _model()
    provider = SyntheticFeatureProvider(64)
    train_scenes = H.make_scenes(model, 256, 4, 0.02, 100, provider)
    test_scenes = H.make_scenes(model, 8, 4, 0.02, 200, provider)
    train = H.TrainConfig(lr_refiner=1e-3, batch_size=64, groups_per_scene=1, steps_per_epoch=300,
                          loss_weights={"pose": 300.0})
    t0 = time.perf_counter()
    w, _ = H.train_refiner(model, RefinerConfig.desk(), train_scenes, 1, seed=1, train=train)
    agg = H.evaluate(model, w, test_scenes).aggregates
    elapsed = time.perf_counter() - t0
    before, after = agg["mpjpe"]["mean"], agg["mpjpe_refined"]["mean"]
    return after < before, (f"held-out MPJPE {before:.2f} -> {after:.2f} mm on {len(test_scenes) * 4} persons, "
                            f"{elapsed:.1f} s")


def check_10():
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        weights = tmp / "w.npz"
        save_weights(init_weights(RefinerConfig.desk(), seed=4, zero_head=False), weights)
        outs = []
        for i in range(2):
            out = tmp / f"eval{i}.json"
            rc = cli_main(["eval", "--weights", str(weights), "--scenes", "3", "--persons", "3",
                           "--seed", "11", "--report", str(out)])
            outs.append((rc, out.read_bytes() if out.exists() else b""))
        same = outs[0][1] == outs[1][1] and outs[0][1] != b""
        valid = json.loads(outs[0][1])["extras"]["n_refiner_calls"] == 9 if same else False
    ok = same and valid and outs[0][0] == outs[1][0] == 0
    return ok, f"byte-identical {same} ({len(outs[0][1])} bytes)"


CHECKS = [check_1, check_2, check_3, check_4, check_5, check_6, check_7, check_8, check_9, check_10]


def _line(n, ok, detail):
    return f"CRITERION {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"


@pytest.mark.parametrize("n", range(1, 11))
def test_criterion(n, capsys):
    ok, detail = CHECKS[n - 1]()
    with capsys.disabled():
        print("\n" + _line(n, ok, detail))
    assert ok, detail


if __name__ == "__main__":
    failed = 0
    for n, check in enumerate(CHECKS, 1):
        ok, detail = check()
        failed += not ok
        print(_line(n, ok, detail), flush=True)
    sys.exit(1 if failed else 0)
