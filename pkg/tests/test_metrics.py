import numpy as np
import pytest

from bodyik import metrics as M
from bodyik.errors import DegenerateAlignmentError, ShapeMismatchError, UndefinedScoreError

from conftest import random_rotation


@pytest.fixture
def skel(rng):
    return rng.normal(0, 0.3, (24, 3)) + [0.0, 0.0, 4.0]


def similarity(rng, x):
    s = rng.uniform(0.5, 2.0)
    R = random_rotation(rng)
    return s * x @ R.T + rng.normal(size=3)


def test_mpjpe_examples(skel):
    assert M.mpjpe(skel, skel) == 0.0
    off = skel.copy()
    off[5, 0] += 0.2
    assert M.mpjpe(off, skel) == pytest.approx(200 / 24, abs=1e-9)
    assert M.mpjpe(skel + [1.0, 2.0, 3.0], skel) == pytest.approx(0.0, abs=1e-9)


def test_mpjpe_shape_checks(skel):
    with pytest.raises(ShapeMismatchError):
        M.mpjpe(skel[:23], skel)


def test_procrustes_recovers_similarity(rng, skel):
    for _ in range(20):
        target = similarity(rng, skel)
        s, R, t, aligned = M.procrustes_align(skel, target)
        assert np.max(np.abs(aligned - target)) < 1e-9
        assert abs(np.linalg.det(R) - 1.0) < 1e-12
    s, R, t, aligned = M.procrustes_align(skel, skel)
    assert s == pytest.approx(1.0) and np.allclose(R, np.eye(3)) and np.allclose(t, 0, atol=1e-12)


def test_procrustes_never_reflects(rng, skel):
    mirrored = skel * [-1.0, 1.0, 1.0]
    _, R, _, _ = M.procrustes_align(skel, mirrored)
    assert np.linalg.det(R) == pytest.approx(1.0)


def test_procrustes_residual_not_worse_than_identity(rng):
    for _ in range(100):
        a, b = rng.normal(size=(2, 24, 3))
        *_, aligned = M.procrustes_align(a, b)
        assert np.sum((aligned - b) ** 2) <= np.sum((a - b) ** 2) + 1e-12


def test_procrustes_degenerate():
    line = np.outer(np.arange(24.0), [1.0, 2.0, 3.0])
    with pytest.raises(DegenerateAlignmentError):
        M.procrustes_align(line, line)
    with pytest.raises(DegenerateAlignmentError):
        M.pa_mpjpe(np.zeros((24, 3)), np.ones((24, 3)))


def test_pa_mpjpe(rng, skel):
    assert M.pa_mpjpe(skel, skel) == pytest.approx(0.0, abs=1e-9)
    assert M.pa_mpjpe(similarity(rng, skel), skel) < 1e-9
    for _ in range(100):
        pred = skel + rng.normal(0, 0.05, skel.shape)
        assert M.pa_mpjpe(pred, skel) <= M.mpjpe(pred, skel) + 1e-9


def test_metric_invariances(rng, skel):
    pred = skel + rng.normal(0, 0.05, skel.shape)
    shift = rng.normal(size=3)
    assert M.mpjpe(pred + shift, skel + shift) == pytest.approx(M.mpjpe(pred, skel), abs=1e-9)
    assert M.pa_mpjpe(similarity(rng, pred), skel) == pytest.approx(M.pa_mpjpe(pred, skel), abs=1e-7)


def test_mve(model, rng):
    v = model.template_vertices
    assert M.mve(v, v, model.joint_regressor) == 0.0
    assert M.mve(v + [0.01, 0, 0], v, align=False) == pytest.approx(10.0)
    # alignment only removes a translation
    moved = v + rng.normal(0, 0.01, v.shape)
    shift = model.joint_regressor[0] @ v - model.joint_regressor[0] @ moved
    assert M.mve(moved, v, model.joint_regressor) == pytest.approx(M.mve(moved + shift, v, align=False), abs=1e-12)
    with pytest.raises(ShapeMismatchError):
        M.mve(v[:-1], v, model.joint_regressor)


def test_pck(skel):
    assert M.pck3d(skel, skel) == 100.0
    off = skel.copy()
    off[3, 1] += 0.2
    assert M.pck3d(off, skel) == pytest.approx(100 * 23 / 24, abs=1e-3)
    assert M.pck3d(off, skel, threshold_mm=0.0) == 0.0
    assert M.PCK_THRESHOLD_MM == 150.0
    noisy = skel + np.random.default_rng(3).normal(0, 0.1, skel.shape)
    values = [M.pck3d(noisy, skel, threshold_mm=t) for t in range(0, 500, 25)]
    assert values == sorted(values)


def test_pck_absolute_flag(skel):
    assert M.pck3d(skel + [1.0, 0, 0], skel, root_aligned=False) == 0.0
    assert M.pck3d(skel + [1.0, 0, 0], skel) == 100.0


def test_matching(skel):
    r = M.match_predictions([skel, skel + 1], [skel, skel + 1])
    assert len(r.pairs) == 2 and r.f1 == 1.0
    r = M.match_predictions([skel, skel + 5], [skel])
    assert r.pairs == [(0, 0)] and r.false_alarms == 1 and r.f1 == pytest.approx(2 / 3)
    r = M.match_predictions([], [skel, skel])
    assert r.f1 == 0.0 and r.misses == 2
    r = M.match_predictions([skel + [0.3, 0, 0]], [skel])
    assert r.pairs == [] and r.misses == 1 and r.false_alarms == 1


def test_matching_greedy_uses_each_index_once(skel):
    preds = [skel + [0.01, 0, 0], skel + [0.02, 0, 0], skel + [0.5, 0, 0]]
    gts = [skel, skel + [0.45, 0, 0]]
    r = M.match_predictions(preds, gts)
    assert sorted(r.pairs) == [(0, 0), (2, 1)]
    assert len({i for i, _ in r.pairs}) == len(r.pairs) == len({j for _, j in r.pairs})


def test_nmje_nmve():
    assert M.nmje_nmve(50.0, 60.0, 1.0) == (50.0, 60.0)
    assert M.nmje_nmve(50.0, 60.0, 0.5) == (100.0, 120.0)
    f1 = 91.6 / 110.4
    assert f1 == pytest.approx(0.8297, abs=1e-3)
    assert M.nmje_nmve(91.6, 0.0, f1)[0] == pytest.approx(110.4, abs=0.1)
    with pytest.raises(UndefinedScoreError):
        M.nmje_nmve(1.0, 1.0, 0.0)
