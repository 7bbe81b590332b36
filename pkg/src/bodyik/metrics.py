"""3D pose and mesh evaluation metrics.

Inputs are in meters; every metric is reported in millimeters (PCK in
percent). Conversion happens only here.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateAlignmentError, ShapeMismatchError, UndefinedScoreError

M_TO_MM = 1000.0
PCK_THRESHOLD_MM = 150.0
MATCH_RADIUS_MM = 250.0
PELVIS = 0


def _points(x, name="points"):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != 3:
        raise ShapeMismatchError(f"{name} must be (n, 3), got {x.shape}")
    return x


def _same(pred, gt):
    pred, gt = _points(pred, "pred"), _points(gt, "gt")
    if pred.shape != gt.shape:
        raise ShapeMismatchError(f"pred {pred.shape} and gt {gt.shape} differ")
    return pred, gt


def joint_errors(pred, gt, root: int | None = PELVIS) -> np.ndarray:
    """Per-joint Euclidean errors (mm), after moving the pred root onto the gt root."""
    pred, gt = _same(pred, gt)
    if root is not None:
        pred = pred - pred[root]
        gt = gt - gt[root]
    return np.linalg.norm(pred - gt, axis=1) * M_TO_MM


def mpjpe(pred, gt, root: int = PELVIS) -> float:
    """Mean per-joint position error in mm with pelvis alignment."""
    return float(joint_errors(pred, gt, root).mean())


def procrustes_align(pred, gt):
    """Least-squares similarity transform taking ``pred`` onto ``gt``.

    Returns ``(scale, R, t, aligned)`` with ``aligned = scale * pred @ R.T + t``.
    Reflections are excluded.
    """
    pred, gt = _same(pred, gt)
    mu_p = pred.mean(axis=0)
    mu_g = gt.mean(axis=0)
    X = pred - mu_p
    Y = gt - mu_g
    var_p = np.sum(X * X)
    cov = Y.T @ X
    U, S, Vt = np.linalg.svd(cov)
    if pred.shape[0] < 3 or var_p <= 1e-20 or S[1] <= 1e-12 * max(S[0], 1e-300):
        raise DegenerateAlignmentError("point configuration has rank < 2")
    D = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        D[2, 2] = -1.0
    R = U @ D @ Vt
    scale = float(np.sum(S * np.diag(D)) / var_p)
    t = mu_g - scale * R @ mu_p
    return scale, R, t, scale * pred @ R.T + t


def pa_mpjpe(pred, gt) -> float:
    """MPJPE (mm) after Procrustes similarity alignment."""
    _, _, _, aligned = procrustes_align(pred, gt)
    return float((np.linalg.norm(aligned - np.asarray(gt), axis=1) * M_TO_MM).mean())


def mve(pred_vertices, gt_vertices, joint_regressor=None, align: bool = True) -> float:
    """Mean vertex error in mm.

    With ``align`` the prediction is translated so that its regressed pelvis
    coincides with the ground-truth regressed pelvis (needs
    ``joint_regressor``).
    """
    pv = getattr(pred_vertices, "vertices", pred_vertices)
    gv = getattr(gt_vertices, "vertices", gt_vertices)
    pv, gv = np.asarray(pv, dtype=np.float64), np.asarray(gv, dtype=np.float64)
    if pv.shape != gv.shape:
        raise ShapeMismatchError(f"vertex count mismatch: {pv.shape} vs {gv.shape}")
    if align:
        if joint_regressor is None:
            raise ShapeMismatchError("pelvis alignment needs the joint regressor")
        reg = np.asarray(joint_regressor)[PELVIS]
        pv = pv - reg @ pv + reg @ gv
    return float((np.linalg.norm(pv - gv, axis=1) * M_TO_MM).mean())


def pck3d(pred, gt, threshold_mm: float = PCK_THRESHOLD_MM, root_aligned: bool = True) -> float:
    """Percentage of joints with error strictly below ``threshold_mm``."""
    err = joint_errors(pred, gt, PELVIS if root_aligned else None)
    return float(100.0 * np.count_nonzero(err < threshold_mm) / err.size)


@dataclass
class MatchResult:
    pairs: list = field(default_factory=list)
    misses: int = 0
    false_alarms: int = 0
    f1: float = 0.0

    @property
    def precision(self) -> float:
        n = len(self.pairs) + self.false_alarms
        return len(self.pairs) / n if n else 0.0

    @property
    def recall(self) -> float:
        n = len(self.pairs) + self.misses
        return len(self.pairs) / n if n else 0.0


def f1_score(matched: int, n_pred: int, n_gt: int) -> float:
    if matched == 0 or n_pred == 0 or n_gt == 0:
        return 0.0
    p = matched / n_pred
    r = matched / n_gt
    return 2.0 * p * r / (p + r)


def match_predictions(preds, gts, radius_mm: float = MATCH_RADIUS_MM, root: int = PELVIS) -> MatchResult:
    """Greedy one-to-one matching by ascending root distance within ``radius_mm``."""
    preds = [np.asarray(p, dtype=np.float64) for p in preds]
    gts = [np.asarray(g, dtype=np.float64) for g in gts]
    cands = []
    for i, p in enumerate(preds):
        for j, g in enumerate(gts):
            d = float(np.linalg.norm(p[root] - g[root]) * M_TO_MM)
            if d <= radius_mm:
                cands.append((d, i, j))
    cands.sort()
    used_p, used_g, pairs = set(), set(), []
    for _, i, j in cands:
        if i in used_p or j in used_g:
            continue
        used_p.add(i)
        used_g.add(j)
        pairs.append((i, j))
    return MatchResult(
        pairs=pairs,
        misses=len(gts) - len(pairs),
        false_alarms=len(preds) - len(pairs),
        f1=f1_score(len(pairs), len(preds), len(gts)),
    )


def nmje_nmve(mpjpe_matched: float, mve_matched: float, f1: float) -> tuple[float, float]:
    """Normalise matched errors by detection F1."""
    if not f1 > 0.0:
        raise UndefinedScoreError("F1 is zero; normalised errors are undefined")
    return mpjpe_matched / f1, mve_matched / f1
