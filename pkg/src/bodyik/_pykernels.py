"""Pure-Python/numpy reference kernels for the kinematic-chain loops.

The compiled module ``_ckernels`` implements the same functions with the same
signatures and branch structure; ``bodyik.kernels`` picks one at import.
"""

from __future__ import annotations

import math

import numpy as np

# Below this |sin| an antiparallel pair is handled by the 180-degree fallback
# followed by a small corrective swing; above it the direct axis/angle swing is exact
# to ~1e-11.
ANTIPARALLEL_SIN_TOL = 1e-5
LENGTH_TOL = 1e-8


def _cross(a, b):
    return np.array([
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ])


def _skew(n):
    return np.array([
        [0.0, -n[2], n[1]],
        [n[2], 0.0, -n[0]],
        [-n[1], n[0], 0.0],
    ])


def _rodrigues(n, c, s):
    k = _skew(n)
    return np.eye(3) + s * k + (1.0 - c) * (k @ k)


def fallback_axis(th):
    """Unit vector perpendicular to ``th``: projected global x, else projected y."""
    u = np.array([1.0, 0.0, 0.0]) - th[0] * th
    nu = math.sqrt(u @ u)
    if nu < LENGTH_TOL:
        u = np.array([0.0, 1.0, 0.0]) - th[1] * th
        nu = math.sqrt(u @ u)
    return u / nu


def _swing_unit(th, ph):
    x = _cross(th, ph)
    s = math.sqrt(x @ x)
    c = float(th @ ph)
    if s == 0.0:
        if c > 0.0:
            return np.eye(3)
    elif s >= ANTIPARALLEL_SIN_TOL or c > 0.0:
        return _rodrigues(x / s, c, s)
    u = fallback_axis(th)
    flip = 2.0 * np.outer(u, u) - np.eye(3)
    q = flip @ th
    x = _cross(q, ph)
    s = math.sqrt(x @ x)
    if s == 0.0:
        return flip
    return _rodrigues(x / s, float(q @ ph), s) @ flip


def swing(t, p):
    """Minimal rotation taking direction ``t`` onto direction ``p`` (both non-zero)."""
    t = np.asarray(t, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    return _swing_unit(t / math.sqrt(t @ t), p / math.sqrt(p @ p))


def twist(t, c, s):
    t = np.asarray(t, dtype=np.float64)
    nt = math.sqrt(t @ t)
    k = _skew(t)
    return np.eye(3) + (s / nt) * k + ((1.0 - c) / (nt * nt)) * (k @ k)


def fk_batch(parents, rest, rots):
    """Chain rest joints through local rotations.

    Args:
        parents: (K,) int, parent index or -1 for the root; topologically sorted.
        rest: (B, K, 3) rest-pose joint positions.
        rots: (B, K, 3, 3) local joint rotations.

    Returns:
        (joints (B, K, 3), global rotations (B, K, 3, 3)).
    """
    rest = np.asarray(rest, dtype=np.float64)
    rots = np.asarray(rots, dtype=np.float64)
    B, K = rest.shape[:2]
    joints = np.empty_like(rest)
    grots = np.empty_like(rots)
    for k in range(K):
        q = parents[k]
        if q < 0:
            grots[:, k] = rots[:, k]
            joints[:, k] = rest[:, k]
        else:
            offset = rest[:, k] - rest[:, q]
            grots[:, k] = grots[:, q] @ rots[:, k]
            # written relative to the rest joint so the identity pose is reproduced bit-exactly
            moved = np.einsum("bij,bj->bi", grots[:, q], offset) - offset
            joints[:, k] = rest[:, k] + (joints[:, q] - rest[:, q]) + moved
    return joints, grots


def _twist_axis(parents, primary, rest_b, k):
    c = primary[k]
    if c >= 0:
        return rest_b[c] - rest_b[k]
    return rest_b[k] - rest_b[parents[k]]


def ik_batch(parents, primary, secondary, rest, targets, twists):
    """Hierarchical swing/twist inverse kinematics.

    Args:
        parents: (K,) parent indices (-1 root), topologically sorted.
        primary: (K,) child whose bone defines the joint's swing/twist axis,
            -1 for leaves (leaves use their incoming bone as twist axis).
        secondary: (K, S) further children (padded with -1); when present the
            twist is fitted in closed form from them instead of read from
            ``twists``.
        rest: (B, K, 3) shaped rest joints.
        targets: (B, K, 3) target skeletons.
        twists: (B, K, 2) (cos, sin) pairs.

    Returns:
        (rotations (B, K, 3, 3), degenerate flags (B, K) uint8).
    """
    rest = np.asarray(rest, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    twists = np.asarray(twists, dtype=np.float64)
    B, K = rest.shape[:2]
    rots = np.zeros((B, K, 3, 3))
    flags = np.zeros((B, K), dtype=np.uint8)
    eye = np.eye(3)
    for b in range(B):
        grot = np.zeros((K, 3, 3))
        rb, pb = rest[b], targets[b]
        for k in range(K):
            q = parents[k]
            rp = eye if q < 0 else grot[q]
            c = primary[k]
            R = eye
            if c >= 0:
                t = rb[c] - rb[k]
                d = rp.T @ (pb[c] - pb[k])
                nt = math.sqrt(t @ t)
                nd = math.sqrt(d @ d)
                if nt < LENGTH_TOL or nd < LENGTH_TOL:
                    flags[b, k] = 1
                else:
                    th = t / nt
                    dh = d / nd
                    S = _swing_unit(th, dh)
                    sec = [j for j in secondary[k] if j >= 0]
                    if sec:
                        num = 0.0
                        den = 0.0
                        for j in sec:
                            a = S @ (rb[j] - rb[k])
                            e = rp.T @ (pb[j] - pb[k])
                            a = a - (a @ dh) * dh
                            e = e - (e @ dh) * dh
                            num += float(dh @ _cross(a, e))
                            den += float(a @ e)
                        h = math.hypot(num, den)
                        if h == 0.0:
                            cs, sn = 1.0, 0.0
                        else:
                            cs, sn = den / h, num / h
                        R = S @ twist(t, cs, sn)
                    else:
                        cs, sn = twists[b, k]
                        h = math.hypot(cs, sn)
                        if h < LENGTH_TOL:
                            flags[b, k] = 1
                            R = S
                        else:
                            R = S @ twist(t, cs / h, sn / h)
            elif q >= 0:
                t = rb[k] - rb[q]
                cs, sn = twists[b, k]
                h = math.hypot(cs, sn)
                if math.sqrt(t @ t) < LENGTH_TOL or h < LENGTH_TOL:
                    flags[b, k] = 1
                else:
                    R = twist(t, cs / h, sn / h)
            rots[b, k] = R
            grot[k] = rp @ R
    return rots, flags


def twist_batch(parents, primary, rest, rots):
    """Twist (cos, sin) of each local rotation about its joint's bone axis.

    The root entry is fixed to (1, 0).
    """
    rest = np.asarray(rest, dtype=np.float64)
    rots = np.asarray(rots, dtype=np.float64)
    B, K = rest.shape[:2]
    out = np.zeros((B, K, 2))
    out[:, :, 0] = 1.0
    for b in range(B):
        for k in range(K):
            if parents[k] < 0:
                continue
            t = _twist_axis(parents, primary, rest[b], k)
            nt = math.sqrt(t @ t)
            if nt < LENGTH_TOL:
                continue
            th = t / nt
            R = rots[b, k]
            S = _swing_unit(th, R @ th)
            tw = S.T @ R
            cs = 0.5 * (tw[0, 0] + tw[1, 1] + tw[2, 2] - 1.0)
            sn = 0.5 * (th[0] * (tw[2, 1] - tw[1, 2])
                        + th[1] * (tw[0, 2] - tw[2, 0])
                        + th[2] * (tw[1, 0] - tw[0, 1]))
            h = math.hypot(cs, sn)
            out[b, k] = (cs / h, sn / h)
    return out
