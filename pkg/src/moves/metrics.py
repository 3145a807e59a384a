"""Point-cloud reconstruction metrics and trajectory error metrics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from .core import PointCloud, RangeImage, Trajectory, unproject


class UnequalCardinalityError(ValueError):
    pass


class DegenerateAlignmentError(ValueError):
    pass


def _pts(x) -> np.ndarray:
    return x.points if isinstance(x, PointCloud) else np.asarray(x, dtype=np.float64).reshape(-1, 3)


def _nn_sq(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    _, idx = cKDTree(dst).query(src, k=1)
    # recompute from coordinates so the value matches a direct scan bit-for-bit
    return ((src - dst[idx]) ** 2).sum(axis=1)


def chamfer(pc1, pc2) -> float:
    """Sum of squared nearest-neighbour distances, both directions."""
    a, b = _pts(pc1), _pts(pc2)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("chamfer distance needs two nonempty clouds")
    return float(_nn_sq(a, b).sum() + _nn_sq(b, a).sum())


def emd(pc1, pc2) -> float:
    """Exact earth mover's distance over bijections, L2 ground cost."""
    a, b = _pts(pc1), _pts(pc2)
    if len(a) != len(b):
        raise UnequalCardinalityError(f"emd needs equal cardinality, got {len(a)} and {len(b)}")
    if len(a) == 0:
        raise ValueError("emd needs nonempty clouds")
    cost = cdist(a, b)
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].sum())


def farthest_point_sample(points, n: int, seed: int = 0) -> np.ndarray:
    pts = _pts(points)
    if n >= len(pts):
        return pts.copy()
    rng = np.random.default_rng(seed)
    chosen = np.empty(n, dtype=np.int64)
    chosen[0] = rng.integers(len(pts))
    d = ((pts - pts[chosen[0]]) ** 2).sum(1)
    for k in range(1, n):
        chosen[k] = int(np.argmax(d))
        d = np.minimum(d, ((pts - pts[chosen[k]]) ** 2).sum(1))
    return pts[chosen]


def scan_metrics(pred: RangeImage, gt: RangeImage, emd_points: int = 256, seed: int = 0) -> dict:
    """Chamfer on the full clouds, EMD on equal-size farthest-point subsamples."""
    a, b = unproject(pred).points, unproject(gt).points
    out = {"cd": chamfer(a, b)}
    if emd_points:
        n = min(emd_points, len(a), len(b))
        out["emd"] = emd(farthest_point_sample(a, n, seed), farthest_point_sample(b, n, seed))
    return out


def masked_range_error(pred: RangeImage, gt: RangeImage, mask) -> float:
    """Mean absolute range error over `mask` cells, invalid cells read as r_max; nan if empty."""
    mask = np.asarray(mask, bool)
    if not mask.any():
        return float("nan")
    r_max = gt.config.r_max
    p = np.where(pred.validity, pred.ranges, r_max).astype(np.float64)
    g = np.where(gt.validity, gt.ranges, r_max).astype(np.float64)
    return float(np.abs(p - g)[mask].mean())


# -- trajectories -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray
    degenerate: bool = False

    def apply(self, pts: np.ndarray) -> np.ndarray:
        return pts @ self.rotation.T + self.translation

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m


def rigid_fit(src: np.ndarray, dst: np.ndarray, weights=None) -> RigidTransform:
    """Least-squares R, t with R @ src_i + t ~ dst_i (SVD of the cross-covariance)."""
    src = np.asarray(src, np.float64)
    dst = np.asarray(dst, np.float64)
    w = np.ones(len(src)) if weights is None else np.asarray(weights, np.float64)
    w = w / w.sum()
    mu_s = w @ src
    mu_d = w @ dst
    cs, cd = src - mu_s, dst - mu_d
    cov = (cd * w[:, None]).T @ cs
    U, S, Vt = np.linalg.svd(cov)
    D = np.eye(3)
    D[2, 2] = np.sign(np.linalg.det(U @ Vt)) or 1.0
    R = U @ D @ Vt
    # rank < 2 leaves the rotation about the common line undetermined
    sv = np.linalg.svd(cs, compute_uv=False)
    degenerate = bool(len(src) < 3 or sv[1] <= 1e-9 * max(sv[0], 1e-300))
    return RigidTransform(R, mu_d - R @ mu_s, degenerate)


def _positions(x) -> np.ndarray:
    return x.positions() if isinstance(x, Trajectory) else np.asarray(x, np.float64).reshape(-1, 3)


def horn_align(est, gt, strict: bool = False) -> RigidTransform:
    """Rigid transform mapping the estimated positions onto ground truth."""
    p, q = _positions(est), _positions(gt)
    if len(p) != len(q):
        raise ValueError(f"trajectory lengths differ: {len(p)} vs {len(q)}")
    if len(p) < 3:
        raise ValueError("alignment needs at least 3 matched poses")
    tf = rigid_fit(p, q)
    if strict and tf.degenerate:
        raise DegenerateAlignmentError("point set is collinear; rotation is not unique")
    return tf


def ate(est, gt) -> float:
    p, q = _positions(est), _positions(gt)
    if len(p) != len(q):
        raise ValueError(f"trajectory lengths differ: {len(p)} vs {len(q)}")
    tf = horn_align(p, q)
    res = tf.apply(p) - q
    return float(np.sqrt((res ** 2).sum(axis=1).mean()))


def ate_per_axis(est, gt) -> np.ndarray:
    """RMSE per x/y/z axis after alignment."""
    p, q = _positions(est), _positions(gt)
    tf = horn_align(p, q)
    res = tf.apply(p) - q
    return np.sqrt((res ** 2).mean(axis=0))


def _rigid_inv(m: np.ndarray) -> np.ndarray:
    out = np.eye(4)
    out[:3, :3] = m[:3, :3].T
    out[:3, 3] = -m[:3, :3].T @ m[:3, 3]
    return out


def rotation_angle(R: np.ndarray) -> float:
    v = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return float(np.arctan2(np.linalg.norm(v) / 2, (np.trace(R) - 1) / 2))


def rpe(est, gt, delta: int = 1) -> tuple[float, float]:
    """RMSE of relative translation (m) and rotation (rad) errors over step delta."""
    E = est.matrices() if isinstance(est, Trajectory) else np.asarray(est)
    G = gt.matrices() if isinstance(gt, Trajectory) else np.asarray(gt)
    n = len(G)
    if len(E) != n:
        raise ValueError(f"trajectory lengths differ: {len(E)} vs {n}")
    if delta < 1 or delta >= n:
        raise ValueError(f"delta must satisfy 1 <= delta < {n}, got {delta}")
    trans, rot = [], []
    for i in range(n - delta):
        rel_gt = _rigid_inv(G[i]) @ G[i + delta]
        rel_est = _rigid_inv(E[i]) @ E[i + delta]
        err = _rigid_inv(rel_gt) @ rel_est
        trans.append(np.linalg.norm(err[:3, 3]))
        rot.append(rotation_angle(err[:3, :3]))
    trans, rot = np.array(trans), np.array(rot)
    return float(np.sqrt((trans ** 2).mean())), float(np.sqrt((rot ** 2).mean()))
