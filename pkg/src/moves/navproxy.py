"""Scan-matching odometry harness: point-to-point ICP chained over a sequence."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .core import PointCloud, Pose, RangeImage, Trajectory, unproject
from .metrics import ate, ate_per_axis, rigid_fit, rpe


class ICPError(RuntimeError):
    """Matching failed: too few points, no correspondences, or divergence."""

    def __init__(self, msg, frame=None):
        super().__init__(msg if frame is None else f"frame {frame}: {msg}")
        self.frame = frame


@dataclass(frozen=True)
class OdometryConfig:
    max_iterations: int = 60
    tolerance: float = 1e-7
    max_correspondence: float = 1.5
    voxel: float = 0.3
    # range-image targets are resampled `densify` times finer per axis
    densify: int = 8
    surface_jump: float = 0.3
    # no improvement for `patience` iterations ends the search; if the residual
    # has also grown past `divergence_ratio` x best, it is reported as divergence
    patience: int = 10
    divergence_ratio: float = 2.0
    # fraction of closest correspondences used for the fit (trimmed ICP)
    trim: float = 1.0
    # correspondences landing on the target's coverage edge are dropped
    reject_edges: bool = True

    def __post_init__(self):
        for name in ("max_iterations", "tolerance", "max_correspondence", "voxel", "patience",
                     "divergence_ratio", "densify", "surface_jump", "trim"):
            v = getattr(self, name)
            if not np.isfinite(v) or v <= 0:
                raise ValueError(f"{name} must be positive, got {v}")
        if self.trim > 1:
            raise ValueError(f"trim must be in (0, 1], got {self.trim}")


MIN_POINTS = 10


def voxel_downsample(points: np.ndarray, voxel: float) -> np.ndarray:
    """Keep the lowest-index point of every occupied voxel (original points, not centroids)."""
    points = np.asarray(points, dtype=np.float64)
    if len(points) == 0:
        return points
    keys = np.floor(points / voxel).astype(np.int64)
    _, first = np.unique(keys, axis=0, return_index=True)
    return points[np.sort(first)]


def _interior(r: np.ndarray, v: np.ndarray, jump: float) -> np.ndarray:
    """Cells away from the coverage edge: valid, not in the outer beams, and with
    valid 8-neighbours on the same surface."""
    out = v.copy()
    out[0] = out[-1] = False
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di == dj == 0:
                continue
            rn = np.roll(np.roll(r, di, 0), dj, 1)
            vn = np.roll(np.roll(v, di, 0), dj, 1)
            out &= vn & (np.abs(r - rn) <= jump * np.minimum(r, rn) + 0.2)
    return out


def densify(img: RangeImage, factor: int = 4, jump: float = 0.3,
            with_edges: bool = False):
    """Bilinear resampling of the unprojected cells, skipped across depth discontinuities.

    Interpolating 3D points rather than ranges keeps sub-cell samples on planar
    surfaces, and the original cells are among the samples. A sample is kept only when its four surrounding cells are valid and
    their ranges spread by at most `jump` x nearest + 0.2 m. Azimuth wraps around.
    With `with_edges`, also returns a flag per sample that touches a cell on the
    coverage edge (outer beams, invalid neighbours, depth jumps).
    """
    cfg = img.config
    H, W = cfg.shape
    r = img.ranges.astype(np.float64)
    v = img.validity
    P = cfg.ray_directions() * r[..., None]
    # the grid includes the original cell centres
    u = np.arange((H - 1) * factor + 1) / factor
    a = np.arange(W * factor) / factor
    i0 = np.minimum(np.floor(u).astype(int), H - 2) if H > 1 else np.zeros(len(u), int)
    i1 = np.minimum(i0 + 1, H - 1)
    fu = (u - i0)[:, None, None]
    j0 = np.floor(a).astype(int)
    fa = (a - j0)[None, :, None]
    j0 %= W
    j1 = (j0 + 1) % W
    corners = [np.ix_(i0, j0), np.ix_(i0, j1), np.ix_(i1, j0), np.ix_(i1, j1)]
    c = np.stack([r[k] for k in corners])
    ok = v[corners[0]] & v[corners[1]] & v[corners[2]] & v[corners[3]]
    ok &= c.max(0) - c.min(0) <= jump * c.min(0) + 0.2
    on_cell = np.ix_(u % 1 == 0, a % 1 == 0)
    ok[on_cell] |= v[np.ix_(np.rint(u[u % 1 == 0]).astype(int), np.rint(a[a % 1 == 0]).astype(int) % W)]
    pts = (P[corners[0]] * (1 - fu) * (1 - fa) + P[corners[1]] * (1 - fu) * fa
           + P[corners[2]] * fu * (1 - fa) + P[corners[3]] * fu * fa)
    if not with_edges:
        return pts[ok]
    inner = _interior(r, v, jump)
    edge = ~(inner[corners[0]] & inner[corners[1]] & inner[corners[2]] & inner[corners[3]])
    return pts[ok], edge[ok]


def _pts(x) -> np.ndarray:
    if isinstance(x, RangeImage):
        return unproject(x).points
    return x.points if isinstance(x, PointCloud) else np.asarray(x, dtype=np.float64).reshape(-1, 3)


def _target_pts(x, cfg: OdometryConfig) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(x, RangeImage):
        pts, edge = densify(x, cfg.densify, cfg.surface_jump, with_edges=True)
        return pts, edge if cfg.reject_edges else np.zeros(len(pts), bool)
    pts = _pts(x)
    return pts, np.zeros(len(pts), bool)


def _inliers(dist: np.ndarray, idx: np.ndarray, edge: np.ndarray,
             cfg: OdometryConfig) -> np.ndarray:
    keep = dist <= cfg.max_correspondence
    # edge rejection is skipped when it would leave too little to fit
    inner = keep & ~edge[idx]
    if inner.sum() >= MIN_POINTS:
        keep = inner
    if cfg.trim < 1 and keep.any():
        keep &= dist <= np.quantile(dist[keep], cfg.trim)
    return keep


def icp_match(source, target, init: Pose | None = None,
              cfg: OdometryConfig = OdometryConfig()) -> tuple[Pose, float]:
    """Pose T with T * source ~ target, and the RMS correspondence distance.

    Range-image targets are densified first; sources are voxel-downsampled.
    """
    src = voxel_downsample(_pts(source), cfg.voxel)
    dst, edge = _target_pts(target, cfg)
    if len(src) < MIN_POINTS or len(voxel_downsample(dst, cfg.voxel)) < MIN_POINTS:
        raise ICPError(f"ICP needs at least {MIN_POINTS} points per cloud after downsampling")
    tree = cKDTree(dst)
    T = (init or Pose.identity()).matrix()
    best, best_T, stall = np.inf, T, 0
    for _ in range(cfg.max_iterations):
        moved = src @ T[:3, :3].T + T[:3, 3]
        dist, idx = tree.query(moved)
        keep = _inliers(dist, idx, edge, cfg)
        if keep.sum() < 3:
            raise ICPError("no correspondences within the rejection distance")
        residual = float(np.sqrt(np.mean(dist[keep] ** 2)))
        if residual < best:
            best, best_T, stall = residual, T, 0
        else:
            stall += 1
            if stall >= cfg.patience:
                if residual > cfg.divergence_ratio * best:
                    raise ICPError(f"ICP diverged (residual {residual:.4g}, best {best:.4g})")
                break
        step = rigid_fit(moved[keep], dst[idx[keep]])
        T = step.matrix() @ T
        if np.linalg.norm(step.translation) < cfg.tolerance and \
                np.linalg.norm(step.rotation - np.eye(3)) < cfg.tolerance:
            moved = src @ T[:3, :3].T + T[:3, 3]
            dist, idx = tree.query(moved)
            keep = _inliers(dist, idx, edge, cfg)
            if keep.any() and np.sqrt(np.mean(dist[keep] ** 2)) <= best:
                best, best_T = float(np.sqrt(np.mean(dist[keep] ** 2))), T
            break
    else:
        moved = src @ T[:3, :3].T + T[:3, 3]
        dist, idx = tree.query(moved)
        keep = _inliers(dist, idx, edge, cfg)
        if keep.any() and np.sqrt(np.mean(dist[keep] ** 2)) <= best:
            best, best_T = float(np.sqrt(np.mean(dist[keep] ** 2))), T
    return Pose.from_matrix(best_T), best


def odometry(scans, cfg: OdometryConfig = OdometryConfig(), timestamps=None) -> Trajectory:
    """Chain frame-to-frame ICP with a constant-velocity initial guess; first pose is identity.

    `scans` may be range images (targets get densified) or point clouds.
    """
    scans = list(scans)
    if len(scans) < 2:
        raise ValueError("odometry needs at least 2 scans")
    ts = np.arange(len(scans), dtype=np.float64) if timestamps is None else np.asarray(timestamps)
    mats = [np.eye(4)]
    rel = Pose.identity()
    for k in range(1, len(scans)):
        try:
            rel, _ = icp_match(scans[k], scans[k - 1], rel, cfg)
        except ICPError as e:
            raise ICPError(str(e), frame=k) from e
        mats.append(mats[-1] @ rel.matrix())
    return Trajectory.from_matrices(ts, np.array(mats))


def relative_to_first(traj: Trajectory) -> Trajectory:
    """Re-express a trajectory so that its first pose is the identity."""
    mats = traj.matrices()
    inv0 = np.linalg.inv(mats[0])
    return Trajectory.from_matrices(traj.timestamps, np.array([inv0 @ m for m in mats]))


def trajectory_report(est: Trajectory, gt: Trajectory, delta: int = 1) -> dict:
    t_err, r_err = rpe(est, gt, delta)
    ax = ate_per_axis(est, gt)
    return {"ate": ate(est, gt), "rpe_trans": t_err, "rpe_rot": r_err,
            "ate_x": float(ax[0]), "ate_y": float(ax[1]), "ate_z": float(ax[2])}


VARIANTS = ("dynamic", "reconstruction", "static")


def nav_eval(dynamic_scans, reconstructed_scans, static_scans, gt: Trajectory,
             cfg: OdometryConfig = OdometryConfig()) -> tuple[dict, dict]:
    """Odometry on the three scan sources, scored against ground truth.

    Returns ({variant: metrics}, {variant: estimated trajectory}).
    """
    gt0 = relative_to_first(gt)
    reports, trajs = {}, {}
    for name, scans in zip(VARIANTS, (dynamic_scans, reconstructed_scans, static_scans)):
        est = odometry(scans, cfg, gt.timestamps)
        trajs[name] = est
        reports[name] = trajectory_report(est, gt0)
    return reports, trajs


def dynamic_fraction(masks, validity) -> np.ndarray:
    """Per-frame share of valid cells that are dynamic."""
    m = np.asarray(masks, bool).reshape(len(masks), -1)
    v = np.asarray(validity, bool).reshape(len(masks), -1)
    return (m & v).sum(axis=1) / np.maximum(v.sum(axis=1), 1)


def is_high_dynamism(masks, validity, share: float = 0.4) -> bool:
    frac = dynamic_fraction(masks, validity)
    return bool(np.count_nonzero(frac >= share) * 2 >= len(frac))
