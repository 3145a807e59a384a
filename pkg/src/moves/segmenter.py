"""Segmentation by range subtraction, Euclidean clustering and a small motion tracker."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .core import RangeImage, Trajectory, unproject_grid


@dataclass(frozen=True)
class SegmentConfig:
    tau: float = 0.2
    rho: float = 1.0
    n_min: int = 3
    k: int = 5
    eps: float = 0.5
    gate: float = 2.0

    def __post_init__(self):
        for name in ("tau", "rho", "eps", "gate"):
            v = getattr(self, name)
            if not np.isfinite(v) or v <= 0:
                raise ValueError(f"{name} must be positive, got {v}")
        if self.n_min < 1 or self.k < 1:
            raise ValueError("n_min and k must be at least 1")


@dataclass
class DynMask:
    mask: np.ndarray
    residual: np.ndarray  # dynamic minus reconstruction; NaN where either side is invalid

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        self.residual = np.asarray(self.residual, dtype=np.float64)
        if self.mask.shape != self.residual.shape:
            raise ValueError("mask and residual shapes differ")


@dataclass
class TrackedObject:
    track_id: int
    frames: list = field(default_factory=list)
    centroids: list = field(default_factory=list)
    counts: list = field(default_factory=list)
    label: str | None = None

    @property
    def mean_centroid(self) -> np.ndarray:
        return np.mean(self.centroids, axis=0)


def diff_segment(dynamic: RangeImage, reconstructed: RangeImage, tau: float = 0.2) -> DynMask:
    if dynamic.config != reconstructed.config:
        raise ValueError("dynamic and reconstructed images use different sensor configs")
    if not tau > 0:
        raise ValueError("tau must be positive")
    both = dynamic.validity & reconstructed.validity
    diff = dynamic.ranges.astype(np.float64) - reconstructed.ranges.astype(np.float64)
    residual = np.where(both, diff, np.nan)
    flip = dynamic.validity != reconstructed.validity
    mask = flip | (both & (np.abs(diff) >= tau))
    return DynMask(mask, residual)


def iou(pred: np.ndarray, truth: np.ndarray) -> float:
    """Intersection over union; two empty masks count as a perfect match."""
    pred, truth = np.asarray(pred, bool), np.asarray(truth, bool)
    union = np.count_nonzero(pred | truth)
    if union == 0:
        return 1.0
    return np.count_nonzero(pred & truth) / union


def cluster(mask: DynMask, dynamic: RangeImage, rho: float = 1.0, n_min: int = 3) -> list:
    """Group masked, valid points of `dynamic` by rho-connectivity.

    Returns a list of (N_i, 3) arrays in the sensor frame, ordered by the
    smallest flat cell index of each cluster so the output is deterministic.
    """
    pts = unproject_grid(dynamic)
    sel = mask.mask & dynamic.validity
    flat = np.flatnonzero(sel)
    if flat.size == 0:
        return []
    p = pts.reshape(-1, 3)[flat]
    pairs = cKDTree(p).query_pairs(rho, output_type="ndarray")
    n = len(p)
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, labels = connected_components(graph, directed=False)
    out = []
    for lab in np.unique(labels):
        members = np.flatnonzero(labels == lab)
        if len(members) >= n_min:
            out.append((members.min(), p[members]))
    out.sort(key=lambda t: t[0])
    return [c for _, c in out]


def _world_centroid(points: np.ndarray, pose_matrix: np.ndarray) -> np.ndarray:
    c = points.mean(axis=0)
    return pose_matrix[:3, :3] @ c + pose_matrix[:3, 3]


def track(frames: list, poses: Trajectory, gate: float = 2.0) -> list:
    """Greedy nearest-centroid association in the world frame.

    `frames[t]` is the list of sensor-frame clusters seen at frame t. A track
    can only be extended by a detection in the frame right after its last one.
    """
    if len(frames) != len(poses):
        raise ValueError(f"{len(frames)} frames but {len(poses)} poses")
    mats = poses.matrices()
    tracks: list[TrackedObject] = []
    live: list[TrackedObject] = []
    for t, clusters in enumerate(frames):
        cents = [_world_centroid(c, mats[t]) for c in clusters]
        cand = []
        for ti, tr in enumerate(live):
            for ci, c in enumerate(cents):
                d = float(np.linalg.norm(c - tr.centroids[-1]))
                if d <= gate:
                    cand.append((d, ti, ci))
        cand.sort()
        used_t, used_c, nxt = set(), set(), []
        for d, ti, ci in cand:
            if ti in used_t or ci in used_c:
                continue
            used_t.add(ti)
            used_c.add(ci)
            tr = live[ti]
            tr.frames.append(t)
            tr.centroids.append(cents[ci])
            tr.counts.append(len(clusters[ci]))
            nxt.append(tr)
        for ci, c in enumerate(cents):
            if ci not in used_c:
                tr = TrackedObject(len(tracks), [t], [c], [len(clusters[ci])])
                tracks.append(tr)
                nxt.append(tr)
        live = nxt
    return tracks


def window_displacement(centroids, k: int) -> float:
    """Median displacement between the ends of every k-observation window."""
    c = np.asarray(centroids, dtype=np.float64)
    if len(c) < k:
        raise ValueError(f"need at least {k} observations, got {len(c)}")
    if k == 1:
        return 0.0
    return float(np.median(np.linalg.norm(c[k - 1:] - c[: len(c) - k + 1], axis=1)))


def classify_motion(frames: list, poses: Trajectory, eps: float = 0.5, k: int = 5,
                    gate: float = 2.0) -> list:
    """Track detections over time and label tracks seen at least k times.

    Tracks shorter than k keep `label=None`; the list holds every track.
    """
    if len(frames) < k:
        raise ValueError(f"motion classification needs at least k={k} frames, got {len(frames)}")
    tracks = track(frames, poses, gate)
    for tr in tracks:
        if len(tr.centroids) >= k:
            tr.label = "moving" if window_displacement(tr.centroids, k) > eps else "movable"
    return tracks


def segment_sequence(dynamic_images, reconstructions, poses: Trajectory,
                     cfg: SegmentConfig = SegmentConfig()):
    """Per-frame masks plus labelled tracks for a whole sequence."""
    masks = [diff_segment(d, r, cfg.tau) for d, r in zip(dynamic_images, reconstructions)]
    frames = [cluster(m, d, cfg.rho, cfg.n_min) for m, d in zip(masks, dynamic_images)]
    tracks = classify_motion(frames, poses, cfg.eps, cfg.k, cfg.gate)
    return masks, tracks
