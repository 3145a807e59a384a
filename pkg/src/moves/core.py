"""Geometric primitives and the spherical range-image codec.

Ranges are held as float32 so that an image survives the on-disk codec
bit-for-bit; point coordinates are float64.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation


def _f32(x: float) -> float:
    return float(np.float32(x))


@dataclass(frozen=True)
class SensorConfig:
    num_beams: int = 32
    num_azimuth: int = 64
    vfov_min: float = float(np.deg2rad(-25.0))
    vfov_max: float = float(np.deg2rad(15.0))
    r_max: float = 40.0

    def __post_init__(self):
        # angles and r_max are stored as f32 in files, snap them here once
        object.__setattr__(self, "vfov_min", _f32(self.vfov_min))
        object.__setattr__(self, "vfov_max", _f32(self.vfov_max))
        object.__setattr__(self, "r_max", _f32(self.r_max))
        if self.num_beams < 1:
            raise ValueError(f"num_beams must be >= 1, got {self.num_beams}")
        if self.num_azimuth < 4:
            raise ValueError(f"num_azimuth must be >= 4, got {self.num_azimuth}")
        if not self.vfov_min < self.vfov_max:
            raise ValueError("vfov_min must be < vfov_max")
        if not self.r_max > 0:
            raise ValueError("r_max must be positive")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.num_beams, self.num_azimuth)

    @property
    def elevation_step(self) -> float:
        return (self.vfov_max - self.vfov_min) / self.num_beams

    @property
    def azimuth_step(self) -> float:
        return 2.0 * np.pi / self.num_azimuth

    def elevations(self) -> np.ndarray:
        """Cell-centre elevation per row; row 0 is the top beam."""
        i = np.arange(self.num_beams)
        return self.vfov_max - (i + 0.5) * self.elevation_step

    def azimuths(self) -> np.ndarray:
        j = np.arange(self.num_azimuth)
        return -np.pi + (j + 0.5) * self.azimuth_step

    def ray_directions(self) -> np.ndarray:
        """Unit direction per cell, shape (H, W, 3), sensor frame."""
        el = self.elevations()[:, None]
        az = self.azimuths()[None, :]
        ce = np.cos(el)
        return np.stack(
            np.broadcast_arrays(ce * np.cos(az), ce * np.sin(az), np.sin(el)), axis=-1
        )

    def to_dict(self) -> dict:
        return {
            "num_beams": self.num_beams,
            "num_azimuth": self.num_azimuth,
            "vfov_min": self.vfov_min,
            "vfov_max": self.vfov_max,
            "r_max": self.r_max,
        }


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud contains non-finite coordinates")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)

    def transformed(self, pose: "Pose") -> "PointCloud":
        return PointCloud(self.points @ pose.rotation_matrix().T + pose.translation)


@dataclass(frozen=True, eq=False)
class RangeImage:
    config: SensorConfig
    ranges: np.ndarray
    validity: np.ndarray

    def __post_init__(self):
        ranges = np.asarray(self.ranges, dtype=np.float32)
        valid = np.asarray(self.validity, dtype=bool)
        if ranges.shape != self.config.shape or valid.shape != self.config.shape:
            raise ValueError(
                f"grid shape {ranges.shape} does not match config {self.config.shape}"
            )
        v = ranges[valid]
        if np.any(~np.isfinite(v)) or np.any(v <= 0) or np.any(v > self.config.r_max):
            raise ValueError("valid cells must satisfy 0 < range <= r_max")
        ranges = np.where(valid, ranges, np.float32(0.0)).astype(np.float32)
        object.__setattr__(self, "ranges", ranges)
        object.__setattr__(self, "validity", valid)

    @classmethod
    def empty(cls, config: SensorConfig) -> "RangeImage":
        return cls(config, np.zeros(config.shape, np.float32), np.zeros(config.shape, bool))

    @classmethod
    def from_ranges(cls, config: SensorConfig, ranges: np.ndarray) -> "RangeImage":
        """Cells that are non-finite, <= 0 or > r_max become invalid."""
        r = np.asarray(ranges, dtype=np.float32)
        valid = np.isfinite(r) & (r > 0) & (r <= config.r_max)
        return cls(config, np.where(valid, r, 0), valid)

    def filled(self, fill: float) -> np.ndarray:
        return np.where(self.validity, self.ranges, np.float32(fill))

    def equals(self, other: "RangeImage") -> bool:
        return (
            self.config == other.config
            and np.array_equal(self.validity, other.validity)
            and np.array_equal(self.ranges, other.ranges)
        )


@dataclass(frozen=True, eq=False)
class Pose:
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    # x, y, z, w (TUM order)
    rotation: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 0.0, 1.0]))

    def __post_init__(self):
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        q = np.asarray(self.rotation, dtype=np.float64).reshape(4)
        n = np.linalg.norm(q)
        if not np.isfinite(n) or n == 0:
            raise ValueError("rotation quaternion must be finite and nonzero")
        if abs(n - 1.0) > 1e-9:
            q = q / n
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "rotation", q)

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "Pose":
        m = np.asarray(m, dtype=np.float64)
        return cls(m[:3, 3], Rotation.from_matrix(m[:3, :3]).as_quat())

    @classmethod
    def from_xyz_yaw(cls, x: float, y: float, z: float, yaw: float) -> "Pose":
        return cls([x, y, z], Rotation.from_euler("z", yaw).as_quat())

    def rotation_matrix(self) -> np.ndarray:
        return Rotation.from_quat(self.rotation).as_matrix()

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation_matrix()
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> "Pose":
        return Pose.from_matrix(np.linalg.inv(self.matrix()))

    def compose(self, other: "Pose") -> "Pose":
        """self * other."""
        return Pose.from_matrix(self.matrix() @ other.matrix())

    def yaw(self) -> float:
        return float(Rotation.from_quat(self.rotation).as_euler("zyx")[0])


@dataclass(frozen=True, eq=False)
class Trajectory:
    timestamps: np.ndarray
    poses: tuple

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=np.float64).reshape(-1)
        poses = tuple(self.poses)
        if len(ts) != len(poses):
            raise ValueError("timestamps and poses differ in length")
        if len(ts) > 1 and np.any(np.diff(ts) <= 0):
            raise ValueError("trajectory timestamps must be strictly increasing")
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "poses", poses)

    def __len__(self) -> int:
        return len(self.poses)

    def positions(self) -> np.ndarray:
        return np.array([p.translation for p in self.poses]).reshape(-1, 3)

    def matrices(self) -> np.ndarray:
        return np.array([p.matrix() for p in self.poses]).reshape(-1, 4, 4)

    @classmethod
    def from_matrices(cls, timestamps, mats) -> "Trajectory":
        return cls(timestamps, tuple(Pose.from_matrix(m) for m in mats))


def project(cloud: PointCloud, config: SensorConfig) -> RangeImage:
    """Spherical projection; colliding points keep the nearest return."""
    pts = cloud.points
    H, W = config.shape
    ranges = np.full(config.shape, np.inf, dtype=np.float64)
    if len(pts) == 0:
        return RangeImage.empty(config)
    r = np.linalg.norm(pts, axis=1)
    keep = (r > 0) & (r <= config.r_max)
    pts, r = pts[keep], r[keep]
    el = np.arctan2(pts[:, 2], np.hypot(pts[:, 0], pts[:, 1]))
    az = np.arctan2(pts[:, 1], pts[:, 0])
    row = np.floor((config.vfov_max - el) / config.elevation_step).astype(np.int64)
    col = np.floor((az + np.pi) / config.azimuth_step).astype(np.int64) % W
    inside = (row >= 0) & (row < H)
    row, col, r = row[inside], col[inside], r[inside]
    np.minimum.at(ranges, (row, col), r)
    valid = np.isfinite(ranges)
    out = np.where(valid, ranges, 0.0).astype(np.float32)
    # f32 rounding can push a value a hair over r_max
    valid &= out <= np.float32(config.r_max)
    return RangeImage(config, out, valid)


def unproject(img: RangeImage) -> PointCloud:
    dirs = img.config.ray_directions()
    r = img.ranges.astype(np.float64)
    return PointCloud((dirs * r[..., None])[img.validity])


def unproject_grid(img: RangeImage) -> np.ndarray:
    """Per-cell 3D point, (H, W, 3); invalid cells are NaN."""
    pts = img.config.ray_directions() * img.ranges.astype(np.float64)[..., None]
    pts[~img.validity] = np.nan
    return pts
