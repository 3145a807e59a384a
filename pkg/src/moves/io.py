"""Binary range-image / point-cloud codecs and TUM trajectory text files."""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .core import PointCloud, Pose, RangeImage, SensorConfig, Trajectory

RANGE_MAGIC = b"MVRI"
CLOUD_MAGIC = b"MVPC"
VERSION = 1

_RI_HEADER = struct.Struct("<4sHIIfff")
_PC_HEADER = struct.Struct("<4sHI")


class FormatError(ValueError):
    pass


class MalformedHeaderError(FormatError):
    pass


class TruncatedPayloadError(FormatError):
    pass


class VersionMismatchError(FormatError):
    pass


def _check_header(buf: bytes, header: struct.Struct, magic: bytes):
    if len(buf) < header.size:
        raise MalformedHeaderError(f"header needs {header.size} bytes, got {len(buf)}")
    fields = header.unpack_from(buf)
    if fields[0] != magic:
        raise MalformedHeaderError(f"bad magic {fields[0]!r}, expected {magic!r}")
    if fields[1] != VERSION:
        raise VersionMismatchError(f"unsupported version {fields[1]}, expected {VERSION}")
    return fields


def _payload(buf: bytes, offset: int, count: int) -> np.ndarray:
    need = offset + 4 * count
    if len(buf) < need:
        raise TruncatedPayloadError(f"payload needs {need} bytes, got {len(buf)}")
    if len(buf) > need:
        raise MalformedHeaderError(f"{len(buf) - need} trailing bytes after payload")
    return np.frombuffer(buf, dtype="<f4", count=count, offset=offset)


def encode_grid(config: SensorConfig, grid: np.ndarray) -> bytes:
    H, W = config.shape
    head = _RI_HEADER.pack(
        RANGE_MAGIC, VERSION, H, W, config.r_max, config.vfov_min, config.vfov_max
    )
    return head + np.ascontiguousarray(grid, dtype="<f4").tobytes()


def decode_grid(buf: bytes) -> tuple[SensorConfig, np.ndarray]:
    _, _, H, W, r_max, vmin, vmax = _check_header(buf, _RI_HEADER, RANGE_MAGIC)
    try:
        config = SensorConfig(H, W, vmin, vmax, r_max)
    except ValueError as exc:
        raise MalformedHeaderError(str(exc)) from exc
    grid = _payload(buf, _RI_HEADER.size, H * W).reshape(H, W).copy()
    return config, grid


def encode_range_image(img: RangeImage) -> bytes:
    return encode_grid(img.config, img.filled(-1.0))


def decode_range_image(buf: bytes) -> RangeImage:
    config, grid = decode_grid(buf)
    valid = grid != -1.0
    v = grid[valid]
    if np.any(~np.isfinite(v)) or np.any(v <= 0) or np.any(v > config.r_max):
        raise FormatError("range payload holds values outside (0, r_max] other than -1")
    return RangeImage(config, np.where(valid, grid, 0), valid)


def write_range_image(path, img: RangeImage) -> None:
    Path(path).write_bytes(encode_range_image(img))


def read_range_image(path) -> RangeImage:
    return decode_range_image(Path(path).read_bytes())


def write_mask(path, config: SensorConfig, mask: np.ndarray) -> None:
    """Boolean grid in the range-image container, payload 0.0 / 1.0."""
    Path(path).write_bytes(encode_grid(config, np.asarray(mask, dtype=np.float32)))


def read_mask(path) -> tuple[SensorConfig, np.ndarray]:
    config, grid = decode_grid(Path(path).read_bytes())
    if not np.all((grid == 0.0) | (grid == 1.0)):
        raise FormatError("mask payload must be 0/1")
    return config, grid == 1.0


def encode_point_cloud(cloud: PointCloud) -> bytes:
    head = _PC_HEADER.pack(CLOUD_MAGIC, VERSION, len(cloud))
    return head + np.ascontiguousarray(cloud.points, dtype="<f4").tobytes()


def decode_point_cloud(buf: bytes) -> PointCloud:
    _, _, count = _check_header(buf, _PC_HEADER, CLOUD_MAGIC)
    pts = _payload(buf, _PC_HEADER.size, 3 * count).reshape(count, 3)
    return PointCloud(pts.astype(np.float64))


def write_point_cloud(path, cloud: PointCloud) -> None:
    Path(path).write_bytes(encode_point_cloud(cloud))


def read_point_cloud(path) -> PointCloud:
    return decode_point_cloud(Path(path).read_bytes())


def format_trajectory(traj: Trajectory) -> str:
    lines = []
    for ts, pose in zip(traj.timestamps, traj.poses):
        vals = [ts, *pose.translation, *pose.rotation]
        lines.append(" ".join(repr(float(v)) for v in vals))
    return "\n".join(lines) + ("\n" if lines else "")


def parse_trajectory(text: str) -> Trajectory:
    stamps, poses = [], []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.replace(",", " ").split()
        if len(parts) != 8:
            raise MalformedHeaderError(f"line {lineno}: expected 8 fields, got {len(parts)}")
        try:
            vals = [float(p) for p in parts]
        except ValueError as exc:
            raise MalformedHeaderError(f"line {lineno}: {exc}") from exc
        stamps.append(vals[0])
        poses.append(Pose(vals[1:4], vals[4:8]))
    try:
        return Trajectory(stamps, poses)
    except ValueError as exc:
        raise FormatError(str(exc)) from exc


def write_trajectory(path, traj: Trajectory) -> None:
    Path(path).write_text(format_trajectory(traj))


def read_trajectory(path) -> Trajectory:
    return parse_trajectory(Path(path).read_text())
