"""Deterministic raycast simulator for paired static/dynamic LiDAR scans.

Worlds are built from infinite planes and axis-aligned boxes so every
intersection is analytic. Dynamic actors are boxes too.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Sequence

import numpy as np

from .core import Pose, RangeImage, SensorConfig, Trajectory

_T_EPS = 1e-9


@dataclass(frozen=True, eq=False)
class Plane:
    """Infinite wall {x : normal . x = offset}."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=np.float64).reshape(3)
        norm = np.linalg.norm(n)
        if norm == 0:
            raise ValueError("plane normal must be nonzero")
        object.__setattr__(self, "normal", n / norm)
        object.__setattr__(self, "offset", float(self.offset) / norm)


@dataclass(frozen=True, eq=False)
class Box:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=np.float64).reshape(3)
        hi = np.asarray(self.hi, dtype=np.float64).reshape(3)
        if np.any(hi <= lo):
            raise ValueError("box extents must be positive")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    def contains(self, p, margin: float = 0.0) -> bool:
        p = np.asarray(p)
        return bool(np.all(p >= self.lo - margin) and np.all(p <= self.hi + margin))


@dataclass(frozen=True, eq=False)
class Actor:
    """Box actor. `movable` actors stand still unless a sequence schedules them."""

    center: np.ndarray
    half_extents: np.ndarray
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    movable: bool = False

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, np.float64).reshape(3))
        he = np.asarray(self.half_extents, np.float64).reshape(3)
        if np.any(he <= 0):
            raise ValueError("actor extents must be positive")
        object.__setattr__(self, "half_extents", he)
        object.__setattr__(self, "velocity", np.asarray(self.velocity, np.float64).reshape(3))

    def box(self, center=None) -> Box:
        c = self.center if center is None else center
        return Box(c - self.half_extents, c + self.half_extents)


@dataclass(frozen=True, eq=False)
class WorldSpec:
    planes: tuple = ()
    boxes: tuple = ()
    actors: tuple = ()
    bounds_lo: np.ndarray = field(default_factory=lambda: np.full(3, -np.inf))
    bounds_hi: np.ndarray = field(default_factory=lambda: np.full(3, np.inf))

    def __post_init__(self):
        object.__setattr__(self, "planes", tuple(self.planes))
        object.__setattr__(self, "boxes", tuple(self.boxes))
        object.__setattr__(self, "actors", tuple(self.actors))
        object.__setattr__(self, "bounds_lo", np.asarray(self.bounds_lo, np.float64))
        object.__setattr__(self, "bounds_hi", np.asarray(self.bounds_hi, np.float64))

    def with_actors(self, actors) -> "WorldSpec":
        return WorldSpec(self.planes, self.boxes, tuple(actors), self.bounds_lo, self.bounds_hi)

    def in_bounds(self, p) -> bool:
        p = np.asarray(p)
        return bool(np.all(p >= self.bounds_lo) and np.all(p <= self.bounds_hi))


def room(length: float, width: float, height: float) -> tuple[tuple, np.ndarray, np.ndarray]:
    """Closed room centred on the origin in x/y, floor at z=0."""
    lx, ly = length / 2, width / 2
    planes = (
        Plane([0, 0, 1], 0.0),
        Plane([0, 0, 1], height),
        Plane([1, 0, 0], lx),
        Plane([1, 0, 0], -lx),
        Plane([0, 1, 0], ly),
        Plane([0, 1, 0], -ly),
    )
    return planes, np.array([-lx, -ly, 0.0]), np.array([lx, ly, height])


def _plane_hits(planes, origin, dirs) -> np.ndarray:
    t = np.full(len(dirs), np.inf)
    for pl in planes:
        denom = dirs @ pl.normal
        with np.errstate(divide="ignore", invalid="ignore"):
            tp = (pl.offset - pl.normal @ origin) / denom
        tp = np.where((denom != 0) & (tp > _T_EPS), tp, np.inf)
        t = np.minimum(t, tp)
    return t


def _box_hits(boxes, origin, dirs) -> np.ndarray:
    t = np.full(len(dirs), np.inf)
    parallel = dirs == 0
    for b in boxes:
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (b.lo - origin) / dirs
            t2 = (b.hi - origin) / dirs
        inside = (origin >= b.lo) & (origin <= b.hi)
        near = np.where(parallel, np.where(inside, -np.inf, np.inf), np.minimum(t1, t2))
        far = np.where(parallel, np.where(inside, np.inf, -np.inf), np.maximum(t1, t2))
        tmin = near.max(axis=1)
        tmax = far.min(axis=1)
        hit = tmax >= np.maximum(tmin, _T_EPS)
        tb = np.where(tmin > _T_EPS, tmin, tmax)
        t = np.minimum(t, np.where(hit, tb, np.inf))
    return t


def cast_rays(world: WorldSpec, origin, dirs, actors=None) -> tuple[np.ndarray, np.ndarray]:
    """Nearest hit distance along each ray, and the distance to actors only.

    `actors` overrides world.actors (used for time-varying positions).
    """
    origin = np.asarray(origin, np.float64)
    dirs = np.asarray(dirs, np.float64).reshape(-1, 3)
    t_static = np.minimum(_plane_hits(world.planes, origin, dirs), _box_hits(world.boxes, origin, dirs))
    actor_boxes = [a.box() for a in (world.actors if actors is None else actors)]
    t_actor = _box_hits(actor_boxes, origin, dirs)
    return t_static, t_actor


def _to_image(t: np.ndarray, config: SensorConfig) -> RangeImage:
    t = t.reshape(config.shape)
    r = t.astype(np.float32)
    valid = np.isfinite(t) & (r <= np.float32(config.r_max)) & (r > 0)
    return RangeImage(config, np.where(valid, r, 0), valid)


def _world_dirs(pose: Pose, config: SensorConfig) -> np.ndarray:
    return config.ray_directions().reshape(-1, 3) @ pose.rotation_matrix().T


def raycast(world: WorldSpec, pose: Pose, config: SensorConfig, include_dynamic: bool = True,
            actors=None) -> RangeImage:
    t_static, t_actor = cast_rays(world, pose.translation, _world_dirs(pose, config), actors)
    t = np.minimum(t_static, t_actor) if include_dynamic else t_static
    return _to_image(t, config)


@dataclass(frozen=True, eq=False)
class ScanPair:
    static: RangeImage
    dynamic: RangeImage
    pose: Pose
    gt_dyn_mask: np.ndarray


def gen_pair(world: WorldSpec, pose: Pose, config: SensorConfig, actors=None) -> ScanPair:
    t_static, t_actor = cast_rays(world, pose.translation, _world_dirs(pose, config), actors)
    static = _to_image(t_static, config)
    dynamic = _to_image(np.minimum(t_static, t_actor), config)
    actor_hit = (t_actor <= t_static).reshape(config.shape) & dynamic.validity
    differ = (static.validity != dynamic.validity) | (static.ranges != dynamic.ranges)
    return ScanPair(static, dynamic, pose, differ | actor_hit)


@dataclass(frozen=True)
class SequenceSpec:
    waypoints: tuple
    speed: float = 1.0
    interval: float = 0.5
    num_frames: int | None = None
    # (actor index, t_start, t_end): windows in which a movable actor moves
    actor_schedule: tuple = ()
    yaw_jitter: float = 0.0

    def __post_init__(self):
        wp = tuple(tuple(float(c) for c in w) for w in self.waypoints)
        if len(wp) < 2:
            raise ValueError("a sequence needs at least 2 waypoints")
        if any(len(w) != 3 for w in wp):
            raise ValueError("waypoints are 3D")
        if self.interval <= 0 or self.speed <= 0:
            raise ValueError("speed and interval must be positive")
        object.__setattr__(self, "waypoints", wp)


def _moving_time(actor_idx: int, actor: Actor, seq: SequenceSpec, t: float) -> float:
    if not actor.movable:
        return t
    total = 0.0
    for idx, t0, t1 in seq.actor_schedule:
        if idx == actor_idx:
            total += max(0.0, min(t, t1) - t0)
    return total


def actors_at(world: WorldSpec, seq: SequenceSpec, t: float) -> tuple:
    out = []
    for i, a in enumerate(world.actors):
        c = a.center + a.velocity * _moving_time(i, a, seq, t)
        out.append(Actor(c, a.half_extents, a.velocity, a.movable))
    return tuple(out)


def _path_pose(seq: SequenceSpec, s: float) -> tuple[np.ndarray, float]:
    wp = np.array(seq.waypoints)
    seg = np.diff(wp, axis=0)
    lengths = np.linalg.norm(seg, axis=1)
    cum = np.concatenate([[0.0], np.cumsum(lengths)])
    k = int(np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(seg) - 1))
    frac = (s - cum[k]) / lengths[k] if lengths[k] > 0 else 0.0
    pos = wp[k] + frac * seg[k]
    yaw = float(np.arctan2(seg[k][1], seg[k][0]))
    return pos, yaw


def path_length(seq: SequenceSpec) -> float:
    return float(np.linalg.norm(np.diff(np.array(seq.waypoints), axis=0), axis=1).sum())


def gen_sequence(world: WorldSpec, seq: SequenceSpec, config: SensorConfig, seed: int = 0):
    rng = np.random.default_rng(seed)
    n = seq.num_frames
    if n is None:
        n = int(np.floor(path_length(seq) / (seq.speed * seq.interval))) + 1
    pairs, stamps, poses = [], [], []
    for k in range(n):
        t = k * seq.interval
        pos, yaw = _path_pose(seq, seq.speed * t)
        if seq.yaw_jitter > 0:
            yaw += float(rng.normal(0.0, seq.yaw_jitter))
        if not world.in_bounds(pos):
            raise ValueError(f"trajectory leaves world bounds at frame {k}: {pos}")
        pose = Pose.from_xyz_yaw(*pos, yaw)
        pairs.append(gen_pair(world, pose, config, actors_at(world, seq, t)))
        stamps.append(t)
        poses.append(pose)
    return pairs, Trajectory(stamps, poses)


# -- world families ---------------------------------------------------------


@dataclass
class WorldFamily:
    """Distribution over room worlds; every sampled pair gets its own layout."""

    length: tuple = (12.0, 28.0)
    width: tuple = (8.0, 16.0)
    height: tuple = (3.0, 4.5)
    sensor_height: float = 1.2
    wall_margin: float = 1.5
    pillars: tuple = (0, 2)
    pillar_size: tuple = (0.4, 0.8)
    actors: tuple = (1, 6)
    actor_length: tuple = (1.6, 4.5)
    actor_width: tuple = (0.8, 2.2)
    actor_height: tuple = (1.0, 2.8)
    actor_distance: tuple = (2.0, 9.0)
    actor_clearance: float = 0.5
    max_speed: float = 2.0
    movable_fraction: float = 0.5

    @classmethod
    def from_dict(cls, d: dict) -> "WorldFamily":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown world keys: {sorted(unknown)}")
        vals = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**vals)

    def to_dict(self) -> dict:
        return {f.name: list(v) if isinstance(v := getattr(self, f.name), tuple) else v
                for f in fields(self)}

    def sample(self, rng: np.random.Generator) -> tuple[WorldSpec, Pose]:
        u = lambda r: float(rng.uniform(*r))  # noqa: E731
        L, W, H = u(self.length), u(self.width), u(self.height)
        planes, lo, hi = room(L, W, H)
        m = self.wall_margin
        sx = float(rng.uniform(lo[0] + m, hi[0] - m))
        sy = float(rng.uniform(lo[1] + m, hi[1] - m))
        sensor = np.array([sx, sy, self.sensor_height])
        pose = Pose.from_xyz_yaw(sx, sy, self.sensor_height, float(rng.uniform(-np.pi, np.pi)))

        boxes = []
        for _ in range(int(rng.integers(self.pillars[0], self.pillars[1] + 1))):
            s = u(self.pillar_size) / 2
            for _attempt in range(20):
                c = rng.uniform(lo[:2] + s, hi[:2] - s)
                b = Box([c[0] - s, c[1] - s, 0.0], [c[0] + s, c[1] + s, H])
                if not b.contains(sensor, margin=1.0):
                    boxes.append(b)
                    break

        actors = []
        for _ in range(int(rng.integers(self.actors[0], self.actors[1] + 1))):
            for _attempt in range(20):
                a = self._sample_actor(rng, sensor, lo, hi, H)
                if a is not None:
                    actors.append(a)
                    break
        world = WorldSpec(planes, tuple(boxes), tuple(actors), lo, hi)
        return world, pose

    def _sample_actor(self, rng, sensor, lo, hi, room_height):
        ln, wd = float(rng.uniform(*self.actor_length)), float(rng.uniform(*self.actor_width))
        ht = min(float(rng.uniform(*self.actor_height)), room_height - 0.2)
        heading_x = bool(rng.integers(0, 2))
        half = np.array([ln, wd, ht]) / 2 if heading_x else np.array([wd, ln, ht]) / 2
        ang = rng.uniform(-np.pi, np.pi)
        dist = rng.uniform(*self.actor_distance)
        c = np.array([sensor[0] + dist * np.cos(ang), sensor[1] + dist * np.sin(ang), half[2]])
        if np.any(c[:2] - half[:2] < lo[:2]) or np.any(c[:2] + half[:2] > hi[:2]):
            return None
        if Box(c - half, c + half).contains(sensor, margin=self.actor_clearance):
            return None
        movable = bool(rng.random() < self.movable_fraction)
        speed = float(rng.uniform(0.5, self.max_speed))
        axis = np.array([1.0, 0, 0]) if heading_x else np.array([0, 1.0, 0])
        vel = speed * axis * (1 if rng.random() < 0.5 else -1)
        return Actor(c, half, vel, movable)


def sample_pairs(family: WorldFamily, config: SensorConfig, n: int, seed: int) -> list[ScanPair]:
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        world, pose = family.sample(rng)
        out.append(gen_pair(world, pose, config))
    return out


def split_labels(n: int, fractions: Sequence[float] = (0.8, 0.1, 0.1)) -> list[str]:
    """Deterministic contiguous split; each pair has its own layout so splits are disjoint."""
    n_train = int(round(n * fractions[0]))
    n_val = int(round(n * fractions[1]))
    n_train = min(n_train, n)
    n_val = min(n_val, n - n_train)
    return ["train"] * n_train + ["val"] * n_val + ["test"] * (n - n_train - n_val)
