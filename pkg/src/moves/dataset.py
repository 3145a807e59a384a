"""In-memory paired dataset and its on-disk layout.

A dataset directory holds `manifest.yaml` (sensor config, one entry per pair
with split and pose) and a `pairs/` folder of MVRI files. A sequence
directory adds `gt_traj.txt` and `actors.csv`.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .core import Pose, RangeImage, SensorConfig
from .io import read_mask, read_range_image, read_trajectory, write_mask, write_range_image, write_trajectory
from .synthworld import ScanPair, WorldSpec, SequenceSpec, actors_at


@dataclass
class PairDataset:
    sensor: SensorConfig
    static: np.ndarray
    static_valid: np.ndarray
    dynamic: np.ndarray
    dynamic_valid: np.ndarray
    masks: np.ndarray
    poses: list = field(default_factory=list)
    splits: list = field(default_factory=list)
    ids: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.static)

    @classmethod
    def from_pairs(cls, pairs, splits=None, ids=None) -> "PairDataset":
        if not pairs:
            raise ValueError("empty pair list")
        sensor = pairs[0].static.config
        n = len(pairs)
        return cls(
            sensor,
            np.stack([p.static.ranges for p in pairs]),
            np.stack([p.static.validity for p in pairs]),
            np.stack([p.dynamic.ranges for p in pairs]),
            np.stack([p.dynamic.validity for p in pairs]),
            np.stack([p.gt_dyn_mask for p in pairs]),
            [p.pose for p in pairs],
            list(splits) if splits is not None else ["train"] * n,
            list(ids) if ids is not None else [f"{i:05d}" for i in range(n)],
        )

    def subset(self, split: str | None = None, index=None) -> "PairDataset":
        if index is None:
            index = [i for i, s in enumerate(self.splits) if s == split]
        index = np.asarray(index, dtype=np.int64)
        pick = lambda xs: [xs[i] for i in index]  # noqa: E731
        return PairDataset(self.sensor, self.static[index], self.static_valid[index],
                           self.dynamic[index], self.dynamic_valid[index], self.masks[index],
                           pick(self.poses), pick(self.splits), pick(self.ids))

    def static_image(self, i: int) -> RangeImage:
        return RangeImage(self.sensor, self.static[i], self.static_valid[i])

    def dynamic_image(self, i: int) -> RangeImage:
        return RangeImage(self.sensor, self.dynamic[i], self.dynamic_valid[i])

    def pair(self, i: int) -> ScanPair:
        return ScanPair(self.static_image(i), self.dynamic_image(i), self.poses[i], self.masks[i])


def _pose_list(pose: Pose) -> list:
    return [float(v) for v in (*pose.translation, *pose.rotation)]


def sensor_from_dict(d: dict) -> SensorConfig:
    return SensorConfig(**d)


def write_dataset(out_dir, data: PairDataset, extra: dict | None = None) -> None:
    out = Path(out_dir)
    (out / "pairs").mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(len(data)):
        pid = data.ids[i]
        files = {k: f"pairs/{pid}_{k}.mvri" for k in ("static", "dynamic", "mask")}
        write_range_image(out / files["static"], data.static_image(i))
        write_range_image(out / files["dynamic"], data.dynamic_image(i))
        write_mask(out / files["mask"], data.sensor, data.masks[i])
        entries.append({"id": pid, "split": data.splits[i], "pose": _pose_list(data.poses[i]),
                        **files})
    manifest = {"format": "moves-dataset", "version": 1, "sensor": data.sensor.to_dict(),
                "pairs": entries}
    if extra:
        manifest.update(extra)
    (out / "manifest.yaml").write_text(yaml.safe_dump(manifest, sort_keys=False))


def read_manifest(path) -> dict:
    p = Path(path)
    if p.is_dir():
        p = p / "manifest.yaml"
    if not p.exists():
        raise FileNotFoundError(f"no manifest at {p}")
    m = yaml.safe_load(p.read_text())
    if not isinstance(m, dict) or m.get("format") not in ("moves-dataset", "moves-sequence"):
        raise ValueError(f"{p} is not a dataset manifest")
    return m


def read_dataset(path) -> PairDataset:
    root = Path(path)
    m = read_manifest(root)
    sensor = sensor_from_dict(m["sensor"])
    pairs = []
    for e in m["pairs"]:
        s = read_range_image(root / e["static"])
        d = read_range_image(root / e["dynamic"])
        _, mask = read_mask(root / e["mask"])
        if s.config != sensor or d.config != sensor:
            raise ValueError(f"pair {e['id']} sensor config differs from manifest")
        pose = Pose(e["pose"][:3], e["pose"][3:])
        pairs.append(ScanPair(s, d, pose, mask))
    return PairDataset.from_pairs(pairs, [e["split"] for e in m["pairs"]], [e["id"] for e in m["pairs"]])


def write_sequence(out_dir, pairs, traj, world: WorldSpec | None = None,
                   seq: SequenceSpec | None = None, extra: dict | None = None) -> None:
    out = Path(out_dir)
    data = PairDataset.from_pairs(pairs, ["test"] * len(pairs))
    write_dataset(out, data, {"format": "moves-sequence", "timestamps":
                              [float(t) for t in traj.timestamps], **(extra or {})})
    write_trajectory(out / "gt_traj.txt", traj)
    if world is not None and seq is not None:
        with open(out / "actors.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["frame", "actor", "cx", "cy", "cz", "movable", "speed"])
            for k, t in enumerate(traj.timestamps):
                for i, a in enumerate(actors_at(world, seq, float(t))):
                    w.writerow([k, i, *(repr(float(c)) for c in a.center), int(a.movable),
                                repr(float(np.linalg.norm(a.velocity)))])


def read_sequence(path):
    root = Path(path)
    data = read_dataset(root)
    traj = read_trajectory(root / "gt_traj.txt")
    return data, traj


def read_actor_table(path) -> list[dict]:
    with open(Path(path) / "actors.csv", newline="") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]
