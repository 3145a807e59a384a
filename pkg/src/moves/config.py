"""Run configuration: one YAML file, one section per component, unknown keys rejected."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

import yaml

from .core import SensorConfig
from .lqi import LQIConfig
from .navproxy import OdometryConfig
from .segmenter import SegmentConfig
from .synthworld import WorldFamily
from .trainer import TrainConfig, config_from_dict


class ConfigError(ValueError):
    pass


def _build(cls, d, section: str):
    if d is None:
        return cls()
    if not isinstance(d, dict):
        raise ConfigError(f"[{section}] must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ConfigError(f"[{section}] unknown keys: {unknown}")
    vals = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
    try:
        return cls(**vals)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"[{section}] {e}") from e


@dataclass
class RunConfig:
    seed: int = 0
    sensor: SensorConfig = field(default_factory=SensorConfig)
    world: WorldFamily = field(default_factory=WorldFamily)
    train: TrainConfig = field(default_factory=TrainConfig)
    segment: SegmentConfig = field(default_factory=SegmentConfig)
    odometry: OdometryConfig = field(default_factory=OdometryConfig)
    lqi: LQIConfig = field(default_factory=LQIConfig)

    @classmethod
    def from_dict(cls, d: dict | None) -> "RunConfig":
        d = dict(d or {})
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config sections: {unknown}")
        seed = d.get("seed", 0)
        if not isinstance(seed, int) or seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {seed!r}")
        train = d.get("train") or {}
        if not isinstance(train, dict):
            raise ConfigError("[train] must be a mapping")
        try:
            train_cfg = config_from_dict(train)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"[train] {e}") from e
        return cls(
            seed=seed,
            sensor=_build(SensorConfig, d.get("sensor"), "sensor"),
            world=_build(WorldFamily, d.get("world"), "world"),
            train=train_cfg,
            segment=_build(SegmentConfig, d.get("segment"), "segment"),
            odometry=_build(OdometryConfig, d.get("odometry"), "odometry"),
            lqi=_build(LQIConfig, d.get("lqi"), "lqi"),
        )

    def to_dict(self) -> dict:
        def plain(x):
            if is_dataclass(x):
                return {k: plain(v) for k, v in asdict(x).items()}
            if isinstance(x, dict):
                return {k: plain(v) for k, v in x.items()}
            if isinstance(x, tuple):
                return [plain(v) for v in x]
            return x
        return {f.name: plain(getattr(self, f.name)) for f in fields(self)}


def load_yaml(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        d = yaml.safe_load(p.read_text())
    except yaml.YAMLError as e:
        raise ConfigError(f"{p}: {e}") from e
    if d is None:
        return {}
    if not isinstance(d, dict):
        raise ConfigError(f"{p}: top level must be a mapping")
    return d


def load_config(path=None) -> RunConfig:
    return RunConfig.from_dict(load_yaml(path) if path else {})


def load_world(path) -> tuple[WorldFamily, SensorConfig | None]:
    """World file: WorldFamily keys, plus an optional `sensor` mapping."""
    d = load_yaml(path)
    sensor = d.pop("sensor", None)
    return (_build(WorldFamily, d, "world"),
            None if sensor is None else _build(SensorConfig, sensor, "sensor"))
