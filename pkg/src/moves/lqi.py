"""No-reference scan quality proxy.

A small conv regressor learns to predict the fraction of dynamic cells in a
range image. Its output in [0, 1] is the quality score: lower means the scan
looks more static. This is a stand-in with the same contract (rank scans by
dynamism), not a reproduction of any published network.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .model import AzimuthConv, images_to_tensor


INPUT_SCALE = 10.0


class NotFittedError(RuntimeError):
    pass


@dataclass(frozen=True)
class LQIConfig:
    channels: tuple = (8, 16, 32)
    steps: int = 400
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0


class _Regressor(nn.Module):
    def __init__(self, channels):
        super().__init__()
        layers, c_in = [], 2
        for c in channels:
            layers += [AzimuthConv(c_in, c, stride=2), nn.GroupNorm(min(4, c), c), nn.LeakyReLU(0.2)]
            c_in = c
        self.conv = nn.Sequential(*layers)
        self.head = nn.Linear(c_in, 1)

    def forward(self, x):
        h = self.conv(x).mean(dim=(2, 3))
        return torch.sigmoid(self.head(h)).squeeze(-1)


class LQIModel:
    def __init__(self, cfg: LQIConfig = LQIConfig()):
        self.cfg = cfg
        self.net = None
        self.r_max = None

    @property
    def fitted(self) -> bool:
        return self.net is not None

    def fit(self, ranges, validity, fractions, r_max: float) -> "LQIModel":
        """Fit on (N, H, W) scans with known dynamic-cell fractions in [0, 1]."""
        ranges = np.asarray(ranges)
        fractions = np.asarray(fractions, dtype=np.float64)
        if ranges.ndim != 3 or len(ranges) != len(fractions):
            raise ValueError("expected (N, H, W) scans with one fraction each")
        if np.any((fractions < 0) | (fractions > 1)):
            raise ValueError("fractions must lie in [0, 1]")
        cfg = self.cfg
        torch.manual_seed(cfg.seed)
        net = _Regressor(cfg.channels)
        x = images_to_tensor(ranges, np.asarray(validity), INPUT_SCALE)
        y = torch.as_tensor(fractions, dtype=torch.float32)
        opt = torch.optim.Adam(net.parameters(), lr=cfg.lr)
        rng = np.random.default_rng(cfg.seed)
        bs = min(cfg.batch_size, len(x))
        for _ in range(cfg.steps):
            idx = torch.as_tensor(rng.choice(len(x), bs, replace=False))
            shift = int(rng.integers(x.shape[-1]))
            xb = torch.roll(x[idx], shift, dims=-1)
            loss = torch.mean((net(xb) - y[idx]) ** 2)
            opt.zero_grad()
            loss.backward()
            opt.step()
        net.eval()
        self.net, self.r_max = net, float(r_max)
        return self

    @torch.no_grad()
    def score(self, ranges, validity) -> np.ndarray:
        if not self.fitted:
            raise NotFittedError("LQI model must be fitted before scoring")
        ranges = np.asarray(ranges)
        single = ranges.ndim == 2
        if single:
            ranges, validity = ranges[None], np.asarray(validity)[None]
        out = self.net(images_to_tensor(ranges, np.asarray(validity), INPUT_SCALE)).double().numpy()
        return out[0] if single else out

    def score_image(self, img) -> float:
        return float(self.score(img.ranges, img.validity))

    def state_dict(self) -> dict:
        if not self.fitted:
            raise NotFittedError("LQI model must be fitted before saving")
        return {"r_max": self.r_max, "channels": list(self.cfg.channels),
                "weights": {k: v.numpy().tolist() for k, v in self.net.state_dict().items()}}


def fit_from_dataset(data, cfg: LQIConfig = LQIConfig()) -> LQIModel:
    """Train on both halves of every pair: dynamic scans and their static twins (fraction 0)."""
    frac = data.masks.reshape(len(data), -1).mean(axis=1)
    ranges = np.concatenate([data.dynamic, data.static])
    valid = np.concatenate([data.dynamic_valid, data.static_valid])
    y = np.concatenate([frac, np.zeros_like(frac)])
    return LQIModel(cfg).fit(ranges, valid, y, data.sensor.r_max)
