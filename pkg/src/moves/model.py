"""Generator (conv encoder / transposed-conv decoder) and latent-pair discriminators."""
from __future__ import annotations

import json
import struct
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .core import RangeImage, SensorConfig


@dataclass
class ModelConfig:
    height: int = 32
    width: int = 64
    r_max: float = 40.0
    latent_dim: int = 128
    channels: tuple = (16, 32, 64)
    disc_hidden: int = 64
    disc_embed: int = 32
    init_range: float = 8.0
    # ranges are fed to the encoder as metres / input_scale
    input_scale: float = 10.0
    # "couple" reads an ordered (candidate, reference) latent pair, "vanilla" one latent
    disc_kind: str = "couple"
    norm: str = "group"
    target_generator: bool = False

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        scale = 2 ** len(self.channels)
        if self.height % scale or self.width % scale:
            raise ValueError(f"image {self.height}x{self.width} not divisible by {scale}")
        if self.disc_kind not in ("couple", "vanilla"):
            raise ValueError(f"unknown disc_kind {self.disc_kind!r}")
        if self.norm not in ("group", "none"):
            raise ValueError(f"unknown norm {self.norm!r}")
        if not self.input_scale > 0:
            raise ValueError("input_scale must be positive")
        if not 0 < self.init_range < self.r_max:
            raise ValueError("init_range must lie in (0, r_max)")

    @classmethod
    def for_sensor(cls, sensor: SensorConfig, **kw) -> "ModelConfig":
        return cls(height=sensor.num_beams, width=sensor.num_azimuth, r_max=sensor.r_max, **kw)


def _norm(cfg: ModelConfig, c: int):
    if cfg.norm == "none":
        return nn.Identity()
    return nn.GroupNorm(min(8, c), c)


class AzimuthConv(nn.Module):
    """3x3 conv (or 4x4 stride-2 transposed conv) that wraps around in azimuth."""

    def __init__(self, c_in, c_out, stride=1, transposed=False):
        super().__init__()
        self.transposed = transposed
        if transposed:
            self.conv = nn.ConvTranspose2d(c_in, c_out, 4, stride=2, padding=(1, 3))
        else:
            self.conv = nn.Conv2d(c_in, c_out, 3, stride=stride, padding=(1, 0))

    def forward(self, x):
        return self.conv(F.pad(x, (1, 1, 0, 0), mode="circular"))


class Encoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        layers, c_in = [], 2
        for c in cfg.channels:
            layers += [AzimuthConv(c_in, c, stride=2), _norm(cfg, c), nn.LeakyReLU(0.2)]
            c_in = c
        self.conv = nn.Sequential(*layers)
        s = 2 ** len(cfg.channels)
        self.fc = nn.Linear(c_in * (cfg.height // s) * (cfg.width // s), cfg.latent_dim)

    def forward(self, x):
        return self.fc(self.conv(x).flatten(1))


class Decoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        s = 2 ** len(cfg.channels)
        chans = list(reversed(cfg.channels))
        self.start = (chans[0], cfg.height // s, cfg.width // s)
        self.fc = nn.Linear(cfg.latent_dim, int(np.prod(self.start)))
        layers = []
        for c_in, c_out in zip(chans, chans[1:] + [chans[-1]]):
            layers += [_norm(cfg, c_in), nn.LeakyReLU(0.2),
                       AzimuthConv(c_in, c_out, transposed=True)]
        layers += [_norm(cfg, chans[-1]), nn.LeakyReLU(0.2), AzimuthConv(chans[-1], 1)]
        self.deconv = nn.Sequential(*layers)
        self.r_max = cfg.r_max
        p = cfg.init_range / cfg.r_max
        with torch.no_grad():
            self.deconv[-1].conv.bias.fill_(float(np.log(p / (1 - p))))

    def forward(self, z):
        h = self.fc(z).view(-1, *self.start)
        return self.r_max * torch.sigmoid(self.deconv(h)).squeeze(1)


class Discriminator(nn.Module):
    """Six linear layers with sigmoid non-linearities.

    Two layers embed each latent separately (the contrastive term acts on this
    embedding); four layers score the embedded pair, or the single embedded
    latent for the vanilla variant.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        h, e = cfg.disc_hidden, cfg.disc_embed
        self.kind = cfg.disc_kind
        self.embed = nn.Sequential(nn.Linear(cfg.latent_dim, h), nn.Sigmoid(), nn.Linear(h, e))
        n_in = 2 * e if self.kind == "couple" else e
        self.head = nn.Sequential(
            nn.Sigmoid(), nn.Linear(n_in, h),
            nn.Sigmoid(), nn.Linear(h, h),
            nn.Sigmoid(), nn.Linear(h, h),
            nn.Sigmoid(), nn.Linear(h, 1),
        )

    def logits(self, candidate, reference=None):
        x = self.embed(candidate)
        if self.kind == "couple":
            if reference is None:
                raise ValueError("couple discriminator needs a reference latent")
            x = torch.cat([x, self.embed(reference)], dim=-1)
        return self.head(x).squeeze(-1)

    def forward(self, candidate, reference=None):
        return torch.sigmoid(self.logits(candidate, reference))


def _seeded(seed: int, name: str, factory):
    torch.manual_seed((seed * 1_000_003 + zlib.crc32(name.encode())) % (2**63))
    return factory()


class MovesModel(nn.Module):
    """Holds E_phi, D_theta, the discriminator and optionally the target generator.

    Each sub-network is initialised from its own derived seed so that, e.g.,
    the generator of an autoencoder-only run starts identical to a full run.
    """

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        self.encoder = _seeded(seed, "encoder", lambda: Encoder(cfg))
        self.decoder = _seeded(seed, "decoder", lambda: Decoder(cfg))
        self.disc = _seeded(seed, "disc", lambda: Discriminator(cfg))
        self.target_encoder = None
        self.target_decoder = None
        if cfg.target_generator:
            self.add_target_generator()

    def add_target_generator(self):
        """Target-domain generator, initialised as a copy of the source generator."""
        self.cfg.target_generator = True
        self.target_encoder = Encoder(self.cfg).to(self.dtype)
        self.target_decoder = Decoder(self.cfg).to(self.dtype)
        self.target_encoder.load_state_dict(self.encoder.state_dict())
        self.target_decoder.load_state_dict(self.decoder.state_dict())

    @property
    def dtype(self):
        return next(self.parameters()).dtype

    def generator_parameters(self):
        return list(self.encoder.parameters()) + list(self.decoder.parameters())

    def target_parameters(self):
        if self.target_encoder is None:
            return []
        return list(self.target_encoder.parameters()) + list(self.target_decoder.parameters())


def images_to_tensor(ranges: np.ndarray, validity: np.ndarray, scale: float, dtype=torch.float32):
    """Stack (B, H, W) ranges / scale and validity masks into a (B, 2, H, W) input."""
    r = np.where(validity, ranges, 0.0) / scale
    x = np.stack([r, validity.astype(r.dtype)], axis=1)
    return torch.as_tensor(x, dtype=dtype)


def image_tensor(img: RangeImage, scale: float, dtype=torch.float32):
    return images_to_tensor(img.ranges[None], img.validity[None], scale, dtype)


def _check_config(model: MovesModel, img: RangeImage):
    if img.config.shape != (model.cfg.height, model.cfg.width):
        raise ValueError(
            f"image shape {img.config.shape} does not match model "
            f"{(model.cfg.height, model.cfg.width)}"
        )


def _check_latent(model: MovesModel, z):
    z = torch.as_tensor(np.asarray(z), dtype=model.dtype)
    if z.shape[-1] != model.cfg.latent_dim:
        raise ValueError(f"latent dimension {z.shape[-1]} != {model.cfg.latent_dim}")
    return z


@torch.no_grad()
def encode(model: MovesModel, img: RangeImage) -> np.ndarray:
    _check_config(model, img)
    return model.encoder(image_tensor(img, model.cfg.input_scale, model.dtype))[0].numpy()


@torch.no_grad()
def decode(model: MovesModel, z, sensor: SensorConfig | None = None) -> RangeImage:
    z = _check_latent(model, z)
    out = model.decoder(z.reshape(1, -1))[0].numpy()
    cfg = sensor or SensorConfig(model.cfg.height, model.cfg.width, r_max=model.cfg.r_max)
    return RangeImage.from_ranges(cfg, np.minimum(out, cfg.r_max))


@torch.no_grad()
def discriminate(model: MovesModel, candidate, reference=None) -> float:
    a = _check_latent(model, candidate).reshape(1, -1)
    b = None if reference is None else _check_latent(model, reference).reshape(1, -1)
    return float(model.disc(a, b)[0])


def parameter_count(model: MovesModel) -> dict:
    return {
        name: sum(p.numel() for p in getattr(model, name).parameters())
        for name in ("encoder", "decoder", "disc")
    }


# -- checkpoint container ----------------------------------------------------

CKPT_MAGIC = b"MVCK"
CKPT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, model: MovesModel, step: int = 0, extra: dict | None = None) -> None:
    """MVCK | u16 version | u32 header length | JSON header | raw tensor bytes."""
    state = model.state_dict()
    arrays, offset = [], 0
    blobs = []
    for name, t in state.items():
        a = np.ascontiguousarray(t.detach().cpu().numpy())
        a = a.astype(a.dtype.newbyteorder("<"))
        arrays.append({"name": name, "dtype": a.dtype.str, "shape": list(a.shape),
                       "offset": offset, "nbytes": a.nbytes})
        blobs.append(a.tobytes())
        offset += a.nbytes
    cfg = asdict(model.cfg)
    cfg["channels"] = list(cfg["channels"])
    header = json.dumps({"config": cfg, "step": int(step), "arrays": arrays,
                         "extra": extra or {}}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC + struct.pack("<HI", CKPT_VERSION, len(header)))
        fh.write(header)
        for b in blobs:
            fh.write(b)


def load_checkpoint(path) -> tuple[MovesModel, int, dict]:
    buf = Path(path).read_bytes()
    if buf[:4] != CKPT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint")
    version, hlen = struct.unpack_from("<HI", buf, 4)
    if version != CKPT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    start = 10 + hlen
    header = json.loads(buf[10:start])
    cfg = ModelConfig(**header["config"])
    arrays = header["arrays"]
    dtype = np.dtype(arrays[0]["dtype"]) if arrays else np.dtype("<f4")
    model = MovesModel(cfg)
    if dtype == np.float64:
        model = model.double()
    state = {}
    for a in arrays:
        lo = start + a["offset"]
        if lo + a["nbytes"] > len(buf):
            raise CheckpointError(f"{path}: truncated payload")
        arr = np.frombuffer(buf, dtype=np.dtype(a["dtype"]), count=int(np.prod(a["shape"])),
                            offset=lo).reshape(a["shape"])
        state[a["name"]] = torch.from_numpy(arr.copy())
    model.load_state_dict(state)
    return model, header["step"], header["extra"]
