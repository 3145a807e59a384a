"""Alternating discriminator / generator optimisation and the MMD adaptation variant."""
from __future__ import annotations

import copy
import csv
import hashlib
import logging
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
import torch

from . import losses as L
from .core import RangeImage
from .dataset import PairDataset
from .metrics import scan_metrics
from .model import ModelConfig, MovesModel, images_to_tensor, save_checkpoint

log = logging.getLogger(__name__)

MODES = ("moves", "cod", "vanilla", "ae")
LOG_COLUMNS = ("epoch", "adv_D", "tri", "adv_D_target", "total_D", "adv_G", "recon",
               "recon_target", "mmd", "total_G", "d_real", "d_fake", "val_cd", "val_emd")


class NonFiniteLossError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    seed: int = 0
    batch_size: int = 64
    epochs: int = 200
    lr: float = 1e-4
    optimizer: str = "rmsprop"
    mode: str = "moves"
    weights: L.LossWeights = field(default_factory=L.LossWeights)
    d_steps: int = 1
    g_steps: int = 1
    relativistic: bool = False
    mmd_kernel: str = "gaussian"
    mmd_sigma: float | None = None
    eval_every: int = 10
    eval_pairs: int = 32
    eval_emd_points: int = 128
    patience: int | None = None
    # random azimuth roll + mirror per batch, applied alike to inputs and targets
    augment: bool = True
    # adaptation updates only the target encoder; the target decoder stays the source copy
    freeze_target_decoder: bool = False
    threads: int = 1
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = L.LossWeights(**self.weights)
        if isinstance(self.model, dict):
            self.model = ModelConfig(**self.model)
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be positive")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.optimizer not in ("rmsprop", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.d_steps < 0 or self.g_steps < 1:
            raise ValueError("need d_steps >= 0 and g_steps >= 1")

    def effective_weights(self) -> L.LossWeights:
        w = copy.copy(self.weights)
        if self.mode in ("cod", "vanilla", "ae"):
            w.w_tri = 0.0
        if self.mode == "ae":
            w.w_adv_G = 0.0
            w.w_adv_D = 0.0
        return w

    def model_config(self, sensor) -> ModelConfig:
        cfg = copy.copy(self.model)
        cfg.height, cfg.width, cfg.r_max = sensor.num_beams, sensor.num_azimuth, sensor.r_max
        cfg.disc_kind = "vanilla" if self.mode == "vanilla" else "couple"
        cfg.__post_init__()
        return cfg


@dataclass(frozen=True)
class Triplet:
    anchor: int
    positive: int

    @property
    def negative(self) -> int:
        # the hard negative is always the anchor's own dynamic scan
        return self.anchor


@dataclass
class TripletBatch:
    anchors: np.ndarray
    positives: np.ndarray

    @property
    def negatives(self) -> np.ndarray:
        return self.anchors

    def triplets(self) -> list[Triplet]:
        return [Triplet(int(a), int(p)) for a, p in zip(self.anchors, self.positives)]


def sample_triplet_batch(num_pairs: int, rng: np.random.Generator, batch_size: int,
                         anchors=None) -> TripletBatch:
    """Anchors without replacement; positive uniform over the other static scans."""
    if num_pairs < 2:
        raise ValueError("triplet sampling needs at least 2 pairs")
    if anchors is None:
        anchors = rng.choice(num_pairs, size=min(batch_size, num_pairs), replace=False)
    anchors = np.asarray(anchors, dtype=np.int64)
    pos = rng.integers(0, num_pairs - 1, size=len(anchors))
    pos = pos + (pos >= anchors)
    return TripletBatch(anchors, pos)


def _optimizer(cfg: TrainConfig, params):
    if cfg.optimizer == "adam":
        return torch.optim.Adam(params, lr=cfg.lr)
    return torch.optim.RMSprop(params, lr=cfg.lr)


def param_digest(params) -> str:
    h = hashlib.sha256()
    for p in params:
        h.update(p.detach().cpu().numpy().tobytes())
    return h.hexdigest()


class _Tensors:
    """Dataset arrays pre-converted to network inputs."""

    def __init__(self, data: PairDataset, scale: float, dtype=torch.float32):
        self.static_in = images_to_tensor(data.static, data.static_valid, scale, dtype)
        self.dynamic_in = images_to_tensor(data.dynamic, data.dynamic_valid, scale, dtype)
        self.static = torch.as_tensor(data.static, dtype=dtype)
        self.static_valid = torch.as_tensor(data.static_valid)
        self.dynamic = torch.as_tensor(data.dynamic, dtype=dtype)
        self.dynamic_valid = torch.as_tensor(data.dynamic_valid)


def _check_finite(terms: dict, phase: str):
    for k, v in terms.items():
        if not torch.isfinite(v):
            raise NonFiniteLossError(f"{phase} term {k!r} is not finite ({v.item()})")


def _scalars(terms: dict) -> dict:
    return {k: v.item() for k, v in terms.items()}


def _augment(x, shift: int, flip: bool):
    """Yaw the scan by `shift` azimuth bins, then optionally mirror it left-right.

    Both are exact symmetries of a spinning sensor: a yawed or mirrored world
    produces exactly these range images.
    """
    if shift:
        x = torch.roll(x, shift, dims=-1)
    if flip:
        x = torch.flip(x, dims=(-1,))
    return x


@dataclass
class _Batch:
    static_in_a: torch.Tensor   # anchors, network input
    static_in_p: torch.Tensor   # positives, network input
    dynamic_in: torch.Tensor    # negatives (the anchors' dynamic scans)
    static: torch.Tensor        # anchors' static ranges, the reconstruction target
    static_valid: torch.Tensor
    target_in: torch.Tensor | None = None
    target: torch.Tensor | None = None
    target_valid: torch.Tensor | None = None


def _set_grad(module, flag: bool):
    for p in module.parameters():
        p.requires_grad_(flag)


class Trainer:
    """Owns the model, optimisers and RNG; one instance per training run."""

    def __init__(self, model: MovesModel, cfg: TrainConfig, source: PairDataset,
                 target: PairDataset | None = None):
        self.model = model
        self.cfg = cfg
        self.weights = cfg.effective_weights()
        self.source = _Tensors(source, model.cfg.input_scale, model.dtype)
        self.n_source = len(source)
        self.target = _Tensors(target, model.cfg.input_scale, model.dtype) if target is not None else None
        self.r_max = source.sensor.r_max
        self.rng = np.random.default_rng(cfg.seed)
        self.opt_d = _optimizer(cfg, model.disc.parameters())
        self.opt_g = _optimizer(cfg, model.generator_parameters() + model.target_parameters())
        self.step = 0

    @property
    def adversarial(self) -> bool:
        return self.cfg.mode != "ae"

    def _embed(self):
        return self.model.disc.embed if self.weights.w_tri else None

    def gather(self, batch: TripletBatch, target_idx=None, shift: int = 0,
               flip: bool = False) -> _Batch:
        S, T = self.source, self.target
        a = lambda t: _augment(t, shift, flip)  # noqa: E731
        b = _Batch(a(S.static_in[batch.anchors]), a(S.static_in[batch.positives]),
                   a(S.dynamic_in[batch.negatives]), a(S.static[batch.anchors]),
                   a(S.static_valid[batch.anchors]))
        if target_idx is not None:
            b.target_in = a(T.dynamic_in[target_idx])
            b.target = a(T.dynamic[target_idx])
            b.target_valid = a(T.dynamic_valid[target_idx])
        return b

    def disc_phase(self, b: _Batch) -> dict:
        m = self.model
        with torch.no_grad():
            r_si = m.encoder(b.static_in_a)
            r_sj = m.encoder(b.static_in_p)
            r_di = m.encoder(b.dynamic_in)
            r_kl = None if b.target_in is None else m.target_encoder(b.target_in)
        if r_kl is None:
            terms = L.disc_loss_terms(m.disc, r_si, r_sj, r_di, self.weights, self._embed(),
                                      self.cfg.relativistic)
        else:
            terms = L.disc_loss_terms_mmd(m.disc, r_si, r_sj, r_di, r_kl, self.weights,
                                          self._embed(), self.cfg.relativistic)
        _check_finite(terms, "discriminator")
        total = L._total(terms, r_si)
        self.opt_d.zero_grad(set_to_none=True)
        if total.requires_grad:
            total.backward()
            self.opt_d.step()
        with torch.no_grad():
            d_real = m.disc(r_sj, r_si).mean()
            d_fake = m.disc(r_di, r_si).mean()
        out = _scalars(terms)
        out.update(total_D=total.item(), d_real=d_real.item(), d_fake=d_fake.item())
        return out

    def gen_phase(self, b: _Batch) -> dict:
        m, w = self.model, self.weights
        _set_grad(m.disc, False)
        try:
            r_di = m.encoder(b.dynamic_in)
            with torch.no_grad():
                r_si = m.encoder(b.static_in_a)
                r_sj = m.encoder(b.static_in_p)
            pred = m.decoder(r_di)
            if b.target_in is None:
                terms = L.gen_loss_terms(m.disc, r_di, r_si, pred, b.static, b.static_valid, w,
                                         self.r_max, self.cfg.relativistic, r_sj)
            else:
                r_kl = m.target_encoder(b.target_in)
                target_pred = m.target_decoder(r_kl)
                terms = L.gen_loss_terms_mmd(
                    m.disc, r_di, r_si, pred, b.static, b.static_valid, target_pred,
                    b.target, b.target_valid, r_kl, r_sj, w,
                    self.r_max, self.cfg.mmd_kernel, self.cfg.mmd_sigma)
            _check_finite(terms, "generator")
            total = L._total(terms, pred)
            self.opt_g.zero_grad(set_to_none=True)
            total.backward()
            self.opt_g.step()
        finally:
            _set_grad(m.disc, True)
        out = _scalars(terms)
        out["total_G"] = total.item()
        return out

    def train_step(self, batch: TripletBatch, target_idx=None) -> dict:
        shift, flip = 0, False
        if self.cfg.augment:
            shift = int(self.rng.integers(self.model.cfg.width))
            flip = bool(self.rng.random() < 0.5)
        b = self.gather(batch, target_idx, shift, flip)
        metrics = {}
        if self.adversarial:
            for _ in range(self.cfg.d_steps):
                metrics.update(self.disc_phase(b))
        for _ in range(self.cfg.g_steps):
            metrics.update(self.gen_phase(b))
        self.step += 1
        return metrics

    def epoch_batches(self):
        perm = self.rng.permutation(self.n_source)
        for start in range(0, self.n_source, self.cfg.batch_size):
            yield sample_triplet_batch(self.n_source, self.rng, self.cfg.batch_size,
                                       anchors=perm[start:start + self.cfg.batch_size])


def train_step(trainer: Trainer, batch: TripletBatch) -> dict:
    return trainer.train_step(batch)


@torch.no_grad()
def reconstruct_arrays(model: MovesModel, ranges: np.ndarray, validity: np.ndarray, r_max: float,
                       target: bool = False, chunk: int = 256) -> np.ndarray:
    enc = model.target_encoder if target else model.encoder
    dec = model.target_decoder if target else model.decoder
    if enc is None:
        raise ValueError("model has no target generator")
    out = []
    for s in range(0, len(ranges), chunk):
        x = images_to_tensor(ranges[s:s + chunk], validity[s:s + chunk], model.cfg.input_scale,
                             model.dtype)
        out.append(dec(enc(x)).numpy())
    return np.minimum(np.concatenate(out), np.float32(r_max)).astype(np.float32)


def reconstruct(model: MovesModel, dynamic: RangeImage, target: bool = False) -> RangeImage:
    if dynamic.config.shape != (model.cfg.height, model.cfg.width):
        raise ValueError("image grid does not match the model")
    r = reconstruct_arrays(model, dynamic.ranges[None], dynamic.validity[None],
                           dynamic.config.r_max, target)[0]
    return RangeImage.from_ranges(dynamic.config, r)


def evaluate_chamfer(model: MovesModel, data: PairDataset, max_pairs: int | None = None,
                     emd_points: int = 0, target: bool = False, seed: int = 0) -> dict:
    n = len(data) if max_pairs is None else min(max_pairs, len(data))
    if n == 0:
        return {"cd": float("nan"), "emd": float("nan")}
    rec = reconstruct_arrays(model, data.dynamic[:n], data.dynamic_valid[:n], data.sensor.r_max,
                             target)
    cds, emds = [], []
    for i in range(n):
        m = scan_metrics(RangeImage.from_ranges(data.sensor, rec[i]), data.static_image(i),
                         emd_points, seed)
        cds.append(m["cd"])
        emds.append(m.get("emd", np.nan))
    return {"cd": float(np.mean(cds)), "emd": float(np.mean(emds)) if emd_points else float("nan")}


def _epoch_row(epoch: int, step_metrics: list[dict]) -> dict:
    row = {"epoch": epoch}
    for col in LOG_COLUMNS[1:-2]:
        vals = [m[col] for m in step_metrics if col in m]
        row[col] = float(np.mean(vals)) if vals else 0.0
    row["val_cd"] = row["val_emd"] = ""
    return row


def _write_log(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=LOG_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def _setup_torch(cfg: TrainConfig):
    torch.set_num_threads(cfg.threads)
    torch.use_deterministic_algorithms(True)


def _run(trainer: Trainer, cfg: TrainConfig, val: PairDataset | None, out_dir, target_batches,
         eval_target: bool) -> tuple[MovesModel, list[dict]]:
    rows, best, best_state, stale = [], math.inf, None, 0
    for epoch in range(1, cfg.epochs + 1):
        step_metrics = []
        for batch in trainer.epoch_batches():
            tidx = target_batches(len(batch.anchors)) if target_batches else None
            step_metrics.append(trainer.train_step(batch, tidx))
        row = _epoch_row(epoch, step_metrics)
        if val is not None and len(val) and (epoch % cfg.eval_every == 0 or epoch == cfg.epochs):
            res = evaluate_chamfer(trainer.model, val, cfg.eval_pairs, cfg.eval_emd_points,
                                   target=eval_target)
            row["val_cd"], row["val_emd"] = res["cd"], res["emd"]
            if res["cd"] < best:
                best, stale = res["cd"], 0
                best_state = copy.deepcopy(trainer.model.state_dict())
            else:
                stale += 1
            log.info("epoch %d: recon %.4f val_cd %.3f", epoch, row["recon"], res["cd"])
        rows.append(row)
        if cfg.patience is not None and stale > cfg.patience:
            log.info("early stop at epoch %d", epoch)
            break
    if best_state is not None:
        trainer.model.load_state_dict(best_state)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_log(out / "train_log.csv", rows)
        save_checkpoint(out / "model.ckpt", trainer.model, trainer.step,
                        {"mode": cfg.mode, "seed": cfg.seed, "best_val_cd": best if best < math.inf else None})
    return trainer.model, rows


def train_moves(data: PairDataset, cfg: TrainConfig, out_dir=None,
                model: MovesModel | None = None) -> tuple[MovesModel, list[dict]]:
    """Train on the 'train' split, select the checkpoint on 'val' chamfer."""
    _setup_torch(cfg)
    train = data.subset("train") if "train" in data.splits else data
    val = data.subset("val") if "val" in data.splits else None
    if model is None:
        model = MovesModel(cfg.model_config(data.sensor), seed=cfg.seed)
    trainer = Trainer(model, cfg, train)
    return _run(trainer, cfg, val, out_dir, None, eval_target=False)


def train_mmd(source: PairDataset, target: PairDataset, cfg: TrainConfig,
              init: MovesModel | None, out_dir=None) -> tuple[MovesModel, list[dict]]:
    """Adapt a source-trained model to an unpaired target domain.

    Only the target's dynamic scans are used; its static scans and masks are
    never read here.
    """
    if init is None:
        raise ValueError("MMD adaptation needs a source-trained initial model")
    _setup_torch(cfg)
    model = copy.deepcopy(init)
    if model.target_encoder is None:
        model.add_target_generator()
    if cfg.freeze_target_decoder:
        _set_grad(model.target_decoder, False)
    src = source.subset("train") if "train" in source.splits else source
    tgt = target.subset("train") if "train" in target.splits else target
    trainer = Trainer(model, cfg, src, tgt)
    n_t = len(tgt)
    trng = np.random.default_rng([cfg.seed, 1])

    def target_batches(k):
        return trng.choice(n_t, size=min(k, n_t), replace=False) if k <= n_t else trng.integers(0, n_t, k)

    return _run(trainer, cfg, None, out_dir, target_batches, eval_target=True)


def config_from_dict(d: dict) -> TrainConfig:
    known = {f.name for f in fields(TrainConfig)}
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"unknown train config keys: {sorted(unknown)}")
    d = dict(d)
    if "weights" in d:
        wk = {f.name for f in fields(L.LossWeights)}
        bad = set(d["weights"]) - wk
        if bad:
            raise ValueError(f"unknown loss weight keys: {sorted(bad)}")
    if "model" in d:
        mk = {f.name for f in fields(ModelConfig)}
        bad = set(d["model"]) - mk
        if bad:
            raise ValueError(f"unknown model keys: {sorted(bad)}")
    return TrainConfig(**d)
