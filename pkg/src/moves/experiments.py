"""End-to-end experiment harnesses shared by scripts/ and the acceptance tests.

Each function returns plain dicts so results can be logged, compared across
seeds, or dumped to JSON.
"""
from __future__ import annotations

import logging
import time
from dataclasses import replace

import numpy as np

from .benchmarks import convoy_sequence, expected_labels, match_tracks_to_actors, mixed_motion_sequence
from .core import RangeImage, SensorConfig
from .dataset import PairDataset
from .metrics import masked_range_error, scan_metrics
from .model import MovesModel
from .navproxy import OdometryConfig, dynamic_fraction, is_high_dynamism, nav_eval
from .segmenter import SegmentConfig, diff_segment, iou, segment_sequence
from .synthworld import WorldFamily, gen_sequence, sample_pairs, split_labels
from .trainer import TrainConfig, evaluate_chamfer, reconstruct_arrays, train_mmd, train_moves

log = logging.getLogger(__name__)


def _images(sensor: SensorConfig, ranges) -> list:
    return [RangeImage.from_ranges(sensor, r) for r in ranges]


def make_dataset(family: WorldFamily, sensor: SensorConfig, n: int, seed: int) -> PairDataset:
    pairs = sample_pairs(family, sensor, n, seed=seed)
    return PairDataset.from_pairs(pairs, split_labels(n))


def heldout_chamfer(model: MovesModel, data: PairDataset, split: str = "test") -> dict:
    """Mean chamfer to the static truth for reconstructions and for the raw dynamic scans."""
    held = data.subset(split)
    rec = evaluate_chamfer(model, held)["cd"]
    dyn = float(np.mean([scan_metrics(held.dynamic_image(i), held.static_image(i), 0)["cd"]
                         for i in range(len(held))]))
    return {"pairs": len(held), "cd_reconstruction": rec, "cd_dynamic": dyn, "ratio": rec / dyn}


def desk_reconstruction(data: PairDataset, cfg: TrainConfig, out_dir=None) -> tuple[MovesModel, dict]:
    t0 = time.perf_counter()
    model, rows = train_moves(data, cfg, out_dir)
    res = heldout_chamfer(model, data)
    res["train_seconds"] = time.perf_counter() - t0
    res["epochs_run"] = len(rows)
    return model, res


def tune_tau(model: MovesModel, data: PairDataset, split: str = "val",
             grid=(0.1, 0.2, 0.3, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0)) -> float:
    """Threshold with the best mean IoU on `split`; ties go to the smaller value."""
    scores = [segmentation_iou(model, data, t, split)["mean_iou"] for t in grid]
    return float(grid[int(np.argmax(scores))])


def segmentation_iou(model: MovesModel, data: PairDataset, tau: float, split: str = "test") -> dict:
    held = data.subset(split)
    rec = _images(held.sensor, reconstruct_arrays(model, held.dynamic, held.dynamic_valid,
                                                  held.sensor.r_max))
    scores = [iou(diff_segment(held.dynamic_image(i), rec[i], tau).mask, held.masks[i])
              for i in range(len(held))]
    return {"tau": tau, "pairs": len(held), "mean_iou": float(np.mean(scores))}


def motion_benchmark(model: MovesModel | None, seg: SegmentConfig = SegmentConfig()) -> dict:
    """Label every actor of the mixed benchmark; `model=None` segments with the static truth."""
    sensor = SensorConfig() if model is None else _model_sensor(model)
    world, seq = mixed_motion_sequence()
    pairs, traj = gen_sequence(world, seq, sensor)
    dyn = [p.dynamic for p in pairs]
    if model is None:
        rec = [p.static for p in pairs]
    else:
        rec = _images(sensor, reconstruct_arrays(
            model, np.stack([d.ranges for d in dyn]), np.stack([d.validity for d in dyn]), sensor.r_max))
    _, tracks = segment_sequence(dyn, rec, traj, seg)
    expected = expected_labels(world, seq, seg.k, seg.eps)
    matched = match_tracks_to_actors(tracks, world, seq, seg.gate)
    got = {i: sorted({t.label or "unlabeled" for t in matched[i]}) for i in expected}
    exact = all(got[i] == [label] for i, label in expected.items())
    return {"expected": expected, "predicted": got, "exact": exact}


def _model_sensor(model: MovesModel) -> SensorConfig:
    return SensorConfig(num_beams=model.cfg.height, num_azimuth=model.cfg.width, r_max=model.cfg.r_max)


def navigation_direction(model: MovesModel, odo: OdometryConfig = OdometryConfig()) -> dict:
    t0 = time.perf_counter()
    sensor = _model_sensor(model)
    world, seq = convoy_sequence()
    pairs, traj = gen_sequence(world, seq, sensor)
    dyn = [p.dynamic for p in pairs]
    rec = _images(sensor, reconstruct_arrays(
        model, np.stack([d.ranges for d in dyn]), np.stack([d.validity for d in dyn]), sensor.r_max))
    reports, _ = nav_eval(dyn, rec, [p.static for p in pairs], traj, odo)
    masks, valid = [p.gt_dyn_mask for p in pairs], [p.dynamic.validity for p in pairs]
    return {"ate": {v: r["ate"] for v, r in reports.items()},
            "dynamic_fraction": float(dynamic_fraction(masks, valid).mean()),
            "high_dynamism": is_high_dynamism(masks, valid),
            "seconds": time.perf_counter() - t0}


def mask_region_error(model: MovesModel, data: PairDataset, target: bool, split: str = "test") -> float:
    """Mean absolute range error on ground-truth dynamic cells, pooled over `split`."""
    held = data.subset(split)
    rec = _images(held.sensor, reconstruct_arrays(model, held.dynamic, held.dynamic_valid,
                                                  held.sensor.r_max, target))
    errs, counts = [], []
    for i in range(len(held)):
        m = held.masks[i]
        if m.any():
            errs.append(masked_range_error(rec[i], held.static_image(i), m) * m.sum())
            counts.append(m.sum())
    return float(np.sum(errs) / np.sum(counts))


def mmd_adaptation(source: PairDataset, target: PairDataset, init: MovesModel, cfg: TrainConfig,
                   seeds=(0, 1, 2)) -> dict:
    """Adapt once per seed; compare target mask-region error before and after.

    The target's static scans are only read here, for scoring, never by the adaptation.
    """
    before = mask_region_error(init, target, target=False)
    runs = []
    for s in seeds:
        model, rows = train_mmd(source, target, replace(cfg, seed=s), init)
        mmd = [r["mmd"] for r in rows]
        k = max(1, len(mmd) // 5)
        after = mask_region_error(model, target, target=True)
        runs.append({"seed": s, "error_after": after, "mmd_first": float(np.mean(mmd[:k])),
                     "mmd_last": float(np.mean(mmd[-k:]))})
        log.info("mmd seed %d: error %.3f -> %.3f, mmd %.4f -> %.4f", s, before, after,
                 runs[-1]["mmd_first"], runs[-1]["mmd_last"])
    wins = sum(r["error_after"] < before and r["mmd_last"] < r["mmd_first"] for r in runs)
    return {"error_before": before, "runs": runs, "wins": wins, "majority": wins * 2 > len(runs)}


def ablation(data: PairDataset, cfg: TrainConfig, seeds=range(5),
             modes=("moves", "cod", "vanilla")) -> dict:
    """Held-out chamfer per mode and seed, plus the two majority votes."""
    table = {m: {} for m in modes}
    for s in seeds:
        for m in modes:
            model, _ = train_moves(data, replace(cfg, mode=m, seed=s))
            table[m][s] = heldout_chamfer(model, data)["cd_reconstruction"]
            log.info("ablation %s seed %d: %.2f", m, s, table[m][s])
    seeds = list(seeds)
    cl_wins = sum(table["moves"][s] <= table["cod"][s] for s in seeds)
    # couple modes beat vanilla only if both do
    couple_wins = sum(max(table["moves"][s], table["cod"][s]) < table["vanilla"][s] for s in seeds)
    n = len(seeds)
    return {"table": table, "cl_wins": cl_wins, "couple_wins": couple_wins,
            "cl_majority": cl_wins * 2 > n, "couple_majority": couple_wins * 2 > n}
