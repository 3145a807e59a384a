"""Train the desk-scale model and run every check that needs it.

    python scripts/run_desk.py --out runs/desk

Writes the checkpoint, training log and a results.json with the held-out
chamfer ratio, segmentation IoU, motion labels and navigation ATEs.
"""
import argparse
import json
import logging
from pathlib import Path

from moves.config import load_config
from moves.experiments import (desk_reconstruction, make_dataset, motion_benchmark,
                               navigation_direction, segmentation_iou, tune_tau)
from moves.segmenter import SegmentConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/desk.yaml")
    ap.add_argument("--pairs", type=int, default=500)
    ap.add_argument("--out", default="runs/desk")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")

    cfg = load_config(args.config)
    out = Path(args.out)
    data = make_dataset(cfg.world, cfg.sensor, args.pairs, cfg.seed)
    model, recon = desk_reconstruction(data, cfg.train, out)
    tau = tune_tau(model, data)
    results = {
        "reconstruction": recon,
        "segmentation": segmentation_iou(model, data, tau),
        "motion": motion_benchmark(model, SegmentConfig(tau=tau)),
        "navigation": navigation_direction(model, cfg.odometry),
    }
    (out / "results.json").write_text(json.dumps(results, indent=2, default=str))
    print(json.dumps(results, indent=2, default=str))


if __name__ == "__main__":
    main()
