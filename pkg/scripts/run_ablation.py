"""Mode ablation: moves vs cod vs vanilla over several seeds.

    python scripts/run_ablation.py --seeds 5 --out runs/ablation.json

Runs at a reduced grid and epoch budget with unit loss weights so that the
fifteen trainings finish in minutes on one core.
"""
import argparse
import json
import logging
from dataclasses import replace
from pathlib import Path

from moves.config import load_config
from moves.core import SensorConfig
from moves.experiments import ablation, make_dataset
from moves.losses import LossWeights


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/desk.yaml")
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--pairs", type=int, default=300)
    ap.add_argument("--epochs", type=int, default=60)
    ap.add_argument("--grid", type=int, nargs=2, default=(16, 32), metavar=("BEAMS", "AZIMUTH"))
    ap.add_argument("--out", default="runs/ablation.json")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")

    cfg = load_config(args.config)
    sensor = SensorConfig(num_beams=args.grid[0], num_azimuth=args.grid[1], r_max=cfg.sensor.r_max)
    data = make_dataset(cfg.world, sensor, args.pairs, cfg.seed)
    tc = replace(cfg.train, epochs=args.epochs, eval_every=max(1, args.epochs // 10),
                 weights=LossWeights())
    res = ablation(data, tc, seeds=range(args.seeds))
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(json.dumps(res, indent=2))
    print(json.dumps(res, indent=2))


if __name__ == "__main__":
    main()
