"""Unpaired adaptation to a shifted world family.

    python scripts/run_mmd.py --model runs/desk/model.ckpt --out runs/mmd.json

The target family (configs/target_world.yaml) has heavier, bigger and closer
traffic. Target static scans are used for scoring only.
"""
import argparse
import json
import logging
from pathlib import Path

from moves.config import load_config, load_world
from moves.experiments import make_dataset, mmd_adaptation
from moves.model import load_checkpoint


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--model", required=True)
    ap.add_argument("--config", default="configs/desk_mmd.yaml")
    ap.add_argument("--source-config", default="configs/desk.yaml")
    ap.add_argument("--target-world", default="configs/target_world.yaml")
    ap.add_argument("--source-pairs", type=int, default=500)
    ap.add_argument("--target-pairs", type=int, default=200)
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--out", default="runs/mmd.json")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")

    src_cfg = load_config(args.source_config)
    cfg = load_config(args.config)
    family, _ = load_world(args.target_world)
    source = make_dataset(src_cfg.world, src_cfg.sensor, args.source_pairs, src_cfg.seed)
    target = make_dataset(family, cfg.sensor, args.target_pairs, src_cfg.seed + 100)
    init, _, _ = load_checkpoint(args.model)
    res = mmd_adaptation(source, target, init, cfg.train, seeds=range(args.seeds))
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(json.dumps(res, indent=2))
    print(json.dumps(res, indent=2))


if __name__ == "__main__":
    main()
