"""Command-line entry point: `moves <subcommand> ...`.

Exit status: 0 success, 1 invalid arguments/config/inputs, 2 failure while running.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import yaml

log = logging.getLogger("moves")

COMMANDS = ("gen-data", "train", "train-mmd", "reconstruct", "segment", "evaluate", "nav-eval",
            "ablate", "report")
EVAL_COLUMNS = ("scan_id", "cd", "emd", "lqi")
ABLATION_COLUMNS = ("mode", "seed", "metric", "value")
NAV_COLUMNS = ("variant", "ate", "rpe_trans", "rpe_rot", "ate_x", "ate_y", "ate_z")
TRACK_COLUMNS = ("frame", "id", "cx", "cy", "cz", "label")


class ValidationError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ValidationError(f"{self.prog}: {message}")


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path: Path, columns, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


def _require_dir(path, what: str) -> Path:
    p = Path(path)
    if not (p / "manifest.yaml").is_file():
        raise ValidationError(f"{what} {p} has no manifest.yaml")
    return p


def _require_file(path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise ValidationError(f"{what} {p} not found")
    return p


def _load_model(path):
    from .model import CheckpointError, load_checkpoint
    try:
        model, _, extra = load_checkpoint(_require_file(path, "checkpoint"))
    except CheckpointError as e:
        raise ValidationError(str(e)) from e
    return model, extra


def _load_data(path, what="dataset"):
    from .dataset import read_dataset
    from .io import FormatError
    try:
        return read_dataset(_require_dir(path, what))
    except (FormatError, KeyError, ValueError) as e:
        raise ValidationError(f"{what} {path}: {e}") from e


def _check_grid(model, sensor):
    if (model.cfg.height, model.cfg.width) != sensor.shape:
        raise ValidationError(f"model grid {(model.cfg.height, model.cfg.width)} does not match "
                              f"data grid {sensor.shape}")


# -- subcommands -------------------------------------------------------------


def cmd_gen_data(args, cfg):
    from .benchmarks import convoy_sequence, mixed_motion_sequence
    from .config import load_world
    from .dataset import PairDataset, write_dataset, write_sequence
    from .synthworld import gen_sequence, sample_pairs, split_labels

    out = Path(args.out)
    sensor = cfg.sensor
    if args.sequence:
        if args.world:
            raise ValidationError("--world and --sequence are exclusive")
        builder = {"convoy": convoy_sequence, "mixed": mixed_motion_sequence}[args.sequence]
        world, seq = builder() if args.frames is None else builder(args.frames)
        pairs, traj = gen_sequence(world, seq, sensor, seed=args.seed)
        write_sequence(out, pairs, traj, world, seq, {"sequence": args.sequence, "seed": args.seed})
        return
    if args.pairs is None or args.pairs < 1:
        raise ValidationError("--pairs must be a positive integer")
    family = cfg.world
    if args.world:
        family, file_sensor = load_world(args.world)
        sensor = file_sensor or sensor
    pairs = sample_pairs(family, sensor, args.pairs, seed=args.seed)
    data = PairDataset.from_pairs(pairs, split_labels(len(pairs)))
    write_dataset(out, data, {"seed": args.seed, "world": family.to_dict()})


def _train_cfg(args, cfg):
    tc = replace(cfg.train, seed=args.seed, threads=args.threads)
    if getattr(args, "mode", None):
        tc = replace(tc, mode=args.mode)
    if getattr(args, "epochs", None):
        tc = replace(tc, epochs=args.epochs)
    return tc


def cmd_train(args, cfg):
    from .trainer import train_moves
    data = _load_data(args.data)
    tc = _train_cfg(args, cfg)
    train_moves(data, tc, args.out)


def cmd_train_mmd(args, cfg):
    from .trainer import train_mmd
    source = _load_data(args.source, "source dataset")
    target = _load_data(args.target, "target dataset")
    model, _ = _load_model(args.model)
    _check_grid(model, target.sensor)
    tc = _train_cfg(args, cfg)
    train_mmd(source, target, tc, model, args.out)


def _reconstruct_all(model, data, target=False):
    from .trainer import reconstruct_arrays
    return reconstruct_arrays(model, data.dynamic, data.dynamic_valid, data.sensor.r_max, target)


def cmd_reconstruct(args, cfg):
    from .core import RangeImage
    from .dataset import PairDataset, write_dataset
    from .segmenter import diff_segment
    model, _ = _load_model(args.model)
    data = _load_data(args.data)
    _check_grid(model, data.sensor)
    if args.split:
        data = data.subset(args.split)
        if len(data) == 0:
            raise ValidationError(f"split {args.split!r} is empty")
    rec = _reconstruct_all(model, data, args.target)
    rec_imgs = [RangeImage.from_ranges(data.sensor, r) for r in rec]
    masks = np.stack([diff_segment(data.dynamic_image(i), rec_imgs[i], cfg.segment.tau).mask
                      for i in range(len(data))])
    out = PairDataset(data.sensor, rec, np.stack([r.validity for r in rec_imgs]), data.dynamic,
                      data.dynamic_valid, masks, data.poses, data.splits, data.ids)
    write_dataset(args.out, out, {"source": "reconstruction", "tau": cfg.segment.tau})


def cmd_segment(args, cfg):
    from .core import RangeImage
    from .dataset import read_sequence
    from .io import write_mask
    from .segmenter import iou, segment_sequence
    model, _ = _load_model(args.model)
    try:
        data, traj = read_sequence(_require_dir(args.seq, "sequence"))
    except (OSError, ValueError) as e:
        raise ValidationError(str(e)) from e
    _check_grid(model, data.sensor)
    scfg = cfg.segment if args.tau is None else replace(cfg.segment, tau=args.tau)
    if len(data) < scfg.k:
        raise ValidationError(f"sequence has {len(data)} frames, classification needs {scfg.k}")
    rec = _reconstruct_all(model, data)
    dyn = [data.dynamic_image(i) for i in range(len(data))]
    masks, tracks = segment_sequence(dyn, [RangeImage.from_ranges(data.sensor, r) for r in rec],
                                     traj, scfg)
    out = Path(args.out)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    rows = []
    for i, m in enumerate(masks):
        write_mask(out / "masks" / f"{data.ids[i]}.mvri", data.sensor, m.mask)
        rows.append({"frame": i, "id": data.ids[i], "iou": iou(m.mask, data.masks[i])})
    _write_csv(out / "mask_iou.csv", ("frame", "id", "iou"), rows)
    trows = []
    for tr in tracks:
        for f, c in zip(tr.frames, tr.centroids):
            trows.append({"frame": f, "id": tr.track_id, "cx": c[0], "cy": c[1], "cz": c[2],
                          "label": tr.label or "unlabeled"})
    trows.sort(key=lambda r: (r["frame"], r["id"]))
    _write_csv(out / "tracks.csv", TRACK_COLUMNS, trows)


def cmd_evaluate(args, cfg):
    from .lqi import fit_from_dataset
    from .metrics import scan_metrics
    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    bad = sorted(set(metrics) - {"cd", "emd", "lqi"})
    if bad or not metrics:
        raise ValidationError(f"unknown metrics {bad}; choose from cd, emd, lqi")
    pred = _load_data(args.pred, "prediction dir")
    gt = _load_data(args.gt, "ground-truth dir")
    if pred.sensor != gt.sensor:
        raise ValidationError("prediction and ground truth use different sensor configs")
    gt_index = {pid: i for i, pid in enumerate(gt.ids)}
    missing = [pid for pid in pred.ids if pid not in gt_index]
    if missing:
        raise ValidationError(f"{len(missing)} predicted scans have no ground truth, e.g. {missing[0]}")
    lqi_model = None
    if "lqi" in metrics:
        ref = _load_data(args.lqi_data, "LQI training dir") if args.lqi_data else gt
        lqi_model = fit_from_dataset(ref.subset("train") if "train" in ref.splits else ref,
                                     replace(cfg.lqi, seed=args.seed))
    rows = []
    for i, pid in enumerate(pred.ids):
        p, g = pred.static_image(i), gt.static_image(gt_index[pid])
        row = {"scan_id": pid, "cd": "", "emd": "", "lqi": ""}
        if "cd" in metrics or "emd" in metrics:
            m = scan_metrics(p, g, args.emd_points if "emd" in metrics else 0, seed=args.seed)
            if "cd" in metrics:
                row["cd"] = m["cd"]
            if "emd" in metrics:
                row["emd"] = m["emd"]
        if lqi_model is not None:
            row["lqi"] = lqi_model.score_image(p)
        rows.append(row)
    _write_csv(Path(args.out), EVAL_COLUMNS, rows)


def cmd_nav_eval(args, cfg):
    from .core import RangeImage
    from .dataset import read_sequence
    from .io import write_trajectory
    from .navproxy import VARIANTS, nav_eval
    model, _ = _load_model(args.model)
    try:
        data, traj = read_sequence(_require_dir(args.seq, "sequence"))
    except (OSError, ValueError) as e:
        raise ValidationError(str(e)) from e
    _check_grid(model, data.sensor)
    rec = _reconstruct_all(model, data)
    n = len(data)
    reports, trajs = nav_eval([data.dynamic_image(i) for i in range(n)],
                              [RangeImage.from_ranges(data.sensor, r) for r in rec],
                              [data.static_image(i) for i in range(n)], traj, cfg.odometry)
    out = Path(args.out)
    if out.suffix.lower() == ".csv":
        report = out
    else:
        report = out / "report.csv"
        for v in VARIANTS:
            out.mkdir(parents=True, exist_ok=True)
            write_trajectory(out / f"traj_{v}.txt", trajs[v])
    _write_csv(report, NAV_COLUMNS, [{"variant": v, **reports[v]} for v in VARIANTS])


def cmd_ablate(args, cfg):
    from .trainer import MODES, evaluate_chamfer, train_moves
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    bad = [m for m in modes if m not in MODES]
    if bad or not modes:
        raise ValidationError(f"unknown modes {bad}; choose from {MODES}")
    if args.seeds < 1:
        raise ValidationError("--seeds must be positive")
    data = _load_data(args.data)
    test = data.subset("test") if "test" in data.splits else data
    if len(test) == 0:
        raise ValidationError("dataset has no held-out pairs")
    out = Path(args.out)
    rows = []
    for k in range(args.seeds):
        seed = args.seed + k
        for mode in modes:
            tc = replace(_train_cfg(args, cfg), mode=mode, seed=seed)
            run_dir = out / "runs" / f"{mode}_s{seed}"
            model, log_rows = train_moves(data, tc, run_dir)
            res = evaluate_chamfer(model, test, None, args.emd_points, seed=seed)
            vals = [r["val_cd"] for r in log_rows if r["val_cd"] != ""]
            for metric, value in (("test_cd", res["cd"]), ("test_emd", res["emd"]),
                                  ("best_val_cd", min(vals) if vals else float("nan"))):
                rows.append({"mode": mode, "seed": seed, "metric": metric, "value": value})
            log.info("ablate %s seed %d: test_cd %.3f", mode, seed, res["cd"])
            _write_csv(out / "ablation.csv", ABLATION_COLUMNS, rows)
    _write_csv(out / "ablation.csv", ABLATION_COLUMNS, rows)


def cmd_report(args, cfg):
    from .report import build_report
    paths = [_require_file(p, "report input") for p in args.inputs]
    try:
        build_report(paths, Path(args.out))
    except ValueError as e:
        raise ValidationError(str(e)) from e


# -- wiring ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="single source of randomness")
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--config", help="YAML run config")
    common.add_argument("--out", required=True)
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="moves", description="Dynamic-to-static LiDAR scan translation toolkit.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    g = sub.add_parser("gen-data", parents=[common], help="generate paired scans or a sequence")
    g.add_argument("--world", help="YAML world-family file")
    g.add_argument("--pairs", type=int)
    g.add_argument("--sequence", choices=("convoy", "mixed"))
    g.add_argument("--frames", type=int)

    t = sub.add_parser("train", parents=[common], help="train a model")
    t.add_argument("--data", required=True)
    t.add_argument("--mode", choices=("moves", "cod", "vanilla", "ae"))
    t.add_argument("--epochs", type=int)

    m = sub.add_parser("train-mmd", parents=[common], help="unpaired target adaptation")
    m.add_argument("--source", required=True)
    m.add_argument("--target", required=True)
    m.add_argument("--model", required=True)
    m.add_argument("--epochs", type=int)

    r = sub.add_parser("reconstruct", parents=[common], help="translate dynamic scans")
    r.add_argument("--model", required=True)
    r.add_argument("--data", required=True)
    r.add_argument("--split")
    r.add_argument("--target", action="store_true", help="use the adapted target generator")

    s = sub.add_parser("segment", parents=[common], help="segment and track a sequence")
    s.add_argument("--model", required=True)
    s.add_argument("--seq", required=True)
    s.add_argument("--tau", type=float)

    e = sub.add_parser("evaluate", parents=[common], help="per-scan CD/EMD/LQI")
    e.add_argument("--pred", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--metrics", default="cd,emd,lqi")
    e.add_argument("--emd-points", type=int, default=256)
    e.add_argument("--lqi-data", help="dataset to fit the LQI proxy on (default: --gt)")

    n = sub.add_parser("nav-eval", parents=[common], help="odometry on dynamic/reconstructed/static")
    n.add_argument("--seq", required=True)
    n.add_argument("--model", required=True)

    a = sub.add_parser("ablate", parents=[common], help="train and score several modes and seeds")
    a.add_argument("--data", required=True)
    a.add_argument("--modes", default="moves,cod,vanilla")
    a.add_argument("--seeds", type=int, default=5)
    a.add_argument("--epochs", type=int)
    a.add_argument("--emd-points", type=int, default=128)

    o = sub.add_parser("report", parents=[common], help="summary CSV and SVG plots")
    o.add_argument("--inputs", nargs="+", required=True)
    return p


HANDLERS = {
    "gen-data": cmd_gen_data, "train": cmd_train, "train-mmd": cmd_train_mmd,
    "reconstruct": cmd_reconstruct, "segment": cmd_segment, "evaluate": cmd_evaluate,
    "nav-eval": cmd_nav_eval, "ablate": cmd_ablate, "report": cmd_report,
}


def dispatch(argv=None) -> int:
    from .config import ConfigError, load_config
    try:
        args = build_parser().parse_args(argv)
        cfg = load_config(args.config)
        if args.seed is None:
            args.seed = cfg.seed
        if args.seed < 0 or args.threads < 1:
            raise ValidationError("--seed must be >= 0 and --threads >= 1")
    except (ValidationError, ConfigError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except SystemExit as e:  # --help
        return 0 if e.code in (0, None) else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    import torch
    torch.set_num_threads(args.threads)
    try:
        HANDLERS[args.command](args, cfg)
    except (ValidationError, ConfigError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001 - any failure after validation is a runtime error
        log.debug("failure", exc_info=True)
        print(f"failed: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
