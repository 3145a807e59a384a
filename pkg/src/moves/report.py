"""Summary tables and SVG plots from run outputs.

Inputs are recognised by their CSV header: training logs, ablation tables,
navigation reports, evaluation reports. TUM trajectory files (.txt) are
overlaid in one plot. Output is byte-stable for identical inputs.
"""
from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import numpy as np

SUMMARY_COLUMNS = ("source", "group", "metric", "value")


def _read_csv(path: Path):
    with open(path, newline="") as fh:
        r = csv.DictReader(fh)
        return list(r.fieldnames or []), list(r)


def _kind(header) -> str:
    h = set(header)
    if {"epoch", "total_G", "recon"} <= h:
        return "train_log"
    if {"mode", "seed", "metric", "value"} <= h:
        return "ablation"
    if {"variant", "ate"} <= h:
        return "nav"
    if {"scan_id", "cd"} <= h:
        return "eval"
    raise ValueError(f"unrecognised CSV header {header}")


def _num(x) -> float:
    return float(x) if x not in ("", None) else float("nan")


def _plt():
    import matplotlib
    matplotlib.use("svg")
    import matplotlib.pyplot as plt
    matplotlib.rcParams["svg.hashsalt"] = "moves-report"
    matplotlib.rcParams["svg.fonttype"] = "none"
    return plt


def _save(fig, path: Path):
    fig.savefig(path, format="svg", metadata={"Date": None})
    import matplotlib.pyplot as plt
    plt.close(fig)


def _summarise(name, kind, rows):
    out = []
    if kind == "train_log":
        last = rows[-1]
        for col in ("recon", "total_D", "total_G", "d_real", "d_fake"):
            out.append((name, "final", col, _num(last[col])))
        vals = [_num(r["val_cd"]) for r in rows if r["val_cd"] != ""]
        if vals:
            out.append((name, "best", "val_cd", min(vals)))
    elif kind == "ablation":
        groups = defaultdict(list)
        for r in rows:
            groups[(r["mode"], r["metric"])].append(_num(r["value"]))
        for (mode, metric), v in sorted(groups.items()):
            out.append((name, mode, f"{metric}_mean", float(np.mean(v))))
            out.append((name, mode, f"{metric}_std", float(np.std(v))))
        out.extend(_ablation_wins(name, rows))
    elif kind == "nav":
        for r in rows:
            for k, v in r.items():
                if k != "variant":
                    out.append((name, r["variant"], k, _num(v)))
    elif kind == "eval":
        for col in ("cd", "emd", "lqi"):
            v = [_num(r[col]) for r in rows if r.get(col, "") != ""]
            if v:
                out.append((name, "mean", col, float(np.mean(v))))
    return out


def ablation_votes(rows, metric: str = "test_cd") -> dict:
    """Per-seed comparisons behind the ablation majority gate."""
    by = defaultdict(dict)
    for r in rows:
        if r["metric"] == metric:
            by[int(r["seed"])][r["mode"]] = _num(r["value"])
    votes = {"cl_helps": [], "moves_beats_vanilla": [], "cod_beats_vanilla": []}
    for seed in sorted(by):
        v = by[seed]
        if "moves" in v and "cod" in v:
            votes["cl_helps"].append(v["moves"] <= v["cod"])
        for m in ("moves", "cod"):
            if m in v and "vanilla" in v:
                votes[f"{m}_beats_vanilla"].append(v[m] < v["vanilla"])
    return votes


def _ablation_wins(name, rows):
    out = []
    for key, flags in ablation_votes(rows).items():
        if flags:
            out.append((name, "seeds", f"{key}_wins", float(sum(flags))))
            out.append((name, "seeds", f"{key}_of", float(len(flags))))
    return out


def _plot_train_log(plt, name, rows, out: Path):
    ep = [int(r["epoch"]) for r in rows]
    fig, ax = plt.subplots(1, 2, figsize=(9, 3.5))
    for col in ("recon", "adv_G", "total_D"):
        ax[0].plot(ep, [_num(r[col]) for r in rows], label=col)
    ax[0].set_xlabel("epoch")
    ax[0].legend()
    pts = [(int(r["epoch"]), _num(r["val_cd"])) for r in rows if r["val_cd"] != ""]
    if pts:
        ax[1].plot(*zip(*pts), marker="o")
    ax[1].set_xlabel("epoch")
    ax[1].set_ylabel("val chamfer")
    fig.tight_layout()
    _save(fig, out / f"{name}_losses.svg")


def _plot_ablation(plt, name, rows, out: Path):
    vals = defaultdict(list)
    for r in rows:
        if r["metric"] == "test_cd":
            vals[r["mode"]].append(_num(r["value"]))
    if not vals:
        return
    modes = sorted(vals)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.bar(modes, [np.mean(vals[m]) for m in modes], yerr=[np.std(vals[m]) for m in modes])
    ax.set_ylabel("held-out chamfer")
    fig.tight_layout()
    _save(fig, out / f"{name}_ablation.svg")


def _plot_trajectories(plt, trajs, out: Path):
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, t in trajs:
        p = t.positions()
        ax.plot(p[:, 0], p[:, 1], label=name)
    ax.set_aspect("equal", adjustable="datalim")
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    ax.legend()
    fig.tight_layout()
    _save(fig, out / "trajectories.svg")


def build_report(paths, out: Path) -> None:
    from .io import read_trajectory
    out.mkdir(parents=True, exist_ok=True)
    plt = _plt()
    summary, trajs, used = [], [], set()
    for p in paths:
        name = p.stem
        k = 1
        while name in used:
            k += 1
            name = f"{p.stem}_{k}"
        used.add(name)
        if p.suffix.lower() == ".txt":
            trajs.append((name, read_trajectory(p)))
            continue
        header, rows = _read_csv(p)
        if not rows:
            raise ValueError(f"{p} has no rows")
        kind = _kind(header)
        summary.extend(_summarise(name, kind, rows))
        if kind == "train_log":
            _plot_train_log(plt, name, rows, out)
        elif kind == "ablation":
            _plot_ablation(plt, name, rows, out)
    if trajs:
        _plot_trajectories(plt, trajs, out)
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for row in summary:
            w.writerow([*row[:3], repr(float(row[3]))])
