#!/usr/bin/env python3
"""Render the workbench's CSV outputs as PNG figures.

Usage: plot_results.py DIR [DIR ...]

Scans each directory for the known CSV files and writes one PNG next to
each. Unknown files are ignored, so pointing it at a train, assess, or
sweep output directory all work.
"""
import csv
import math
import sys
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def read_rows(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def axis_key(v):
    x = float(v)
    return (math.inf if math.isinf(x) else x, v)


def plot_metrics(path):
    rows = read_rows(path)
    epochs = [int(r["epoch"]) for r in rows]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(epochs, [float(r["loss"]) for r in rows], label="train loss")
    ax2 = ax.twinx()
    ax2.plot(epochs, [float(r["test_accuracy"]) for r in rows], "C1", label="test accuracy")
    ax2.set_ylim(0, 1.02)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax2.set_ylabel("accuracy")
    fig.legend(loc="center right")
    return fig


def plot_leakage(path):
    rows = read_rows(path)
    chans = [int(r["channel"]) for r in rows]
    fig, (a, b) = plt.subplots(1, 2, figsize=(10, 4))
    a.bar(chans, [float(r["dcor_mean"]) for r in rows])
    a.set_xlabel("channel")
    a.set_ylabel("mean distance correlation")
    a.set_ylim(0, 1)
    b.bar(chans, [float(r["dtw_mean"]) for r in rows], color="C1")
    b.set_xlabel("channel")
    b.set_ylabel("mean DTW distance")
    return fig


def plot_visual(path):
    rows = read_rows(path)
    act_col = [c for c in rows[0] if c != "raw"][0]
    raw = [float(r["raw"]) for r in rows if r["raw"] != ""]
    act = [float(r[act_col]) for r in rows if r[act_col] != ""]
    fig, (a, b) = plt.subplots(2, 1, figsize=(7, 5), sharex=False)
    a.plot(raw)
    a.set_ylabel("raw beat")
    b.plot(act, "C1")
    b.set_ylabel(act_col.replace("_", " "))
    b.set_xlabel("sample")
    return fig


def plot_sweep_accuracy(path):
    rows = sorted(read_rows(path), key=lambda r: axis_key(r["axis"]))
    labels = [r["axis"] for r in rows]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.errorbar(range(len(rows)), [float(r["mean"]) for r in rows],
                yerr=[float(r["std"]) for r in rows], fmt="o-", capsize=4)
    ax.set_xticks(range(len(rows)), labels)
    ax.set_xlabel("sweep axis")
    ax.set_ylabel("test accuracy (mean ± std over seeds)")
    ax.set_ylim(0, 1.02)
    return fig


def plot_sweep_leakage(path):
    rows = read_rows(path)
    by_axis = defaultdict(list)
    for r in rows:
        by_axis[r["axis"]].append(float(r["dcor_mean"]))
    axes = sorted(by_axis, key=lambda a: axis_key(a))
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(range(len(axes)), [max(by_axis[a]) for a in axes], "o-", label="max channel")
    ax.plot(range(len(axes)), [sum(by_axis[a]) / len(by_axis[a]) for a in axes], "s--",
            label="channel mean")
    ax.set_xticks(range(len(axes)), axes)
    ax.set_xlabel("sweep axis")
    ax.set_ylabel("mean distance correlation")
    ax.set_ylim(0, 1)
    ax.legend()
    return fig


def plot_distributions(path):
    rows = read_rows(path)
    groups = defaultdict(list)
    for r in rows:
        groups[(r["metric"], r["group"], r["axis"])].append(float(r["value"]))
    metrics = sorted({m for m, _, _ in groups})
    fig, axs = plt.subplots(len(metrics), 2, figsize=(10, 4 * len(metrics)), squeeze=False)
    for i, metric in enumerate(metrics):
        for j, grp in enumerate(("top", "bottom")):
            ax = axs[i][j]
            axes_vals = sorted({a for m, g, a in groups if m == metric and g == grp},
                               key=lambda a: axis_key(a))
            data = [groups[(metric, grp, a)] for a in axes_vals]
            if data:
                ax.boxplot(data, tick_labels=axes_vals)
            ax.set_title(f"{metric}, {grp} channels")
            ax.set_xlabel("sweep axis")
    return fig


KNOWN = {
    "metrics.csv": plot_metrics,
    "leakage.csv": plot_leakage,
    "sweep_accuracy_summary.csv": plot_sweep_accuracy,
    "sweep_leakage.csv": plot_sweep_leakage,
    "distributions.csv": plot_distributions,
}


def main(argv):
    if len(argv) < 2:
        print(__doc__.strip(), file=sys.stderr)
        return 2
    made = 0
    for d in map(Path, argv[1:]):
        targets = [(p, KNOWN[p.name]) for p in sorted(d.glob("*.csv")) if p.name in KNOWN]
        targets += [(p, plot_visual) for p in sorted(d.glob("visual_*.csv"))]
        for path, fn in targets:
            fig = fn(path)
            out = path.with_suffix(".png")
            fig.savefig(out, dpi=120, bbox_inches="tight")
            plt.close(fig)
            print(f"wrote {out}")
            made += 1
    if made == 0:
        print("no known CSV files found", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv))
