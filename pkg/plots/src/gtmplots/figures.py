"""Figure rendering from training-run CSV logs.

Consumes only the frozen metrics schema
(step,neg_elbo,last_frame_kl,wall_s,kl_f0,...,kl_f{T-1}) plus the config.json
echoed next to each metrics.csv (for model/task labels). Data points are
plotted exactly as logged; smoothing happens only behind an explicit flag and
is labelled on the figure.
"""

from __future__ import annotations

import csv
import glob as globlib
import json
import os
from dataclasses import dataclass

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


class RunFormatError(ValueError):
    """Missing or ragged CSV columns, or inconsistent runs in one group."""


@dataclass
class Run:
    path: str
    model: str
    task: str
    steps: np.ndarray          # (n_rows,)
    neg_elbo: np.ndarray       # (n_rows,)
    last_frame_kl: np.ndarray  # (n_rows,)
    kl_frames: np.ndarray      # (n_rows, T)

    @property
    def seq_len(self):
        return self.kl_frames.shape[1]


def load_run(csv_path):
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [r for r in reader if r]
    required = ["step", "neg_elbo", "last_frame_kl", "wall_s"]
    if header[:4] != required:
        raise RunFormatError(f"{csv_path}: header must start with {required}")
    kl_cols = header[4:]
    if kl_cols != [f"kl_f{t}" for t in range(len(kl_cols))] or not kl_cols:
        raise RunFormatError(f"{csv_path}: expected contiguous kl_f columns")
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise RunFormatError(f"{csv_path}: row {i + 1} has {len(row)} fields, "
                                 f"header has {len(header)}")
    data = np.array([[float(v) for v in row] for row in rows])
    model, task = "?", "?"
    cfg_path = os.path.join(os.path.dirname(csv_path), "config.json")
    if os.path.exists(cfg_path):
        cfg = json.load(open(cfg_path))
        model, task = cfg.get("model", "?"), cfg.get("task", "?")
    return Run(path=csv_path, model=model, task=task,
               steps=data[:, 0], neg_elbo=data[:, 1], last_frame_kl=data[:, 2],
               kl_frames=data[:, 4:])


def group_runs(paths, group_by="model"):
    """Group metric files by model kind or task; insertion-ordered labels."""
    if group_by not in ("model", "task"):
        raise RunFormatError(f"cannot group by '{group_by}'")
    groups = {}
    for path in sorted(paths):
        run = load_run(path)
        label = getattr(run, group_by)
        groups.setdefault(label, []).append(run)
    for label, runs in groups.items():
        t0 = runs[0].seq_len
        if any(r.seq_len != t0 for r in runs):
            raise RunFormatError(f"group '{label}': runs disagree on sequence length")
        s0 = runs[0].steps
        if any(len(r.steps) != len(s0) or np.any(r.steps != s0) for r in runs):
            raise RunFormatError(f"group '{label}': runs disagree on eval steps")
    return groups


def expand_glob(pattern):
    paths = sorted(globlib.glob(pattern))
    if not paths:
        raise RunFormatError(f"no metrics files match '{pattern}'")
    return paths


def mean_se(stack):
    """Row-wise mean and standard error across replicas (axis 0)."""
    stack = np.asarray(stack)
    mean = stack.mean(axis=0)
    n = stack.shape[0]
    se = stack.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros_like(mean)
    return mean, se


def moving_average(y, window):
    if window <= 1:
        return y
    kernel = np.ones(window) / window
    return np.convolve(y, kernel, mode="valid")


def _band(ax, x, mean, se, label):
    line, = ax.plot(x, mean, label=label)
    ax.fill_between(x, mean - se, mean + se, alpha=0.25, color=line.get_color())


def _curve_panel(ax, groups, field, smooth):
    for label, runs in groups.items():
        x = runs[0].steps
        stack = np.stack([getattr(r, field) for r in runs])
        mean, se = mean_se(stack)
        if smooth > 1:
            x = x[smooth - 1:]
            mean = moving_average(mean, smooth)
            se = moving_average(se, smooth)
        _band(ax, x, mean, se, label)
    ax.set_xlabel("training step" + (f" (smoothed over {smooth})" if smooth > 1 else ""))


def plot_frame_kl_profile(groups, out_path=None, smooth=0, log_kl=False, ax=None):
    """Per-frame KL of the final logged row, mean +- SE across replicas."""
    own_fig = ax is None
    if own_fig:
        fig, ax = plt.subplots(figsize=(5, 4))
    for label, runs in groups.items():
        stack = np.stack([r.kl_frames[-1] for r in runs])
        mean, se = mean_se(stack)
        _band(ax, np.arange(stack.shape[1]), mean, se, label)
    ax.set_xlabel("frame")
    ax.set_ylabel("KL (nats)")
    ax.set_title("per-frame KL after training")
    if log_kl:
        ax.set_yscale("log")
    ax.legend()
    if own_fig:
        fig.tight_layout()
        if out_path:
            fig.savefig(out_path, dpi=120)
        return fig
    return ax


def plot_three_panel(groups, out_path=None, smooth=0, log_kl=False):
    """KL profile, last-frame KL vs step, negative bound vs step."""
    fig, axes = plt.subplots(1, 3, figsize=(14, 4))
    plot_frame_kl_profile(groups, ax=axes[0], log_kl=log_kl)

    _curve_panel(axes[1], groups, "last_frame_kl", smooth)
    axes[1].set_ylabel("last-frame KL (nats)")
    axes[1].set_title("last-frame KL over training")
    if log_kl:
        axes[1].set_yscale("log")
    axes[1].legend()

    _curve_panel(axes[2], groups, "neg_elbo", smooth)
    axes[2].set_ylabel("negative bound (nats/frame)")
    axes[2].set_title("training objective")
    axes[2].legend()

    fig.tight_layout()
    if out_path:
        fig.savefig(out_path, dpi=120)
    return fig


def structural_summary(fig):
    """Facts a layout check needs: panel count, curves per panel, x monotone."""
    panels = []
    for ax in fig.axes:
        lines = ax.get_lines()
        panels.append({
            "n_curves": len(lines),
            "labels": [ln.get_label() for ln in lines],
            "x_monotone": all(np.all(np.diff(ln.get_xdata()) >= 0) for ln in lines),
            "title": ax.get_title(),
        })
    return panels
