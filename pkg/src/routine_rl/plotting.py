"""Learning-curve and coverage-histogram figures rendered with matplotlib.

SVG output is made reproducible by fixing the hash salt used for element ids
and dropping the creation date from the metadata.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .errors import UsageError  # noqa: E402

CURVE_METRICS = ("mean_return", "mean_policy_queries")
_LABELS = {"mean_return": "return", "mean_policy_queries": "policy queries"}


@dataclass
class Series:
    """Seed-aggregated curve of one metric for one run group."""

    label: str
    env_steps: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    seeds: int


def _style() -> dict:
    return {
        "svg.hashsalt": "routine-rl",
        "svg.fonttype": "path",
        "font.size": 9,
        "axes.spines.top": False,
        "axes.spines.right": False,
        "axes.grid": True,
        "grid.alpha": 0.3,
        "legend.frameon": False,
    }


def _save(fig, out) -> Path:
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fmt = out.suffix.lstrip(".").lower() or "svg"
    meta = {"Date": None} if fmt == "svg" else {}
    fig.savefig(out, format=fmt, metadata=meta)
    plt.close(fig)
    return out


def group_label(path) -> str:
    """Legend label of a metrics file: its stem, or the directory name for ``metrics.csv``."""
    p = Path(path)
    if p.stem == "metrics" and p.parent.name:
        return p.parent.name
    return p.stem


def read_metrics(path) -> list[dict[str, float]]:
    with open(path, newline="") as fh:
        rows = [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]
    if not rows:
        raise UsageError(f"{path}: no metric rows")
    return rows


def curve_series(rows: list[dict[str, float]], metric: str, label: str) -> Series:
    """Mean and population std over seeds at every env_steps value present in all seeds."""
    by_seed: dict[float, dict[float, float]] = {}
    for row in rows:
        by_seed.setdefault(row["seed"], {})[row["env_steps"]] = row[metric]
    common = sorted(set.intersection(*(set(d) for d in by_seed.values())))
    vals = np.array([[d[x] for x in common] for d in by_seed.values()])
    return Series(label, np.array(common), vals.mean(axis=0), vals.std(axis=0), len(by_seed))


def plot_learning_curves(csv_paths, out, metrics=CURVE_METRICS) -> dict[str, list[Series]]:
    """One panel per metric, one mean line with a +-1 std band per CSV file.

    Returns the plotted series keyed by metric so callers can check the numbers.
    """
    paths = [Path(p) for p in csv_paths]
    if not paths:
        raise UsageError("plot needs at least one metrics CSV")
    groups = [(group_label(p), read_metrics(p)) for p in paths]
    plotted: dict[str, list[Series]] = {m: [] for m in metrics}
    with plt.rc_context(_style()):
        fig, axes = plt.subplots(len(metrics), 1, figsize=(5.5, 2.6 * len(metrics)), sharex=True)
        axes = np.atleast_1d(axes)
        for ax, metric in zip(axes, metrics):
            for i, (label, rows) in enumerate(groups):
                s = curve_series(rows, metric, label)
                color = f"C{i % 10}"
                ax.plot(s.env_steps, s.mean, color=color, lw=1.5, label=f"{label} ({s.seeds} seeds)")
                ax.fill_between(s.env_steps, s.mean - s.std, s.mean + s.std, color=color, alpha=0.2, lw=0)
                plotted[metric].append(s)
            ax.set_ylabel(_LABELS.get(metric, metric))
        axes[0].legend(loc="best")
        axes[-1].set_xlabel("environment steps")
        fig.tight_layout()
        _save(fig, out)
    return plotted


def plot_histograms(edges: np.ndarray, counts: dict[str, np.ndarray], out, xlabel: str = "speed") -> Path:
    """Overlaid step histograms of visited-state features, one per sampler."""
    with plt.rc_context(_style()):
        fig, ax = plt.subplots(figsize=(5.5, 3.0))
        for i, (label, c) in enumerate(counts.items()):
            ax.stairs(c, edges, color=f"C{i}", lw=1.5, label=f"{label} ({int(np.count_nonzero(c))} bins hit)")
        ax.set_xlabel(xlabel)
        ax.set_ylabel("visited states")
        ax.legend(loc="best")
        fig.tight_layout()
        return _save(fig, out)
