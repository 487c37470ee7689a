"""Optional PNG renderings of analysis outputs (needs matplotlib).

The CSV/JSON files written by the CLI are the primary outputs; these
figures are a convenience and are only produced when asked for.
"""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np


def _pyplot():
    try:
        import matplotlib
    except ImportError as exc:  # pragma: no cover - depends on the environment
        raise RuntimeError("figures need matplotlib; install the 'plots' extra") from exc
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    fig.clf()
    return path


def plot_response(curves: dict[str, "object"], path) -> Path:
    """Per-hour change curves, one line per label."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(7, 3.5))
    for label, c in curves.items():
        x = np.arange(len(c.delta))
        ax.plot(x, c.delta, marker="o", label=label)
    ax.axhline(0.0, color="grey", lw=0.8)
    first = next(iter(curves.values()))
    ax.set_xticks(np.arange(len(first.hours)))
    ax.set_xticklabels([h[11:16] for h in first.hours], rotation=45)
    ax.set_ylabel("predicted change")
    ax.legend()
    return _save(fig, path)


def plot_profile(profile, path) -> Path:
    """Mean change per similarity interval over the chosen day."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(7, 3.5))
    for k, (lo, hi) in enumerate(profile.intervals):
        series = profile.change[k].mean(axis=0)
        ax.plot(np.arange(len(series)), series, label=f"[{lo:.1f}, {hi:.1f})")
    ax.axhline(0.0, color="grey", lw=0.8)
    ax.set_xlabel(f"hour of {profile.day}")
    ax.set_ylabel("mean change vs baseline")
    ax.legend(fontsize=7, ncol=2)
    return _save(fig, path)


def plot_case(case, path, region: int = 0) -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(7, 3.5))
    x = np.arange(len(case.hours))
    ax.plot(x, case.err_with[region], marker="o", label="with intentions")
    ax.plot(x, case.err_without[region], marker="s", label="masked")
    ax.bar(x, case.improvement[region], alpha=0.3, label="improvement")
    ax.set_xticks(x)
    ax.set_xticklabels([h[11:16] for h in case.hours], rotation=45)
    ax.set_ylabel("absolute error")
    ax.set_title(case.regions[region])
    ax.legend()
    return _save(fig, path)


def plot_table(records: Sequence[dict], path, metric: str = "rmse") -> Path:
    """Mean and std of one metric per variant."""
    plt = _pyplot()
    variants = sorted({r["variant"] for r in records})
    vals = [[r[metric] for r in records if r["variant"] == v] for v in variants]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar(variants, [np.mean(v) for v in vals],
           yerr=[np.std(v, ddof=1) if len(v) > 1 else 0.0 for v in vals], capsize=4)
    ax.set_ylabel(metric.upper())
    return _save(fig, path)
