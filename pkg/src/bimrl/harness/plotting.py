"""Frames vs. mean return, one curve per run directory, seeds shaded."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import yaml  # noqa: E402

from .runner import CONFIG_FILE, read_metrics  # noqa: E402


class EmptyMetricsError(RuntimeError):
    pass


def run_label(run_dir):
    cfg_path = Path(run_dir) / CONFIG_FILE
    if cfg_path.is_file():
        name = (yaml.safe_load(cfg_path.read_text()) or {}).get("name")
        if name:
            return str(name)
    return Path(run_dir).name


def seed_curves(records, episode=4):
    """``{seed: (frames, returns)}`` for one run directory."""
    by_seed = {}
    for r in records:
        by_seed.setdefault(r.get("seed", 0), []).append((r["frames"], r["episode_returns"][episode - 1]))
    return {s: tuple(np.array(v) for v in zip(*sorted(pts))) for s, pts in by_seed.items()}


def aggregate(curves, n_points=100):
    """Mean and min/max envelope over seeds on a shared frame grid."""
    hi = min(f[-1] for f, _ in curves.values())
    lo = max(f[0] for f, _ in curves.values())
    grid = np.linspace(lo, hi, n_points) if hi > lo else np.array([lo])
    ys = np.stack([np.interp(grid, f, y) for f, y in curves.values()])
    return grid, ys.mean(0), ys.min(0), ys.max(0)


def plot_runs(run_dirs, out_path, episode=4, smooth=1):
    """Write the figure to ``out_path``; returns the number of curves drawn."""
    fig, ax = plt.subplots(figsize=(6, 4))
    n = 0
    for d in run_dirs:
        records = read_metrics(d)
        if not records:
            plt.close(fig)
            raise EmptyMetricsError(f"no metrics records in {d}")
        curves = seed_curves(records, episode)
        if smooth > 1:
            kernel = np.ones(smooth) / smooth
            curves = {
                s: (f, np.convolve(np.pad(y, (smooth - 1, 0), mode="edge"), kernel, mode="valid"))
                for s, (f, y) in curves.items()
            }
        x, mean, lo, hi = aggregate(curves)
        (line,) = ax.plot(x, mean, label=run_label(d))
        if len(curves) > 1:
            ax.fill_between(x, lo, hi, color=line.get_color(), alpha=0.2, linewidth=0)
        n += 1
    ax.set_xlabel("frames")
    ax.set_ylabel(f"mean return (episode {episode})")
    ax.legend(loc="best")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return n
