"""Matplotlib figures for the report path. Everything renders off-screen to files."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def learning_curve(rows: list[dict], path, random_row: dict | None = None) -> Path:
    """Eval return and MSE of the noise-free policy against training step."""
    steps = [r["step"] for r in rows]
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    for ax, key, label in ((axes[0], "return", "eval return"), (axes[1], "mse", "final-frame MSE")):
        ax.plot(steps, [r[key] for r in rows], marker="o", ms=3, label="learned")
        if random_row is not None:
            ax.axhline(random_row[key], color="gray", ls="--", label="random")
        ax.set_xlabel("training step")
        ax.set_ylabel(label)
        ax.legend(frameon=False)
    return _save(fig, path)


def metrics_bars(table: dict[str, dict[str, float]], path) -> Path:
    """One panel per metric, one bar per strategy."""
    metrics = list(next(iter(table.values())).keys())
    fig, axes = plt.subplots(1, len(metrics), figsize=(2.6 * len(metrics), 3))
    for ax, m in zip(np.atleast_1d(axes), metrics):
        names = list(table)
        ax.bar(names, [table[n][m] for n in names], color=["tab:gray", "tab:blue"][: len(names)])
        ax.set_title(m)
    return _save(fig, path)


def sweep_curve(summary: list[dict], path) -> Path:
    """Mean and standard deviation of SSIM against subsampling factor for each strategy."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for strategy, style in (("random", "s--"), ("learned", "o-")):
        rows = sorted((r for r in summary if r["strategy"] == strategy), key=lambda r: r["factor"])
        if rows:
            ax.errorbar([r["factor"] for r in rows], [r["ssim_mean"] for r in rows],
                        yerr=[r["ssim_std"] for r in rows], fmt=style, capsize=3, label=strategy)
    ax.set_xscale("log", base=2)
    ax.set_xlabel("subsampling factor N/K")
    ax.set_ylabel("SSIM")
    ax.legend(frameon=False)
    return _save(fig, path)


def episode_montage(frames: list[np.ndarray], strips: list[np.ndarray], path) -> Path:
    """Action strip above each scan-converted frame, frames left to right."""
    n = len(frames)
    fig, axes = plt.subplots(2, n, figsize=(1.6 * n, 2.2), gridspec_kw={"height_ratios": [1, 6]}, squeeze=False)
    for t in range(n):
        axes[0, t].imshow(strips[t], cmap="gray", vmin=0, vmax=255, aspect="auto")
        axes[1, t].imshow(frames[t], cmap="gray", vmin=0, vmax=255)
        axes[1, t].set_xlabel(f"t={t + 1}", fontsize=8)
        for ax in axes[:, t]:
            ax.set_xticks([])
            ax.set_yticks([])
    return _save(fig, path)
