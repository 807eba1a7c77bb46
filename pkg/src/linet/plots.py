"""PNG figures written next to the delimited reports.

Uses the non-interactive Agg backend, so nothing here needs a display.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_history(history, path: str | Path) -> Path:
    """Train/validation MSE per epoch, best epoch marked."""
    epochs = [r.epoch for r in history.history]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(epochs, [r.train_mse for r in history.history], marker="o", label="train")
    ax.plot(epochs, [r.val_mse for r in history.history], marker="s", label="validation")
    if history.best_epoch >= 0:
        ax.axvline(history.best_epoch, color="0.6", ls="--", lw=1)
    ax.set_xlabel("epoch")
    ax.set_ylabel("MSE (normalized)")
    ax.legend(frameon=False)
    return _save(fig, path)


def plot_forecast(history: np.ndarray, truth: np.ndarray | None, forecast: np.ndarray, path: str | Path,
                  channels: Sequence[str] | None = None, max_channels: int = 4) -> Path:
    """One panel per channel: lookback, then forecast (and truth when known)."""
    n = min(history.shape[0], max_channels)
    T, P = history.shape[1], forecast.shape[1]
    fig, axes = plt.subplots(n, 1, figsize=(6, 1.8 * n), sharex=True, squeeze=False)
    for c, ax in enumerate(axes[:, 0]):
        ax.plot(np.arange(T), history[c], color="0.3", lw=1, label="history")
        if truth is not None:
            ax.plot(np.arange(T, T + P), truth[c], color="0.3", lw=1, ls=":", label="actual")
        ax.plot(np.arange(T, T + P), forecast[c], color="C1", lw=1.2, label="forecast")
        ax.set_ylabel(channels[c] if channels else f"ch{c}", fontsize=8)
    axes[0, 0].legend(frameon=False, fontsize=7, loc="upper left")
    axes[-1, 0].set_xlabel("step")
    return _save(fig, path)


def plot_bench(rows, path: str | Path) -> Path:
    """Gate versus dense element counts and forward+backward time over lookback."""
    T = [r.lookback for r in rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8, 3.2))
    ax1.plot(T, [r.gate_elements for r in rows], marker="o", label="top-k gate")
    ax1.plot(T, [r.dense_elements for r in rows], marker="s", label="dense T x T")
    ax1.set_xscale("log", base=2)
    ax1.set_yscale("log")
    ax1.set_xlabel("lookback T")
    ax1.set_ylabel("elements")
    ax1.legend(frameon=False)
    ax2.plot(T, [r.forward_backward_seconds * 1e3 for r in rows], marker="o")
    ax2.set_xscale("log", base=2)
    ax2.set_xlabel("lookback T")
    ax2.set_ylabel("forward+backward (ms)")
    return _save(fig, path)


def plot_ablation(records: Sequence[dict], path: str | Path) -> Path:
    """Test MSE per variant, published values as hollow markers when available."""
    names = [r["variant"] for r in records]
    x = np.arange(len(names))
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.bar(x, [r["mse"] for r in records], color="C0", width=0.6, label="this run")
    ref = [(i, r["reference"]["mse"]) for i, r in enumerate(records) if r.get("reference")]
    if ref:
        ax.scatter(*zip(*ref), facecolors="none", edgecolors="C3", zorder=3, label="published")
    ax.axhline(records[0]["persistence_mse"], color="0.5", ls="--", lw=1, label="persistence")
    ax.set_xticks(x, names)
    ax.set_ylabel("test MSE (normalized)")
    ax.legend(frameon=False, fontsize=8)
    return _save(fig, path)
