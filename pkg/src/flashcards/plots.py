"""Best-effort figure rendering.

Every function degrades to a warning (returning None) when matplotlib is
unavailable, so report paths never fail just because plotting cannot run.
"""

from __future__ import annotations

import warnings
from pathlib import Path

import numpy as np


def _plt():
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
        return plt
    except Exception as exc:  # pragma: no cover - depends on environment
        warnings.warn(f"plotting disabled ({exc}); emitting CSV only")
        return None


def save_image_grid(path, batch: np.ndarray, cols: int = 8, title: str = ""):
    plt = _plt()
    if plt is None:
        return None
    n = len(batch)
    cols = min(cols, n)
    rows = int(np.ceil(n / cols))
    fig, axes = plt.subplots(rows, cols, figsize=(1.3 * cols, 1.3 * rows))
    axes = np.atleast_1d(axes).ravel()
    for ax in axes:
        ax.axis("off")
    for i in range(n):
        axes[i].imshow(batch[i])
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def save_recon_grid(path, inputs: np.ndarray, outputs: np.ndarray,
                    max_pairs: int = 8, title: str = ""):
    plt = _plt()
    if plt is None:
        return None
    n = min(max_pairs, len(inputs))
    fig, axes = plt.subplots(2, n, figsize=(1.3 * n, 2.8))
    axes = np.asarray(axes).reshape(2, n)
    for i in range(n):
        axes[0, i].imshow(inputs[i])
        axes[1, i].imshow(outputs[i])
        axes[0, i].axis("off")
        axes[1, i].axis("off")
    axes[0, 0].set_title("input", fontsize=8, loc="left")
    axes[1, 0].set_title("output", fontsize=8, loc="left")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def save_history_plot(path, history: list, title: str = ""):
    plt = _plt()
    if plt is None or not history:
        return None
    fig, ax = plt.subplots(figsize=(5, 3.2))
    epochs = [h["epoch"] for h in history]
    ax.plot(epochs, [h["train_mae"] for h in history], label="train")
    ax.plot(epochs, [h["val_mae"] for h in history], label="val")
    ax.set_xlabel("epoch")
    ax.set_ylabel("MAE")
    ax.legend()
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def save_sweep_plot(path, report, title: str = ""):
    plt = _plt()
    if plt is None:
        return None
    fig, ax1 = plt.subplots(figsize=(5.5, 3.4))
    ax1.plot(report.r_values, report.flsd_curve, color="tab:orange",
             label="latent distance")
    ax1.set_xlabel("recursive passes r")
    ax1.set_ylabel("latent distance", color="tab:orange")
    ax2 = ax1.twinx()
    ax2.plot(report.r_values, report.delta_mae_curve, color="tab:blue",
             label="per-pass change")
    ax2.set_ylabel("mean per-pass change", color="tab:blue")
    if report.epsilon1 is not None:
        ax2.axhline(report.epsilon1, color="red", linestyle=":",
                    label="data recon floor")
    ax1.axvline(report.recommended_r, color="gray", linestyle="--")
    if title:
        ax1.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def save_session_plot(path, curves: dict, title: str = ""):
    """Per-strategy accuracy over sessions."""
    plt = _plt()
    if plt is None:
        return None
    fig, ax = plt.subplots(figsize=(5.5, 3.4))
    for name, values in curves.items():
        ax.plot(np.arange(1, len(values) + 1), values, marker="o", label=name)
    ax.set_xlabel("session")
    ax.set_ylabel("accuracy (%)")
    ax.legend(fontsize=8)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def save_accuracy_plot(path, matrix, title: str = ""):
    """Accuracy-vs-stage curves, one line per evaluated task."""
    plt = _plt()
    if plt is None:
        return None
    fig, ax = plt.subplots(figsize=(5.5, 3.4))
    values = matrix.values
    stages = np.arange(1, len(values) + 1)
    for j, name in enumerate(matrix.task_names):
        ax.plot(stages, values[:, j], marker="o", label=str(name))
    ax.set_xlabel("after task")
    ax.set_ylabel(matrix.metric_kind)
    ax.set_xticks(stages)
    ax.legend(fontsize=7)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)
