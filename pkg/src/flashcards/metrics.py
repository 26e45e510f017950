"""Evaluation metrics: pixel MAE, latent-space Fréchet distance, and the
per-task transfer summary statistics computed from a stage-by-task matrix.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DataError, NumericError

_COV_REG = 1e-6


def mae(a: np.ndarray, b: np.ndarray) -> float:
    """Mean absolute difference over all pixels of two same-shape arrays."""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise DataError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.abs(a.astype(np.float64) - b.astype(np.float64)).mean())


def _sqrt_spd(mat: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh((mat + mat.T) / 2.0)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def flsd(latents_a: np.ndarray, latents_b: np.ndarray) -> float:
    """Fréchet distance between Gaussian fits of two latent samples.

    ``|mu_a - mu_b|^2 + tr(Sa + Sb - 2 (Sa Sb)^(1/2))`` with covariances
    regularized by ``1e-6 I`` and the matrix square root taken by
    eigendecomposition of the symmetrized product (tiny negative
    eigenvalues clipped to zero).
    """
    a = np.asarray(latents_a, dtype=np.float64)
    b = np.asarray(latents_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise DataError(f"latent shape mismatch: {a.shape} vs {b.shape}")
    if len(a) < 2 or len(b) < 2:
        raise DataError("need at least 2 samples per side for a covariance")
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    reg = _COV_REG * np.eye(a.shape[1])
    cov_a = np.cov(a, rowvar=False) + reg
    cov_b = np.cov(b, rowvar=False) + reg

    half_a = _sqrt_spd(cov_a)
    inner = half_a @ cov_b @ half_a
    w = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    trace_sqrt = np.sqrt(np.clip(w, 0.0, None)).sum()

    value = float(
        np.sum((mu_a - mu_b) ** 2) + np.trace(cov_a) + np.trace(cov_b)
        - 2.0 * trace_sqrt
    )
    if not np.isfinite(value):
        raise NumericError("Fréchet latent distance is non-finite")
    return max(value, 0.0)


@dataclass
class MetricsMatrix:
    """Stage-by-task evaluation matrix.

    ``values[i, j]`` is the test metric on task j after training through
    task i (NaN for entries not evaluated yet).  ``random_init_ref[j]`` is
    the same metric under untrained, seeded random weights.
    """

    values: np.ndarray
    task_names: list
    metric_kind: str = "mae"
    random_init_ref: Optional[np.ndarray] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        t = len(self.task_names)
        if self.values.shape != (t, t):
            raise DataError(
                f"matrix shape {self.values.shape} does not match "
                f"{t} task names"
            )
        if self.metric_kind not in ("mae", "accuracy"):
            raise DataError(f"metric_kind must be mae|accuracy, got {self.metric_kind}")
        if self.random_init_ref is not None:
            self.random_init_ref = np.asarray(self.random_init_ref, np.float64)
            if self.random_init_ref.shape != (t,):
                raise DataError("random_init_ref length must equal task count")

    @property
    def num_tasks(self) -> int:
        return len(self.task_names)

    def to_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"after_task[{self.metric_kind}]"] + list(self.task_names))
            if self.random_init_ref is not None:
                writer.writerow(["random_init"] + [f"{v:.6f}" for v in self.random_init_ref])
            for i, name in enumerate(self.task_names):
                row = ["" if np.isnan(v) else f"{v:.6f}" for v in self.values[i]]
                writer.writerow([name] + row)

    @classmethod
    def from_csv(cls, path) -> "MetricsMatrix":
        path = Path(path)
        if not path.exists():
            raise DataError(f"metrics file not found: {path}")
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        head = rows[0][0]
        if "[" not in head or not head.startswith("after_task"):
            raise DataError(f"{path}: not a metrics matrix file")
        kind = head[head.index("[") + 1:head.index("]")]
        names = rows[0][1:]
        ref = None
        body = rows[1:]
        if body and body[0][0] == "random_init":
            ref = np.array([float(v) for v in body[0][1:]])
            body = body[1:]
        values = np.full((len(names), len(names)), np.nan)
        for i, row in enumerate(body):
            for j, cell in enumerate(row[1:]):
                if cell:
                    values[i, j] = float(cell)
        return cls(values, names, kind, ref)


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise DataError(message)


def avg_mae(mm: MetricsMatrix) -> float:
    """Mean of the final row: average metric over all tasks at the end."""
    last = mm.values[-1]
    _require(not np.isnan(last).any(), "final row of the matrix is incomplete")
    return float(last.mean())


def bwt(mm: MetricsMatrix) -> float:
    """Backward transfer: mean of (just-trained - final) per earlier task.

    For error metrics like MAE, forgetting (final worse than just-trained)
    gives a negative value.
    """
    t = mm.num_tasks
    _require(t >= 2, "backward transfer needs at least 2 tasks")
    diag = np.diag(mm.values)[:-1]
    last = mm.values[-1, :-1]
    _require(
        not (np.isnan(diag).any() or np.isnan(last).any()),
        "diagonal and final row must be complete",
    )
    return float((diag - last).mean())


def fwt(mm: MetricsMatrix) -> float:
    """Forward transfer: mean of (random-init - pre-exposure) per later task."""
    t = mm.num_tasks
    _require(t >= 2, "forward transfer needs at least 2 tasks")
    _require(mm.random_init_ref is not None, "random_init_ref vector is missing")
    pre = np.array([mm.values[i - 1, i] for i in range(1, t)])
    _require(not np.isnan(pre).any(), "superdiagonal must be complete")
    return float((mm.random_init_ref[1:] - pre).mean())


# ---------------------------------------------------------------------------
# heavy-tailed weight spectrum diagnostic
# ---------------------------------------------------------------------------


def _layer_weight_arrays(model) -> list:
    import torch.nn as nn

    if isinstance(model, (list, tuple)):
        return [np.asarray(w, dtype=np.float64) for w in model]
    return [
        m.weight.detach().cpu().numpy().astype(np.float64)
        for m in model.modules()
        if isinstance(m, (nn.Conv2d, nn.Linear))
    ]


def weighted_alpha(model) -> float:
    """Log-spectral-norm weighted mean of per-layer power-law exponents.

    Each conv/linear weight is flattened to 2-D; a maximum-likelihood
    power-law exponent is fitted to the top 20% of the eigenvalues of
    W^T W.  Diagnostic only: the fitting recipe is fixed here and values
    are not comparable across implementations.
    """
    alphas, weights = [], []
    for w in _layer_weight_arrays(model):
        mat = w.reshape(w.shape[0], -1)
        if min(mat.shape) < 2:
            continue
        eig = np.linalg.svd(mat, compute_uv=False) ** 2
        eig = eig[eig > 0]
        if len(eig) < 2:
            continue
        k = max(2, int(np.ceil(0.2 * len(eig))))
        tail = np.sort(eig)[-k:]
        x_min = tail[0]
        denom = np.log(tail / x_min).sum()
        if denom <= 0:
            continue
        alphas.append(1.0 + len(tail) / denom)
        weights.append(np.log10(eig.max()))
    if not alphas:
        raise NumericError("no layer produced a usable eigenvalue spectrum")
    alphas, weights = np.array(alphas), np.array(weights)
    if np.abs(weights).sum() < 1e-9:
        return float(alphas.mean())
    return float((alphas * weights).sum() / weights.sum())
