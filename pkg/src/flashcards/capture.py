"""Knowledge capture: turn random patterns into flashcards by recursive
passes through a trained autoencoder, and pick the iteration count from
latent-distance / per-pass-change curves.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import autoencoder as ae
from . import tensorio
from .errors import ConfigError, DataError
from .metrics import flsd
from .patterns import PatternSpec, generate_patterns

FLSD_SAMPLE_CAP = 2000  # per side, keeps covariance estimates stable


@dataclass
class FlashcardConfig:
    n_flashcards: int
    iterations: int = 10
    pattern: PatternSpec = field(default_factory=PatternSpec)

    def __post_init__(self):
        if self.n_flashcards < 1:
            raise ConfigError("n_flashcards must be >= 1")
        if self.iterations < 0:
            raise ConfigError("iterations must be >= 0")


@dataclass
class FlashcardSet:
    """Constructed pseudo-samples plus provenance."""

    images: np.ndarray
    source_model_id: str
    r_used: int
    pattern_seed: int
    delta_mae: Optional[np.ndarray]  # per-sample mean |F_r - F_(r-1)|; None at r=0

    @property
    def bounds(self) -> tuple:
        """(gamma1, gamma2): min/max per-sample change on the final pass."""
        if self.delta_mae is None:
            raise DataError("delta bounds are undefined for r=0 flashcards")
        return float(self.delta_mae.min()), float(self.delta_mae.max())

    def __len__(self) -> int:
        return len(self.images)

    def save(self, path: str | Path) -> None:
        path = Path(path)
        tensorio.write_tensor(path, self.images)
        meta = {
            "source_model_id": self.source_model_id,
            "r_used": self.r_used,
            "pattern_seed": self.pattern_seed,
            "delta_mae": None if self.delta_mae is None else self.delta_mae.tolist(),
            "images_sha256": tensorio.sha256_array(self.images),
        }
        path.with_suffix(path.suffix + ".meta.json").write_text(
            json.dumps(meta, indent=2)
        )

    @classmethod
    def load(cls, path: str | Path) -> "FlashcardSet":
        path = Path(path)
        images = tensorio.read_tensor(path)
        meta_path = path.with_suffix(path.suffix + ".meta.json")
        if not meta_path.exists():
            raise DataError(f"flashcard sidecar missing: {meta_path}")
        meta = json.loads(meta_path.read_text())
        if meta.get("images_sha256") != tensorio.sha256_array(images):
            raise DataError(f"{path}: image payload does not match sidecar hash")
        delta = meta.get("delta_mae")
        return cls(
            images=images,
            source_model_id=meta["source_model_id"],
            r_used=int(meta["r_used"]),
            pattern_seed=int(meta["pattern_seed"]),
            delta_mae=None if delta is None else np.asarray(delta, np.float64),
        )


def recursive_pass(
    model: ae.AEModel, batch: np.ndarray, r: int, batch_size: int = 512
) -> np.ndarray:
    """Feed the model its own output ``r`` times; ``r=0`` is the identity."""
    if r < 0:
        raise ConfigError("iteration count must be >= 0")
    out = batch
    for _ in range(r):
        out = ae.forward(model, out, batch_size=batch_size)
    return out


def construct_flashcards(model: ae.AEModel, config: FlashcardConfig) -> FlashcardSet:
    """Build a flashcard set from a frozen model (inference only).

    Constructing from an untrained model is allowed; it is a useful
    negative control.
    """
    spec = PatternSpec(
        kind=config.pattern.kind,
        count=config.n_flashcards,
        cell_size=config.pattern.cell_size,
        colorize=config.pattern.colorize,
        seed=config.pattern.seed,
    )
    current = generate_patterns(spec)
    previous = None
    for _ in range(config.iterations):
        previous = current
        current = ae.forward(model, current)
    delta = None
    if previous is not None:
        delta = (
            np.abs(current.astype(np.float64) - previous.astype(np.float64))
            .mean(axis=(1, 2, 3))
        )
    return FlashcardSet(
        images=current,
        source_model_id=ae.model_id(model),
        r_used=config.iterations,
        pattern_seed=spec.seed,
        delta_mae=delta,
    )


@dataclass
class RSweepReport:
    r_values: list
    flsd_curve: list
    delta_mae_curve: list  # mean per-sample change vs previous pass; NaN at r=0
    delta_max_curve: list  # max per-sample change (gamma2 at each r)
    epsilon1: Optional[float]
    recommended_r: int
    p1_satisfied: Optional[bool]
    p2_flsd_ratio: float  # flsd(recommended) / flsd(1); reported, not asserted

    def to_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["r", "flsd", "delta_mae", "delta_max"])
            for r, f, d, m in zip(
                self.r_values, self.flsd_curve, self.delta_mae_curve,
                self.delta_max_curve,
            ):
                writer.writerow([r, f"{f:.8f}", f"{d:.8f}", f"{m:.8f}"])


def sweep_r(
    model: ae.AEModel,
    config: FlashcardConfig,
    reference: np.ndarray,
    r_max: int,
    epsilon1: float | None = None,
) -> RSweepReport:
    """Trace FLSD-to-reference and per-pass change along one recursive
    trajectory of the configured patterns (no recomputation per r)."""
    if r_max < 2:
        raise ConfigError("r_max must be >= 2")
    if len(reference) == 0:
        raise DataError("reference batch is empty")

    spec = PatternSpec(
        kind=config.pattern.kind,
        count=config.n_flashcards,
        cell_size=config.pattern.cell_size,
        colorize=config.pattern.colorize,
        seed=config.pattern.seed,
    )
    current = generate_patterns(spec)
    cap = min(FLSD_SAMPLE_CAP, len(reference), len(current))
    if cap < 2:
        raise DataError("need at least 2 samples per side for the sweep")
    ref_latents = ae.encode(model, reference[:cap])

    flsd_curve = [flsd(ae.encode(model, current[:cap]), ref_latents)]
    delta_curve = [float("nan")]
    delta_max = [float("nan")]
    for _ in range(1, r_max + 1):
        nxt = ae.forward(model, current)
        per_sample = (
            np.abs(nxt.astype(np.float64) - current.astype(np.float64))
            .mean(axis=(1, 2, 3))
        )
        delta_curve.append(float(per_sample.mean()))
        delta_max.append(float(per_sample.max()))
        flsd_curve.append(flsd(ae.encode(model, nxt[:cap]), ref_latents))
        current = nxt

    r_values = list(range(r_max + 1))
    recommended = 1 + int(np.argmin(flsd_curve[1:]))
    p1 = None
    if epsilon1 is not None:
        p1 = bool(delta_max[recommended] < epsilon1)
    return RSweepReport(
        r_values=r_values,
        flsd_curve=flsd_curve,
        delta_mae_curve=delta_curve,
        delta_max_curve=delta_max,
        epsilon1=epsilon1,
        recommended_r=recommended,
        p1_satisfied=p1,
        p2_flsd_ratio=float(flsd_curve[recommended] / max(flsd_curve[1], 1e-12)),
    )
