"""Sequential task training with replay strategies.

Strategies:

* ``sft``        sequential fine-tuning, no countermeasure (lower bound);
* ``flashcards`` rebuild pseudo-samples from the frozen previous model
                 just before each new task and add a weighted replay term;
* ``coreset``    keep a seeded uniform sample of real images per finished
                 task and replay those;
* ``joint``      fresh model trained on the union of all tasks so far
                 (upper bound).

Flashcards are constructed only from the latest model and discarded after
the task transition, so auxiliary storage stays at one set regardless of
how many tasks were trained before.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import autoencoder as ae
from . import data as data_mod
from .capture import FlashcardConfig, FlashcardSet, construct_flashcards
from .errors import ConfigError, DataError
from .metrics import MetricsMatrix, avg_mae, bwt, fwt
from .patterns import PatternSpec

STRATEGIES = ("flashcards", "sft", "joint", "coreset")


def replay_loss(model, current_batch, flashcard_batch=None, weight: float = 1.0):
    """Joint objective: MAE on current data plus ``weight`` x MAE on replay.

    Accepts canonical numpy batches or NCHW tensors; returns a scalar
    tensor so it can be differentiated directly.
    """
    if weight < 0:
        raise ConfigError("replay weight must be >= 0")
    cur = ae.to_model_input(current_batch)
    if len(cur) == 0:
        raise DataError("current batch is empty")
    loss = (model(cur) - cur).abs().mean()
    if flashcard_batch is not None and weight > 0:
        fb = ae.to_model_input(flashcard_batch)
        if len(fb) == 0:
            raise DataError("flashcard batch is empty but weight > 0")
        loss = loss + weight * (model(fb) - fb).abs().mean()
    return loss


@dataclass
class TaskSpec:
    dataset: str
    limit: Optional[int] = None
    test_limit: Optional[int] = None


@dataclass
class SequenceConfig:
    tasks: list
    strategy: str = "flashcards"
    replay_weight: float = 1.0
    n_flashcards: Optional[int] = None  # None: 10% of next task's samples
    flashcard_fraction: float = 0.1
    flashcard_r: int = 10
    pattern_kind: str = "maze"
    coreset_size: int = 0
    noise_factor: float = 0.0
    noisy_replay_inputs: bool = True
    arch: ae.AEConfig = field(default_factory=lambda: ae.AEConfig.from_name("Blk_4_fil_64"))
    hyper: ae.TrainHyper = field(default_factory=ae.TrainHyper)
    val_fraction: float = 0.1
    seed: int = 0
    cache_dir: Optional[str] = None

    def __post_init__(self):
        self.tasks = [
            t if isinstance(t, TaskSpec) else TaskSpec(t) for t in self.tasks
        ]
        if not self.tasks:
            raise ConfigError("a sequence needs at least one task")
        if self.strategy not in STRATEGIES:
            raise ConfigError(
                f"unknown strategy {self.strategy!r}; one of {STRATEGIES}"
            )
        if self.replay_weight < 0:
            raise ConfigError("replay_weight must be >= 0")
        if self.strategy == "coreset" and self.coreset_size <= 0:
            raise ConfigError("coreset strategy needs coreset_size > 0")
        if self.noise_factor < 0:
            raise ConfigError("noise_factor must be >= 0")


@dataclass
class StorageLedger:
    """Auxiliary-sample bookkeeping, one entry per task transition."""

    entries: list = field(default_factory=list)

    def record(self, transition: int, strategy: str, aux_samples: int) -> None:
        self.entries.append(
            {"transition": transition, "strategy": strategy,
             "aux_samples": int(aux_samples)}
        )

    @property
    def peak(self) -> int:
        return max((e["aux_samples"] for e in self.entries), default=0)


@dataclass
class SequenceResult:
    matrix: MetricsMatrix
    summary: dict
    reports: list
    ledger: StorageLedger
    checkpoints: list


def _noise_spec(config: SequenceConfig, tag: int) -> Optional[data_mod.NoiseSpec]:
    if config.noise_factor <= 0:
        return None
    return data_mod.NoiseSpec(config.noise_factor, seed=config.seed * 1000 + tag)


def _eval_row(model, tests, config) -> np.ndarray:
    """MAE of the model on every task's test set (noisy in, clean target
    when the sequence is a denoising one)."""
    row = np.empty(len(tests))
    for j, test in enumerate(tests):
        spec = _noise_spec(config, 500 + j)
        inputs = test.images if spec is None else data_mod.add_noise(test.images, spec)
        row[j] = ae.evaluate_mae(model, inputs, test.images)
    return row


def train_sequence(config: SequenceConfig, log=None,
                   out_dir: str | Path | None = None) -> SequenceResult:
    """Run one task sequence and fill the stage-by-task MAE matrix.

    With ``out_dir`` set, a checkpoint and a reconstruction grid are
    written after every task.
    """
    t00 = time.time()
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
    trains, vals, tests = [], [], []
    for i, task in enumerate(config.tasks):
        full = data_mod.load_dataset(
            task.dataset, "train", task.limit, config.cache_dir
        )
        tr, va = data_mod.train_val_split(full, config.val_fraction, config.seed + i)
        trains.append(tr)
        vals.append(va)
        tests.append(
            data_mod.load_dataset(task.dataset, "test", task.test_limit,
                                  config.cache_dir)
        )
    names = [t.dataset for t in config.tasks]
    n_tasks = len(names)

    random_init = ae.build_ae(config.arch, seed=config.seed)
    ref_vector = _eval_row(random_init, tests, config)

    model = ae.build_ae(config.arch, seed=config.seed)
    matrix = np.full((n_tasks, n_tasks), np.nan)
    ledger = StorageLedger()
    reports, checkpoints = [], []
    coreset_images: list[np.ndarray] = []

    for t in range(n_tasks):
        hyper = replace(config.hyper, seed=config.hyper.seed + t)
        noise = _noise_spec(config, t)
        replay = None
        flashcards: Optional[FlashcardSet] = None

        if config.strategy == "flashcards" and t > 0:
            n_flash = config.n_flashcards or max(
                1, int(round(config.flashcard_fraction * len(trains[t])))
            )
            flashcards = construct_flashcards(
                model,
                FlashcardConfig(
                    n_flashcards=n_flash,
                    iterations=config.flashcard_r,
                    pattern=PatternSpec(
                        kind=config.pattern_kind,
                        seed=config.seed * 100 + t,
                    ),
                ),
            )
            replay = flashcards.images
            ledger.record(t, config.strategy, len(replay))
        elif config.strategy == "coreset" and t > 0:
            replay = np.concatenate(coreset_images)
            ledger.record(t, config.strategy, len(replay))
        elif t > 0:
            ledger.record(t, config.strategy, 0)

        if config.strategy == "joint":
            model = ae.build_ae(config.arch, seed=config.seed)
            train_images = np.concatenate([s.images for s in trains[: t + 1]])
            val_images = np.concatenate([s.images for s in vals[: t + 1]])
            report = ae.train_ae(model, train_images, val_images, hyper, noise=noise)
        else:
            report = ae.train_ae(
                model,
                trains[t].images,
                vals[t].images,
                hyper,
                replay=replay,
                replay_weight=config.replay_weight if replay is not None else 0.0,
                noise=noise,
                noisy_replay_inputs=config.noisy_replay_inputs,
            )
        reports.append(report)
        # flashcards from the previous step are dropped here on purpose:
        # the next transition rebuilds them from the latest weights only.
        flashcards = None

        if config.strategy == "coreset":
            rng = np.random.default_rng(config.seed * 17 + t)
            pick = rng.choice(
                len(trains[t].images),
                size=min(config.coreset_size, len(trains[t].images)),
                replace=False,
            )
            coreset_images.append(trains[t].images[np.sort(pick)])

        matrix[t] = _eval_row(model, tests, config)
        if out_dir is not None:
            from . import plots

            ckpt = out_dir / f"task{t + 1}_{names[t]}.ckpt"
            ae.save_checkpoint(ckpt, model, config.arch.to_dict(),
                               report.history,
                               meta={"task": names[t], "stage": t + 1,
                                     "strategy": config.strategy})
            checkpoints.append(ckpt)
            spec = _noise_spec(config, 500 + t)
            shown = tests[t].images[:8]
            inputs = shown if spec is None else data_mod.add_noise(shown, spec)
            plots.save_recon_grid(
                out_dir / f"task{t + 1}_{names[t]}_recon.png",
                inputs, ae.forward(model, inputs),
                title=f"{config.strategy}: {names[t]} after stage {t + 1}",
            )
        if log:
            log({"task": names[t], "row": matrix[t].tolist()})

    mm = MetricsMatrix(matrix, names, "mae", ref_vector)
    summary = {
        "strategy": config.strategy,
        "tasks": names,
        "avg_mae": avg_mae(mm),
        "bwt": bwt(mm) if n_tasks >= 2 else None,
        "fwt": fwt(mm) if n_tasks >= 2 else None,
        "wall_seconds": time.time() - t00,
    }
    return SequenceResult(mm, summary, reports, ledger, checkpoints)


def train_from_flashcards(
    flashcards: FlashcardSet | np.ndarray,
    config: ae.AEConfig,
    hyper: ae.TrainHyper,
    eval_images: np.ndarray | None = None,
) -> ae.TrainedModelReport:
    """Train a fresh model from scratch on flashcards alone.

    The target architecture may differ from the flashcards' source model.
    When ``eval_images`` is given the report carries the MAE on that set
    (typically the original task's test data).
    """
    images = flashcards.images if isinstance(flashcards, FlashcardSet) else flashcards
    if len(images) < 2:
        raise DataError("need at least 2 flashcards to split off validation")
    holdout = max(1, int(round(0.1 * len(images))))
    perm = np.random.default_rng(hyper.seed).permutation(len(images))
    val = images[np.sort(perm[:holdout])]
    train = images[np.sort(perm[holdout:])]
    model = ae.build_ae(config, seed=hyper.seed)
    report = ae.train_ae(model, train, val, hyper)
    if eval_images is not None:
        report.eval_mae = ae.evaluate_mae(model, eval_images)
    return report
