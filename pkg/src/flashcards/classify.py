"""Classification with flashcard replay.

Two scenarios:

* task-incremental: one shared encoder, one output head per task.  After
  each task an autoencoder sharing the encoder architecture is warm-started
  from the classifier's encoder weights and trained; flashcards built from
  it carry soft scores and latent targets of the old classifier into the
  next task as a distillation term.
* single-task new-instance: fixed label set, per-session brightness and
  saturation drift.  Flashcards from a per-session autoencoder are labeled
  with the previous classifier's softmax and replayed as soft targets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import autoencoder as ae
from . import data as data_mod
from .capture import FlashcardConfig, construct_flashcards
from .data import LabeledImageSet, SessionJitter
from .errors import ConfigError, DataError
from .metrics import MetricsMatrix
from .patterns import PatternSpec


@dataclass
class ClassifierConfig:
    conv_channels: tuple = (16, 32, 64, 128, 254)
    conv_strides: tuple = (1, 2, 2, 2, 2)
    hidden_dim: int = 2000
    latent_dim: int = 128
    input_shape: tuple = (32, 32, 3)

    def __post_init__(self):
        self.conv_channels = tuple(self.conv_channels)
        self.conv_strides = tuple(self.conv_strides)
        if len(self.conv_channels) != len(self.conv_strides):
            raise ConfigError("conv_channels and conv_strides lengths differ")
        side = self.input_shape[0]
        for s in self.conv_strides:
            side = math.ceil(side / s)
        if side < 1:
            raise ConfigError("conv strides underflow the input")
        self.final_side = side

    @property
    def flatten_dim(self) -> int:
        return self.conv_channels[-1] * self.final_side**2


class EncoderNet(nn.Module):
    """Conv trunk (batchnorm + ReLU) followed by two dense layers."""

    def __init__(self, config: ClassifierConfig):
        super().__init__()
        layers = []
        cin = config.input_shape[2]
        for ch, stride in zip(config.conv_channels, config.conv_strides):
            layers += [
                nn.Conv2d(cin, ch, 3, stride=stride, padding=1),
                nn.BatchNorm2d(ch),
                nn.ReLU(),
            ]
            cin = ch
        self.conv = nn.Sequential(*layers)
        self.fc = nn.Sequential(
            nn.Flatten(),
            nn.Linear(config.flatten_dim, config.hidden_dim),
            nn.ReLU(),
            nn.Linear(config.hidden_dim, config.latent_dim),
            nn.ReLU(),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc(self.conv(x))


class MultiHeadClassifier(nn.Module):
    def __init__(self, config: ClassifierConfig, seed: int = 0):
        super().__init__()
        self.config = config
        self.encoder = EncoderNet(config)
        self.heads = nn.ModuleDict()
        self.head_order: list[str] = []
        ae.init_parameters(self, seed)

    def add_head(self, name: str, num_classes: int, seed: int = 0) -> None:
        name = str(name)
        if name in self.heads:
            raise ConfigError(f"head {name!r} already exists")
        head = nn.Linear(self.config.latent_dim, num_classes)
        ae.init_parameters(head, seed)
        self.heads[name] = head
        self.head_order.append(name)

    def latent(self, x: torch.Tensor) -> torch.Tensor:
        return self.encoder(x)

    def forward(self, x: torch.Tensor, head: str) -> torch.Tensor:
        return self.heads[str(head)](self.encoder(x))

    def all_softmax(self, x: torch.Tensor) -> dict:
        z = self.encoder(x)
        return {
            name: F.softmax(self.heads[name](z), dim=1)
            for name in self.head_order
        }


class ClassifierAE(nn.Module):
    """Autoencoder whose encoder mirrors the classifier encoder exactly."""

    def __init__(self, config: ClassifierConfig, seed: int = 0):
        super().__init__()
        self.config = config
        self.encoder = EncoderNet(config)
        dec_fc = [
            nn.Linear(config.latent_dim, config.hidden_dim),
            nn.ReLU(),
            nn.Linear(config.hidden_dim, config.flatten_dim),
            nn.ReLU(),
        ]
        self.dec_fc = nn.Sequential(*dec_fc)
        blocks = []
        chans = list(config.conv_channels)
        strides = list(config.conv_strides)
        cin = chans[-1]
        for ch, stride in zip(reversed(chans[:-1]), reversed(strides[1:])):
            if stride == 2:
                blocks.append(nn.Upsample(scale_factor=2, mode="nearest"))
            blocks += [
                nn.Conv2d(cin, ch, 3, stride=1, padding=1),
                nn.BatchNorm2d(ch),
                nn.ReLU(),
            ]
            cin = ch
        if strides[0] == 2:
            blocks.append(nn.Upsample(scale_factor=2, mode="nearest"))
        blocks += [
            nn.Conv2d(cin, config.input_shape[2], 3, stride=1, padding=1),
            nn.Sigmoid(),
        ]
        self.dec_conv = nn.Sequential(*blocks)
        ae.init_parameters(self, seed)

    def copy_encoder_from(self, classifier: MultiHeadClassifier) -> None:
        self.encoder.load_state_dict(classifier.encoder.state_dict())

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        z = self.dec_fc(self.encoder(x))
        side = self.config.final_side
        z = z.reshape(len(z), self.config.conv_channels[-1], side, side)
        return self.dec_conv(z)


@dataclass
class DistillTargets:
    """Flashcards annotated by the previous classifier."""

    flashcard_images: np.ndarray
    soft_scores: dict  # head name -> (N, classes) probability rows
    latent_targets: np.ndarray
    weight: float = 1.0

    def __post_init__(self):
        n = len(self.flashcard_images)
        if len(self.latent_targets) != n:
            raise DataError("latent targets not aligned with flashcards")
        for name, scores in self.soft_scores.items():
            if len(scores) != n:
                raise DataError(f"soft scores for head {name} not aligned")
            sums = np.asarray(scores).sum(axis=1)
            if np.abs(sums - 1.0).max() > 1e-5:
                raise DataError(f"soft scores for head {name} do not sum to 1")


def _batch_stream(n: int, batch_size: int, gen: torch.Generator):
    """Endless stream of index batches, reshuffled each cycle."""
    while True:
        order = torch.randperm(n, generator=gen)
        for i in range(0, n, batch_size):
            yield order[i:i + batch_size]


def accuracy_with_id(clf: MultiHeadClassifier, head: str,
                     test: LabeledImageSet) -> float:
    clf.eval()
    x = ae.to_model_input(test.images)
    y = torch.from_numpy(test.labels)
    hits = 0
    with torch.no_grad():
        for i in range(0, len(x), 512):
            pred = clf(x[i:i + 512], head).argmax(dim=1)
            hits += int((pred == y[i:i + 512]).sum())
    return 100.0 * hits / len(x)


def accuracy_without_id(clf: MultiHeadClassifier, head: str,
                        test: LabeledImageSet) -> float:
    """Argmax over the concatenated softmax of every head; picking the
    wrong head counts as an error."""
    clf.eval()
    x = ae.to_model_input(test.images)
    y = torch.from_numpy(test.labels)
    offsets = {}
    off = 0
    for name in clf.head_order:
        offsets[name] = off
        off += clf.heads[name].out_features
    hits = 0
    with torch.no_grad():
        for i in range(0, len(x), 512):
            sm = clf.all_softmax(x[i:i + 512])
            stacked = torch.cat([sm[name] for name in clf.head_order], dim=1)
            flat = stacked.argmax(dim=1)
            target = offsets[str(head)] + y[i:i + 512]
            hits += int((flat == target).sum())
    return 100.0 * hits / len(x)


# ---------------------------------------------------------------------------
# task-incremental learning
# ---------------------------------------------------------------------------


@dataclass
class TaskILOptions:
    iterations: int = 5000
    ae_iterations: Optional[int] = None  # defaults to `iterations`
    batch_size: int = 256
    learning_rate: float = 1e-4
    distill_weight: float = 1.0
    n_flashcards: int = 1000
    flashcard_r: int = 10
    pattern_kind: str = "maze"
    seed: int = 0

    def __post_init__(self):
        if self.ae_iterations is None:
            self.ae_iterations = self.iterations


@dataclass
class TaskILReport:
    with_id: MetricsMatrix
    without_id: MetricsMatrix


def _train_classifier_steps(
    clf: MultiHeadClassifier,
    head: str,
    train: LabeledImageSet,
    opts: TaskILOptions,
    distill: Optional[DistillTargets],
) -> None:
    x = ae.to_model_input(train.images)
    y = torch.from_numpy(train.labels)
    gen = torch.Generator().manual_seed(opts.seed + 13 * len(clf.head_order))
    stream = _batch_stream(len(x), opts.batch_size, gen)
    opt = torch.optim.Adam(clf.parameters(), lr=opts.learning_rate)

    d_x = d_lat = None
    d_soft: dict = {}
    d_stream = None
    if distill is not None and distill.weight > 0:
        d_x = ae.to_model_input(distill.flashcard_images)
        d_lat = torch.from_numpy(np.asarray(distill.latent_targets, np.float32))
        d_soft = {
            name: torch.from_numpy(np.asarray(s, np.float32))
            for name, s in distill.soft_scores.items()
        }
        d_stream = _batch_stream(len(d_x), opts.batch_size, gen)

    clf.train()
    for _ in range(opts.iterations):
        idx = next(stream)
        opt.zero_grad()
        loss = F.cross_entropy(clf(x[idx], head), y[idx])
        if d_stream is not None:
            didx = next(d_stream)
            z = clf.latent(d_x[didx])
            distill_term = F.mse_loss(z, d_lat[didx])
            for name, soft in d_soft.items():
                logp = F.log_softmax(clf.heads[name](z), dim=1)
                distill_term = distill_term + F.kl_div(
                    logp, soft[didx], reduction="batchmean"
                )
            loss = loss + distill.weight * distill_term
        loss.backward()
        opt.step()


def _train_classifier_ae_steps(
    model: ClassifierAE,
    images: np.ndarray,
    opts: TaskILOptions,
    replay: Optional[np.ndarray],
) -> None:
    """Mean-squared-error reconstruction training for the encoder-sharing
    autoencoder, mixing in replay batches at equal counts."""
    x = ae.to_model_input(images)
    gen = torch.Generator().manual_seed(opts.seed + 7)
    stream = _batch_stream(len(x), opts.batch_size, gen)
    r_stream = None
    if replay is not None and len(replay):
        xr = ae.to_model_input(replay)
        r_stream = _batch_stream(len(xr), opts.batch_size, gen)
    opt = torch.optim.Adam(model.parameters(), lr=opts.learning_rate)
    model.train()
    for _ in range(opts.ae_iterations):
        idx = next(stream)
        opt.zero_grad()
        batch = x[idx]
        loss = F.mse_loss(model(batch), batch)
        if r_stream is not None:
            rb = xr[next(r_stream)]
            loss = loss + opts.distill_weight * F.mse_loss(model(rb), rb)
        loss.backward()
        opt.step()


def train_task_il(
    tasks: list,
    config: ClassifierConfig,
    opts: TaskILOptions,
) -> TaskILReport:
    """Task-incremental training over ``[(train, test), ...]`` pairs."""
    if not tasks:
        raise ConfigError("need at least one task")
    for tr, te in tasks:
        if tr.labels is None or te.labels is None:
            raise DataError(f"task {tr.name} is missing labels")

    clf = MultiHeadClassifier(config, seed=opts.seed)
    n = len(tasks)
    with_id = np.full((n, n), np.nan)
    without_id = np.full((n, n), np.nan)
    distill: Optional[DistillTargets] = None
    prev_flash: Optional[np.ndarray] = None

    for t, (train, _) in enumerate(tasks):
        clf.add_head(str(t), train.num_classes, seed=opts.seed + 101 + t)
        _train_classifier_steps(clf, str(t), train, opts, distill)

        for j in range(t + 1):
            with_id[t, j] = accuracy_with_id(clf, str(j), tasks[j][1])
            without_id[t, j] = accuracy_without_id(clf, str(j), tasks[j][1])

        if t < n - 1:
            helper = ClassifierAE(config, seed=opts.seed + 31 + t)
            helper.copy_encoder_from(clf)
            _train_classifier_ae_steps(helper, train.images, opts, prev_flash)
            cards = construct_flashcards(
                helper,
                FlashcardConfig(
                    n_flashcards=opts.n_flashcards,
                    iterations=opts.flashcard_r,
                    pattern=PatternSpec(kind=opts.pattern_kind,
                                        seed=opts.seed * 100 + t),
                ),
            )
            clf.eval()
            fx = ae.to_model_input(cards.images)
            with torch.no_grad():
                soft = {
                    name: s.numpy().astype(np.float64)
                    for name, s in clf.all_softmax(fx).items()
                }
                lat = clf.latent(fx).numpy()
            soft = {k: v / v.sum(axis=1, keepdims=True) for k, v in soft.items()}
            distill = DistillTargets(
                flashcard_images=cards.images,
                soft_scores=soft,
                latent_targets=lat,
                weight=opts.distill_weight,
            )
            prev_flash = cards.images

    names = [tr.name for tr, _ in tasks]
    return TaskILReport(
        with_id=MetricsMatrix(with_id, names, "accuracy"),
        without_id=MetricsMatrix(without_id, names, "accuracy"),
    )


# ---------------------------------------------------------------------------
# single-task new-instance learning
# ---------------------------------------------------------------------------


@dataclass
class STNILOptions:
    epochs: int = 20
    batch_size: int = 64
    learning_rate: float = 1e-3
    momentum: float = 0.9
    replay_weight: float = 1.0
    n_flashcards: int = 1000
    flashcard_r: int = 10
    pattern_kind: str = "maze"
    ae_config: ae.AEConfig = field(
        default_factory=lambda: ae.AEConfig.from_name("Blk_4_fil_64"))
    ae_epochs: int = 20
    use_flashcards: bool = True
    seed: int = 0


def _train_classifier_epochs(
    clf: MultiHeadClassifier,
    head: str,
    images: np.ndarray,
    labels: np.ndarray,
    opts: STNILOptions,
    soft_cards: Optional[tuple],
    session: int,
) -> None:
    x = ae.to_model_input(images)
    y = torch.from_numpy(labels)
    gen = torch.Generator().manual_seed(opts.seed + 997 * session)
    opt = torch.optim.SGD(clf.parameters(), lr=opts.learning_rate,
                          momentum=opts.momentum)
    f_stream = fx = fsoft = None
    if soft_cards is not None:
        f_images, f_scores = soft_cards
        fx = ae.to_model_input(f_images)
        fsoft = torch.from_numpy(np.asarray(f_scores, np.float32))
        f_stream = _batch_stream(len(fx), opts.batch_size, gen)
    clf.train()
    steps = math.ceil(len(x) / opts.batch_size)
    for _ in range(opts.epochs):
        order = torch.randperm(len(x), generator=gen)
        for s in range(steps):
            idx = order[s * opts.batch_size:(s + 1) * opts.batch_size]
            opt.zero_grad()
            loss = F.cross_entropy(clf(x[idx], head), y[idx])
            if f_stream is not None:
                fidx = next(f_stream)
                logp = F.log_softmax(clf(fx[fidx], head), dim=1)
                loss = loss + opts.replay_weight * F.kl_div(
                    logp, fsoft[fidx], reduction="batchmean"
                )
            loss.backward()
            opt.step()


def train_st_nil(
    train: LabeledImageSet,
    test: LabeledImageSet,
    sessions: list,
    config: ClassifierConfig,
    opts: STNILOptions,
) -> dict:
    """Session-by-session learning on drifted instances of one task.

    Returns per-session accuracy on the fixed test set (session-1
    appearance).
    """
    if len(sessions) < 2:
        raise ConfigError("need at least 2 sessions for instance learning")
    if train.labels is None:
        raise DataError("instance learning needs labels")
    sessions = [
        s if isinstance(s, SessionJitter) else SessionJitter(*s) for s in sessions
    ]

    n_sessions = len(sessions)
    perm = np.random.default_rng(opts.seed).permutation(len(train))
    chunk_idx = np.array_split(perm, n_sessions)
    session_sets = [
        (
            data_mod.apply_session_jitter(train.images[np.sort(ix)], sessions[s]),
            train.labels[np.sort(ix)],
        )
        for s, ix in enumerate(chunk_idx)
    ]
    test_images = data_mod.apply_session_jitter(test.images, sessions[0])

    clf = MultiHeadClassifier(config, seed=opts.seed)
    clf.add_head("main", train.num_classes, seed=opts.seed + 1)
    ae_model = ae.build_ae(opts.ae_config, seed=opts.seed)
    ae_hyper = ae.TrainHyper(
        epochs=opts.ae_epochs,
        batch_size=min(128, max(2, len(session_sets[0][0]) // 4)),
        seed=opts.seed,
    )

    accuracies = []
    cards_images = None
    soft_cards = None
    test_eval = LabeledImageSet(test_images, test.labels, test.name, "test")

    for s in range(n_sessions):
        images, labels = session_sets[s]
        if opts.use_flashcards and s > 0:
            cards = construct_flashcards(
                ae_model,
                FlashcardConfig(
                    n_flashcards=opts.n_flashcards,
                    iterations=opts.flashcard_r,
                    pattern=PatternSpec(kind=opts.pattern_kind,
                                        seed=opts.seed * 100 + s),
                ),
            )
            clf.eval()
            with torch.no_grad():
                scores = F.softmax(
                    clf(ae.to_model_input(cards.images), "main"), dim=1
                ).numpy()
            soft_cards = (cards.images, scores)
            cards_images = cards.images

        _train_classifier_epochs(clf, "main", images, labels, opts,
                                 soft_cards if opts.use_flashcards else None, s)
        accuracies.append(accuracy_with_id(clf, "main", test_eval))

        if opts.use_flashcards and s < n_sessions - 1:
            tr, va = data_mod.train_val_split(
                LabeledImageSet(images, None, train.name, "train"),
                0.1,
                opts.seed + s,
            )
            ae.train_ae(
                ae_model,
                tr.images,
                va.images,
                ae_hyper,
                replay=cards_images,
                replay_weight=opts.replay_weight if cards_images is not None else 0.0,
            )

    return {
        "sessions": [(s.brightness, s.saturation) for s in sessions],
        "accuracies": accuracies,
        "use_flashcards": opts.use_flashcards,
    }
