"""Dataset ingestion and canonicalization.

Every image batch in this package is a float32 array of shape
(N, 32, 32, 3) with values in [0, 1], channels last.  Grayscale sources
are bilinearly resized and the single channel is copied to all three.

Registered datasets come in three flavours:

* procedural sets (``synthetic-blobs``, ``synthetic-stripes``,
  ``synthetic-checkers``) that are generated on the fly from fixed seeds
  and need no files on disk;
* ``digits`` (the scikit-learn handwritten digits, bundled offline);
* file-backed sets (``mnist``, ``fashion_mnist``, ``cifar10``, ``svhn``,
  ``omniglot``) read from a cache directory the user populates; nothing
  is downloaded.

A path to a directory of images is also accepted as a dataset name.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from PIL import Image

from .errors import ConfigError, DataError
from . import tensorio

CANONICAL_SHAPE = (32, 32, 3)
ENV_DATA_DIR = "FLASHCARDS_DATA_DIR"

# Rec. 601 luma weights, used for the saturation axis of session jitter.
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114], dtype=np.float32)


def data_dir(override: str | os.PathLike | None = None) -> Path:
    """Resolve the dataset cache directory (flag > env > default)."""
    if override is not None:
        return Path(override)
    env = os.environ.get(ENV_DATA_DIR)
    if env:
        return Path(env)
    return Path.home() / ".cache" / "flashcards"


@dataclass
class NoiseSpec:
    """Additive Gaussian pixel noise: ``clip(x + factor * N(0, 1), 0, 1)``."""

    factor: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.factor < 0:
            raise ConfigError(f"noise factor must be >= 0, got {self.factor}")


@dataclass
class SessionJitter:
    """Brightness/saturation offsets describing one acquisition session."""

    brightness: float = 0.0
    saturation: float = 0.0

    def __post_init__(self):
        for name in ("brightness", "saturation"):
            v = getattr(self, name)
            if not -1.0 <= v <= 1.0:
                raise ConfigError(f"{name} jitter must be in [-1, 1], got {v}")


@dataclass
class LabeledImageSet:
    """A canonical image batch plus optional integer class labels."""

    images: np.ndarray
    labels: Optional[np.ndarray]
    name: str
    split: str

    def __post_init__(self):
        validate_batch(self.images, what=f"{self.name}/{self.split}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if len(self.labels) != len(self.images):
                raise DataError(
                    f"{self.name}: {len(self.labels)} labels for "
                    f"{len(self.images)} images"
                )

    def __len__(self) -> int:
        return len(self.images)

    @property
    def num_classes(self) -> int:
        if self.labels is None:
            raise DataError(f"{self.name} has no labels")
        return int(self.labels.max()) + 1


def validate_batch(batch: np.ndarray, what: str = "batch") -> np.ndarray:
    """Assert the canonical contract; raises DataError on any violation."""
    if not isinstance(batch, np.ndarray):
        raise DataError(f"{what}: expected ndarray, got {type(batch).__name__}")
    if batch.ndim != 4 or batch.shape[1:] != CANONICAL_SHAPE:
        raise DataError(f"{what}: shape {batch.shape}, want (N, 32, 32, 3)")
    if batch.dtype != np.float32:
        raise DataError(f"{what}: dtype {batch.dtype}, want float32")
    if not np.isfinite(batch).all():
        raise DataError(f"{what}: contains non-finite values")
    if batch.size and (batch.min() < 0.0 or batch.max() > 1.0):
        raise DataError(
            f"{what}: values outside [0, 1] (min {batch.min():.4g}, "
            f"max {batch.max():.4g})"
        )
    return batch


def _resize_channel(plane: np.ndarray, size: int = 32) -> np.ndarray:
    img = Image.fromarray(np.asarray(plane, dtype=np.float32), mode="F")
    return np.asarray(img.resize((size, size), Image.BILINEAR), dtype=np.float32)


def to_canonical(images: np.ndarray) -> np.ndarray:
    """Convert an image stack to the canonical (N, 32, 32, 3) float batch.

    Accepts (N, H, W), (N, H, W, 1) or (N, H, W, 3); uint8 input is scaled
    by 1/255.  Already-canonical input is returned unchanged, so the
    function is idempotent.
    """
    arr = np.asarray(images)
    if arr.ndim == 3:
        arr = arr[..., None]
    if arr.ndim != 4 or arr.shape[-1] not in (1, 3):
        raise DataError(f"cannot canonicalize shape {arr.shape}")
    if arr.dtype == np.uint8:
        arr = arr.astype(np.float32) / 255.0
    else:
        arr = arr.astype(np.float32, copy=False)
    if arr.shape[1:3] != (32, 32):
        resized = np.empty(arr.shape[:1] + (32, 32, arr.shape[-1]), np.float32)
        for i in range(arr.shape[0]):
            for c in range(arr.shape[-1]):
                resized[i, :, :, c] = _resize_channel(arr[i, :, :, c])
        arr = resized
    if arr.shape[-1] == 1:
        arr = np.repeat(arr, 3, axis=-1)
    arr = np.clip(arr, 0.0, 1.0).astype(np.float32)
    return validate_batch(arr)


def train_val_split(
    dataset: LabeledImageSet, val_fraction: float, seed: int
) -> tuple[LabeledImageSet, LabeledImageSet]:
    """Disjoint, exhaustive, seed-deterministic train/val partition."""
    if not 0.0 < val_fraction < 1.0:
        raise ConfigError(f"val_fraction must be in (0, 1), got {val_fraction}")
    n = len(dataset)
    n_val = int(round(n * val_fraction))
    if n_val == 0 or n_val == n:
        raise DataError(
            f"{dataset.name}: {n} samples cannot yield non-empty splits "
            f"at fraction {val_fraction}"
        )
    perm = np.random.default_rng(seed).permutation(n)
    val_idx, train_idx = np.sort(perm[:n_val]), np.sort(perm[n_val:])

    def take(idx, split):
        return LabeledImageSet(
            images=dataset.images[idx],
            labels=None if dataset.labels is None else dataset.labels[idx],
            name=dataset.name,
            split=split,
        )

    return take(train_idx, "train"), take(val_idx, "val")


def add_noise(batch: np.ndarray, spec: NoiseSpec) -> np.ndarray:
    """Additive clipped Gaussian noise, deterministic given the spec seed."""
    validate_batch(batch)
    rng = np.random.default_rng(spec.seed)
    noisy = batch + spec.factor * rng.standard_normal(batch.shape, dtype=np.float32)
    return np.clip(noisy, 0.0, 1.0)


def apply_session_jitter(batch: np.ndarray, jitter: SessionJitter) -> np.ndarray:
    """Shift brightness and scale saturation about the per-pixel luma."""
    validate_batch(batch)
    out = batch
    if jitter.saturation != 0.0:
        gray = (out * LUMA_WEIGHTS).sum(axis=-1, keepdims=True)
        out = gray + (1.0 + jitter.saturation) * (out - gray)
    if jitter.brightness != 0.0:
        out = out + jitter.brightness
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def select_classes(
    dataset: LabeledImageSet,
    classes: list[int],
    limit: int | None = None,
    remap: bool = True,
) -> LabeledImageSet:
    """Keep only the given classes, optionally remapping labels to 0..k-1."""
    if dataset.labels is None:
        raise DataError(f"{dataset.name} has no labels to select on")
    mask = np.isin(dataset.labels, classes)
    images, labels = dataset.images[mask], dataset.labels[mask]
    if remap:
        lut = {c: i for i, c in enumerate(classes)}
        labels = np.array([lut[int(v)] for v in labels], dtype=np.int64)
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    return LabeledImageSet(images, labels, dataset.name, dataset.split)


# ---------------------------------------------------------------------------
# procedural datasets
# ---------------------------------------------------------------------------

_SYNTH_SIZES = {"train": 10000, "test": 2000}
_SPLIT_CODE = {"train": 0, "test": 1}

_PALETTE = np.array(
    [
        [0.90, 0.15, 0.15],
        [0.15, 0.80, 0.20],
        [0.15, 0.25, 0.90],
        [0.90, 0.80, 0.10],
        [0.80, 0.15, 0.85],
        [0.10, 0.80, 0.85],
        [0.95, 0.55, 0.10],
        [0.55, 0.35, 0.15],
        [0.45, 0.95, 0.55],
        [0.60, 0.60, 0.95],
    ],
    dtype=np.float32,
)

_YY, _XX = np.meshgrid(np.arange(32, dtype=np.float32),
                       np.arange(32, dtype=np.float32), indexing="ij")


def _gradient_background(rng: np.random.Generator) -> np.ndarray:
    c0 = rng.uniform(0.0, 1.0, 3).astype(np.float32)
    c1 = rng.uniform(0.0, 1.0, 3).astype(np.float32)
    axis = rng.integers(3)
    if axis == 0:
        t = _XX / 31.0
    elif axis == 1:
        t = _YY / 31.0
    else:
        t = (_XX + _YY) / 62.0
    return c0 + t[..., None] * (c1 - c0)


def _blob_image(rng: np.random.Generator, label: int) -> np.ndarray:
    img = _gradient_background(rng) * 0.5
    color = _PALETTE[label] + rng.uniform(-0.08, 0.08, 3).astype(np.float32)
    for _ in range(1 + label // 2):
        cy, cx = rng.uniform(4, 28, 2)
        sigma = rng.uniform(2.0, 5.0)
        bump = np.exp(-((_YY - cy) ** 2 + (_XX - cx) ** 2) / (2 * sigma**2))
        img = img + bump[..., None] * color
    return img


def _stripe_image(rng: np.random.Generator, label: int) -> np.ndarray:
    angle = np.deg2rad(label * 18.0 + rng.uniform(-5.0, 5.0))
    freq = rng.uniform(2.0, 6.0)
    phase = rng.uniform(0.0, 2 * np.pi)
    wave = 0.5 + 0.5 * np.sin(
        2 * np.pi * freq * (_XX * np.cos(angle) + _YY * np.sin(angle)) / 32.0 + phase
    )
    c0 = rng.uniform(0.0, 1.0, 3).astype(np.float32)
    c1 = rng.uniform(0.0, 1.0, 3).astype(np.float32)
    return c0 + wave[..., None] * (c1 - c0)


_CHECKER_PERIODS = [2, 3, 4, 5, 6, 8, 10, 12, 14, 16]


def _checker_image(rng: np.random.Generator, label: int) -> np.ndarray:
    period = _CHECKER_PERIODS[label]
    oy, ox = rng.integers(0, period, 2)
    cells = ((_YY + oy) // period + (_XX + ox) // period) % 2
    c0 = rng.uniform(0.0, 1.0, 3).astype(np.float32)
    c1 = rng.uniform(0.0, 1.0, 3).astype(np.float32)
    return c0 + cells[..., None] * (c1 - c0)


_SYNTH_PAINTERS: dict[str, tuple[int, Callable]] = {
    "synthetic-blobs": (101, _blob_image),
    "synthetic-stripes": (202, _stripe_image),
    "synthetic-checkers": (303, _checker_image),
}


def _load_synthetic(name: str, split: str, limit: int | None) -> LabeledImageSet:
    base_seed, painter = _SYNTH_PAINTERS[name]
    available = _SYNTH_SIZES[split]
    count = available if limit is None else limit
    if count > available:
        raise DataError(
            f"{name}/{split}: requested {count} samples, only {available} available"
        )
    images = np.empty((count, 32, 32, 3), dtype=np.float32)
    labels = np.empty(count, dtype=np.int64)
    for i in range(count):
        rng = np.random.default_rng([base_seed, _SPLIT_CODE[split], i])
        labels[i] = i % 10
        images[i] = painter(rng, int(labels[i]))
    images = np.clip(images, 0.0, 1.0)
    return LabeledImageSet(images, labels, name, split)


def _load_digits(split: str, limit: int | None) -> LabeledImageSet:
    from sklearn.datasets import load_digits

    bunch = load_digits()
    images = bunch.images.astype(np.float32) / 16.0
    labels = bunch.target.astype(np.int64)
    perm = np.random.default_rng(1797).permutation(len(images))
    cut = int(0.8 * len(images))
    idx = perm[:cut] if split == "train" else perm[cut:]
    if limit is not None:
        if limit > len(idx):
            raise DataError(
                f"digits/{split}: requested {limit}, only {len(idx)} available"
            )
        idx = idx[:limit]
    return LabeledImageSet(to_canonical(images[idx]), labels[idx], "digits", split)


# ---------------------------------------------------------------------------
# file-backed datasets (user supplies the raw files; nothing is downloaded)
# ---------------------------------------------------------------------------


def _torchvision_loader(name: str, split: str, root: Path):
    import torchvision.datasets as tvd

    train = split == "train"
    if name == "mnist":
        return tvd.MNIST(root, train=train, download=False)
    if name == "fashion_mnist":
        return tvd.FashionMNIST(root, train=train, download=False)
    if name == "cifar10":
        return tvd.CIFAR10(root, train=train, download=False)
    if name == "svhn":
        return tvd.SVHN(root / "svhn", split="train" if train else "test",
                        download=False)
    if name == "omniglot":
        return tvd.Omniglot(root, background=train, download=False)
    raise DataError(f"no torchvision loader for {name}")


def _load_file_backed(
    name: str, split: str, limit: int | None, root: Path
) -> LabeledImageSet:
    cache = root / "canonical" / f"{name}.{split}.fct"
    labels_file = cache.with_suffix(".labels.npy")
    if cache.exists():
        images = tensorio.read_tensor(cache)
        labels = np.load(labels_file) if labels_file.exists() else None
    else:
        try:
            ds = _torchvision_loader(name, split, root)
        except RuntimeError as exc:
            raise DataError(
                f"{name}/{split}: raw files not found under {root} "
                f"(supply them out of band; downloads are not attempted): {exc}"
            ) from exc
        stack, labels_list = [], []
        for img, target in ds:
            stack.append(np.asarray(img))
            labels_list.append(-1 if target is None else int(target))
        images = to_canonical(np.stack(stack))
        labels = np.asarray(labels_list, dtype=np.int64)
        if (labels < 0).any():
            labels = None
        tensorio.write_tensor(cache, images)
        if labels is not None:
            np.save(labels_file, labels)
    if limit is not None:
        if limit > len(images):
            raise DataError(
                f"{name}/{split}: requested {limit}, only {len(images)} available"
            )
        images = images[:limit]
        labels = None if labels is None else labels[:limit]
    return LabeledImageSet(images, labels, name, split)


def _load_image_dir(path: Path, limit: int | None) -> LabeledImageSet:
    exts = {".png", ".jpg", ".jpeg", ".bmp"}
    subdirs = sorted(p for p in path.iterdir() if p.is_dir())
    files: list[tuple[Path, int]] = []
    if subdirs and all(
        any(f.suffix.lower() in exts for f in d.iterdir()) for d in subdirs
    ):
        for cls, d in enumerate(subdirs):
            files += [(f, cls) for f in sorted(d.iterdir())
                      if f.suffix.lower() in exts]
        labeled = True
    else:
        files = [(f, -1) for f in sorted(path.iterdir())
                 if f.suffix.lower() in exts]
        labeled = False
    if not files:
        raise DataError(f"{path}: no image files found")
    if limit is not None:
        if limit > len(files):
            raise DataError(f"{path}: requested {limit}, only {len(files)} files")
        files = files[:limit]
    stack = []
    for fpath, _ in files:
        try:
            with Image.open(fpath) as img:
                mode = "L" if img.mode in ("1", "L", "I", "F") else "RGB"
                arr = np.asarray(img.convert(mode))
        except Exception as exc:
            raise DataError(f"cannot read image {fpath}: {exc}") from exc
        stack.append(to_canonical(arr[None]))  # per file: sizes may differ
    images = np.concatenate(stack)
    labels = np.array([c for _, c in files], dtype=np.int64) if labeled else None
    return LabeledImageSet(images, labels, str(path), "train")


FILE_BACKED = ("mnist", "fashion_mnist", "cifar10", "svhn", "omniglot")
REGISTERED = tuple(sorted(_SYNTH_PAINTERS)) + ("digits",) + FILE_BACKED


def load_dataset(
    name: str,
    split: str = "train",
    limit: int | None = None,
    cache_dir: str | os.PathLike | None = None,
) -> LabeledImageSet:
    """Load a registered dataset (or a directory of images), canonicalized."""
    if split not in ("train", "test"):
        raise ConfigError(
            f"split must be 'train' or 'test' (use train_val_split for "
            f"validation), got {split!r}"
        )
    if limit is not None and limit <= 0:
        raise ConfigError(f"limit must be positive, got {limit}")
    name = name.replace("fashion-mnist", "fashion_mnist")
    if name in _SYNTH_PAINTERS:
        return _load_synthetic(name, split, limit)
    if name == "digits":
        return _load_digits(split, limit)
    if name in FILE_BACKED:
        return _load_file_backed(name, split, limit, data_dir(cache_dir))
    path = Path(name)
    if path.is_dir():
        return _load_image_dir(path, limit)
    raise DataError(
        f"unknown dataset {name!r}; registered: {', '.join(REGISTERED)} "
        f"(or pass a directory of images)"
    )
