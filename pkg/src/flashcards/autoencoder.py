"""Convolutional autoencoder family ``Blk_<blocks>_fil_<filters>``.

The encoder is a 3x3 conv stem, ``num_blocks`` stride-2 convs and a
bottleneck conv, all tanh.  The decoder mirrors it with nearest-neighbour
upsampling (upsample + conv avoids checkerboard artifacts) and a sigmoid
output conv, so reconstructions live in [0, 1] like the data.  The latent
code is the flattened bottleneck feature map: for ``Blk_4_fil_64`` that is
2 x 2 x 64 = 256 activations in (-1, 1).
"""

from __future__ import annotations

import copy
import json
import math
import zipfile
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import torch
import torch.nn as nn

from .data import NoiseSpec, validate_batch
from .errors import ConfigError, DataError, NumericError
from .tensorio import sha256_bytes

CHECKPOINT_VERSION = 1


@dataclass
class AEConfig:
    """Architecture knobs for one family member."""

    num_blocks: int = 4
    num_filters: int = 64
    latent_dim: Optional[int] = None  # derived; validated if supplied
    hidden_activation: str = "tanh"
    output_activation: str = "sigmoid"
    input_shape: tuple = (32, 32, 3)

    def __post_init__(self):
        self.input_shape = tuple(self.input_shape)
        if self.num_blocks < 1:
            raise ConfigError("num_blocks must be >= 1")
        if self.num_filters < 1:
            raise ConfigError("num_filters must be >= 1")
        if self.hidden_activation != "tanh":
            raise ConfigError("hidden activation is fixed to tanh")
        if self.output_activation != "sigmoid":
            raise ConfigError("output activation is fixed to sigmoid")
        side = self.input_shape[0]
        if side % (2**self.num_blocks) != 0 or side // (2**self.num_blocks) < 1:
            raise ConfigError(
                f"{self.num_blocks} downsampling blocks underflow a "
                f"{side}x{side} input"
            )
        derived = self.bottleneck_side**2 * self.num_filters
        if self.latent_dim is None:
            self.latent_dim = derived
        elif self.latent_dim != derived:
            raise ConfigError(
                f"latent_dim {self.latent_dim} inconsistent with architecture "
                f"(bottleneck is {derived})"
            )

    @property
    def bottleneck_side(self) -> int:
        return self.input_shape[0] // (2**self.num_blocks)

    @property
    def name(self) -> str:
        return f"Blk_{self.num_blocks}_fil_{self.num_filters}"

    @classmethod
    def from_name(cls, name: str) -> "AEConfig":
        parts = name.split("_")
        if len(parts) != 4 or parts[0] != "Blk" or parts[2] != "fil":
            raise ConfigError(f"bad architecture name {name!r}, want Blk_<n>_fil_<f>")
        return cls(num_blocks=int(parts[1]), num_filters=int(parts[3]))

    def to_dict(self) -> dict:
        return {
            "format_version": CHECKPOINT_VERSION,
            "family": "autoencoder",
            "num_blocks": self.num_blocks,
            "num_filters": self.num_filters,
            "latent_dim": self.latent_dim,
            "hidden_activation": self.hidden_activation,
            "output_activation": self.output_activation,
            "input_shape": list(self.input_shape),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "AEConfig":
        return cls(
            num_blocks=payload["num_blocks"],
            num_filters=payload["num_filters"],
            latent_dim=payload.get("latent_dim"),
            input_shape=tuple(payload.get("input_shape", (32, 32, 3))),
        )


class AEModel(nn.Module):
    def __init__(self, config: AEConfig):
        super().__init__()
        self.config = config
        f, blocks = config.num_filters, config.num_blocks
        channels = config.input_shape[2]

        enc = [nn.Conv2d(channels, f, 3, stride=1, padding=1), nn.Tanh()]
        for _ in range(blocks):
            enc += [nn.Conv2d(f, f, 3, stride=2, padding=1), nn.Tanh()]
        enc += [nn.Conv2d(f, f, 3, stride=1, padding=1), nn.Tanh()]
        self.encoder = nn.Sequential(*enc)

        dec = [nn.Conv2d(f, f, 3, stride=1, padding=1), nn.Tanh()]
        for _ in range(blocks):
            dec += [
                nn.Upsample(scale_factor=2, mode="nearest"),
                nn.Conv2d(f, f, 3, stride=1, padding=1),
                nn.Tanh(),
            ]
        dec += [nn.Conv2d(f, channels, 3, stride=1, padding=1), nn.Sigmoid()]
        self.decoder = nn.Sequential(*dec)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.decoder(self.encoder(x))

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        return self.encoder(x).flatten(start_dim=1)

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


def init_parameters(model: nn.Module, seed: int) -> None:
    """Fan-in scaled uniform init, reproducible via an explicit generator."""
    gen = torch.Generator().manual_seed(seed)
    for mod in model.modules():
        if isinstance(mod, (nn.Conv2d, nn.Linear)):
            fan_in = mod.weight.shape[1] * math.prod(mod.weight.shape[2:] or (1,))
            bound = 1.0 / math.sqrt(fan_in)
            with torch.no_grad():
                mod.weight.uniform_(-bound, bound, generator=gen)
                if mod.bias is not None:
                    mod.bias.uniform_(-bound, bound, generator=gen)


def build_ae(config: AEConfig, seed: int = 0) -> AEModel:
    model = AEModel(config)
    init_parameters(model, seed)
    return model


# ---------------------------------------------------------------------------
# numpy <-> torch bridges
# ---------------------------------------------------------------------------


def to_model_input(batch) -> torch.Tensor:
    """Canonical (N, H, W, C) numpy batch -> NCHW float tensor (or pass through)."""
    if isinstance(batch, torch.Tensor):
        return batch
    validate_batch(batch)
    return torch.from_numpy(np.ascontiguousarray(batch)).permute(0, 3, 1, 2)


def to_image_batch(tensor: torch.Tensor) -> np.ndarray:
    arr = tensor.detach().permute(0, 2, 3, 1).contiguous().numpy()
    return np.clip(arr, 0.0, 1.0).astype(np.float32)


def forward(model: AEModel, batch: np.ndarray, batch_size: int = 512) -> np.ndarray:
    """Reconstruct a canonical batch; same shape out, values in (0, 1)."""
    x = to_model_input(batch)
    outs = []
    model.eval()
    with torch.no_grad():
        for i in range(0, len(x), batch_size):
            outs.append(model(x[i:i + batch_size]))
    return to_image_batch(torch.cat(outs))


def encode(model: AEModel, batch: np.ndarray, batch_size: int = 512) -> np.ndarray:
    """Bottleneck activations, shape (N, latent_dim), values in (-1, 1)."""
    x = to_model_input(batch)
    outs = []
    model.eval()
    with torch.no_grad():
        for i in range(0, len(x), batch_size):
            outs.append(model.encode(x[i:i + batch_size]))
    return torch.cat(outs).numpy().astype(np.float32)


def per_sample_mae(
    model: AEModel,
    inputs: np.ndarray,
    targets: np.ndarray | None = None,
    batch_size: int = 512,
) -> np.ndarray:
    """Per-sample pixel MAE of model(inputs) against targets (inputs if None)."""
    x = to_model_input(inputs)
    t = x if targets is None else to_model_input(targets)
    vals = []
    model.eval()
    with torch.no_grad():
        for i in range(0, len(x), batch_size):
            out = model(x[i:i + batch_size])
            vals.append((out - t[i:i + batch_size]).abs().mean(dim=(1, 2, 3)))
    return torch.cat(vals).numpy().astype(np.float64)


def evaluate_mae(model, inputs, targets=None, batch_size: int = 512) -> float:
    return float(per_sample_mae(model, inputs, targets, batch_size).mean())


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class TrainHyper:
    epochs: int = 100
    learning_rate: float = 1e-3
    batch_size: int = 128
    early_stop_patience: int = 20
    seed: int = 0
    optimizer: str = "adam"
    momentum: float = 0.9  # SGD only

    def __post_init__(self):
        for name in ("epochs", "learning_rate", "batch_size", "early_stop_patience"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"optimizer must be adam or sgd, got {self.optimizer}")


@dataclass
class TrainedModelReport:
    model: AEModel
    history: list
    recon_bounds: tuple
    best_epoch: int
    eval_mae: Optional[float] = None  # filled when an external eval set is scored

    @property
    def epsilon1(self) -> float:
        return self.recon_bounds[0]

    @property
    def epsilon2(self) -> float:
        return self.recon_bounds[1]


def make_optimizer(params, hyper: TrainHyper):
    if hyper.optimizer == "adam":
        return torch.optim.Adam(params, lr=hyper.learning_rate)
    return torch.optim.SGD(params, lr=hyper.learning_rate, momentum=hyper.momentum)


def _noisy(x: torch.Tensor, factor: float, gen: torch.Generator) -> torch.Tensor:
    noise = torch.randn(x.shape, generator=gen)
    return (x + factor * noise).clamp(0.0, 1.0)


def train_ae(
    model: AEModel,
    train_images: np.ndarray,
    val_images: np.ndarray,
    hyper: TrainHyper,
    *,
    replay: np.ndarray | None = None,
    replay_weight: float = 1.0,
    noise: NoiseSpec | None = None,
    noisy_replay_inputs: bool = True,
    bounds_batch: np.ndarray | None = None,
    log=None,
) -> TrainedModelReport:
    """Minimize pixel MAE (plus an optional weighted replay term).

    Each update draws equal counts from the current data and the replay
    set.  With ``noise`` set, inputs get fresh additive Gaussian noise
    every step and targets stay clean; validation uses one fixed noisy
    copy so early stopping sees a stable monitor.  Early stopping
    restores the best weights observed.  ``replay_weight == 0`` or
    ``replay is None`` degenerates to plain training with an identical
    trajectory.
    """
    if len(train_images) == 0 or len(val_images) == 0:
        raise DataError("train and validation sets must be non-empty")
    replaying = replay is not None and replay_weight > 0
    if replay is not None and len(replay) == 0 and replay_weight > 0:
        raise DataError("replay set is empty but replay_weight > 0")

    x_train = to_model_input(train_images)
    x_val = to_model_input(val_images)
    gen = torch.Generator().manual_seed(hyper.seed)

    val_clean = val_images
    val_in = val_images
    noise_gen = None
    if noise is not None:
        noise_gen = torch.Generator().manual_seed(noise.seed)
        fixed = torch.Generator().manual_seed(noise.seed + 1)
        val_in = to_image_batch(_noisy(x_val, noise.factor, fixed))

    x_replay = hold_in = hold_clean = None
    if replaying:
        x_replay = to_model_input(replay)
        n_hold = int(round(0.1 * len(x_replay)))
        if n_hold >= 1 and len(x_replay) - n_hold >= 1:
            perm = np.random.default_rng(hyper.seed).permutation(len(x_replay))
            hold_clean = replay[np.sort(perm[:n_hold])]
            x_replay = x_replay[np.sort(perm[n_hold:])]
            hold_in = hold_clean
            if noise is not None and noisy_replay_inputs:
                fixed = torch.Generator().manual_seed(noise.seed + 2)
                hold_in = to_image_batch(
                    _noisy(to_model_input(hold_clean), noise.factor, fixed)
                )

    opt = make_optimizer(model.parameters(), hyper)
    bs = hyper.batch_size
    steps = math.ceil(len(x_train) / bs)
    replay_ptr, replay_order = 0, None

    best_monitor = float("inf")
    best_state = None
    best_epoch = -1
    bad_epochs = 0
    history: list[dict] = []

    for epoch in range(hyper.epochs):
        model.train()
        order = torch.randperm(len(x_train), generator=gen)
        run_mae = run_replay = 0.0
        seen = replay_seen = 0
        for step in range(steps):
            idx = order[step * bs:(step + 1) * bs]
            batch = x_train[idx]
            target = batch
            if noise is not None:
                batch = _noisy(batch, noise.factor, noise_gen)

            opt.zero_grad()
            out = model(batch)
            current_term = (out - target).abs().mean()
            loss = current_term

            if replaying:
                take = len(idx)
                picks = []
                while take > 0:
                    if replay_ptr == 0:
                        replay_order = torch.randperm(len(x_replay), generator=gen)
                    chunk = replay_order[replay_ptr:replay_ptr + take]
                    picks.append(chunk)
                    replay_ptr = (replay_ptr + len(chunk)) % len(x_replay)
                    take -= len(chunk)
                rb = x_replay[torch.cat(picks)]
                rt = rb
                if noise is not None and noisy_replay_inputs:
                    rb = _noisy(rb, noise.factor, noise_gen)
                replay_term = (model(rb) - rt).abs().mean()
                loss = loss + replay_weight * replay_term
                run_replay += float(replay_term.detach()) * len(idx)
                replay_seen += len(idx)

            if not torch.isfinite(loss):
                raise NumericError(
                    f"non-finite loss at epoch {epoch} step {step}; aborting"
                )
            loss.backward()
            opt.step()
            run_mae += float(current_term.detach()) * len(idx)
            seen += len(idx)

        val_mae = evaluate_mae(model, val_in, val_clean)
        monitor = val_mae
        entry = {
            "epoch": epoch,
            "train_mae": run_mae / seen,
            "val_mae": val_mae,
        }
        if replaying:
            if replay_seen:
                entry["replay_mae"] = run_replay / replay_seen
            if hold_in is not None:
                hold_mae = evaluate_mae(model, hold_in, hold_clean)
                monitor = val_mae + replay_weight * hold_mae
                entry["replay_holdout_mae"] = hold_mae
        entry["monitor"] = monitor
        history.append(entry)
        if log:
            log(entry)

        if monitor < best_monitor:
            best_monitor = monitor
            best_state = copy.deepcopy(model.state_dict())
            best_epoch = epoch
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= hyper.early_stop_patience:
                break

    if best_state is not None:
        model.load_state_dict(best_state)

    bounds_src = bounds_batch if bounds_batch is not None else val_clean
    sample_err = per_sample_mae(model, bounds_src)
    return TrainedModelReport(
        model=model,
        history=history,
        recon_bounds=(float(sample_err.min()), float(sample_err.max())),
        best_epoch=best_epoch,
    )


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def params_blob(model: nn.Module) -> bytes:
    """All state tensors flattened to one little-endian float32 blob."""
    chunks = [
        t.detach().cpu().to(torch.float32).numpy().astype("<f4").tobytes()
        for t in model.state_dict().values()
    ]
    return b"".join(chunks)


def model_id(model: nn.Module, config_dict: dict | None = None) -> str:
    payload = b""
    if config_dict is None and hasattr(getattr(model, "config", None), "to_dict"):
        config_dict = model.config.to_dict()
    if config_dict is not None:
        payload += json.dumps(config_dict, sort_keys=True).encode()
    return sha256_bytes(payload + params_blob(model))


def save_checkpoint(
    path: str | Path,
    model: nn.Module,
    config_dict: dict,
    history: list | None = None,
    meta: dict | None = None,
) -> str:
    """Write a checkpoint archive; returns the model content hash."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = params_blob(model)
    with zipfile.ZipFile(path, "w", zipfile.ZIP_DEFLATED) as zf:
        zf.writestr("config.json", json.dumps(config_dict, indent=2, sort_keys=True))
        zf.writestr("params.f32", blob)
        if history is not None:
            zf.writestr("history.json", json.dumps(history))
        if meta is not None:
            zf.writestr("meta.json", json.dumps(meta, indent=2, sort_keys=True))
    return sha256_bytes(
        json.dumps(config_dict, sort_keys=True).encode() + blob
    )


def restore_blob(model: nn.Module, blob: bytes) -> None:
    """Load a flat float32 blob into a module; sizes must match exactly."""
    state = model.state_dict()
    expected = sum(t.numel() for t in state.values()) * 4
    if len(blob) != expected:
        raise DataError(
            f"checkpoint blob is {len(blob)} bytes but the configured "
            f"architecture needs {expected}; config/blob mismatch"
        )
    offset = 0
    new_state = {}
    for key, tensor in state.items():
        n = tensor.numel()
        vals = np.frombuffer(blob, dtype="<f4", count=n, offset=offset)
        new_state[key] = torch.from_numpy(vals.copy()).reshape(tensor.shape).to(
            tensor.dtype
        )
        offset += n * 4
    model.load_state_dict(new_state)


def read_checkpoint_meta(path: str | Path) -> Optional[dict]:
    with zipfile.ZipFile(path) as zf:
        if "meta.json" not in zf.namelist():
            return None
        return json.loads(zf.read("meta.json"))


def load_checkpoint(path: str | Path):
    """Read a checkpoint archive -> (model, config, history)."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    with zipfile.ZipFile(path) as zf:
        config_dict = json.loads(zf.read("config.json"))
        blob = zf.read("params.f32")
        history = None
        if "history.json" in zf.namelist():
            history = json.loads(zf.read("history.json"))
    if config_dict.get("family") != "autoencoder":
        raise DataError(
            f"{path}: not an autoencoder checkpoint "
            f"(family={config_dict.get('family')!r})"
        )
    config = AEConfig.from_dict(config_dict)
    model = AEModel(config)
    restore_blob(model, blob)
    model.eval()
    return model, config, history
