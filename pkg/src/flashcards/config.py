"""Experiment config files: YAML with schema validation.

Errors name the offending field and, where possible, its line in the
source file.  CLI flags override config fields; the effective config is
snapshotted into the run manifest.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any, Optional

import yaml

from .autoencoder import AEConfig, TrainHyper
from .errors import ConfigError


def load_yaml_with_lines(path: str | Path) -> tuple[dict, dict]:
    """Parse a YAML mapping and record a field-path -> line-number map."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text()
    try:
        node = yaml.compose(text)
        datum = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    if datum is None:
        datum = {}
    if not isinstance(datum, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    lines: dict[str, int] = {}

    def walk(n, prefix):
        if isinstance(n, yaml.MappingNode):
            for k, v in n.value:
                p = f"{prefix}.{k.value}" if prefix else str(k.value)
                lines[p] = k.start_mark.line + 1
                walk(v, p)
        elif isinstance(n, yaml.SequenceNode):
            for i, v in enumerate(n.value):
                p = f"{prefix}[{i}]"
                lines[p] = v.start_mark.line + 1
                walk(v, p)

    if node is not None:
        walk(node, "")
    return datum, lines


class SchemaView:
    """Typed access to one config mapping with precise error locations."""

    def __init__(self, raw: dict, lines: dict, source: str, prefix: str = ""):
        self.raw = raw
        self.lines = lines
        self.source = source
        self.prefix = prefix
        self._seen: set[str] = set()

    def _where(self, name: str) -> str:
        path = f"{self.prefix}.{name}" if self.prefix else name
        line = self.lines.get(path)
        loc = f"{self.source}:{line}" if line else self.source
        return f"{loc}: field {path!r}"

    def error(self, name: str, message: str):
        raise ConfigError(f"{self._where(name)}: {message}")

    def get(self, name: str, types, default=None, required=False,
            choices=None):
        self._seen.add(name)
        if name not in self.raw:
            if required:
                raise ConfigError(f"{self._where(name)}: required field missing")
            return default
        value = self.raw[name]
        if types is float and isinstance(value, int):
            value = float(value)
        if types is not None and not isinstance(value, types):
            want = types.__name__ if isinstance(types, type) else \
                "/".join(t.__name__ for t in types)
            self.error(name, f"expected {want}, got {type(value).__name__}")
        if choices is not None and value not in choices:
            self.error(name, f"must be one of {list(choices)}, got {value!r}")
        return value

    def reject_unknown(self):
        unknown = set(self.raw) - self._seen
        if unknown:
            name = sorted(unknown)[0]
            self.error(name, "unknown field")

    def sub(self, name: str) -> "SchemaView":
        raw = self.get(name, dict, default={})
        prefix = f"{self.prefix}.{name}" if self.prefix else name
        return SchemaView(raw or {}, self.lines, self.source, prefix)


def parse_arch(value, view: SchemaView, field_name: str = "arch") -> AEConfig:
    if value is None:
        return AEConfig.from_name("Blk_4_fil_64")
    if isinstance(value, str):
        try:
            return AEConfig.from_name(value)
        except ConfigError as exc:
            view.error(field_name, str(exc))
    if isinstance(value, dict):
        try:
            return AEConfig(
                num_blocks=value.get("num_blocks", 4),
                num_filters=value.get("num_filters", 64),
                latent_dim=value.get("latent_dim"),
            )
        except ConfigError as exc:
            view.error(field_name, str(exc))
    view.error(field_name, "expected an architecture name or mapping")


def parse_hyper(view: SchemaView, defaults: Optional[dict] = None) -> TrainHyper:
    d = {"epochs": 100, "batch_size": 128, "learning_rate": 1e-3,
         "patience": 20, "optimizer": "adam"}
    d.update(defaults or {})
    try:
        return TrainHyper(
            epochs=view.get("epochs", int, d["epochs"]),
            batch_size=view.get("batch_size", int, d["batch_size"]),
            learning_rate=view.get("learning_rate", float, d["learning_rate"]),
            early_stop_patience=view.get("patience", int, d["patience"]),
            optimizer=view.get("optimizer", str, d["optimizer"],
                               choices=("adam", "sgd")),
            seed=view.get("seed", int, 0),
        )
    except ConfigError as exc:
        raise ConfigError(f"{view.source}: {exc}") from exc


def snapshot(value: Any) -> Any:
    """Json-serializable echo of parsed config values."""
    if isinstance(value, (AEConfig,)):
        return value.to_dict()
    if isinstance(value, TrainHyper):
        return {
            "epochs": value.epochs,
            "batch_size": value.batch_size,
            "learning_rate": value.learning_rate,
            "patience": value.early_stop_patience,
            "optimizer": value.optimizer,
            "seed": value.seed,
        }
    if isinstance(value, dict):
        return {k: snapshot(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [snapshot(v) for v in value]
    return value
