"""Run manifests: enough provenance to reproduce or audit any CLI run."""

from __future__ import annotations

import json
import platform
import time
from pathlib import Path

from .errors import DataError
from .tensorio import sha256_file


def _versions() -> dict:
    import numpy
    import torch

    from . import __version__

    return {
        "flashcards": __version__,
        "numpy": numpy.__version__,
        "torch": torch.__version__,
        "python": platform.python_version(),
    }


def write_manifest(
    out_dir: str | Path,
    command: str,
    config_snapshot: dict,
    seed: int,
    outputs: dict,
    timings: dict,
) -> Path:
    """Write ``manifest.json`` into ``out_dir``.

    ``outputs`` maps a role name to a file path (relative paths are
    resolved against ``out_dir``); every referenced file must exist and
    gets a content hash.
    """
    out_dir = Path(out_dir)
    entries = {}
    for role, path in outputs.items():
        p = Path(path)
        if not p.is_absolute():
            p = out_dir / p
        if not p.exists():
            raise DataError(f"manifest output {role!r} missing on disk: {p}")
        entries[role] = {
            "path": str(p.relative_to(out_dir)) if p.is_relative_to(out_dir) else str(p),
            "sha256": sha256_file(p),
        }
    payload = {
        "command": command,
        "created_unix": time.time(),
        "seed": seed,
        "config": config_snapshot,
        "versions": _versions(),
        "outputs": entries,
        "timings_seconds": timings,
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(payload, indent=2, sort_keys=True))
    return path


def verify_manifest(path: str | Path) -> dict:
    """Re-hash every referenced file; raises DataError on any mismatch."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    payload = json.loads(path.read_text())
    base = path.parent
    for role, entry in payload.get("outputs", {}).items():
        target = Path(entry["path"])
        if not target.is_absolute():
            target = base / target
        if not target.exists():
            raise DataError(f"{role}: file missing: {target}")
        actual = sha256_file(target)
        if actual != entry["sha256"]:
            raise DataError(
                f"{role}: hash mismatch for {target} "
                f"(manifest {entry['sha256'][:12]}, actual {actual[:12]})"
            )
    return payload
