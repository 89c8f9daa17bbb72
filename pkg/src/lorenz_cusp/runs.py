"""Content-addressed run directories with JSON manifests."""

from __future__ import annotations

import hashlib
import json
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__

MANIFEST = "manifest.json"


def _plain(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, Path):
        return str(o)
    if isinstance(o, (set, frozenset)):
        return sorted(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_plain)


def config_hash(config: dict, length: int = 12) -> str:
    """Stable short digest of a JSON-serializable configuration."""
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()[:length]


def run_dir(base, name: str, config: dict) -> Path:
    """``base/name-<hash>``, created if missing."""
    path = Path(base) / f"{name}-{config_hash(config)}"
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_plain)
        fh.write("\n")


def read_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def write_manifest(directory, command: str, config: dict, outputs: dict,
                   inputs: dict | None = None, summary: dict | None = None,
                   filename: str = MANIFEST) -> Path:
    """Record everything needed to re-run ``command`` into ``directory``.

    Only deterministic fields go into the file so identical runs produce
    byte-identical manifests.
    """
    man = {
        "command": command,
        "config": config,
        "config_hash": config_hash(config),
        "inputs": inputs or {},
        "outputs": outputs,
        "summary": summary or {},
        "package_version": __version__,
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "platform": platform.system(),
    }
    path = Path(directory) / filename
    write_json(path, man)
    return path
