"""
artifacts.py: output files and manifests.

Every file is written atomically (temp file in the target directory, then
os.replace). Each command directory ends with a manifest.json recording the
config snapshot, seed, and sha256 of every input and output; nothing in it
depends on wall-clock time.
"""
from __future__ import annotations

import hashlib
import io
import json
import logging
import os
import re
import tempfile
from pathlib import Path
from typing import Any, Iterable, Mapping

import pandas as pd

from src import __version__
from src.errors import ManifestMismatch, MissingArtifact

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


def safe_name(name: str) -> str:
    """File-system friendly stem for a model or pair name."""
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", name)


# -----------------------------
# Writers
# -----------------------------
def write_text(path: str | Path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    logger.debug("Wrote %s", path)
    return path


def to_json_text(obj: Any) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False, default=_json_default) + "\n"


def _json_default(obj: Any) -> Any:
    if hasattr(obj, "tolist"):
        return obj.tolist()
    if hasattr(obj, "isoformat"):
        return obj.isoformat()
    raise TypeError(f"Not JSON serializable: {type(obj).__name__}")


def write_json(path: str | Path, obj: Any) -> Path:
    return write_text(path, to_json_text(_finite(obj)))


def _finite(obj: Any) -> Any:
    """NaN/inf become null so the JSON stays strict."""
    if isinstance(obj, float):
        return obj if obj == obj and abs(obj) != float("inf") else None
    if isinstance(obj, Mapping):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


def frame_to_csv_text(frame: pd.DataFrame, index: bool = False) -> str:
    buf = io.StringIO()
    frame.to_csv(buf, index=index, na_rep="", lineterminator="\n")
    return buf.getvalue()


def write_csv(path: str | Path, frame: pd.DataFrame, index: bool = False) -> Path:
    return write_text(path, frame_to_csv_text(frame, index=index))


# -----------------------------
# Readers
# -----------------------------
def read_json(path: str | Path, what: str = "artifact") -> Any:
    path = Path(path)
    if not path.is_file():
        raise MissingArtifact(f"Missing {what}: {path}")
    return json.loads(path.read_text(encoding="utf-8"))


def read_csv(path: str | Path, what: str = "artifact") -> pd.DataFrame:
    path = Path(path)
    if not path.is_file():
        raise MissingArtifact(f"Missing {what}: {path}")
    return pd.read_csv(path, float_precision="round_trip")


# -----------------------------
# Manifests
# -----------------------------
def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _rel(path: Path, root: Path) -> str:
    try:
        return path.resolve().relative_to(root.resolve()).as_posix()
    except ValueError:
        return path.resolve().as_posix()


def write_manifest(
    command_dir: str | Path,
    command: str,
    seed: int,
    config: Mapping[str, Any],
    inputs: Iterable[str | Path],
    outputs: Iterable[str | Path],
) -> Path:
    """Hash inputs and outputs; output paths are stored relative to the command directory."""
    command_dir = Path(command_dir)
    manifest = {
        "command": command,
        "version": __version__,
        "seed": seed,
        "config": dict(config),
        "inputs": {Path(p).resolve().as_posix(): sha256_file(p) for p in sorted(set(map(str, inputs)))},
        "outputs": {_rel(Path(p), command_dir): sha256_file(p) for p in sorted(set(map(str, outputs)))},
    }
    path = write_json(command_dir / MANIFEST_NAME, manifest)
    logger.info("%s: manifest with %d output(s)", command, len(manifest["outputs"]))
    return path


def read_manifest(command_dir: str | Path) -> dict:
    return read_json(Path(command_dir) / MANIFEST_NAME, what="manifest")


def verify_manifest(command_dir: str | Path) -> dict:
    """Re-hash every recorded input and output; raises ManifestMismatch on any difference."""
    command_dir = Path(command_dir)
    manifest = read_manifest(command_dir)
    problems = []
    for path, digest in manifest.get("inputs", {}).items():
        if not Path(path).is_file():
            problems.append(f"input missing: {path}")
        elif sha256_file(path) != digest:
            problems.append(f"input changed: {path}")
    for rel, digest in manifest.get("outputs", {}).items():
        path = Path(rel) if Path(rel).is_absolute() else command_dir / rel
        if not path.is_file():
            problems.append(f"output missing: {rel}")
        elif sha256_file(path) != digest:
            problems.append(f"output changed: {rel}")
    if problems:
        raise ManifestMismatch(f"{command_dir}: " + "; ".join(problems))
    return manifest
