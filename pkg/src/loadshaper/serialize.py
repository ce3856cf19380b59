"""Deterministic on-disk formats: JSON checkpoints and atomic writes.

Checkpoints are single JSON files with float32 tensors encoded as base64 of
their little-endian bytes. The encoding is exact and byte-stable, so a run
with a fixed seed produces hash-identical artifacts.
"""
from __future__ import annotations

import base64
import hashlib
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import CheckpointError

CHECKPOINT_FORMAT = "loadshaper-checkpoint"
CHECKPOINT_VERSION = 1


def encode_array(arr: np.ndarray) -> dict:
    arr = np.ascontiguousarray(arr)
    return {
        "shape": list(arr.shape),
        "dtype": str(arr.dtype),
        "data": base64.b64encode(arr.astype(arr.dtype.newbyteorder("<")).tobytes()).decode("ascii"),
    }


def decode_array(obj: dict) -> np.ndarray:
    raw = base64.b64decode(obj["data"])
    arr = np.frombuffer(raw, dtype=np.dtype(obj["dtype"]).newbyteorder("<"))
    return arr.reshape(obj["shape"]).astype(obj["dtype"])


def canonical_json(payload) -> str:
    return json.dumps(payload, sort_keys=True, indent=2)


def atomic_write_text(path: str | Path, text: str) -> None:
    """Write via a temp file + rename so readers never see partial content."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def save_checkpoint(path: str | Path, kind: str, payload: dict) -> None:
    """Write a versioned checkpoint; ``payload`` may contain numpy arrays."""

    def convert(node):
        if isinstance(node, np.ndarray):
            return {"__array__": encode_array(node)}
        if isinstance(node, dict):
            return {k: convert(v) for k, v in node.items()}
        if isinstance(node, (list, tuple)):
            return [convert(v) for v in node]
        if isinstance(node, (np.floating, np.integer)):
            return node.item()
        return node

    doc = {
        "format": CHECKPOINT_FORMAT,
        "format_version": CHECKPOINT_VERSION,
        "kind": kind,
        "payload": convert(payload),
    }
    atomic_write_text(path, canonical_json(doc) + "\n")


def load_checkpoint(path: str | Path, kind: str) -> dict:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported format version {doc.get('format_version')}")
    if doc.get("kind") != kind:
        raise CheckpointError(f"{path}: expected kind {kind!r}, found {doc.get('kind')!r}")

    def restore(node):
        if isinstance(node, dict):
            if set(node.keys()) == {"__array__"}:
                return decode_array(node["__array__"])
            return {k: restore(v) for k, v in node.items()}
        if isinstance(node, list):
            return [restore(v) for v in node]
        return node

    return restore(doc["payload"])
