"""Self-describing run checkpoints with an integrity checksum.

A checkpoint is a JSON document. Every parameter block is stored as base64
over raw little-endian float64 bytes, so a resumed run restores values
bit-exactly on any platform. The checksum covers the canonical payload
encoding; any corruption surfaces as an explicit integrity error.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
from pathlib import Path

import numpy as np

FORMAT_NAME = "fedlfd-checkpoint"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Unreadable, corrupted, or mismatched checkpoint."""


def encode_array(values: np.ndarray) -> str:
    arr = np.ascontiguousarray(values, dtype="<f8")
    return base64.b64encode(arr.tobytes()).decode("ascii")


def decode_array(text: str, shape=None) -> np.ndarray:
    try:
        raw = base64.b64decode(text.encode("ascii"), validate=True)
    except Exception as exc:
        raise CheckpointError(f"malformed array block: {exc}") from exc
    arr = np.frombuffer(raw, dtype="<f8").astype(float)
    if shape is not None:
        arr = arr.reshape(shape)
    return arr


def _canonical(payload: dict) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def write_checkpoint(path: str | Path, payload: dict) -> None:
    """Atomically write a checkpoint (temp file + rename)."""
    path = Path(path)
    canon = _canonical(payload)
    doc = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "checksum": hashlib.sha256(canon.encode("utf-8")).hexdigest(),
        "payload": payload,
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(doc, sort_keys=True))
    os.replace(tmp, path)


def read_checkpoint(path: str | Path) -> dict:
    """Read and verify a checkpoint; returns the payload."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"checkpoint {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != FORMAT_NAME:
        raise CheckpointError(f"{path} is not a {FORMAT_NAME} file")
    if doc.get("version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {doc.get('version')!r}")
    payload = doc.get("payload")
    if not isinstance(payload, dict):
        raise CheckpointError(f"{path} has no payload")
    expected = doc.get("checksum")
    actual = hashlib.sha256(_canonical(payload).encode("utf-8")).hexdigest()
    if expected != actual:
        raise CheckpointError(f"integrity check failed for {path}: checksum mismatch")
    return payload
