"""Versioned checkpoint container with bitwise-exact parameter round-trips.

Checkpoints are canonical JSON.  Parameter matrices are stored as base64 of
their little-endian float64 row-major bytes, so save -> load -> save is
byte-identical.  The schema hash and the full training configuration are
embedded to refuse evaluation against mismatched inputs.
"""

from __future__ import annotations

import base64
import hashlib
import json
from pathlib import Path

import numpy as np

from .schema import SchemaDef, emit_schema

__all__ = [
    "CheckpointError",
    "FORMAT_VERSION",
    "schema_hash",
    "encode_params",
    "decode_params",
    "dump_checkpoint",
    "load_checkpoint",
]

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def schema_hash(schema: SchemaDef) -> str:
    return hashlib.sha256(emit_schema(schema).encode("utf-8")).hexdigest()


def encode_params(arrays: dict[str, np.ndarray]) -> dict:
    out = {}
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype="<f8")
        out[name] = {
            "shape": list(arr.shape),
            "dtype": "<f8",
            "data": base64.b64encode(arr.tobytes()).decode("ascii"),
        }
    return out


def decode_params(payload: dict) -> dict[str, np.ndarray]:
    out = {}
    for name, entry in payload.items():
        raw = base64.b64decode(entry["data"])
        arr = np.frombuffer(raw, dtype=entry["dtype"]).astype(np.float64)
        out[name] = arr.reshape(entry["shape"]).copy()
    return out


def dump_checkpoint(path, payload: dict) -> bytes:
    """Write a checkpoint with deterministic byte layout; returns the bytes."""
    if payload.get("format_version") != FORMAT_VERSION:
        raise CheckpointError("payload missing the supported format_version")
    blob = json.dumps(payload, indent=1, sort_keys=True).encode("utf-8")
    Path(path).write_bytes(blob)
    return blob


def load_checkpoint(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"no checkpoint at {path}")
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise CheckpointError(f"corrupt checkpoint: {e}") from e
    if payload.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {payload.get('format_version')!r}"
        )
    return payload
