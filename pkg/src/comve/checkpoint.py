"""Single-file model checkpoints.

Byte layout (all integers little-endian):

====================  =====================================================
bytes 0..7            magic ``b"CKPT0001"``
bytes 8..15           uint64: byte length N of the JSON manifest
bytes 16..16+N-1      UTF-8 JSON manifest
remainder             for each manifest ``params`` entry, in order:
                      ``product(shape)`` float64 values, little-endian,
                      C row-major order
====================  =====================================================

The manifest is ``{"meta": {...}, "params": [{"name": str,
"shape": [int, ...]}, ...]}``; ``meta`` holds the model kind, its
configuration, and (for classifiers) the task-head registry.
"""

from __future__ import annotations

import json
import struct
from typing import Sequence

import numpy as np

from .tensor import Tensor

MAGIC = b"CKPT0001"


class CheckpointError(ValueError):
    """Corrupt file or a manifest that does not match expectations."""


def save_checkpoint(path, named_params: Sequence[tuple], meta: dict) -> None:
    manifest = {
        "meta": meta,
        "params": [{"name": name, "shape": list(p.shape)}
                   for name, p in named_params],
    }
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for _, p in named_params:
            f.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple:
    """Returns (meta dict, ordered {name: float64 array})."""
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != MAGIC:
            raise CheckpointError(f"{path}: bad magic {magic!r}")
        (n,) = struct.unpack("<Q", f.read(8))
        try:
            manifest = json.loads(f.read(n).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"{path}: unreadable manifest ({exc})") from exc
        params = {}
        for entry in manifest["params"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = f.read(count * 8)
            if len(raw) != count * 8:
                raise CheckpointError(
                    f"{path}: truncated payload for {entry['name']!r}")
            params[entry["name"]] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
        if f.read(1):
            raise CheckpointError(f"{path}: trailing bytes after payload")
    return manifest["meta"], params


def restore_params(named_params: Sequence[tuple], stored: dict, path="") -> None:
    """Copy stored arrays into live tensors, validating names and shapes."""
    live = dict(named_params)
    missing = sorted(set(live) - set(stored))
    extra = sorted(set(stored) - set(live))
    if missing or extra:
        raise CheckpointError(
            f"{path}: manifest mismatch (missing {missing[:3]}, extra {extra[:3]})")
    for name, p in named_params:
        arr = stored[name]
        if arr.shape != p.shape:
            raise CheckpointError(
                f"{path}: {name!r} has shape {arr.shape}, expected {p.shape}")
        p.data = arr.astype(np.float64)


def tensor_from(arr: np.ndarray, name: str) -> Tensor:
    return Tensor(arr, requires_grad=True, name=name)
