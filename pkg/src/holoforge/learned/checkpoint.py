"""Single-file model checkpoints.

Layout: 8-byte magic, little-endian u32 format version, u64 manifest length,
UTF-8 JSON manifest, then each tensor as little-endian float64 in manifest order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import ShapeError
from .model import ArchSpec, ToyModel

MAGIC = b"HFCKPT\x00\x01"
VERSION = 1
_HEADER = struct.Struct("<8sIQ")


def save_checkpoint(model: ToyModel, path, extra: dict | None = None) -> Path:
    path = Path(path)
    state = model.state_dict()
    entries, offset = [], 0
    for name, arr in state.items():
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size * 8
    manifest = {"arch": model.arch.to_dict(), "seed": model.seed, "tensors": entries,
                "extra": extra or {}}
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    try:
        with open(path, "wb") as f:
            f.write(_HEADER.pack(MAGIC, VERSION, len(blob)))
            f.write(blob)
            for arr in state.values():
                f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    except OSError as exc:
        raise OSError(f"cannot write checkpoint {path}: {exc}") from exc
    return path


def load_checkpoint(path) -> tuple[ToyModel, dict]:
    """Rebuild the model stored at ``path``; returns (model, extra metadata)."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(raw) < _HEADER.size:
        raise OSError(f"{path}: truncated checkpoint")
    magic, version, mlen = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise OSError(f"{path}: not a holoforge checkpoint")
    if version != VERSION:
        raise OSError(f"{path}: unsupported checkpoint version {version}")
    start = _HEADER.size + mlen
    manifest = json.loads(raw[_HEADER.size:start].decode("utf-8"))
    model = ToyModel(ArchSpec.from_dict(manifest["arch"]), seed=manifest["seed"])
    state = {}
    for e in manifest["tensors"]:
        count = int(np.prod(e["shape"], dtype=np.int64))
        lo = start + e["offset"]
        if lo + 8 * count > len(raw):
            raise OSError(f"{path}: truncated tensor {e['name']}")
        state[e["name"]] = np.frombuffer(raw, dtype="<f8", count=count, offset=lo) \
            .reshape(e["shape"]).astype(np.float64)
    try:
        model.load_state_dict(state)
    except ShapeError as exc:
        raise OSError(f"{path}: {exc}") from exc
    return model, manifest.get("extra", {})
