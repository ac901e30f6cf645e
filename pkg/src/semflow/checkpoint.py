"""Single-file checkpoint format shared by every module.

Layout: one JSON header line, a newline, then a flat little-endian float32
blob holding every array back to back in header order. The header carries
shapes, hyperparameters, step, and RNG state, so a run can resume exactly.

Weights live in float64 while training but are stored as float32. To keep
resumed runs bit-identical to uninterrupted ones, trainers call
`canonicalize` on their live state right after every save: from then on the
in-memory values equal what a reload would produce.
"""

from __future__ import annotations

import hashlib
import json
import os

import numpy as np

from semflow.errors import ConfigError
from semflow.numerics.tensor import Tensor

MAGIC = "semflow-ckpt-v1"


def save_checkpoint(path: str, arrays: dict[str, np.ndarray], meta: dict) -> None:
    names = list(arrays.keys())
    header = {
        "magic": MAGIC,
        "meta": meta,
        "arrays": [{"name": n, "shape": list(arrays[n].shape)} for n in names],
    }
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode())
        fh.write(b"\n")
        for n in names:
            fh.write(np.ascontiguousarray(arrays[n], dtype="<f4").tobytes())
    os.replace(tmp, path)


def load_checkpoint(path: str) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        header_line = fh.readline()
        blob = fh.read()
    header = json.loads(header_line)
    if header.get("magic") != MAGIC:
        raise ConfigError(f"{path} is not a checkpoint file")
    arrays = {}
    offset = 0
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        chunk = np.frombuffer(blob, dtype="<f4", count=n, offset=offset)
        arrays[entry["name"]] = chunk.astype(np.float64).reshape(shape)
        offset += 4 * n
    if offset != len(blob):
        raise ConfigError(f"{path}: blob length {len(blob)} does not match header")
    return header["meta"], arrays


def canonicalize(arrays: dict[str, np.ndarray]) -> None:
    """Round every array through float32 in place (save/reload fixpoint)."""
    for a in arrays.values():
        a[...] = a.astype("<f4").astype(np.float64)


def params_data(params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    return {k: p.data for k, p in params.items()}


def load_into_params(params: dict[str, Tensor], arrays: dict[str, np.ndarray],
                     prefix: str = "") -> None:
    for k, p in params.items():
        key = prefix + k
        if key not in arrays:
            raise ConfigError(f"checkpoint missing parameter '{key}'")
        if arrays[key].shape != p.data.shape:
            raise ConfigError(
                f"checkpoint parameter '{key}' has shape {arrays[key].shape}, "
                f"model expects {p.data.shape}"
            )
        p.data[...] = arrays[key]


def file_digest(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def state_digest(arrays: dict[str, np.ndarray]) -> str:
    """Order-independent hash of a parameter set at checkpoint (f32) precision."""
    h = hashlib.sha256()
    for k in sorted(arrays):
        h.update(k.encode())
        h.update(np.ascontiguousarray(arrays[k], dtype="<f4").tobytes())
    return h.hexdigest()
