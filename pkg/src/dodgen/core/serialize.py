"""DODT tensor files and checkpoint directories.

DODT layout: ``b"DODT"``, u32 rank, rank x u64 dims, little-endian f64 payload.
A checkpoint is a directory of ``<name>.dodt`` files plus ``manifest.json``.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import BinaryIO

import numpy as np

MAGIC = b"DODT"


def write_tensor(f: BinaryIO, array) -> None:
    arr = np.asarray(array, dtype="<f8", order="C")
    f.write(MAGIC)
    f.write(struct.pack("<I", arr.ndim))
    f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    f.write(arr.tobytes())


def read_tensor(f: BinaryIO) -> np.ndarray:
    magic = f.read(4)
    if magic != MAGIC:
        raise ValueError(f"not a DODT tensor (magic {magic!r})")
    (rank,) = struct.unpack("<I", f.read(4))
    dims = struct.unpack(f"<{rank}Q", f.read(8 * rank)) if rank else ()
    count = int(np.prod(dims)) if rank else 1
    payload = f.read(8 * count)
    if len(payload) != 8 * count:
        raise ValueError(f"truncated DODT payload: expected {8 * count} bytes, got {len(payload)}")
    return np.frombuffer(payload, dtype="<f8").reshape(dims).astype(np.float64)


def save_tensor(path, array) -> None:
    with open(path, "wb") as f:
        write_tensor(f, array)


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        return read_tensor(f)


def dump_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def save_checkpoint(directory, state: dict[str, np.ndarray], manifest: dict) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for name, arr in state.items():
        save_tensor(d / f"{name}.dodt", arr)
    dump_json(d / "manifest.json", {**manifest, "tensors": sorted(state)})
    return d


def load_checkpoint(directory) -> tuple[dict[str, np.ndarray], dict]:
    d = Path(directory)
    mpath = d / "manifest.json"
    if not mpath.exists():
        raise FileNotFoundError(f"checkpoint manifest not found: {mpath}")
    manifest = json.loads(mpath.read_text(encoding="utf-8"))
    state = {name: load_tensor(d / f"{name}.dodt") for name in manifest.get("tensors", [])}
    return state, manifest
