"""Versioned binary checkpoints.

Layout (little-endian): magic ``CKPT``, u32 format version, u32 entry
count, then per entry: u32 name length, utf-8 name, u32 ndim, u32 dims,
float32 data.  A JSON sidecar (``<path>.json``) carries training state:
epoch, history, optimizer moments when requested.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..exceptions import FormatError

CKPT_MAGIC = b"CKPT"
CKPT_VERSION = 1


def save_checkpoint(path, arrays: dict, sidecar: dict | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<II", CKPT_VERSION, len(arrays)))
        for name, arr in arrays.items():
            arr = np.ascontiguousarray(arr, dtype="<f4")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())
    if sidecar is not None:
        Path(str(path) + ".json").write_text(json.dumps(sidecar, sort_keys=True))


def load_checkpoint(path):
    """Returns (arrays, sidecar); sidecar is {} when no JSON file exists."""
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < 12 or blob[:4] != CKPT_MAGIC:
        raise FormatError(f"{path}: not a CKPT checkpoint (bad magic)")
    version, count = struct.unpack("<II", blob[4:12])
    if version != CKPT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    arrays = {}
    off = 12
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", blob, off); off += 4
            name = blob[off:off + name_len].decode("utf-8"); off += name_len
            (ndim,) = struct.unpack_from("<I", blob, off); off += 4
            shape = struct.unpack_from(f"<{ndim}I", blob, off); off += 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(blob, dtype="<f4", count=size, offset=off).reshape(shape)
            off += 4 * size
            arrays[name] = arr.copy()
    except (struct.error, ValueError) as exc:
        raise FormatError(f"{path}: truncated or corrupt checkpoint ({exc})") from exc
    sidecar_path = Path(str(path) + ".json")
    sidecar = json.loads(sidecar_path.read_text()) if sidecar_path.exists() else {}
    return arrays, sidecar
