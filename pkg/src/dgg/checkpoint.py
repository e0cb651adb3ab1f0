"""Versioned binary checkpoint: named float64 tensors plus a JSON meta block.

Layout (all integers little-endian):

    magic   4 bytes  b"GGCP"
    version u32      currently 1
    meta    u64 length + UTF-8 JSON
    count   u32      number of tensors
    tensor  u16 name length + UTF-8 name
            u8  ndim
            u32 x ndim dims
            float64 x prod(dims) row-major values
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"GGCP"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, meta: dict, tensors: dict[str, np.ndarray]) -> None:
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(tensors)))
        for name, values in tensors.items():
            arr = np.ascontiguousarray(values, dtype=np.float64)
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(arr.astype("<f8").tobytes())


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    view = memoryview(data)
    if bytes(view[:4]) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (version,) = struct.unpack_from("<I", view, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    (meta_len,) = struct.unpack_from("<Q", view, 8)
    pos = 16
    meta = json.loads(bytes(view[pos : pos + meta_len]).decode("utf-8"))
    pos += meta_len
    (count,) = struct.unpack_from("<I", view, pos)
    pos += 4
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", view, pos)
        pos += 2
        name = bytes(view[pos : pos + name_len]).decode("utf-8")
        pos += name_len
        (ndim,) = struct.unpack_from("<B", view, pos)
        pos += 1
        dims = struct.unpack_from(f"<{ndim}I", view, pos) if ndim else ()
        pos += 4 * ndim
        size = int(np.prod(dims)) if ndim else 1
        values = np.frombuffer(view, dtype="<f8", count=size, offset=pos).reshape(dims)
        pos += 8 * size
        tensors[name] = values.astype(np.float64)
    return meta, tensors
