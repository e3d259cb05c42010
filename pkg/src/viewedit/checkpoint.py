"""Flat binary parameter container.

Layout (all integers little-endian):
    magic   4 bytes  b"CVCE"
    version u32
    count   u32
    per tensor record:
        name_len u32, name utf-8 bytes,
        rank u32, dims rank * u64,
        data  f32 little-endian, C order.

Values are stored as f32; round-trips are bit-exact for f32 inputs.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"CVCE"
VERSION = 1


def save_checkpoint(path, tensors: dict[str, np.ndarray]) -> None:
    path = Path(path)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            data = np.asarray(arr, dtype="<f4", order="C")
            nb = name.encode("utf-8")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", data.ndim))
            for d in data.shape:
                f.write(struct.pack("<Q", d))
            f.write(data.tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    path = Path(path)
    out: dict[str, np.ndarray] = {}
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        (version,) = struct.unpack("<I", f.read(4))
        if version != VERSION:
            raise ValueError(f"{path}: unsupported container version {version}")
        (count,) = struct.unpack("<I", f.read(4))
        for _ in range(count):
            (name_len,) = struct.unpack("<I", f.read(4))
            name = f.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", f.read(4))
            dims = struct.unpack(f"<{rank}Q", f.read(8 * rank)) if rank else ()
            n = int(np.prod(dims)) if dims else 1
            data = np.frombuffer(f.read(4 * n), dtype="<f4").reshape(dims)
            out[name] = data.astype(np.float32)
    return out
