"""Binary tensor fixtures: ``b"TREC"``, u32 rank, u32 extents, f64 payload (little-endian)."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"TREC"


def write_tensor(path: str | Path, array) -> None:
    # ascontiguousarray would promote a 0-d array to 1-d
    arr = np.asarray(array, dtype="<f8").copy(order="C")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())


def read_tensor(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: not a TREC tensor file")
    (rank,) = struct.unpack_from("<I", raw, 4)
    shape = struct.unpack_from(f"<{rank}I", raw, 8)
    offset = 8 + 4 * rank
    count = int(np.prod(shape, dtype=np.int64))
    if len(raw) - offset != 8 * count:
        raise ValueError(f"{path}: payload holds {len(raw) - offset} bytes, expected {8 * count}")
    return np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(shape).copy()
