"""Tensor dump file reader: magic "IRPE", version byte, u32 dims, f32 data."""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"IRPE"
VERSION = 1


class DumpError(Exception):
    pass


def load_dump(path) -> np.ndarray:
    with open(path, "rb") as fp:
        magic = fp.read(4)
        if magic != MAGIC:
            raise DumpError(f"{path}: bad magic {magic!r}")
        version = fp.read(1)
        if version != bytes([VERSION]):
            raise DumpError(f"{path}: unsupported version {version!r}")
        header = fp.read(12)
        if len(header) != 12:
            raise DumpError(f"{path}: truncated header")
        tokens, h, w = struct.unpack("<III", header)
        payload = fp.read(4 * tokens * h * w)
        if len(payload) != 4 * tokens * h * w:
            raise DumpError(f"{path}: truncated payload")
        return np.frombuffer(payload, dtype="<f4").reshape(tokens, h, w).copy()


def save_dump(path, array: np.ndarray) -> None:
    arr = np.ascontiguousarray(array, dtype="<f4")
    if arr.ndim != 3:
        raise DumpError(f"dump requires a (tokens, h, w) array, got {arr.shape}")
    with open(path, "wb") as fp:
        fp.write(MAGIC)
        fp.write(bytes([VERSION]))
        fp.write(struct.pack("<III", *arr.shape))
        fp.write(arr.tobytes())
