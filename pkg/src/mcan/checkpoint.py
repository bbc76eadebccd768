"""Binary named-tensor container.

Layout (all integers little-endian uint32)::

    version, tensor_count
    per tensor: name_len, name (utf-8), rank, extents..., float32 data (little-endian, row-major)
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: str | Path, tensors: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(struct.pack("<II", FORMAT_VERSION, len(tensors)))
        for name, arr in tensors.items():
            raw = name.encode("utf-8")
            arr = np.asarray(arr)
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    pos = 0

    def read(fmt: str):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(buf):
            raise CheckpointError(f"{path}: truncated at byte {pos}")
        vals = struct.unpack_from(fmt, buf, pos)
        pos += size
        return vals

    version, count = read("<II")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (n,) = read("<I")
        if pos + n > len(buf):
            raise CheckpointError(f"{path}: truncated name")
        name = buf[pos:pos + n].decode("utf-8")
        pos += n
        (rank,) = read("<I")
        shape = read(f"<{rank}I") if rank else ()
        size = int(np.prod(shape)) if rank else 1
        if pos + 4 * size > len(buf):
            raise CheckpointError(f"{path}: truncated data for {name}")
        out[name] = np.frombuffer(buf, dtype="<f4", count=size, offset=pos).reshape(shape).astype(np.float64)
        pos += 4 * size
    if pos != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - pos} trailing bytes")
    return out


def float32_roundtrip(state: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """What a save/load cycle would return, without touching disk."""
    return {n: np.asarray(a, dtype=np.float32).astype(np.float64) for n, a in state.items()}
