"""ESVT1 weight files: a flat container of named float32 arrays.

Layout (all integers little-endian uint32)::

    b"ESVT1" | entry_count
    repeat entry_count times:
        name_len | name (UTF-8) | rank | extent * rank | float32 data (little-endian)
"""

from __future__ import annotations

import struct
from collections import OrderedDict
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import CheckpointError

MAGIC = b"ESVT1"
_U32 = struct.Struct("<I")


def save_arrays(path: str | Path, arrays: Mapping[str, np.ndarray]) -> None:
    chunks = [MAGIC, _U32.pack(len(arrays))]
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype="<f4", order="C")  # ascontiguousarray would promote 0-d to 1-d
        encoded = name.encode("utf-8")
        chunks.append(_U32.pack(len(encoded)))
        chunks.append(encoded)
        chunks.append(_U32.pack(arr.ndim))
        chunks.extend(_U32.pack(n) for n in arr.shape)
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_arrays(path: str | Path) -> "OrderedDict[str, np.ndarray]":
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if buf[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not an ESVT1 checkpoint")
    pos = len(MAGIC)

    def u32() -> int:
        nonlocal pos
        if pos + 4 > len(buf):
            raise CheckpointError(f"{path}: truncated at byte {pos}")
        (val,) = _U32.unpack_from(buf, pos)
        pos += 4
        return val

    out: OrderedDict[str, np.ndarray] = OrderedDict()
    for _ in range(u32()):
        nlen = u32()
        if pos + nlen > len(buf):
            raise CheckpointError(f"{path}: truncated entry name at byte {pos}")
        try:
            name = buf[pos : pos + nlen].decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointError(f"{path}: entry name at byte {pos} is not UTF-8") from exc
        pos += nlen
        shape = tuple(u32() for _ in range(u32()))
        nbytes = 4 * int(np.prod(shape, dtype=np.int64))
        if pos + nbytes > len(buf):
            raise CheckpointError(f"{path}: truncated data for entry {name!r}")
        out[name] = np.frombuffer(buf, dtype="<f4", count=nbytes // 4, offset=pos).reshape(shape).astype(np.float32)
        pos += nbytes
    if pos != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - pos} trailing bytes after last entry")
    return out


def check_shapes(arrays: Mapping[str, np.ndarray], expected: Mapping[str, tuple[int, ...]], source: str = "checkpoint") -> None:
    """Raise ``CheckpointError`` naming the first missing, unexpected or mis-shaped entry."""
    for name, shape in expected.items():
        if name not in arrays:
            raise CheckpointError(f"{source}: missing entry {name!r}")
        if tuple(arrays[name].shape) != tuple(shape):
            raise CheckpointError(
                f"{source}: entry {name!r} has shape {tuple(arrays[name].shape)}, expected {tuple(shape)}"
            )
    for name in arrays:
        if name not in expected:
            raise CheckpointError(f"{source}: unexpected entry {name!r}")
