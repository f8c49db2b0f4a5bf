"""Image dumps: binary PGM (P5) for single-channel maps and raw float32 + JSON sidecar for tensors."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import IngestionError


def write_pgm(path: str | Path, img: np.ndarray) -> None:
    """Write a ``[H, W]`` array with values in [0, 1] as 8-bit P5."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"PGM needs a 2-D array, got shape {img.shape}")
    h, w = img.shape
    data = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + data.tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    buf = Path(path).read_bytes()
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(buf) and buf[pos : pos + 1].isspace():
            pos += 1
        if buf[pos : pos + 1] == b"#":
            pos = buf.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos : pos + 1].isspace():
            pos += 1
        tokens.append(buf[start:pos])
    if tokens[0] != b"P5":
        raise IngestionError(f"{path}: not a binary PGM")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    pos += 1
    dtype = np.uint8 if maxval < 256 else ">u2"
    return np.frombuffer(buf, dtype=dtype, count=w * h, offset=pos).reshape(h, w).astype(np.float64) / maxval


def write_tensor(path: str | Path, arr: np.ndarray, **meta) -> None:
    """Write ``[H, W, C]`` (or ``[H, W]``) float32 data plus a ``.json`` sidecar with h, w, c."""
    arr = np.asarray(arr, dtype="<f4")
    if arr.ndim == 2:
        arr = arr[:, :, None]
    h, w, c = arr.shape
    path = Path(path)
    path.write_bytes(np.ascontiguousarray(arr).tobytes())
    path.with_suffix(".json").write_text(json.dumps({"h": h, "w": w, "c": c, **meta}, indent=1, sort_keys=True))


def read_tensor(path: str | Path) -> np.ndarray:
    path = Path(path)
    sidecar = path.with_suffix(".json")
    try:
        meta = json.loads(sidecar.read_text())
        h, w, c = int(meta["h"]), int(meta["w"]), int(meta["c"])
    except (OSError, KeyError, ValueError) as exc:
        raise IngestionError(f"{path}: missing or invalid sidecar {sidecar.name}") from exc
    try:
        data = np.frombuffer(path.read_bytes(), dtype="<f4")
    except OSError as exc:
        raise IngestionError(f"cannot read {path}: {exc}") from exc
    if data.size != h * w * c:
        raise IngestionError(f"{path}: {data.size} floats, sidecar says {h}x{w}x{c}")
    return data.reshape(h, w, c).astype(np.float32)
