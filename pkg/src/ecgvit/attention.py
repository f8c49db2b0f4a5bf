"""Per-layer CLS-to-patch attention maps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .spectrogram import bilinear_resize


@dataclass
class AttentionMap:
    layer: int  # 1-based
    grid: np.ndarray  # [grid_h, grid_w] patch weights summing to 1
    image: np.ndarray  # [H, W] upsampled, min-max scaled to [0, 1]
    flat: bool


def cls_patch_weights(attn_layer: np.ndarray) -> np.ndarray:
    """Head-averaged CLS row without its self-weight, renormalized to sum 1.

    ``attn_layer`` is ``[heads, N+1, N+1]``; returns ``[N]``.
    """
    row = attn_layer[:, 0, 1:].astype(np.float64).mean(axis=0)
    return row / row.sum()


def attention_maps(model, image: np.ndarray, layers) -> list[AttentionMap]:
    cfg = model.config
    bad = [l for l in layers if not 1 <= l <= cfg.depth]
    if bad:
        raise ParameterError(f"layer {bad[0]} out of range; model depth is {cfg.depth} (valid 1..{cfg.depth})")
    _, attn = model.forward_with_attention(image)
    gh, gw = cfg.grid
    out = []
    for l in layers:
        grid = cls_patch_weights(attn[l - 1][0]).reshape(gh, gw)
        up = bilinear_resize(grid, cfg.image_h, cfg.image_w)
        lo, hi = up.min(), up.max()
        flat = bool(hi - lo <= 1e-12 * max(abs(hi), 1.0))
        scaled = np.zeros_like(up) if flat else (up - lo) / (hi - lo)
        out.append(AttentionMap(l, grid, scaled, flat))
    return out
