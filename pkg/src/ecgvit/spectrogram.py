"""Segment -> STFT -> power spectrogram -> normalized H x W x C image."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np

from .errors import ParameterError


@dataclass(frozen=True)
class StftConfig:
    win_len: int = 64
    hop: int = 16
    window_fn: str = "hann"
    fft_len: int = 64

    def __post_init__(self):
        if not 0 < self.hop <= self.win_len <= self.fft_len:
            raise ParameterError(f"need 0 < hop <= win_len <= fft_len, got {self.hop}, {self.win_len}, {self.fft_len}")
        if self.fft_len & (self.fft_len - 1):
            raise ParameterError(f"fft_len must be a power of two, got {self.fft_len}")
        if self.window_fn not in ("hann", "rectangular"):
            raise ParameterError(f"unknown window {self.window_fn!r}")

    def window(self) -> np.ndarray:
        return _window(self.window_fn, self.win_len)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:12]


@dataclass(frozen=True)
class RenderConfig:
    height: int = 224
    width: int = 224
    log_compress: bool = True
    colormap: str = "replicate"

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ParameterError("image size must be positive")
        if self.colormap not in ("replicate", "viridis_lut"):
            raise ParameterError(f"unknown colormap {self.colormap!r}")

    @property
    def channels(self) -> int:
        return 3


@dataclass
class PowerSpectrogram:
    bins: np.ndarray  # [freq_bins, frames]
    freq_resolution_hz: float | None = None
    frame_hop_s: float | None = None


@dataclass
class SpectrogramImage:
    pixels: np.ndarray  # [H, W, C], values in [-1, 1]
    segment_id: str = ""
    config_hash: str = ""


@lru_cache(maxsize=16)
def _window(kind: str, m: int) -> np.ndarray:
    if kind == "rectangular":
        w = np.ones(m)
    else:
        # periodic Hann
        w = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(m) / m)
    w.setflags(write=False)
    return w


def stft(x, cfg: StftConfig = StftConfig()) -> np.ndarray:
    """One-sided STFT, complex ``[fft_len // 2 + 1, frames]``.

    Frame ``l`` covers samples ``[l * hop, l * hop + win_len)``; each frame is
    windowed and zero-padded to ``fft_len``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ParameterError(f"stft expects a 1-D signal, got shape {x.shape}")
    if x.size < cfg.win_len:
        raise ParameterError(f"segment of {x.size} samples is shorter than window {cfg.win_len}")
    frames = (x.size - cfg.win_len) // cfg.hop + 1
    idx = np.arange(cfg.win_len)[None, :] + cfg.hop * np.arange(frames)[:, None]
    framed = x[idx] * cfg.window()
    return np.fft.rfft(framed, n=cfg.fft_len, axis=1).T


def power(s: np.ndarray, rate_hz: float | None = None, cfg: StftConfig | None = None) -> PowerSpectrogram:
    p = s.real**2 + s.imag**2
    res = hop_s = None
    if rate_hz and cfg:
        res, hop_s = rate_hz / cfg.fft_len, cfg.hop / rate_hz
    return PowerSpectrogram(p, res, hop_s)


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of the first two axes with corner-aligned sampling.

    Output pixel ``i`` samples source coordinate ``i * (in - 1) / (out - 1)``,
    so the four corners are copied exactly.
    """
    img = np.asarray(img, dtype=np.float64)
    in_h, in_w = img.shape[:2]

    def coords(n_in, n_out):
        if n_out == 1 or n_in == 1:
            pos = np.zeros(n_out)
        else:
            pos = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
        lo = np.clip(np.floor(pos).astype(int), 0, n_in - 1)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, pos - lo

    y0, y1, fy = coords(in_h, out_h)
    x0, x1, fx = coords(in_w, out_w)
    extra = (1,) * (img.ndim - 2)
    fy = fy.reshape((-1, 1) + extra)
    fx = fx.reshape((1, -1) + extra)
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bot = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy


@lru_cache(maxsize=1)
def viridis_lut() -> np.ndarray:
    """256 x 3 RGB table sampled from matplotlib's viridis."""
    from matplotlib import colormaps

    lut = colormaps["viridis"](np.linspace(0.0, 1.0, 256))[:, :3].astype(np.float64)
    lut.setflags(write=False)
    return lut


def render(spec: PowerSpectrogram | np.ndarray, cfg: RenderConfig = RenderConfig()) -> SpectrogramImage:
    p = spec.bins if isinstance(spec, PowerSpectrogram) else np.asarray(spec, dtype=np.float64)
    if p.size == 0:
        raise ParameterError("cannot render an empty spectrogram")
    # low frequencies at the bottom row, as in a conventional spectrogram plot
    img = np.flipud(np.log10(1.0 + p) if cfg.log_compress else p)
    lo, hi = img.min(), img.max()
    img = (img - lo) / (hi - lo) if hi > lo else np.zeros_like(img)
    img = bilinear_resize(img, cfg.height, cfg.width)
    if cfg.colormap == "replicate":
        rgb = np.repeat(img[:, :, None], 3, axis=2)
    else:
        rgb = viridis_lut()[np.clip(np.rint(img * 255), 0, 255).astype(int)]
    pixels = ((rgb - 0.5) / 0.5).astype(np.float32)
    return SpectrogramImage(pixels)


def segment_to_image(samples, stft_cfg: StftConfig = StftConfig(), render_cfg: RenderConfig = RenderConfig(), segment_id: str = "") -> SpectrogramImage:
    img = render(power(stft(samples, stft_cfg)), render_cfg)
    img.segment_id = segment_id
    img.config_hash = stft_cfg.digest()
    return img


def images_for(segments, stft_cfg: StftConfig, render_cfg: RenderConfig) -> np.ndarray:
    """Stack ``[n, H, W, C]`` float32 images for a list of segments."""
    out = np.zeros((len(segments), render_cfg.height, render_cfg.width, 3), dtype=np.float32)
    for i, seg in enumerate(segments):
        out[i] = segment_to_image(seg.samples, stft_cfg, render_cfg).pixels
    return out
