"""Glue between manifests, configs and model inputs."""

from __future__ import annotations

from dataclasses import asdict

import numpy as np

from .cnn import Cnn1dConfig
from .errors import ParameterError
from .signal_io import LabelScheme, Manifest, Segment
from .spectrogram import RenderConfig, StftConfig, images_for
from .training import LabeledData, TrainConfig
from .vit import VitConfig


def _section(manifest: Manifest | None, key: str) -> dict:
    if manifest is None:
        return {}
    sec = manifest.extra.get(key, {})
    if not isinstance(sec, dict):
        raise ParameterError(f"manifest section {key!r} must be an object")
    return dict(sec)


def _build(cls, values: dict, what: str):
    unknown = set(values) - set(cls.__dataclass_fields__)
    if unknown:
        raise ParameterError(f"unknown {what} keys: {sorted(unknown)}")
    try:
        return cls(**values)
    except TypeError as exc:
        raise ParameterError(f"bad {what}: {exc}") from exc


def stft_config(manifest: Manifest | None = None, win: int | None = None, hop: int | None = None) -> StftConfig:
    values = _section(manifest, "stft")
    if win is not None:
        values["win_len"] = win
        if win >= 1:
            values["fft_len"] = max(int(values.get("fft_len", 64)), 1 << (int(win) - 1).bit_length())
    if hop is not None:
        values["hop"] = hop
    return _build(StftConfig, values, "stft config")


def render_config(manifest: Manifest | None = None) -> RenderConfig:
    return _build(RenderConfig, _section(manifest, "image"), "image config")


def train_config(manifest: Manifest | None = None, **overrides) -> TrainConfig:
    values = _section(manifest, "train")
    values.update({k: v for k, v in overrides.items() if v is not None})
    return _build(TrainConfig, values, "train config")


def model_config(kind: str, manifest: Manifest | None, num_classes: int, render: RenderConfig, input_len: int):
    if kind == "vit":
        values = {"image_h": render.height, "image_w": render.width, "channels": render.channels, "num_classes": num_classes}
        values.update(_section(manifest, "vit"))
        cfg = _build(VitConfig, values, "vit config")
        if (cfg.image_h, cfg.image_w) != (render.height, render.width):
            raise ParameterError(f"vit image size {cfg.image_h}x{cfg.image_w} differs from rendered {render.height}x{render.width}")
        return cfg
    if kind == "cnn1d":
        values = {"input_len": input_len, "num_classes": num_classes}
        values.update(_section(manifest, "cnn1d"))
        if "stages" in values:
            values["stages"] = tuple(tuple(s) for s in values["stages"])
        return _build(Cnn1dConfig, values, "cnn1d config")
    raise ParameterError(f"unknown model kind {kind!r}")


def model_inputs(kind: str, segments: list[Segment], stft: StftConfig, render: RenderConfig) -> np.ndarray:
    if kind == "vit":
        return images_for(segments, stft, render)
    if not segments:
        return np.zeros((0, 1, 0), dtype=np.float32)
    return np.stack([s.samples for s in segments])[:, None, :].astype(np.float32)


def labeled_data(kind: str, segments: list[Segment], scheme: LabelScheme, stft: StftConfig, render: RenderConfig) -> LabeledData:
    return LabeledData(
        [s.segment_id for s in segments],
        [s.subject_id for s in segments],
        model_inputs(kind, segments, stft, render),
        [s.label for s in segments],
        list(scheme.class_names),
    )


def snapshot(kind: str, model_cfg, stft: StftConfig, render: RenderConfig, train: TrainConfig, scheme: LabelScheme, manifest: Manifest | None) -> dict:
    return {
        "model": kind,
        "model_config": model_cfg.to_dict(),
        "stft": asdict(stft),
        "image": asdict(render),
        "train": asdict(train),
        "labels": scheme.to_dict(),
        "window_s": manifest.window_s if manifest else None,
        "hop_s": manifest.hop_s if manifest else None,
    }

