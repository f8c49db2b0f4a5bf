"""Model construction and checkpoint I/O shared by the ViT and the 1D CNN.

A checkpoint is an ESVT1 weight file plus a JSON sidecar (same stem,
``.json``) recording the model kind and its config.
"""

from __future__ import annotations

import json
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .checkpoint import check_shapes, load_arrays, save_arrays
from .cnn import Cnn1d, Cnn1dConfig
from .errors import CheckpointError, ParameterError
from .tensor import Tensor
from .vit import VisionTransformer, VitConfig

MODEL_KINDS = ("vit", "cnn1d")


def build_model(kind: str, config, seed: int = 0):
    if kind == "vit":
        return VisionTransformer(config, seed=seed)
    if kind == "cnn1d":
        return Cnn1d(config, seed=seed)
    raise ParameterError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")


def config_from_dict(kind: str, d: dict):
    if kind == "vit":
        return VitConfig.from_dict(d)
    if kind == "cnn1d":
        return Cnn1dConfig.from_dict(d)
    raise ParameterError(f"unknown model kind {kind!r}")


def save_params(path: str | Path, model) -> None:
    path = Path(path)
    save_arrays(path, OrderedDict((k, v.data) for k, v in model.params.items()))
    meta = {"kind": model.kind, "config": model.config.to_dict()}
    path.with_suffix(".json").write_text(json.dumps(meta, indent=1, sort_keys=True))


def load_params(path: str | Path, config=None, kind: str | None = None):
    """Load a model; shapes are validated against ``config`` (or the sidecar config)."""
    path = Path(path)
    sidecar = path.with_suffix(".json")
    meta = None
    if sidecar.exists():
        try:
            meta = json.loads(sidecar.read_text())
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"{sidecar}: invalid JSON") from exc
    if config is None:
        if meta is None:
            raise CheckpointError(f"{path}: no config given and no sidecar {sidecar.name}")
        try:
            kind = meta["kind"]
            config = config_from_dict(kind, meta["config"])
        except (KeyError, TypeError, ParameterError) as exc:
            raise CheckpointError(f"{sidecar}: bad model description ({exc})") from exc
    elif kind is None:
        kind = "vit" if isinstance(config, VitConfig) else "cnn1d"
    model = build_model(kind, config)
    arrays = load_arrays(path)
    check_shapes(arrays, model.expected_shapes(), source=str(path))
    model.params = OrderedDict(
        (name, Tensor(np.array(arrays[name]), requires_grad=True, name=name)) for name in model.expected_shapes()
    )
    return model
