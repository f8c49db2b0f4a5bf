"""1D CNN baseline on raw ECG snippets.

Three stages of valid convolution -> ReLU -> max-pool(2): 5 kernels of width 5,
10 of width 5, 10 of width 4; then a hidden fully connected layer and the
classification layer.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .errors import DimensionError, ParameterError
from .tensor import Tensor


@dataclass(frozen=True)
class Cnn1dConfig:
    input_len: int = 256
    # (out_channels, kernel_width) per stage
    stages: tuple[tuple[int, int], ...] = ((5, 5), (10, 5), (10, 4))
    pool: int = 2
    fc_width: int = 64
    num_classes: int = 3

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(tuple(int(v) for v in s) for s in self.stages))
        lengths = shape_trace(self.input_len, self.stages, self.pool)
        if lengths[-1] < 1:
            raise ParameterError(f"input length {self.input_len} too short for the conv stack")

    @property
    def lengths(self) -> list[int]:
        return shape_trace(self.input_len, self.stages, self.pool)

    @property
    def flat_features(self) -> int:
        return self.stages[-1][0] * self.lengths[-1]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stages"] = [list(s) for s in self.stages]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Cnn1dConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ParameterError(f"unknown CNN config keys: {sorted(unknown)}")
        d = dict(d)
        if "stages" in d:
            d["stages"] = tuple(tuple(s) for s in d["stages"])
        return cls(**d)


def shape_trace(input_len: int, stages, pool: int = 2) -> list[int]:
    """Lengths after each conv and each pool: ``[conv1, pool1, conv2, pool2, ...]``."""
    out = []
    n = input_len
    for _, k in stages:
        n = n - k + 1
        out.append(n)
        n = n // pool if n > 0 else 0
        out.append(n)
    return out


def param_shapes(cfg: Cnn1dConfig) -> "OrderedDict[str, tuple[int, ...]]":
    shapes: OrderedDict[str, tuple[int, ...]] = OrderedDict()
    c_in = 1
    for i, (c_out, k) in enumerate(cfg.stages):
        shapes[f"conv{i}.w"] = (c_out, c_in, k)
        shapes[f"conv{i}.b"] = (c_out,)
        c_in = c_out
    shapes["fc.w"] = (cfg.flat_features, cfg.fc_width)
    shapes["fc.b"] = (cfg.fc_width,)
    shapes["head.w"] = (cfg.fc_width, cfg.num_classes)
    shapes["head.b"] = (cfg.num_classes,)
    return shapes


def init_params(cfg: Cnn1dConfig, seed: int = 0) -> "OrderedDict[str, Tensor]":
    # He-uniform weights, zero biases
    rng = np.random.default_rng(seed)
    params: OrderedDict[str, Tensor] = OrderedDict()
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".b"):
            arr = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[1:])) if name.startswith("conv") else shape[0]
            bound = math.sqrt(6.0 / fan_in)
            arr = rng.uniform(-bound, bound, shape)
        params[name] = Tensor(arr, requires_grad=True, name=name)
    return params


def cnn_forward(snippets, params, cfg: Cnn1dConfig) -> Tensor:
    """``[B, 1, L]`` (or ``[1, L]`` / ``[B, L]``) raw snippets -> ``[B, classes]`` logits."""
    x = T.as_tensor(snippets)
    if x.ndim == 1:
        x = T.reshape(x, (1, 1, -1))
    elif x.ndim == 2:
        x = T.reshape(x, (x.shape[0], 1, x.shape[1]))
    if x.shape[-1] != cfg.input_len or x.shape[1] != 1:
        raise DimensionError(f"expected snippets of shape [B, 1, {cfg.input_len}], got {x.shape}")
    for i in range(len(cfg.stages)):
        x = T.conv1d(x, params[f"conv{i}.w"], params[f"conv{i}.b"])
        x = T.max_pool1d(T.relu(x), cfg.pool)
    x = T.reshape(x, (x.shape[0], -1))
    x = T.relu(T.matmul(x, params["fc.w"]) + params["fc.b"])
    return T.matmul(x, params["head.w"]) + params["head.b"]


class Cnn1d:
    kind = "cnn1d"

    def __init__(self, cfg: Cnn1dConfig, params=None, seed: int = 0):
        self.config = cfg
        self.params = params if params is not None else init_params(cfg, seed)

    def forward(self, snippets: np.ndarray, training: bool = False) -> Tensor:
        dtype = self.params["fc.w"].dtype
        return cnn_forward(Tensor(snippets, dtype=dtype), self.params, self.config)

    def expected_shapes(self):
        return param_shapes(self.config)
