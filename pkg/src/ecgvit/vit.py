"""Vision Transformer over spectrogram images, built on :mod:`ecgvit.tensor`.

Block layout (pre-LN)::

    x = x + MSA(LN1(x))
    x = x + W2 . GELU(W1 . LN2(x))

followed by a final LayerNorm; the head reads only the CLS token (index 0).
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .errors import DimensionError, ParameterError
from .tensor import Tensor

INIT_STD = 0.02


@dataclass(frozen=True)
class VitConfig:
    image_h: int = 224
    image_w: int = 224
    channels: int = 3
    patch: int = 16
    embed_dim: int = 64
    depth: int = 4
    heads: int = 4
    mlp_ratio: int = 4
    num_classes: int = 3
    dropout_rate: float = 0.0
    gelu_approximate: bool = False
    ln_eps: float = 1e-6

    def __post_init__(self):
        if self.patch < 1 or self.image_h % self.patch or self.image_w % self.patch:
            raise ParameterError(f"patch {self.patch} must divide image {self.image_h}x{self.image_w}")
        if self.heads < 1 or self.embed_dim % self.heads:
            raise ParameterError(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        if self.depth < 0 or self.num_classes < 1 or self.mlp_ratio < 1:
            raise ParameterError("depth must be >= 0, num_classes and mlp_ratio >= 1")

    @property
    def num_patches(self) -> int:
        return (self.image_h * self.image_w) // (self.patch * self.patch)

    @property
    def grid(self) -> tuple[int, int]:
        return self.image_h // self.patch, self.image_w // self.patch

    @property
    def patch_dim(self) -> int:
        return self.patch * self.patch * self.channels

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.heads

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "VitConfig":
        known = cls.__dataclass_fields__
        unknown = set(d) - set(known)
        if unknown:
            raise ParameterError(f"unknown ViT config keys: {sorted(unknown)}")
        return cls(**d)


def patchify(image: np.ndarray, patch: int) -> np.ndarray:
    """Split ``[H, W, C]`` (or ``[B, H, W, C]``) into ``[N, P*P*C]`` row-major patches.

    Patches are ordered left-to-right, top-to-bottom over the patch grid; each is
    flattened as (row, column, channel) with channel varying fastest.
    """
    image = np.asarray(image)
    single = image.ndim == 3
    if single:
        image = image[None]
    if image.ndim != 4:
        raise DimensionError(f"patchify expects [H, W, C] or [B, H, W, C], got {image.shape}")
    b, h, w, c = image.shape
    if patch < 1 or h % patch or w % patch:
        raise ParameterError(f"patch size {patch} does not divide image {h}x{w}")
    gh, gw = h // patch, w // patch
    out = image.reshape(b, gh, patch, gw, patch, c).transpose(0, 1, 3, 2, 4, 5).reshape(b, gh * gw, patch * patch * c)
    return out[0] if single else out


def unpatchify(patches: np.ndarray, image_h: int, image_w: int, patch: int, channels: int) -> np.ndarray:
    patches = np.asarray(patches)
    single = patches.ndim == 2
    if single:
        patches = patches[None]
    b = patches.shape[0]
    gh, gw = image_h // patch, image_w // patch
    out = patches.reshape(b, gh, gw, patch, patch, channels).transpose(0, 1, 3, 2, 4, 5).reshape(b, image_h, image_w, channels)
    return out[0] if single else out


def param_shapes(cfg: VitConfig) -> "OrderedDict[str, tuple[int, ...]]":
    d, hidden = cfg.embed_dim, cfg.embed_dim * cfg.mlp_ratio
    shapes: OrderedDict[str, tuple[int, ...]] = OrderedDict()
    shapes["patch_proj"] = (cfg.patch_dim, d)
    shapes["cls_token"] = (1, d)
    shapes["pos_embed"] = (cfg.num_patches + 1, d)
    for i in range(cfg.depth):
        p = f"blocks.{i}."
        shapes[p + "ln1.gamma"] = (d,)
        shapes[p + "ln1.beta"] = (d,)
        for name in ("q", "k", "v", "o"):
            shapes[p + f"attn.w{name}"] = (d, d)
            shapes[p + f"attn.b{name}"] = (d,)
        shapes[p + "ln2.gamma"] = (d,)
        shapes[p + "ln2.beta"] = (d,)
        shapes[p + "mlp.w1"] = (d, hidden)
        shapes[p + "mlp.b1"] = (hidden,)
        shapes[p + "mlp.w2"] = (hidden, d)
        shapes[p + "mlp.b2"] = (d,)
    shapes["ln_f.gamma"] = (d,)
    shapes["ln_f.beta"] = (d,)
    shapes["head.w"] = (d, cfg.num_classes)
    shapes["head.b"] = (cfg.num_classes,)
    return shapes


# std of a unit normal truncated to [-2, 2]
_TRUNC_STD = math.sqrt(1.0 - 2 * 2.0 * math.exp(-2.0) / math.sqrt(2 * math.pi) / math.erf(2.0 / math.sqrt(2)))


def trunc_normal(rng: np.random.Generator, shape, std: float = INIT_STD) -> np.ndarray:
    """Normal draws truncated at two standard deviations, rescaled so the result has std ``std``."""
    n = int(np.prod(shape))
    out = np.empty(0)
    while out.size < n:
        draw = rng.standard_normal(2 * n + 16)
        out = np.concatenate([out, draw[np.abs(draw) <= 2.0]])
    return (out[:n] * (std / _TRUNC_STD)).reshape(shape)


def init_params(cfg: VitConfig, seed: int = 0) -> "OrderedDict[str, Tensor]":
    rng = np.random.default_rng(seed)
    params: OrderedDict[str, Tensor] = OrderedDict()
    for name, shape in param_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "gamma":
            arr = np.ones(shape)
        elif leaf == "beta" or leaf.startswith("b"):
            arr = np.zeros(shape)
        elif name in ("cls_token", "pos_embed"):
            arr = rng.normal(0.0, INIT_STD, shape)
        else:
            arr = trunc_normal(rng, shape)
        params[name] = Tensor(arr, requires_grad=True, name=name)
    return params


def embed(patches: Tensor, params) -> Tensor:
    """``[B, N, P*P*C]`` patches -> ``[B, N+1, D]`` tokens with CLS first and positions added."""
    patches = T.as_tensor(patches)
    proj, cls, pos = params["patch_proj"], params["cls_token"], params["pos_embed"]
    if patches.ndim != 3 or patches.shape[-1] != proj.shape[0]:
        raise DimensionError(f"patches {patches.shape} do not match projection {proj.shape}")
    if patches.shape[1] + 1 != pos.shape[0]:
        raise DimensionError(f"{patches.shape[1]} patches but {pos.shape[0]} position embeddings")
    b = patches.shape[0]
    x = T.matmul(patches, proj)
    cls_b = T.expand(T.reshape(cls, (1, 1, cls.shape[-1])), (b, 1, cls.shape[-1]))
    return T.concat([cls_b, x], axis=1) + pos


def attention(x: Tensor, params, prefix: str, heads: int) -> tuple[Tensor, np.ndarray]:
    b, t, d = x.shape
    dh = d // heads

    def split(name):
        y = T.matmul(x, params[prefix + "w" + name]) + params[prefix + "b" + name]
        return T.transpose(T.reshape(y, (b, t, heads, dh)), (0, 2, 1, 3))

    q, k, v = split("q"), split("k"), split("v")
    scores = T.matmul(q, T.swapaxes(k, -1, -2)) * (1.0 / math.sqrt(dh))
    weights = T.softmax(scores, axis=-1)
    ctx = T.reshape(T.transpose(T.matmul(weights, v), (0, 2, 1, 3)), (b, t, d))
    return T.matmul(ctx, params[prefix + "wo"]) + params[prefix + "bo"], weights.data


def encoder_forward(tokens: Tensor, params, cfg: VitConfig, rng: np.random.Generator | None = None, training: bool = False):
    """Run all blocks plus the final LayerNorm.

    Returns ``(tokens_out, attn)`` where ``attn[l]`` is the post-softmax
    ``[B, heads, N+1, N+1]`` array of block ``l`` (0-based).
    """
    x = T.as_tensor(tokens)
    squeeze = x.ndim == 2
    if squeeze:
        x = T.reshape(x, (1,) + x.shape)
    if x.shape[-1] != cfg.embed_dim:
        raise DimensionError(f"tokens have width {x.shape[-1]}, config expects {cfg.embed_dim}")
    rate = cfg.dropout_rate
    attn = []
    for i in range(cfg.depth):
        p = f"blocks.{i}."
        h = T.layer_norm(x, params[p + "ln1.gamma"], params[p + "ln1.beta"], cfg.ln_eps)
        a, w = attention(h, params, p + "attn.", cfg.heads)
        attn.append(w)
        x = x + T.dropout(a, rate, rng, training)
        h = T.layer_norm(x, params[p + "ln2.gamma"], params[p + "ln2.beta"], cfg.ln_eps)
        h = T.gelu(T.matmul(h, params[p + "mlp.w1"]) + params[p + "mlp.b1"], approximate=cfg.gelu_approximate)
        h = T.matmul(T.dropout(h, rate, rng, training), params[p + "mlp.w2"]) + params[p + "mlp.b2"]
        x = x + T.dropout(h, rate, rng, training)
    x = T.layer_norm(x, params["ln_f.gamma"], params["ln_f.beta"], cfg.ln_eps)
    if squeeze:
        x = T.reshape(x, x.shape[1:])
        attn = [w[0] for w in attn]
    return x, attn


def classify(tokens_out: Tensor, params) -> Tensor:
    """Logits from the CLS token: ``[B, N+1, D] -> [B, classes]`` (or ``[N+1, D] -> [classes]``)."""
    cls = tokens_out[..., 0, :]
    if cls.ndim == 1:
        cls = T.reshape(cls, (1, -1))
        return T.reshape(T.matmul(cls, params["head.w"]) + params["head.b"], (-1,))
    return T.matmul(cls, params["head.w"]) + params["head.b"]


class VisionTransformer:
    kind = "vit"

    def __init__(self, cfg: VitConfig, params=None, seed: int = 0):
        self.config = cfg
        self.params = params if params is not None else init_params(cfg, seed)
        self.rng = np.random.default_rng(seed)

    def _tokens(self, images: np.ndarray) -> Tensor:
        images = np.asarray(images)
        if images.ndim == 3:
            images = images[None]
        cfg = self.config
        if images.shape[1:] != (cfg.image_h, cfg.image_w, cfg.channels):
            raise DimensionError(f"images {images.shape[1:]} do not match config {(cfg.image_h, cfg.image_w, cfg.channels)}")
        dtype = self.params["patch_proj"].dtype
        return embed(Tensor(patchify(images, cfg.patch), dtype=dtype), self.params)

    def forward_with_attention(self, images: np.ndarray, training: bool = False):
        out, attn = encoder_forward(self._tokens(images), self.params, self.config, self.rng, training)
        return classify(out, self.params), attn

    def forward(self, images: np.ndarray, training: bool = False) -> Tensor:
        return self.forward_with_attention(images, training)[0]

    def features(self, images: np.ndarray) -> np.ndarray:
        """Final-LayerNorm CLS vectors ``[B, D]``."""
        out, _ = encoder_forward(self._tokens(images), self.params, self.config)
        return out.data[:, 0, :].copy()

    def expected_shapes(self):
        return param_shapes(self.config)
