import math

import numpy as np
import pytest
from scipy import stats

from ecgvit import tensor as T
from ecgvit.errors import DimensionError, ParameterError
from ecgvit.tensor import Tensor, default_dtype, gradcheck
from ecgvit.vit import (
    INIT_STD,
    VisionTransformer,
    VitConfig,
    classify,
    embed,
    encoder_forward,
    init_params,
    param_shapes,
    patchify,
    trunc_normal,
    unpatchify,
)


def f64_params(cfg, seed=0, scale=1.0):
    """Float64 params with non-trivial LN affine terms and biases."""
    rng = np.random.default_rng(seed + 100)
    with default_dtype(np.float64):
        params = init_params(cfg, seed)
        for name, p in params.items():
            if name.endswith(("gamma", "beta")) or name.rsplit(".", 1)[-1].startswith("b"):
                p.data = p.data + 0.3 * rng.normal(size=p.shape)
            else:
                p.data = p.data * scale
    return params


# reference arithmetic, plain numpy

def ref_ln(x, g, b, eps=1e-6):
    mu = x.mean(-1, keepdims=True)
    var = ((x - mu) ** 2).mean(-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * g + b


def ref_gelu(x):
    return np.vectorize(lambda v: 0.5 * v * (1 + math.erf(v / math.sqrt(2))))(x)


def ref_block(x, p, pre, heads):
    t, d = x.shape
    dh = d // heads
    h = ref_ln(x, p[pre + "ln1.gamma"], p[pre + "ln1.beta"])
    q = h @ p[pre + "attn.wq"] + p[pre + "attn.bq"]
    k = h @ p[pre + "attn.wk"] + p[pre + "attn.bk"]
    v = h @ p[pre + "attn.wv"] + p[pre + "attn.bv"]
    ctx = np.zeros_like(x)
    weights = []
    for i in range(heads):
        sl = slice(i * dh, (i + 1) * dh)
        s = q[:, sl] @ k[:, sl].T / math.sqrt(dh)
        e = np.exp(s - s.max(1, keepdims=True))
        a = e / e.sum(1, keepdims=True)
        weights.append(a)
        ctx[:, sl] = a @ v[:, sl]
    x = x + ctx @ p[pre + "attn.wo"] + p[pre + "attn.bo"]
    h = ref_ln(x, p[pre + "ln2.gamma"], p[pre + "ln2.beta"])
    h = ref_gelu(h @ p[pre + "mlp.w1"] + p[pre + "mlp.b1"]) @ p[pre + "mlp.w2"] + p[pre + "mlp.b2"]
    return x + h, np.stack(weights)


class TestPatchify:
    def test_standard_geometry(self):
        assert patchify(np.zeros((224, 224, 3)), 16).shape == (196, 768)
        assert VitConfig().num_patches == 196

    def test_single_patch(self):
        img = np.arange(16.0).reshape(4, 4, 1)
        out = patchify(img, 4)
        assert out.shape == (1, 16) and np.array_equal(out[0], img.ravel())

    def test_reassembly(self):
        img = np.arange(16.0).reshape(4, 4, 1)
        out = patchify(img, 2)
        assert np.array_equal(out[0], [0, 1, 4, 5]) and np.array_equal(out[3], [10, 11, 14, 15])
        assert np.array_equal(unpatchify(out, 4, 4, 2, 1), img)

    def test_round_trip_random(self):
        img = np.random.default_rng(0).normal(size=(2, 12, 8, 3))
        assert np.array_equal(unpatchify(patchify(img, 4), 12, 8, 4, 3), img)

    def test_non_dividing(self):
        with pytest.raises(ParameterError):
            patchify(np.zeros((10, 10, 1)), 4)


class TestEmbed:
    cfg = VitConfig(image_h=4, image_w=4, channels=1, patch=2, embed_dim=4, depth=0, heads=1, num_classes=2)

    def test_zero_patches(self):
        p = f64_params(self.cfg)
        p["pos_embed"].data[:] = 0
        out = embed(Tensor(np.zeros((1, 4, 4))), p).data[0]
        assert np.array_equal(out[0], p["cls_token"].data[0]) and np.all(out[1:] == 0)

    def test_identity_projection(self):
        cfg = VitConfig(image_h=2, image_w=2, channels=1, patch=2, embed_dim=4, depth=0, heads=1)
        p = f64_params(cfg)
        p["patch_proj"].data = np.eye(4)
        x = np.array([[[1.0, 2.0, 3.0, 4.0]]])
        out = embed(Tensor(x), p).data[0]
        assert np.allclose(out[1], x[0, 0] + p["pos_embed"].data[1])

    def test_matrix_oracle(self):
        p = f64_params(self.cfg, seed=4)
        x = np.random.default_rng(5).normal(size=(2, 4, 4))
        out = embed(Tensor(x, dtype=np.float64), p).data
        cls = np.broadcast_to(p["cls_token"].data, (2, 1, 4))
        expected = np.concatenate([cls, x @ p["patch_proj"].data], axis=1) + p["pos_embed"].data
        assert np.max(np.abs(out - expected)) < 1e-6

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            embed(Tensor(np.zeros((1, 3, 4))), f64_params(self.cfg))


class TestEncoder:
    def test_depth_zero_is_final_ln(self):
        cfg = VitConfig(image_h=4, image_w=4, channels=1, patch=2, embed_dim=4, depth=0, heads=2)
        p = f64_params(cfg)
        x = np.random.default_rng(0).normal(size=(5, 4))
        out, attn = encoder_forward(Tensor(x, dtype=np.float64), p, cfg)
        assert attn == []
        assert np.allclose(out.data, ref_ln(x, p["ln_f.gamma"].data, p["ln_f.beta"].data))

    def test_single_token(self):
        cfg = VitConfig(image_h=4, image_w=4, channels=1, patch=2, embed_dim=4, depth=2, heads=2)
        _, attn = encoder_forward(Tensor(np.ones((1, 4))), f64_params(cfg), cfg)
        for w in attn:
            assert w.shape == (2, 1, 1) and np.all(w == 1.0)

    def test_reference_oracle(self):
        # D=4, h=2, L=1, N=3 (image 2x6 with 2x2 patches)
        cfg = VitConfig(image_h=2, image_w=6, channels=1, patch=2, embed_dim=4, depth=1, heads=2, num_classes=3)
        p = f64_params(cfg, seed=11, scale=20.0)
        x = np.random.default_rng(12).normal(size=(4, 4))
        out, attn = encoder_forward(Tensor(x, dtype=np.float64), p, cfg)
        raw = {k: v.data for k, v in p.items()}
        ref, ref_w = ref_block(x, raw, "blocks.0.", 2)
        ref = ref_ln(ref, raw["ln_f.gamma"], raw["ln_f.beta"])
        assert np.max(np.abs(out.data - ref)) < 1e-5
        assert np.max(np.abs(attn[0] - ref_w)) < 1e-5

    def test_attention_rows_and_stack_shape(self):
        cfg = VitConfig(image_h=8, image_w=8, channels=3, patch=4, embed_dim=8, depth=3, heads=2)
        model = VisionTransformer(cfg, seed=1)
        _, attn = model.forward_with_attention(np.random.default_rng(0).normal(size=(2, 8, 8, 3)))
        assert len(attn) == 3
        for w in attn:
            assert w.shape == (2, 2, 5, 5)
            assert np.allclose(w.sum(-1), 1.0, atol=1e-6)

    def test_full_size_attention_shape(self):
        cfg = VitConfig(embed_dim=8, depth=1, heads=2)
        _, attn = VisionTransformer(cfg).forward_with_attention(np.zeros((224, 224, 3), np.float32))
        assert attn[0].shape == (1, 2, 197, 197)


class TestClassify:
    def test_zero_cls(self):
        p = {"head.w": Tensor(np.ones((4, 3))), "head.b": Tensor(np.zeros(3))}
        assert np.all(classify(Tensor(np.zeros((5, 4))), p).data == 0)

    def test_identity_head(self):
        p = {"head.w": Tensor(np.eye(3)), "head.b": Tensor(np.zeros(3))}
        tok = np.random.default_rng(0).normal(size=(2, 4, 3)).astype(np.float32)
        assert np.array_equal(classify(Tensor(tok), p).data, tok[:, 0, :])

    def test_product_oracle(self):
        rng = np.random.default_rng(1)
        w, b, tok = rng.normal(size=(4, 3)), rng.normal(size=3), rng.normal(size=(6, 4))
        with default_dtype(np.float64):
            out = classify(Tensor(tok), {"head.w": Tensor(w), "head.b": Tensor(b)}).data
        assert np.max(np.abs(out - (tok[0] @ w + b))) < 1e-12


class TestInit:
    cfg = VitConfig(image_h=8, image_w=8, channels=1, patch=4, embed_dim=8, depth=1, heads=2)

    def test_same_seed(self):
        a, b = init_params(self.cfg, 5), init_params(self.cfg, 5)
        assert all(np.array_equal(a[k].data, b[k].data) for k in a)

    def test_different_seed(self):
        a, b = init_params(self.cfg, 5), init_params(self.cfg, 6)
        assert not np.array_equal(a["patch_proj"].data, b["patch_proj"].data)

    def test_names_and_shapes(self):
        p = init_params(self.cfg)
        assert {k: v.shape for k, v in p.items()} == dict(param_shapes(self.cfg))
        assert np.all(p["blocks.0.ln1.gamma"].data == 1) and np.all(p["blocks.0.attn.bq"].data == 0)

    def test_trunc_normal_statistics(self):
        x = trunc_normal(np.random.default_rng(0), (100, 100))
        n = x.size
        # truncated-normal kurtosis from scipy sets the standard error of the sample std
        kurt = stats.truncnorm(-2, 2).stats(moments="k") + 3.0
        se_std = INIT_STD * math.sqrt((kurt - 1) / (4 * n))
        assert abs(x.mean()) < 3 * INIT_STD / math.sqrt(n)
        assert abs(x.std() - INIT_STD) < 3 * se_std
        assert np.max(np.abs(x)) <= 2 * INIT_STD / stats.truncnorm(-2, 2).std() + 1e-12


def test_permutation_equivariance():
    cfg = VitConfig(image_h=8, image_w=8, channels=1, patch=4, embed_dim=8, depth=2, heads=2, num_classes=3)
    p = f64_params(cfg, seed=2, scale=10.0)
    patches = np.random.default_rng(3).normal(size=(1, 4, 16))

    def logits(params, x):
        out, _ = encoder_forward(embed(Tensor(x, dtype=np.float64), params), params, cfg)
        return classify(out, params).data

    base = logits(p, patches)
    perm = [0, 2, 1, 3, 4]  # swap patches 1 and 2 (token indices)
    q = dict(p)
    q["pos_embed"] = Tensor(p["pos_embed"].data[perm], dtype=np.float64)
    swapped = logits(q, patches[:, [1, 0, 2, 3], :])
    assert np.max(np.abs(base - swapped)) < 1e-5


def test_end_to_end_gradcheck():
    cfg = VitConfig(image_h=4, image_w=4, channels=1, patch=2, embed_dim=4, depth=1, heads=2, num_classes=3)
    p = f64_params(cfg, seed=8, scale=25.0)
    images = np.random.default_rng(9).normal(size=(2, 4, 4, 1))

    def loss():
        tokens = embed(Tensor(patchify(images, 2), dtype=np.float64), p)
        out, _ = encoder_forward(tokens, p, cfg)
        return T.cross_entropy(classify(out, p), [0, 2])

    with default_dtype(np.float64):
        assert gradcheck(loss, list(p.values()), h=1e-3, rtol=1e-4) <= 1e-4


def test_dropout_disabled_is_deterministic():
    cfg = VitConfig(image_h=8, image_w=8, channels=3, patch=4, embed_dim=8, depth=2, heads=2, dropout_rate=0.3)
    model = VisionTransformer(cfg, seed=0)
    x = np.random.default_rng(0).normal(size=(2, 8, 8, 3)).astype(np.float32)
    a, b = model.forward(x).data, model.forward(x).data
    assert np.array_equal(a, b)
    assert not np.array_equal(model.forward(x, training=True).data, a)


def test_wrong_image_shape():
    with pytest.raises(DimensionError):
        VisionTransformer(VitConfig(image_h=8, image_w=8, patch=4, embed_dim=8, heads=2, depth=1)).forward(np.zeros((1, 8, 4, 3)))
