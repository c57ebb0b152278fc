import math

import numpy as np
import pytest
from scipy.special import erf

from idat import rng
from idat.errors import ConfigError, DimensionError, UsageError
from idat.model import (
    AdapterSpec,
    ViTConfig,
    adapter_param_count,
    block_forward,
    build_model,
    forward,
    freeze_backbone,
    inject_adapters,
    patch_embed,
    trainable_param_count,
)
from idat.tensor import Tensor

TOY = ViTConfig(image_size=8, patch_size=4, channels=1, depth=2, width=16, heads=4, mlp_ratio=2, num_classes=4)
VARIANTS = ("sequential", "parallel", "parallel_shared")


def images(n, cfg=TOY, seed=0):
    return rng.stream(seed, rng.TEST).uniform(0, 1, (n, cfg.image_size, cfg.image_size, cfg.channels))


def randomise_adapters(model, seed=1):
    g = np.random.default_rng(seed)
    for p in model:
        if ".adapter." in p.name:
            p.tensor.data = g.normal(size=p.data.shape).astype(np.float32)


# --- reference forward, written out longhand in float64 --------------------


def ref_forward(x, P, cfg, spec=None):
    p, d, nh = cfg.patch_size, cfg.width, cfg.heads
    dh = d // nh
    gelu = lambda v: 0.5 * v * (1 + erf(v / math.sqrt(2)))  # noqa: E731

    def ln(v, g, b):
        mu = v.mean(-1, keepdims=True)
        var = ((v - mu) ** 2).mean(-1, keepdims=True)
        return (v - mu) / np.sqrt(var + 1e-6) * g + b

    def ad(v, i):
        a = f"block.{i}.adapter"
        return gelu(v @ P[f"{a}.w_down"] + P[f"{a}.b_down"]) @ P[f"{a}.w_up"] + P[f"{a}.b_up"]

    out = []
    for img in x:
        rows = []
        for r in range(0, cfg.image_size, p):
            for c in range(0, cfg.image_size, p):
                rows.append(img[r:r + p, c:c + p, :].reshape(-1))
        t = np.array(rows) @ P["patch.weight"] + P["patch.bias"]
        t = np.vstack([P["cls"], t]) + P["pos"]
        for i in range(cfg.depth):
            b = f"block.{i}"
            h = ln(t, P[f"{b}.ln1.gamma"], P[f"{b}.ln1.beta"])
            q = h @ P[f"{b}.attn.wq"] + P[f"{b}.attn.bq"]
            k = h @ P[f"{b}.attn.wk"] + P[f"{b}.attn.bk"]
            v = h @ P[f"{b}.attn.wv"] + P[f"{b}.attn.bv"]
            heads = []
            for j in range(nh):
                sl = slice(j * dh, (j + 1) * dh)
                s = q[:, sl] @ k[:, sl].T / math.sqrt(dh)
                s = np.exp(s - s.max(-1, keepdims=True))
                heads.append((s / s.sum(-1, keepdims=True)) @ v[:, sl])
            y = t + np.hstack(heads) @ P[f"{b}.attn.wo"] + P[f"{b}.attn.bo"]
            if spec and spec.variant == "parallel_shared":
                y = y + spec.scaling * ad(h, i)
            h2 = ln(y, P[f"{b}.ln2.gamma"], P[f"{b}.ln2.beta"])
            m = gelu(h2 @ P[f"{b}.mlp.w1"] + P[f"{b}.mlp.b1"]) @ P[f"{b}.mlp.w2"] + P[f"{b}.mlp.b2"]
            if spec is None:
                t = y + m
            elif spec.variant == "sequential":
                t = y + ad(m, i) + m
            else:
                t = y + m + spec.scaling * ad(h2, i)
        cls = ln(t, P["norm.gamma"], P["norm.beta"])[0]
        out.append(cls @ P["head.weight"] + P["head.bias"])
    return np.array(out)


def params64(model):
    return {n: p.data.astype(np.float64) for n, p in model.params.items()}


def test_forward_matches_reference_oracle():
    m = build_model(TOY, seed=0)
    x = images(3)
    np.testing.assert_allclose(forward(x, m).data, ref_forward(x, params64(m), TOY), rtol=1e-4, atol=1e-5)


@pytest.mark.parametrize("variant", VARIANTS)
def test_adapted_forward_matches_reference_oracle(variant):
    m = build_model(TOY, seed=0)
    spec = AdapterSpec(variant, hidden_dim=3, scaling=0.5)
    inject_adapters(m, spec, seed=0)
    randomise_adapters(m)
    x = images(2)
    np.testing.assert_allclose(forward(x, m).data, ref_forward(x, params64(m), TOY, spec), rtol=1e-4, atol=1e-5)


# --- patch embedding -----------------------------------------------------


def test_patch_embed_token_count():
    m = build_model(TOY, seed=0)
    assert patch_embed(images(1)[0], m).shape == (5, 16)
    assert patch_embed(images(3), m).shape == (3, 5, 16)
    assert ViTConfig(image_size=224, patch_size=16, width=768, heads=12).num_patches + 1 == 197


def test_patch_embed_zero_image_gives_cls_and_pos():
    m = build_model(TOY, seed=0)
    m["patch.weight"].data[:] = 0
    out = patch_embed(np.zeros((8, 8, 1)), m).data
    np.testing.assert_array_equal(out[0], m["cls"].data[0] + m["pos"].data[0])
    np.testing.assert_array_equal(out[1:], m["pos"].data[1:])


def test_patch_embed_wrong_size():
    with pytest.raises(DimensionError):
        patch_embed(np.zeros((7, 8, 1)), build_model(TOY, seed=0))


def test_config_invariants():
    with pytest.raises(ConfigError):
        ViTConfig(image_size=10, patch_size=4)
    with pytest.raises(ConfigError):
        ViTConfig(width=10, heads=4)
    with pytest.raises(ConfigError):
        AdapterSpec("serial")
    with pytest.raises(ConfigError):
        inject_adapters(build_model(TOY, seed=0), AdapterSpec(hidden_dim=16), seed=0)


# --- forward properties --------------------------------------------------


def test_constant_network_gives_head_bias():
    m = build_model(TOY, seed=0)
    for p in m:
        p.tensor.data[:] = 0
    bias = np.array([0.5, -1.0, 2.0, 0.25], dtype=np.float32)
    m["head.bias"].data[:] = bias
    out = forward(images(3), m).data
    np.testing.assert_array_equal(out, np.tile(bias, (3, 1)))


def test_identical_images_identical_rows():
    x = np.repeat(images(1), 4, axis=0)
    out = forward(x, build_model(TOY, seed=0)).data
    assert (out == out[0]).all()


def test_batch_permutation_permutes_logits():
    m = build_model(TOY, seed=0)
    x = images(6)
    perm = np.random.default_rng(5).permutation(6)
    np.testing.assert_allclose(forward(x[perm], m).data, forward(x, m).data[perm], rtol=1e-6, atol=1e-7)


def test_block_forward_single_and_batched_agree():
    m = build_model(TOY, seed=0)
    x = patch_embed(images(2), m)
    batched = block_forward(x, 0, m).data
    single = block_forward(Tensor(x.data[1]), 0, m).data
    np.testing.assert_allclose(single, batched[1], rtol=1e-6, atol=1e-7)


@pytest.mark.parametrize("variant", VARIANTS)
def test_injection_is_identity_at_init(variant):
    m = build_model(TOY, seed=3)
    x = images(10)
    before = forward(x, m).data
    inject_adapters(m, AdapterSpec(variant), seed=3)
    assert forward(x, m).data.tobytes() == before.tobytes()


@pytest.mark.parametrize("variant", ["parallel", "parallel_shared"])
def test_zero_scaling_annihilates_adapter(variant):
    m = build_model(TOY, seed=0)
    x = images(4)
    before = forward(x, m).data
    inject_adapters(m, AdapterSpec(variant, scaling=0.0), seed=0)
    randomise_adapters(m)
    assert forward(x, m).data.tobytes() == before.tobytes()


def test_double_injection_is_usage_error():
    m = inject_adapters(build_model(TOY, seed=0), AdapterSpec(), seed=0)
    with pytest.raises(UsageError):
        inject_adapters(m, AdapterSpec(), seed=0)


def test_adapter_init_distribution():
    m = inject_adapters(build_model(TOY, seed=0), AdapterSpec(hidden_dim=4), seed=0)
    w = m["block.0.adapter.w_down"].data
    assert np.abs(w).max() <= 1 / math.sqrt(16)
    assert np.abs(w).max() > 0
    for name in ("w_up", "b_up", "b_down"):
        assert not m[f"block.1.adapter.{name}"].data.any()


# --- freezing and counting -----------------------------------------------


def test_freezing_marks_only_adapters_and_head():
    m = inject_adapters(build_model(TOY, seed=0), AdapterSpec(), seed=0)
    for p in m:
        assert p.trainable == (".adapter." in p.name or p.name.startswith("head."))
        assert p.tensor.requires_grad == p.trainable


@pytest.mark.parametrize("variant", VARIANTS)
def test_sequential_count_152(variant):
    cfg = ViTConfig(image_size=8, patch_size=4, channels=1, depth=2, width=8, heads=2, num_classes=3)
    m = inject_adapters(build_model(cfg, seed=0), AdapterSpec(variant, hidden_dim=4), seed=0)
    count = trainable_param_count(m)
    assert count.adapters == 2 * (8 * 4 + 4 + 4 * 8 + 8) == 152
    assert count.head == 8 * 3 + 3
    assert count.total == 152 + 27
    assert adapter_param_count(cfg, AdapterSpec(variant)) == 152


def test_count_matches_enumeration():
    m = inject_adapters(build_model(TOY, seed=0), AdapterSpec(hidden_dim=3), seed=0)
    brute = sum(p.data.size for p in m if p.trainable)
    assert int(trainable_param_count(m)) == brute


def test_frozen_headless_model_counts_zero():
    m = freeze_backbone(build_model(TOY, seed=0), train_head=False)
    assert tuple(trainable_param_count(m)) == (0, 0, 0)


def test_vit_b_adapter_count_matches_reported_scale():
    cfg = ViTConfig(image_size=224, patch_size=16, depth=12, width=768, heads=12)
    n = adapter_param_count(cfg, AdapterSpec("parallel", hidden_dim=4))
    assert n == 12 * (768 * 4 + 4 + 4 * 768 + 768) == 82992
    assert 0.080e6 <= n <= 0.095e6


def test_build_is_deterministic():
    a, b = build_model(TOY, seed=7), build_model(TOY, seed=7)
    assert all(a[n].data.tobytes() == b[n].data.tobytes() for n in a.params)
    c = build_model(TOY, seed=7, stream_id=rng.TEACHER_INIT)
    assert c["patch.weight"].data.tobytes() != a["patch.weight"].data.tobytes()
