"""Inject each adapter variant into a small ViT and see what becomes trainable.

W_up starts at zero, so injection leaves the network's function unchanged
until the first update.
"""
import numpy as np

from idat.model import AdapterSpec, ViTConfig, build_model, forward, inject_adapters, trainable_param_count

cfg = ViTConfig(depth=4, width=64, heads=4)
images = np.random.default_rng(0).uniform(size=(8, 32, 32, 3))

for variant in ("sequential", "parallel", "parallel_shared"):
    model = build_model(cfg, seed=0)
    before = forward(images, model).data
    inject_adapters(model, AdapterSpec(variant, hidden_dim=4, scaling=0.1), seed=0)
    after = forward(images, model).data
    count = trainable_param_count(model)
    print(f"{variant:16s} identical={np.array_equal(before, after)} "
          f"trainable={count.total} (adapters {count.adapters}, head {count.head})")

vit_b = ViTConfig(image_size=224, patch_size=16, depth=12, width=768, heads=12)
model = inject_adapters(build_model(vit_b, seed=0), AdapterSpec(), seed=0)
print(f"ViT-B-sized adapters: {trainable_param_count(model).adapters / 1e6:.3f}M")
