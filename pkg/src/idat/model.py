"""A compact pre-norm Vision Transformer with optional bottleneck adapters.

Adapter topologies (``AdapterSpec.variant``):

``sequential``
    ``z = y + A(MLP(LN(y))) + MLP(LN(y))`` -- a residual bottleneck on the
    MLP output.
``parallel``
    ``z = y + MLP(LN(y)) + s * A(LN(y))`` -- a scaled branch beside the MLP.
``parallel_shared``
    one adapter per block, used as a scaled branch beside both MHSA and MLP.

where ``A(h) = W_up(gelu(W_down(h)))``.  ``W_up`` and both biases start at
zero, so injecting adapters never changes the model's outputs.
"""
from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass, replace
from typing import Iterator, NamedTuple

import numpy as np

from . import rng
from .errors import ConfigError, DimensionError, UsageError
from .tensor import Tensor, concat, gelu, layer_norm, scale, softmax

VARIANTS = ("sequential", "parallel", "parallel_shared")
LN_EPS = 1e-6
INIT_STD = 0.02


@dataclass(frozen=True)
class ViTConfig:
    image_size: int = 32
    patch_size: int = 8
    channels: int = 3
    depth: int = 4
    width: int = 64
    heads: int = 4
    mlp_ratio: int = 4
    num_classes: int = 10

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not isinstance(value, int) or value < 1:
                raise ConfigError(f"ViTConfig.{name} must be a positive integer, got {value!r}")
        if self.image_size % self.patch_size:
            raise ConfigError(
                f"image_size {self.image_size} is not divisible by patch_size {self.patch_size}"
            )
        if self.width % self.heads:
            raise ConfigError(f"width {self.width} is not divisible by heads {self.heads}")

    @property
    def num_patches(self) -> int:
        return (self.image_size // self.patch_size) ** 2


@dataclass(frozen=True)
class AdapterSpec:
    variant: str = "parallel"
    hidden_dim: int = 4
    scaling: float = 0.1

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown adapter variant {self.variant!r}; expected one of {VARIANTS}")
        if not isinstance(self.hidden_dim, int) or self.hidden_dim < 1:
            raise ConfigError(f"adapter hidden_dim must be a positive integer, got {self.hidden_dim!r}")


class Parameter:
    """A named tensor; ``trainable`` is mirrored onto ``tensor.requires_grad``."""

    __slots__ = ("name", "tensor")

    def __init__(self, name: str, tensor: Tensor, trainable: bool = True):
        self.name = name
        self.tensor = tensor
        self.trainable = trainable

    @property
    def trainable(self) -> bool:
        return self.tensor.requires_grad

    @trainable.setter
    def trainable(self, value: bool) -> None:
        self.tensor.requires_grad = bool(value)

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.tensor.shape}, trainable={self.trainable})"


def is_adapter(name: str) -> bool:
    return ".adapter." in name


def is_head(name: str) -> bool:
    return name.startswith("head.")


class Model:
    def __init__(self, config: ViTConfig, adapter_spec: AdapterSpec | None = None):
        self.config = config
        self.adapter_spec = adapter_spec
        self.params: dict[str, Parameter] = {}

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name].tensor

    def __iter__(self) -> Iterator[Parameter]:
        return iter(self.params.values())

    def add(self, name: str, value: np.ndarray, trainable: bool = True) -> None:
        if name in self.params:
            raise UsageError(f"parameter {name!r} already exists")
        self.params[name] = Parameter(name, Tensor(value), trainable)

    def trainable(self) -> list[Parameter]:
        return [p for p in self.params.values() if p.trainable]

    def state(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self.params.items()}

    def clone(self) -> "Model":
        return copy.deepcopy(self)

    def __repr__(self) -> str:
        return f"Model({self.config}, adapters={self.adapter_spec}, params={len(self.params)})"


def build_model(config: ViTConfig, seed: int, stream_id: int = rng.STUDENT_INIT) -> Model:
    """Randomly initialised backbone and head, all parameters trainable."""
    g = rng.stream(seed, stream_id)
    d, c = config.width, config.patch_size**2 * config.channels
    hidden = d * config.mlp_ratio
    m = Model(config)

    def normal(*shape):
        return INIT_STD * g.standard_normal(shape)

    m.add("patch.weight", normal(c, d))
    m.add("patch.bias", np.zeros(d))
    m.add("cls", normal(1, d))
    m.add("pos", normal(config.num_patches + 1, d))
    for i in range(config.depth):
        b = f"block.{i}"
        m.add(f"{b}.ln1.gamma", np.ones(d))
        m.add(f"{b}.ln1.beta", np.zeros(d))
        for w in ("q", "k", "v", "o"):
            m.add(f"{b}.attn.w{w}", normal(d, d))
            m.add(f"{b}.attn.b{w}", np.zeros(d))
        m.add(f"{b}.ln2.gamma", np.ones(d))
        m.add(f"{b}.ln2.beta", np.zeros(d))
        m.add(f"{b}.mlp.w1", normal(d, hidden))
        m.add(f"{b}.mlp.b1", np.zeros(hidden))
        m.add(f"{b}.mlp.w2", normal(hidden, d))
        m.add(f"{b}.mlp.b2", np.zeros(d))
    m.add("norm.gamma", np.ones(d))
    m.add("norm.beta", np.zeros(d))
    m.add("head.weight", normal(d, config.num_classes))
    m.add("head.bias", np.zeros(config.num_classes))
    return m


def reset_head(model: Model, num_classes: int, seed: int, index: int = 0) -> Model:
    """Replace the classifier with a freshly initialised one for ``num_classes``."""
    g = rng.stream(seed, rng.HEAD_INIT, index)
    d = model.config.width
    model.config = replace(model.config, num_classes=num_classes)
    model.params["head.weight"] = Parameter("head.weight", Tensor(INIT_STD * g.standard_normal((d, num_classes))))
    model.params["head.bias"] = Parameter("head.bias", Tensor(np.zeros(num_classes)))
    return model


def freeze_backbone(model: Model, train_head: bool = True) -> Model:
    """Only adapter parameters (and the head, unless disabled) stay trainable."""
    for p in model:
        p.trainable = is_adapter(p.name) or (train_head and is_head(p.name))
    return model


def inject_adapters(
    model: Model, spec: AdapterSpec, seed: int, stream_id: int = rng.ADAPTER_INIT, index: int = 0
) -> Model:
    """Add one adapter per block and freeze the backbone.

    ``W_down`` is drawn from U(-1/sqrt(d), 1/sqrt(d)); ``W_up`` and the
    biases are zero.
    """
    if model.adapter_spec is not None:
        raise UsageError("model already has adapters")
    d = model.config.width
    if spec.hidden_dim >= d:
        raise ConfigError(f"adapter hidden_dim {spec.hidden_dim} must be smaller than width {d}")
    g = rng.stream(seed, stream_id, index)
    bound = 1.0 / math.sqrt(d)
    for i in range(model.config.depth):
        a = f"block.{i}.adapter"
        model.add(f"{a}.w_down", g.uniform(-bound, bound, (d, spec.hidden_dim)))
        model.add(f"{a}.b_down", np.zeros(spec.hidden_dim))
        model.add(f"{a}.w_up", np.zeros((spec.hidden_dim, d)))
        model.add(f"{a}.b_up", np.zeros(d))
    model.adapter_spec = spec
    return freeze_backbone(model)


# ----------------------------------------------------------------------------
# forward pass


def _patchify(images: np.ndarray, cfg: ViTConfig) -> np.ndarray:
    b, h, w, c = images.shape
    if (h, w, c) != (cfg.image_size, cfg.image_size, cfg.channels):
        raise DimensionError(
            f"expected images of {cfg.image_size}x{cfg.image_size}x{cfg.channels}, got {h}x{w}x{c}"
        )
    p = cfg.patch_size
    g = h // p
    x = images.reshape(b, g, p, g, p, c).transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(b, g * g, p * p * c)


def _images(images) -> np.ndarray:
    return images.data if isinstance(images, Tensor) else np.asarray(images)


def patch_embed(images, model: Model) -> Tensor:
    """Tokens ``[B, N+1, d]`` for a batch, or ``[N+1, d]`` for one ``[H, W, C]`` image."""
    arr = _images(images)
    single = arr.ndim == 3
    if single:
        arr = arr[None]
    if arr.ndim != 4:
        raise DimensionError(f"images must be [H, W, C] or [B, H, W, C], got shape {arr.shape}")
    b = arr.shape[0]
    d = model.config.width
    tokens = Tensor(_patchify(arr, model.config)) @ model["patch.weight"] + model["patch.bias"]
    cls = Tensor.zeros(b, 1, d) + model["cls"]
    x = concat([cls, tokens], axis=1) + model["pos"]
    return x.reshape(x.shape[1:]) if single else x


def _linear(x: Tensor, model: Model, w: str, b: str) -> Tensor:
    return x @ model[w] + model[b]


def _ln(x: Tensor, model: Model, prefix: str) -> Tensor:
    return layer_norm(x, model[f"{prefix}.gamma"], model[f"{prefix}.beta"], LN_EPS)


def attention(h: Tensor, model: Model, prefix: str) -> Tensor:
    b, t, d = h.shape
    nh = model.config.heads
    dh = d // nh

    def heads(w):
        return _linear(h, model, f"{prefix}.w{w}", f"{prefix}.b{w}").reshape(b, t, nh, dh).transpose(0, 2, 1, 3)

    q, k, v = heads("q"), heads("k"), heads("v")
    att = softmax(scale(q @ k.transpose(0, 1, 3, 2), 1.0 / math.sqrt(dh)), axis=-1)
    o = (att @ v).transpose(0, 2, 1, 3).reshape(b, t, d)
    return _linear(o, model, f"{prefix}.wo", f"{prefix}.bo")


def mlp(h: Tensor, model: Model, prefix: str) -> Tensor:
    return _linear(gelu(_linear(h, model, f"{prefix}.w1", f"{prefix}.b1")), model, f"{prefix}.w2", f"{prefix}.b2")


def adapter(h: Tensor, model: Model, prefix: str) -> Tensor:
    down = gelu(_linear(h, model, f"{prefix}.w_down", f"{prefix}.b_down"))
    return _linear(down, model, f"{prefix}.w_up", f"{prefix}.b_up")


def block_forward(x: Tensor, block_index: int, model: Model) -> Tensor:
    """One transformer block on ``[T, d]`` or ``[B, T, d]`` tokens."""
    single = x.ndim == 2
    if single:
        x = x.reshape(1, *x.shape)
    b = f"block.{block_index}"
    spec = model.adapter_spec
    variant = None if spec is None else spec.variant
    if variant not in (None, *VARIANTS):
        raise ConfigError(f"unknown adapter variant {variant!r}")

    h = _ln(x, model, f"{b}.ln1")
    y = x + attention(h, model, f"{b}.attn")
    if variant == "parallel_shared":
        y = y + scale(adapter(h, model, f"{b}.adapter"), spec.scaling)

    h2 = _ln(y, model, f"{b}.ln2")
    m = mlp(h2, model, f"{b}.mlp")
    if variant is None:
        z = y + m
    elif variant == "sequential":
        z = y + (adapter(m, model, f"{b}.adapter") + m)
    else:
        z = y + m + scale(adapter(h2, model, f"{b}.adapter"), spec.scaling)
    return z.reshape(z.shape[1:]) if single else z


def features(images, model: Model) -> Tensor:
    """Final-layer, layer-normalised CLS representation ``[B, d]``."""
    x = patch_embed(images, model)
    if x.ndim == 2:
        x = x.reshape(1, *x.shape)
    for i in range(model.config.depth):
        x = block_forward(x, i, model)
    x = _ln(x, model, "norm")
    return x[:, 0, :]


def forward(images, model: Model) -> Tensor:
    """Logits ``[B, num_classes]``."""
    return _linear(features(images, model), model, "head.weight", "head.bias")


# ----------------------------------------------------------------------------
# parameter accounting


class ParamCount(NamedTuple):
    total: int
    adapters: int
    head: int

    def __int__(self) -> int:
        return self.total


def trainable_param_count(model: Model) -> ParamCount:
    adapters = head = other = 0
    for p in model.trainable():
        if is_adapter(p.name):
            adapters += p.tensor.size
        elif is_head(p.name):
            head += p.tensor.size
        else:
            other += p.tensor.size
    return ParamCount(adapters + head + other, adapters, head)


def adapter_param_count(config: ViTConfig, spec: AdapterSpec) -> int:
    """Closed form: ``depth * (2*d*h + h + d)``; the shared variant reuses one module per block."""
    d, h = config.width, spec.hidden_dim
    return config.depth * (2 * d * h + h + d)
