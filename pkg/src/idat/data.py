"""Datasets: synthetic generation, the IDDS file format, and batching.

IDDS layout (all little-endian)::

    b"IDDS"
    u32 version, N, H, W, C, K
    u32 labels[N]
    f32 images[N * H * W * C]      # row-major N, H, W, C
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass, replace

import numpy as np

from . import rng
from .errors import ConfigError, DataError, HeaderError, LabelRangeError, TruncatedError, UsageError

MAGIC = b"IDDS"
VERSION = 1
_HEADER = struct.Struct("<4s6I")
SPLITS = ("train", "val", "test", "pretext")


@dataclass(frozen=True, eq=False)
class Dataset:
    images: np.ndarray  # [N, H, W, C] float32 in [0, 1]
    labels: np.ndarray  # [N] int64
    num_classes: int
    split: str = "train"

    def __post_init__(self):
        if self.images.ndim != 4:
            raise DataError(f"images must be [N, H, W, C], got shape {self.images.shape}")
        if len(self.labels) != len(self.images) or len(self.labels) < 1:
            raise DataError(f"{len(self.images)} images but {len(self.labels)} labels")
        bad = np.flatnonzero((self.labels < 0) | (self.labels >= self.num_classes))
        if bad.size:
            i = int(bad[0])
            raise LabelRangeError(
                f"label at index {i} is {int(self.labels[i])}, outside [0, {self.num_classes})"
            )

    def __len__(self) -> int:
        return len(self.labels)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.num_classes == other.num_classes
            and self.images.shape == other.images.shape
            and np.array_equal(self.images, other.images)
            and np.array_equal(self.labels, other.labels)
        )

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return self.images.shape[1:]


@dataclass(frozen=True)
class SyntheticSpec:
    num_classes: int = 10
    samples_per_class: int = 100
    image_size: int = 32
    channels: int = 3
    noise: float = 0.05
    seed: int = 0

    def __post_init__(self):
        for name in ("num_classes", "samples_per_class", "image_size", "channels"):
            if getattr(self, name) < 1:
                raise ConfigError(f"SyntheticSpec.{name} must be positive")
        if self.noise < 0:
            raise ConfigError("SyntheticSpec.noise must be >= 0")


def generate_synthetic(spec: SyntheticSpec, split: str = "train") -> Dataset:
    """Class prototypes plus clamped Gaussian noise.

    Prototypes depend only on ``spec.seed``, so train and test splits share
    them and differ in noise.  ``split="pretext"`` draws from ``seed + 1``,
    which gives a disjoint set of prototypes for backbone pre-training.
    """
    if split not in SPLITS:
        raise ConfigError(f"unknown split {split!r}; expected one of {SPLITS}")
    seed = spec.seed + 1 if split == "pretext" else spec.seed
    k, n, s, c = spec.num_classes, spec.samples_per_class, spec.image_size, spec.channels
    protos = rng.stream(seed, rng.PROTOTYPES).random((k, s, s, c))
    noise = rng.stream(seed, rng.NOISE, SPLITS.index(split)).standard_normal((k * n, s, s, c))
    labels = np.repeat(np.arange(k, dtype=np.int64), n)
    images = np.clip(protos[labels] + spec.noise * noise, 0.0, 1.0).astype(np.float32)
    return Dataset(images, labels, k, split)


def prototypes(spec: SyntheticSpec, split: str = "train") -> np.ndarray:
    seed = spec.seed + 1 if split == "pretext" else spec.seed
    s, c = spec.image_size, spec.channels
    return rng.stream(seed, rng.PROTOTYPES).random((spec.num_classes, s, s, c)).astype(np.float32)


def save_dataset(ds: Dataset, path: str | os.PathLike) -> None:
    n, h, w, c = ds.images.shape
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, n, h, w, c, ds.num_classes))
        f.write(ds.labels.astype("<u4").tobytes())
        f.write(ds.images.astype("<f4").tobytes())


def decode_dataset(buf: bytes, split: str = "train") -> Dataset:
    if len(buf) < _HEADER.size:
        raise TruncatedError(f"file is {len(buf)} bytes, shorter than the {_HEADER.size}-byte header")
    magic, version, n, h, w, c, k = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise HeaderError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise HeaderError(f"unsupported IDDS version {version}")
    if min(n, h, w, c, k) < 1:
        raise HeaderError(f"header has a zero field: N={n} H={h} W={w} C={c} K={k}")
    need = _HEADER.size + 4 * n + 4 * n * h * w * c
    if len(buf) < need:
        raise TruncatedError(f"expected {need} bytes for N={n} {h}x{w}x{c}, found {len(buf)}")
    if len(buf) > need:
        raise HeaderError(f"{len(buf) - need} trailing bytes after image data")
    labels = np.frombuffer(buf, "<u4", n, _HEADER.size).astype(np.int64)
    images = np.frombuffer(buf, "<f4", n * h * w * c, _HEADER.size + 4 * n)
    images = images.reshape(n, h, w, c).astype(np.float32)
    bad = np.flatnonzero(labels >= k)
    if bad.size:
        i = int(bad[0])
        raise LabelRangeError(f"label at index {i} is {int(labels[i])}, outside [0, {k})")
    if not np.isfinite(images).all():
        raise DataError("image data contains NaN or Inf")
    return Dataset(images, labels, k, split)


def load_dataset(path: str | os.PathLike, image_size: int | None = None, split: str = "train") -> Dataset:
    """Read an IDDS file, resizing to ``image_size`` square if given."""
    with open(path, "rb") as f:
        ds = decode_dataset(f.read(), split)
    if image_size is not None and ds.images.shape[1:3] != (image_size, image_size):
        ds = replace(ds, images=resize_bilinear(ds.images, image_size, image_size))
    return ds


def resize_bilinear(images: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of ``[N, H, W, C]`` with half-pixel centres (align_corners=False)."""
    _, h, w, _ = images.shape

    def axis(n_in, n_out):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0, n_in - 1)
        lo = np.floor(src).astype(np.int64)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, src - lo

    y0, y1, fy = axis(h, out_h)
    x0, x1, fx = axis(w, out_w)
    img = images.astype(np.float64)
    fy = fy[None, :, None, None]
    fx = fx[None, None, :, None]
    top = img[:, y0][:, :, x0] * (1 - fx) + img[:, y0][:, :, x1] * fx
    bot = img[:, y1][:, :, x0] * (1 - fx) + img[:, y1][:, :, x1] * fx
    return (top * (1 - fy) + bot * fy).astype(np.float32)


@dataclass(frozen=True)
class Batch:
    images: np.ndarray
    labels: np.ndarray
    indices: np.ndarray


def make_batches(ds: Dataset, batch_size: int, seed: int, epoch: int) -> list[Batch]:
    """Shuffle with a stream keyed on ``(seed, epoch)``; keep the last partial batch."""
    if batch_size < 1:
        raise UsageError(f"batch_size must be >= 1, got {batch_size}")
    order = rng.stream(seed, rng.BATCHES, epoch).permutation(len(ds))
    return [
        Batch(ds.images[idx], ds.labels[idx], idx)
        for idx in (order[i:i + batch_size] for i in range(0, len(ds), batch_size))
    ]
