"""Binary checkpoints.

Layout (little-endian)::

    b"IDAT"  u32 version  u32 N
    N x { u32 name_len, utf-8 name, u32 rank, u32 dims[rank], u8 trainable, f32 data[prod(dims)] }

Architecture (``ViTConfig`` and ``AdapterSpec``) goes to a JSON sidecar at
``<path>.json`` so a checkpoint can be rebuilt into a model on its own.
"""
from __future__ import annotations

import json
import os
import struct
from dataclasses import asdict

import numpy as np

from .errors import HeaderError, TruncatedError, VersionError
from .model import AdapterSpec, Model, Parameter, ViTConfig
from .tensor import Tensor

MAGIC = b"IDAT"
VERSION = 1
_U32 = struct.Struct("<I")


def encode(params) -> bytes:
    params = list(params)
    out = [MAGIC, _U32.pack(VERSION), _U32.pack(len(params))]
    for p in params:
        name = p.name.encode("utf-8")
        data = p.tensor.data
        out.append(_U32.pack(len(name)))
        out.append(name)
        out.append(_U32.pack(data.ndim))
        out.append(struct.pack(f"<{data.ndim}I", *data.shape))
        out.append(bytes([1 if p.trainable else 0]))
        out.append(data.astype("<f4").tobytes())
    return b"".join(out)


def decode(buf: bytes) -> list[Parameter]:
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(buf):
            raise TruncatedError(f"checkpoint truncated at byte {pos} (need {n} more)")
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    def u32() -> int:
        return _U32.unpack(take(4))[0]

    if take(4) != MAGIC:
        raise HeaderError("not an IDAT checkpoint (bad magic)")
    version = u32()
    if version != VERSION:
        raise VersionError(f"checkpoint format version {version} is not supported (expected {VERSION})")
    params = []
    for _ in range(u32()):
        try:
            name = take(u32()).decode("utf-8")
        except UnicodeDecodeError as e:
            raise HeaderError(f"parameter name is not valid UTF-8: {e}") from None
        rank = u32()
        dims = tuple(u32() for _ in range(rank))
        flag = take(1)[0]
        if flag > 1:
            raise HeaderError(f"trainable flag for {name!r} is {flag}, expected 0 or 1")
        n = int(np.prod(dims, dtype=np.int64)) if dims else 1
        data = np.frombuffer(take(4 * n), "<f4").astype(np.float32).reshape(dims)
        params.append(Parameter(name, Tensor(data), bool(flag)))
    if pos != len(buf):
        raise HeaderError(f"{len(buf) - pos} trailing bytes after last record")
    return params


def save(model: Model, path: str | os.PathLike) -> None:
    path = os.fspath(path)
    with open(path, "wb") as f:
        f.write(encode(model))
    meta = {
        "config": asdict(model.config),
        "adapter": None if model.adapter_spec is None else asdict(model.adapter_spec),
    }
    with open(path + ".json", "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")


def load_params(path: str | os.PathLike) -> list[Parameter]:
    with open(path, "rb") as f:
        return decode(f.read())


def load(path: str | os.PathLike) -> Model:
    """Rebuild a model from a checkpoint and its architecture sidecar."""
    path = os.fspath(path)
    with open(path + ".json") as f:
        meta = json.load(f)
    model = Model(
        ViTConfig(**meta["config"]),
        None if meta["adapter"] is None else AdapterSpec(**meta["adapter"]),
    )
    for p in load_params(path):
        model.params[p.name] = p
    return model
