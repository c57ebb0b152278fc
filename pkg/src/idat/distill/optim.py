"""AdamW and the warmup + cosine learning-rate schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from ..errors import ConfigError, UsageError
from ..model import Parameter

WARMUP_LR = 1e-7


@dataclass
class OptimState:
    lr: float = 5e-3
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        b1, b2 = self.betas
        if not (0 <= b1 < 1 and 0 <= b2 < 1):
            raise ConfigError(f"betas must lie in [0, 1), got {self.betas}")
        if self.eps <= 0 or self.weight_decay < 0:
            raise ConfigError("eps must be > 0 and weight_decay >= 0")


def adamw_step(
    params: Iterable[Parameter],
    opt: OptimState,
    grads: Mapping[str, np.ndarray] | None = None,
) -> None:
    """One bias-corrected AdamW update on the trainable subset of ``params``.

    Decay is decoupled and applied first: ``theta *= 1 - lr * wd``.
    Gradients default to each parameter's ``tensor.grad``.
    """
    opt.step += 1
    t = opt.step
    b1, b2 = opt.betas
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p in params:
        if not p.trainable:
            continue
        g = grads[p.name] if grads is not None and p.name in grads else p.tensor.grad
        if g is None:
            raise UsageError(f"trainable parameter {p.name!r} has no gradient")
        g = np.asarray(g, dtype=np.float64)
        if p.name not in opt.m:
            opt.m[p.name] = np.zeros(p.tensor.shape)
            opt.v[p.name] = np.zeros(p.tensor.shape)
        m = opt.m[p.name] = b1 * opt.m[p.name] + (1 - b1) * g
        v = opt.v[p.name] = b2 * opt.v[p.name] + (1 - b2) * g * g
        theta = p.tensor.data.astype(np.float64) * (1.0 - opt.lr * opt.weight_decay)
        theta -= opt.lr * (m / c1) / (np.sqrt(v / c2) + opt.eps)
        p.tensor.data = theta.astype(p.tensor.data.dtype)


@dataclass(frozen=True)
class Schedule:
    base_lr: float
    total_steps: int
    warmup_steps: int = 0
    warmup_lr: float = WARMUP_LR

    def __post_init__(self):
        if self.total_steps < 1 or not 0 <= self.warmup_steps < self.total_steps:
            raise ConfigError(
                f"need 0 <= warmup_steps < total_steps, got {self.warmup_steps}, {self.total_steps}"
            )


def lr_schedule(step: int, sched: Schedule) -> float:
    """Linear warmup from ``warmup_lr`` to ``base_lr``, then cosine to 0 at the last step."""
    w = sched.warmup_steps
    if step < w:
        return sched.warmup_lr + (sched.base_lr - sched.warmup_lr) * step / w
    span = sched.total_steps - 1 - w
    if span <= 0:
        return sched.base_lr
    progress = min((step - w) / span, 1.0)
    return 0.5 * sched.base_lr * (1.0 + math.cos(math.pi * progress))
