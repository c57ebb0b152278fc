"""Classification and logit-distillation losses.

All losses reduce to a shape ``(1,)`` tensor and are differentiable in both
arguments.  Distillation losses take student logits first.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, DataError, DimensionError
from ..tensor import Tensor, abs_, log_softmax, mean, scale, softmax, sqrt, sum_

LOSS_KINDS = ("kl", "mse", "mae", "cos", "none")
KL_CONVENTIONS = ("weighted", "standard")


@dataclass(frozen=True)
class DistillPlan:
    """Which distillation term to add to the two cross-entropies, and how.

    ``kl_convention="weighted"`` weights the log-ratio of temperature-softened
    distributions by the *unsoftened* student distribution and applies no
    ``T**2`` factor.  ``"standard"`` is ``T**2 * KL(teacher_T || student_T)``.
    ``detach_teacher`` stops the distillation gradient from reaching the
    teacher; by default both models receive it.
    """

    loss_kind: str = "kl"
    lam: float = 1.0
    temperature: float = 5.0
    kl_convention: str = "weighted"
    detach_teacher: bool = False

    def __post_init__(self):
        if self.loss_kind not in LOSS_KINDS:
            raise ConfigError(f"loss_kind must be one of {LOSS_KINDS}, got {self.loss_kind!r}")
        if self.lam < 0:
            raise ConfigError(f"lam must be >= 0, got {self.lam}")
        if self.loss_kind == "kl" and not self.temperature > 0:
            raise ConfigError(f"temperature must be > 0 for kl, got {self.temperature}")
        if self.kl_convention not in KL_CONVENTIONS:
            raise ConfigError(f"kl_convention must be one of {KL_CONVENTIONS}, got {self.kl_convention!r}")


def _same_shape(name: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{name}: student shape {a.shape} != teacher shape {b.shape}")


def loss_ce(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under ``softmax(logits)``."""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    b, k = logits.shape
    if labels.shape != (b,):
        raise DimensionError(f"{b} logit rows but {labels.size} labels")
    bad = np.flatnonzero((labels < 0) | (labels >= k))
    if bad.size:
        i = int(bad[0])
        raise DataError(f"label at index {i} is {int(labels[i])}, outside [0, {k})")
    picked = log_softmax(logits, axis=-1)[np.arange(b), labels]
    return scale(mean(picked), -1.0)


def loss_mse(y_s: Tensor, y_t: Tensor) -> Tensor:
    _same_shape("loss_mse", y_s, y_t)
    diff = y_s - y_t
    return mean(diff * diff)


def loss_mae(y_s: Tensor, y_t: Tensor) -> Tensor:
    _same_shape("loss_mae", y_s, y_t)
    return mean(abs_(y_s - y_t))


def loss_cos(y_s: Tensor, y_t: Tensor) -> Tensor:
    """Mean over rows of ``1 - cos(y_s[i], y_t[i])``."""
    _same_shape("loss_cos", y_s, y_t)
    if y_s.ndim != 2:
        raise DimensionError(f"loss_cos expects [B, K] logits, got {y_s.shape}")
    for name, y in (("student", y_s), ("teacher", y_t)):
        zero = np.flatnonzero(~np.any(y.data != 0, axis=1))
        if zero.size:
            raise DataError(f"{name} logit row {int(zero[0])} has zero norm")
    dot = sum_(y_s * y_t, axis=1)
    norms = sqrt(sum_(y_s * y_s, axis=1)) * sqrt(sum_(y_t * y_t, axis=1))
    return mean(1.0 - dot / norms)


def loss_kl(y_s: Tensor, y_t: Tensor, temperature: float, convention: str = "weighted") -> Tensor:
    """Temperature-softened KL distillation term, averaged over the batch.

    ``weighted``: ``sum_k softmax(y_s)_k * log(softmax(y_s/T)_k / softmax(y_t/T)_k)``.
    ``standard``: ``T**2 * sum_k q_k * log(q_k / p_k)`` with ``q = softmax(y_t/T)``,
    ``p = softmax(y_s/T)``.
    """
    _same_shape("loss_kl", y_s, y_t)
    if not temperature > 0:
        raise ConfigError(f"temperature must be > 0, got {temperature}")
    inv = 1.0 / temperature
    log_ps = log_softmax(scale(y_s, inv), axis=-1)
    log_pt = log_softmax(scale(y_t, inv), axis=-1)
    if convention == "weighted":
        per_row = sum_(softmax(y_s, axis=-1) * (log_ps - log_pt), axis=1)
        return mean(per_row)
    if convention == "standard":
        per_row = sum_(softmax(scale(y_t, inv), axis=-1) * (log_pt - log_ps), axis=1)
        return scale(mean(per_row), temperature * temperature)
    raise ConfigError(f"unknown kl convention {convention!r}")


def distill_term(y_s: Tensor, y_t: Tensor, plan: DistillPlan) -> Tensor:
    if plan.detach_teacher:
        y_t = y_t.detach()
    kind = plan.loss_kind
    if kind == "kl":
        return loss_kl(y_s, y_t, plan.temperature, plan.kl_convention)
    if kind == "mse":
        return loss_mse(y_s, y_t)
    if kind == "mae":
        return loss_mae(y_s, y_t)
    if kind == "cos":
        return loss_cos(y_s, y_t)
    raise ConfigError(f"no distillation term for loss_kind {kind!r}")


@dataclass(frozen=True)
class LossParts:
    ce_s: float
    ce_t: float | None
    distill: float | None
    total: float


def loss_total(y_s: Tensor, y_t: Tensor | None, labels, plan: DistillPlan) -> tuple[Tensor, LossParts]:
    """``ce(y_s) + ce(y_t) + lam * distill(y_s, y_t)``.

    Without a teacher (``y_t is None``) this is just ``ce(y_s)``, which
    requires ``plan.loss_kind == "none"``.
    """
    ce_s = loss_ce(y_s, labels)
    if y_t is None:
        if plan.loss_kind != "none":
            raise ConfigError(f"loss_kind {plan.loss_kind!r} needs teacher logits")
        return ce_s, LossParts(ce_s.item(), None, None, ce_s.item())
    ce_t = loss_ce(y_t, labels)
    total = ce_s + ce_t
    distill = None
    if plan.loss_kind != "none":
        d = distill_term(y_s, y_t, plan)
        total = total + scale(d, plan.lam)
        distill = d.item()
    return total, LossParts(ce_s.item(), ce_t.item(), distill, total.item())
