"""Joint teacher/student adapter tuning.

Both models see the same batch, one combined loss is built, and a single
backward pass feeds one AdamW update per model.  Only the student is needed
after training; :func:`evaluate` never looks at a teacher.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, TextIO

import numpy as np

from ..data import Batch, Dataset, make_batches
from ..errors import ConfigError, UsageError
from ..model import Model, forward
from ..tensor import Tape, Tensor
from .losses import DistillPlan, LossParts, loss_total
from .optim import OptimState, Schedule, adamw_step, lr_schedule

log = logging.getLogger(__name__)

LOG_FIELDS = ("step", "lr", "ce_s", "ce_t", "distill", "total")


@dataclass
class StepReport:
    step: int
    lr: float
    losses: LossParts
    grad_norm_s: float
    grad_norm_t: float | None
    logits_s: np.ndarray = field(repr=False, compare=False)

    def log_row(self) -> str:
        def fmt(x):
            return "" if x is None else repr(float(x))

        p = self.losses
        return ",".join([str(self.step), fmt(self.lr), fmt(p.ce_s), fmt(p.ce_t), fmt(p.distill), fmt(p.total)])


@dataclass
class TrainState:
    student: Model
    teacher: Model | None
    plan: DistillPlan
    schedule: Schedule
    opt_s: OptimState
    opt_t: OptimState | None = None
    seed: int = 0
    step: int = 0
    epoch: int = 0
    allow_forward_distill: bool = False

    def __post_init__(self):
        if self.teacher is None:
            if self.plan.loss_kind != "none":
                raise ConfigError("a distillation plan needs a teacher; use loss_kind 'none' for baselines")
            return
        if self.opt_t is None:
            raise ConfigError("teacher given without an optimizer state")
        tw, sw = self.teacher.config.width, self.student.config.width
        if tw > sw and not self.allow_forward_distill:
            raise ConfigError(
                f"teacher width {tw} exceeds student width {sw}; "
                "set allow_forward_distill to distil from a larger teacher"
            )


def _grad_norm(model: Model) -> float:
    return math.sqrt(sum(float(np.sum(p.tensor.grad.astype(np.float64) ** 2)) for p in model.trainable()))


def joint_forward(batch: Batch, state: TrainState) -> tuple[Tape, Tensor, Tensor, Tensor | None, LossParts]:
    """Record student and teacher forwards plus the combined loss on a fresh tape."""
    with Tape() as tape:
        y_s = forward(batch.images, state.student)
        y_t = None if state.teacher is None else forward(batch.images, state.teacher)
        total, parts = loss_total(y_s, y_t, batch.labels, state.plan)
    return tape, total, y_s, y_t, parts


def train_step(batch: Batch, state: TrainState) -> StepReport:
    lr = lr_schedule(state.step, state.schedule)
    tape, total, y_s, _, parts = joint_forward(batch, state)
    models = [(state.student, state.opt_s)]
    if state.teacher is not None:
        models.append((state.teacher, state.opt_t))
    tape.backward(total, [p.tensor for m, _ in models for p in m.trainable()])
    norms = [_grad_norm(m) for m, _ in models]
    for m, opt in models:
        opt.lr = lr
        adamw_step(m.trainable(), opt)
    report = StepReport(state.step, lr, parts, norms[0], norms[1] if len(norms) > 1 else None, y_s.data)
    state.step += 1
    return report


def predict(model: Model, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Student-only logits, no tape."""
    chunks = [forward(images[i:i + batch_size], model).data for i in range(0, len(images), batch_size)]
    return np.concatenate(chunks, axis=0)


def evaluate(model: Model, dataset: Dataset, batch_size: int = 256) -> float:
    """Top-1 accuracy."""
    if len(dataset) == 0:
        raise UsageError("cannot evaluate on an empty dataset")
    pred = predict(model, dataset.images, batch_size).argmax(axis=1)
    return float(np.mean(pred == dataset.labels))


@dataclass
class EpochRecord:
    epoch: int
    mean_total: float
    mean_ce_s: float
    eval_acc: float | None = None


def run_epoch(
    state: TrainState,
    train: Dataset,
    batch_size: int,
    sink: Callable[[StepReport], None] | None = None,
) -> EpochRecord:
    reports = []
    for batch in make_batches(train, batch_size, state.seed, state.epoch):
        r = train_step(batch, state)
        if sink is not None:
            sink(r)
        reports.append(r)
    weights = np.array([len(r.logits_s) for r in reports], dtype=np.float64)
    rec = EpochRecord(
        state.epoch,
        float(np.average([r.losses.total for r in reports], weights=weights)),
        float(np.average([r.losses.ce_s for r in reports], weights=weights)),
    )
    state.epoch += 1
    return rec


def fit(
    state: TrainState,
    train: Dataset,
    epochs: int,
    batch_size: int,
    eval_set: Dataset | None = None,
    metrics: TextIO | None = None,
) -> list[EpochRecord]:
    """Train for ``epochs`` epochs; optionally stream step rows to ``metrics``."""
    sink = None
    if metrics is not None:
        metrics.write(",".join(LOG_FIELDS) + "\n")

        def sink(r: StepReport) -> None:
            metrics.write(r.log_row() + "\n")

    history = []
    for _ in range(epochs):
        rec = run_epoch(state, train, batch_size, sink)
        if eval_set is not None:
            rec.eval_acc = evaluate(state.student, eval_set)
        log.info(
            "epoch %d  loss %.4f  ce_s %.4f  eval %s",
            rec.epoch, rec.mean_total, rec.mean_ce_s,
            "-" if rec.eval_acc is None else f"{rec.eval_acc:.4f}",
        )
        history.append(rec)
    return history


def steps_per_epoch(n: int, batch_size: int) -> int:
    return -(-n // batch_size)


def make_schedule(n: int, batch_size: int, epochs: int, warmup_epochs: int, base_lr: float) -> Schedule:
    spe = steps_per_epoch(n, batch_size)
    return Schedule(base_lr, spe * epochs, min(spe * warmup_epochs, spe * epochs - 1))


def pretrain_backbone(
    model: Model,
    data: Dataset,
    epochs: int,
    batch_size: int,
    base_lr: float,
    seed: int,
    warmup_epochs: int = 1,
    weight_decay: float = 0.01,
) -> list[EpochRecord]:
    """Full fine-tuning on a pretext split; every parameter of ``model`` is trained."""
    for p in model:
        p.trainable = True
    sched = make_schedule(len(data), batch_size, epochs, warmup_epochs, base_lr)
    state = TrainState(
        model, None, DistillPlan(loss_kind="none"), sched,
        OptimState(lr=base_lr, weight_decay=weight_decay), seed=seed,
    )
    return fit(state, data, epochs, batch_size)
