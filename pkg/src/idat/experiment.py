"""End-to-end runs: pretext warm-up, freezing, adapter injection, joint training.

Everything written to the output directory is a deterministic function of
the effective config, so re-running from ``effective_config.yaml``
reproduces checkpoints and logs byte for byte.
"""
from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, replace
from pathlib import Path

from . import checkpoint, config as cfgmod, rng
from .config import ExperimentConfig, NetConfig
from .data import Dataset, SyntheticSpec, generate_synthetic, load_dataset, save_dataset
from .distill import DistillPlan, OptimState, TrainState, evaluate, fit, pretrain_backbone
from .distill.trainer import make_schedule
from .errors import ConfigError
from .model import Model, build_model, inject_adapters, reset_head, trainable_param_count

log = logging.getLogger(__name__)

STUDENT = (rng.STUDENT_INIT, 0)
TEACHER = (rng.TEACHER_INIT, 1)


def load_data(cfg: ExperimentConfig) -> tuple[Dataset, Dataset, Dataset]:
    """Train, test and pretext splits."""
    m = cfg.student.model
    d = cfg.data
    if d.train_path is not None:
        train = load_dataset(d.train_path, m.image_size, "train")
        test = load_dataset(d.test_path, m.image_size, "test")
        for ds, where in ((train, "train_path"), (test, "test_path")):
            if ds.images.shape[3] != m.channels:
                raise ConfigError(f"config.data.{where}: {ds.images.shape[3]} channels, model expects {m.channels}")
        spec = SyntheticSpec(image_size=m.image_size, channels=m.channels, seed=cfg.seed)
    else:
        spec = d.synthetic
        train = generate_synthetic(spec, "train")
        test = generate_synthetic(replace(spec, samples_per_class=d.test_samples_per_class), "test")
    return train, test, generate_synthetic(spec, "pretext")


def prepare(net: NetConfig, role: tuple[int, int], cfg: ExperimentConfig, pretext: Dataset,
            num_classes: int, ckpt: str | None) -> tuple[Model, Model]:
    """Return ``(backbone, adapted)``: the warm backbone and an adapter-injected copy."""
    init_stream, index = role
    if ckpt is not None:
        backbone = checkpoint.load(ckpt)
        if backbone.config.width != net.model.width or backbone.config.depth != net.model.depth:
            raise ConfigError(f"checkpoint {ckpt} does not match the configured architecture")
        backbone.adapter_spec = None
        backbone.params = {k: p for k, p in backbone.params.items() if ".adapter." not in k}
    else:
        backbone = build_model(replace(net.model, num_classes=pretext.num_classes), cfg.seed, init_stream)
        p = cfg.pretext
        log.info("pretext warm-up (%s): %d epochs", "student" if index == 0 else "teacher", p.epochs)
        pretrain_backbone(backbone, pretext, p.epochs, cfg.batch_size, p.lr, cfg.seed, p.warmup_epochs)
    adapted = backbone.clone()
    reset_head(adapted, num_classes, cfg.seed, index)
    inject_adapters(adapted, net.adapter, cfg.seed, rng.ADAPTER_INIT, index)
    return backbone, adapted


def _optim(cfg: ExperimentConfig) -> OptimState:
    o = cfg.optim
    return OptimState(lr=o.base_lr, weight_decay=o.weight_decay, betas=o.betas, eps=o.eps)


def _train(student: Model, teacher: Model | None, plan: DistillPlan, cfg: ExperimentConfig,
           train: Dataset, test: Dataset, metrics_path: Path) -> dict:
    o = cfg.optim
    sched = make_schedule(len(train), cfg.batch_size, cfg.epochs, o.warmup_epochs, o.base_lr)
    sched = replace(sched, warmup_lr=o.warmup_lr)
    state = TrainState(
        student, teacher, plan, sched, _optim(cfg), None if teacher is None else _optim(cfg),
        seed=cfg.seed, allow_forward_distill=cfg.allow_forward_distill,
    )
    with open(metrics_path, "w", newline="\n") as f:
        history = fit(state, train, cfg.epochs, cfg.batch_size, test, f)
    accs = [r.eval_acc for r in history]
    return {
        "train_acc": evaluate(student, train),
        "test_acc_last": accs[-1],
        "test_acc_best": max(accs),
        "epoch_loss": [r.mean_total for r in history],
        "epoch_ce_s": [r.mean_ce_s for r in history],
        "test_acc": accs,
    }


def run(cfg: ExperimentConfig, out_dir: str | os.PathLike) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "effective_config.yaml").write_text(cfgmod.dump(replace(cfg, out_dir=str(out))))
    train, test, pretext = load_data(cfg)
    save_dataset(test, out / "test.idds")
    k = train.num_classes

    s_backbone, student = prepare(cfg.student, STUDENT, cfg, pretext, k, cfg.pretext.student_checkpoint)
    teacher = None
    if cfg.teacher is not None:
        _, teacher = prepare(cfg.teacher, TEACHER, cfg, pretext, k, cfg.pretext.teacher_checkpoint)

    log.info("training %s (%s)", cfg.name, "baseline" if teacher is None else f"distill={cfg.plan.loss_kind}")
    result = _train(student, teacher, cfg.plan, cfg, train, test, out / "metrics.log")
    checkpoint.save(student, out / "student.ckpt")
    if teacher is not None:
        checkpoint.save(teacher, out / "teacher.ckpt")

    summary = {
        "name": cfg.name,
        "seed": cfg.seed,
        "plan": asdict(cfg.plan),
        "student_params": trainable_param_count(student)._asdict(),
        "teacher_params": None if teacher is None else trainable_param_count(teacher)._asdict(),
        **result,
    }
    if cfg.with_baseline and teacher is not None:
        log.info("baseline run (no teacher) under the same budget")
        base = s_backbone.clone()
        reset_head(base, k, cfg.seed, STUDENT[1])
        inject_adapters(base, cfg.student.adapter, cfg.seed, rng.ADAPTER_INIT, STUDENT[1])
        b = _train(base, None, DistillPlan(loss_kind="none"), cfg, train, test, out / "metrics_baseline.log")
        checkpoint.save(base, out / "baseline_student.ckpt")
        summary["baseline"] = b
        summary["idat_minus_baseline_test_acc"] = result["test_acc_last"] - b["test_acc_last"]
    with open(out / "summary.json", "w") as f:
        json.dump(summary, f, indent=2)
        f.write("\n")
    return summary
