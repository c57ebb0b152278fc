"""Built-in experiment configurations.

``desk()`` is the reference small-scale setup: 10 synthetic classes of
32x32 RGB images, a depth-4/width-64 student and a depth-2/width-32 teacher.
Named presets cover the three adapter baselines, the six distillation
variants, and the ablation sweeps.
"""
from __future__ import annotations

import copy
import itertools

VARIANT_CODES = {"S": "sequential", "P": "parallel", "PS": "parallel_shared"}
BASELINE_CODES = {"seq": "sequential", "par": "parallel", "ps": "parallel_shared"}

TEMPERATURES = (1.0, 5.0, 10.0, 20.0)
LAMBDAS = (0.1, 0.2, 0.5, 1.0)
HIDDEN_DIMS = (2, 4, 8, 16)
ALT_LOSSES = ("none", "mae", "cos", "kl", "mse")


def _net(depth: int, width: int, heads: int, variant: str = "parallel", hidden: int = 4) -> dict:
    return {
        "model": {
            "image_size": 32, "patch_size": 8, "channels": 3, "depth": depth,
            "width": width, "heads": heads, "mlp_ratio": 4, "num_classes": 10,
        },
        "adapter": {"variant": variant, "hidden_dim": hidden, "scaling": 0.1},
    }


def student_net(variant: str = "parallel", hidden: int = 4) -> dict:
    return _net(4, 64, 4, variant, hidden)


def teacher_net(variant: str = "parallel", hidden: int = 4) -> dict:
    return _net(2, 32, 2, variant, hidden)


def desk(name: str = "desk") -> dict:
    return {
        "name": name,
        "seed": 0,
        "epochs": 30,
        "batch_size": 32,
        "student": student_net(),
        "teacher": None,
        "plan": {"loss_kind": "none", "lam": 1.0, "temperature": 5.0},
        "optim": {"base_lr": 5e-3, "warmup_epochs": 3, "warmup_lr": 1e-7, "weight_decay": 0.01},
        "data": {
            "synthetic": {
                "num_classes": 10, "samples_per_class": 100, "image_size": 32,
                "channels": 3, "noise": 0.05, "seed": 0,
            },
            "test_samples_per_class": 50,
        },
        "pretext": {"epochs": 5, "lr": 1e-3, "warmup_epochs": 1},
    }


def baseline(variant: str) -> dict:
    code = {v: k for k, v in BASELINE_CODES.items()}[variant]
    cfg = desk(f"baseline-{code}")
    cfg["student"] = student_net(variant)
    return cfg


def idat(variant: str = "parallel", loss: str = "kl", lam: float = 1.0, temperature: float = 5.0,
         hidden: int = 4, name: str | None = None) -> dict:
    code = {v: k for k, v in VARIANT_CODES.items()}[variant]
    cfg = desk(name or f"idat-{code}-{loss}")
    cfg["student"] = student_net(variant, hidden)
    cfg["teacher"] = teacher_net(variant, hidden)
    cfg["plan"] = {"loss_kind": loss, "lam": lam, "temperature": temperature}
    return cfg


def _sweeps() -> dict[str, list[dict]]:
    tag = lambda x: f"{x:g}"  # noqa: E731
    pairings = []
    for name, student, teacher in (
        ("pair-none-small", teacher_net(), None),
        ("pair-none-large", student_net(), None),
        ("pair-large-large", student_net(), student_net()),
        ("pair-small-large", student_net(), teacher_net()),
        ("pair-large-small", teacher_net(), student_net()),
    ):
        cfg = desk(name)
        cfg["student"], cfg["teacher"] = student, teacher
        if teacher is not None:
            cfg["plan"] = {"loss_kind": "kl", "lam": 1.0, "temperature": 5.0}
            # conventional direction: the teacher is the larger model
            cfg["allow_forward_distill"] = teacher["model"]["width"] > student["model"]["width"]
        pairings.append(cfg)
    return {
        "ablation-temperature": [idat(temperature=t, name=f"kl-T{tag(t)}") for t in TEMPERATURES],
        "ablation-lambda-kl": [idat(lam=l, name=f"kl-lam{tag(l)}") for l in LAMBDAS],
        "ablation-lambda-mse": [idat(loss="mse", lam=l, name=f"mse-lam{tag(l)}") for l in LAMBDAS],
        "ablation-kl-grid": [
            idat(temperature=t, lam=l, name=f"kl-T{tag(t)}-lam{tag(l)}")
            for t, l in itertools.product(TEMPERATURES, LAMBDAS)
        ],
        "ablation-loss": [
            baseline("parallel") if k == "none" else idat(loss=k, name=f"loss-{k}") for k in ALT_LOSSES
        ],
        "ablation-hidden": [
            c for h in HIDDEN_DIMS for c in (
                dict(desk(f"baseline-h{h}"), student=student_net(hidden=h)),
                idat(loss="kl", hidden=h, name=f"idat-P-kl-h{h}"),
                idat(loss="mse", hidden=h, name=f"idat-P-mse-h{h}"),
            )
        ],
        "ablation-pairing": pairings,
    }


def _singles() -> dict[str, dict]:
    out = {"desk": desk()}
    for code, variant in BASELINE_CODES.items():
        out[f"baseline-{code}"] = baseline(variant)
    for code, variant in VARIANT_CODES.items():
        for loss in ("kl", "mse"):
            out[f"idat-{code}-{loss}"] = idat(variant, loss)
    return out


def names() -> list[str]:
    return sorted(_singles()) + sorted(_sweeps())


def get(name: str) -> list[dict]:
    """Configs for preset ``name`` (one for single runs, several for sweeps)."""
    singles, sweeps = _singles(), _sweeps()
    if name in singles:
        return [copy.deepcopy(singles[name])]
    if name in sweeps:
        return copy.deepcopy(sweeps[name])
    raise KeyError(name)
