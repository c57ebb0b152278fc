"""Command-line driver: ``idat {train,eval,analyze,gen-data}``.

Exit codes: 0 success, 2 user error (bad flags, config, or files), 3 runtime
numeric failure.  Data goes to stdout, diagnostics to stderr; verbosity is
set by ``IDAT_LOG`` (quiet, info, debug).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import yaml

from . import analysis, checkpoint, config as cfgmod, presets, rng
from .data import SyntheticSpec, generate_synthetic, load_dataset, save_dataset
from .distill import evaluate
from .errors import ConfigError, IdatError, LoadError, NumericError, UsageError

log = logging.getLogger("idat")

EXIT_OK, EXIT_USER, EXIT_RUNTIME = 0, 2, 3
LOG_LEVELS = {"quiet": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}
SWEEP_FIELDS = (
    "name", "seed", "variant", "loss_kind", "lam", "temperature", "hidden_dim",
    "train_acc", "test_acc_last", "test_acc_best", "baseline_test_acc",
)


def _setup_logging() -> None:
    level = LOG_LEVELS.get(os.environ.get("IDAT_LOG", "info").lower(), logging.INFO)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _resolve_configs(specs: list[str]) -> list[tuple[dict, str]]:
    """Expand ``--config`` values (files, directories, preset names) into raw dicts."""
    out = []
    for spec in specs:
        path = Path(spec)
        if path.is_dir():
            files = sorted(path.glob("*.yaml")) + sorted(path.glob("*.yml"))
            if not files:
                raise ConfigError(f"{spec}: directory holds no .yaml configs")
        elif path.is_file():
            files = [path]
        else:
            name = spec.removeprefix("preset:")
            try:
                out.extend((c, f"preset {name}") for c in presets.get(name))
            except KeyError:
                raise ConfigError(
                    f"{spec}: no such file or preset (presets: {', '.join(presets.names())})"
                ) from None
            continue
        for f in files:
            try:
                data = yaml.safe_load(f.read_text())
            except yaml.YAMLError as e:
                raise ConfigError(f"{f}: not valid YAML: {e}") from None
            out.append((data or {}, str(f)))
    return out


def _run_one(cfg_dict: dict, out_dir: str) -> dict:
    from . import experiment

    return experiment.run(cfgmod.from_dict(cfg_dict), out_dir)


def _sweep_row(cfg: cfgmod.ExperimentConfig, summary: dict) -> dict:
    base = summary.get("baseline")
    return {
        "name": cfg.name,
        "seed": cfg.seed,
        "variant": cfg.student.adapter.variant,
        "loss_kind": cfg.plan.loss_kind,
        "lam": cfg.plan.lam,
        "temperature": cfg.plan.temperature,
        "hidden_dim": cfg.student.adapter.hidden_dim,
        "train_acc": summary["train_acc"],
        "test_acc_last": summary["test_acc_last"],
        "test_acc_best": summary["test_acc_best"],
        "baseline_test_acc": "" if base is None else base["test_acc_last"],
    }


def cmd_train(args) -> int:
    raw = _resolve_configs(args.config)
    runs = []
    for i, (data, origin) in enumerate(raw):
        data = cfgmod.apply_overrides(data, args.set or [])
        if args.seed is not None:
            data["seed"] = args.seed if len(raw) == 1 else rng.derive_seed(args.seed, i)
        elif len(raw) > 1:
            data["seed"] = rng.derive_seed(data.get("seed", 0), i)
        try:
            cfg = cfgmod.from_dict(data)
        except ConfigError as e:
            raise ConfigError(f"{origin}: {e}") from None
        runs.append(cfg)

    if len(runs) == 1:
        cfg = runs[0]
        out = args.out or cfg.out_dir or os.path.join("runs", cfg.name)
        summary = _run_one(cfgmod.to_dict(cfg), out)
        print(json.dumps({k: summary[k] for k in ("name", "train_acc", "test_acc_last", "test_acc_best")}))
        return EXIT_OK

    names = [c.name for c in runs]
    if len(set(names)) != len(names):
        raise ConfigError("sweep configs must have distinct names")
    root = Path(args.out or "runs/sweep")
    root.mkdir(parents=True, exist_ok=True)
    dirs = [str(root / c.name) for c in runs]
    dicts = [cfgmod.to_dict(c) for c in runs]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            summaries = list(pool.map(_run_one, dicts, dirs))
    else:
        summaries = [_run_one(d, o) for d, o in zip(dicts, dirs)]
    rows = [_sweep_row(c, s) for c, s in zip(runs, summaries)]
    with open(root / "sweep_summary.csv", "w", newline="") as f:
        w = csv.DictWriter(f, SWEEP_FIELDS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    w = csv.DictWriter(sys.stdout, SWEEP_FIELDS, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return EXIT_OK


def cmd_eval(args) -> int:
    model = checkpoint.load(args.checkpoint)
    ds = load_dataset(args.data, model.config.image_size, "test")
    if ds.num_classes != model.config.num_classes:
        raise ConfigError(f"dataset has {ds.num_classes} classes, checkpoint head has {model.config.num_classes}")
    print(f"accuracy {evaluate(model, ds)!r}")
    return EXIT_OK


def _labels(paths: list[str]) -> list[str]:
    labels = [Path(p).stem for p in paths]
    if len(set(labels)) != len(labels):
        labels = [f"{Path(p).parent.name}_{Path(p).stem}" for p in paths]
    if len(set(labels)) != len(labels):
        labels = [f"{i}_{lab}" for i, lab in enumerate(labels)]
    return labels


def cmd_analyze(args) -> int:
    models = [checkpoint.load(p) for p in args.checkpoints]
    for p, m in zip(args.checkpoints, models):
        if not analysis.has_adapters(m):
            raise UsageError(f"{p}: no adapter parameters found")
    lo_hi = analysis.symmetric_range(models)
    out = Path(args.out or "analysis")
    reports = []
    for label, m in zip(_labels(args.checkpoints), models):
        r = analysis.weight_report(m, label, args.bins, lo_hi, args.tau)
        csv_path, stats_path = analysis.export_report(r, out)
        print(f"wrote {csv_path} {stats_path}")
        reports.append(r)
    if len(reports) >= 2:
        with open(out / "comparison.csv", "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["a", "b", "layer_a", "layer_b", "matrix", "std_ratio", "kurtosis_diff", "more_dispersed"])
            first = reports[0]
            for other in reports[1:]:
                for c in analysis.compare_reports(first, other, analysis.depth_pairing(first, other)):
                    who = {"a": first.label, "b": other.label}.get(c.more_dispersed, "neutral")
                    row = [first.label, other.label, c.key_a[0], c.key_b[0], c.key_a[1],
                           repr(c.std_ratio), repr(c.kurtosis_diff), who]
                    w.writerow(row)
        print(f"wrote {out / 'comparison.csv'}")
        print((out / "comparison.csv").read_text(), end="")
    return EXIT_OK


def cmd_gen_data(args) -> int:
    spec = SyntheticSpec(
        num_classes=args.num_classes,
        samples_per_class=args.samples_per_class,
        image_size=args.image_size,
        channels=args.channels,
        noise=args.noise,
        seed=args.seed if args.seed is not None else 0,
    )
    ds = generate_synthetic(spec, args.split)
    save_dataset(ds, args.out)
    print(f"wrote {args.out}: N={len(ds)} K={ds.num_classes} {spec.image_size}x{spec.image_size}x{spec.channels}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="idat", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one config or sweep several")
    p.add_argument("--config", action="append", required=True,
                   help="YAML file, directory of YAML files, or preset name (repeatable)")
    p.add_argument("--seed", type=int, help="override the config seed (sweeps derive per-run seeds from it)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--jobs", type=int, default=1, help="parallel runs for sweeps")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config field")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="top-1 accuracy of a student checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="IDDS dataset file")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="adapter weight histograms and statistics")
    p.add_argument("checkpoints", nargs="+")
    p.add_argument("--out", help="output directory")
    p.add_argument("--bins", type=int, default=analysis.DEFAULT_BINS)
    p.add_argument("--tau", type=float, default=analysis.DEFAULT_TAU)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("gen-data", help="write a synthetic IDDS dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--num-classes", type=int, default=10)
    p.add_argument("--samples-per-class", type=int, default=100)
    p.add_argument("--image-size", type=int, default=32)
    p.add_argument("--channels", type=int, default=3)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--seed", type=int)
    p.add_argument("--split", default="train", choices=("train", "val", "test", "pretext"))
    p.set_defaults(func=cmd_gen_data)
    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    if getattr(args, "jobs", 1) < 1:
        print("idat: error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_USER
    try:
        return args.func(args)
    except NumericError as e:
        print(f"idat: numeric failure: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ConfigError, UsageError, LoadError, IdatError, OSError) as e:
        print(f"idat: error: {e}", file=sys.stderr)
        return EXIT_USER


if __name__ == "__main__":
    sys.exit(main())
