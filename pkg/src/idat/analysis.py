"""Adapter weight-distribution analysis.

Builds per-layer histograms and dispersion statistics of the adapter
``w_down`` / ``w_up`` matrices (biases are ignored), compares two models'
reports, and writes plot-ready CSV plus a JSON stats sidecar.
"""
from __future__ import annotations

import csv
import json
import os
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import UsageError
from .model import Model, is_adapter

DEFAULT_BINS = 101
DEFAULT_TAU = 1e-3
_ADAPTER_WEIGHT = re.compile(r"^block\.(\d+)\.adapter\.(w_down|w_up)$")


@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray
    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class Stats:
    mean: float
    std: float
    excess_kurtosis: float
    near_zero: float
    count: int


@dataclass
class Entry:
    layer: int
    matrix: str
    histogram: Histogram
    stats: Stats

    @property
    def key(self) -> tuple[int, str]:
        return self.layer, self.matrix


@dataclass
class WeightReport:
    label: str
    entries: list[Entry] = field(default_factory=list)

    def by_key(self) -> dict[tuple[int, str], Entry]:
        return {e.key: e for e in self.entries}

    @property
    def depth(self) -> int:
        return 1 + max(e.layer for e in self.entries)


def weight_histogram(values, bins: int = DEFAULT_BINS, range: tuple[float, float] | None = None) -> Histogram:
    """Uniform-bin histogram; bins are ``[lo, hi)`` except the last, which is closed.

    With no ``range`` the data's ``[min, max]`` is used; a degenerate range
    collapses to a single bin of width 1 centred on the value.
    """
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    if v.size == 0:
        raise UsageError("cannot histogram an empty array")
    if bins < 1:
        raise UsageError(f"bins must be >= 1, got {bins}")
    lo, hi = (float(v.min()), float(v.max())) if range is None else map(float, range)
    if hi < lo:
        raise UsageError(f"histogram range is inverted: [{lo}, {hi}]")
    if v.min() < lo or v.max() > hi:
        raise UsageError(f"values span [{v.min()}, {v.max()}], outside histogram range [{lo}, {hi}]")
    if hi == lo:
        return Histogram(np.array([lo - 0.5, lo + 0.5]), np.array([v.size], dtype=np.int64))
    counts, edges = np.histogram(v, bins=bins, range=(lo, hi))
    return Histogram(edges, counts.astype(np.int64))


def dispersion_stats(values, tau: float = DEFAULT_TAU) -> Stats:
    """Population mean/std, Fisher excess kurtosis, and fraction with ``|w| < tau``.

    Kurtosis is 0 for a constant array (no spread to measure).
    """
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    if v.size < 2:
        raise UsageError(f"need at least 2 values, got {v.size}")
    mu = v.mean()
    c = v - mu
    var = np.mean(c * c)
    kurt = float(np.mean(c**4) / var**2 - 3.0) if var > 0 else 0.0
    return Stats(float(mu), float(np.sqrt(var)), kurt, float(np.mean(np.abs(v) < tau)), int(v.size))


def adapter_weights(model: Model) -> dict[tuple[int, str], np.ndarray]:
    out = {}
    for p in model:
        m = _ADAPTER_WEIGHT.match(p.name)
        if m:
            out[(int(m.group(1)), m.group(2))] = p.data
    return dict(sorted(out.items()))


def symmetric_range(models: list[Model]) -> tuple[float, float]:
    """``[-m, m]`` with ``m`` the largest adapter-weight magnitude across ``models``."""
    m = 0.0
    for model in models:
        for w in adapter_weights(model).values():
            m = max(m, float(np.abs(w).max()))
    return -m, m


def weight_report(
    model: Model,
    label: str,
    bins: int = DEFAULT_BINS,
    range: tuple[float, float] | None = None,
    tau: float = DEFAULT_TAU,
) -> WeightReport:
    weights = adapter_weights(model)
    if not weights:
        raise UsageError("no adapter parameters found")
    if range is None:
        range = symmetric_range([model])
    report = WeightReport(label)
    for (layer, name), w in weights.items():
        report.entries.append(Entry(layer, name, weight_histogram(w, bins, range), dispersion_stats(w, tau)))
    return report


@dataclass(frozen=True)
class Comparison:
    key_a: tuple[int, str]
    key_b: tuple[int, str]
    std_ratio: float  # std_b / std_a
    kurtosis_diff: float  # kurt_b - kurt_a
    more_dispersed: str  # "a", "b" or "neutral"


def _flag(sa: Stats, sb: Stats) -> str:
    if sb.std > sa.std and sb.excess_kurtosis <= sa.excess_kurtosis:
        return "b"
    if sa.std > sb.std and sa.excess_kurtosis <= sb.excess_kurtosis:
        return "a"
    return "neutral"


def depth_pairing(a: WeightReport, b: WeightReport) -> list[tuple[tuple[int, str], tuple[int, str]]]:
    """Pair every entry of the deeper report with the proportionally placed layer of the other."""
    da, db = a.depth, b.depth
    pairs = []
    if da >= db:
        for e in a.entries:
            pairs.append((e.key, (e.layer * db // da, e.matrix)))
    else:
        for e in b.entries:
            pairs.append(((e.layer * da // db, e.matrix), e.key))
    return pairs


def compare_reports(a: WeightReport, b: WeightReport, pairing=None) -> list[Comparison]:
    """Per-matrix std ratio and kurtosis difference of ``b`` relative to ``a``.

    A side is flagged more dispersed when its std is higher and its kurtosis
    is not.  Without an explicit ``pairing`` both reports must share the same
    ``(layer, matrix)`` structure.
    """
    ea, eb = a.by_key(), b.by_key()
    if pairing is None:
        if ea.keys() != eb.keys():
            raise UsageError(
                f"reports {a.label!r} and {b.label!r} have different structure; pass a pairing"
            )
        pairing = [(k, k) for k in ea]
    out = []
    for ka, kb in pairing:
        if ka not in ea or kb not in eb:
            raise UsageError(f"pairing references a missing entry: {ka} / {kb}")
        sa, sb = ea[ka].stats, eb[kb].stats
        ratio = sb.std / sa.std if sa.std > 0 else (1.0 if sb.std == 0 else float("inf"))
        out.append(Comparison(ka, kb, ratio, sb.excess_kurtosis - sa.excess_kurtosis, _flag(sa, sb)))
    return out


def export_report(report: WeightReport, out_dir: str | os.PathLike) -> tuple[Path, Path]:
    """Write ``<label>__weights.csv`` and ``<label>__stats.txt`` (JSON)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{report.label}__weights.csv"
    stats_path = out / f"{report.label}__stats.txt"
    with open(csv_path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["layer", "matrix", "bin_lo", "bin_hi", "count"])
        for e in report.entries:
            h = e.histogram
            for lo, hi, c in zip(h.edges[:-1], h.edges[1:], h.counts):
                w.writerow([e.layer, e.matrix, repr(float(lo)), repr(float(hi)), int(c)])
    stats = {f"{e.layer}.{e.matrix}": asdict(e.stats) for e in report.entries}
    with open(stats_path, "w") as f:
        json.dump({"label": report.label, "stats": stats}, f, indent=2)
        f.write("\n")
    return csv_path, stats_path


def has_adapters(model: Model) -> bool:
    return any(is_adapter(p.name) for p in model)
