"""Distance-based evaluation of generated drumbeats.

Two metrics: Hamming distance between binarized pianorolls and Euclidean
distance between autoencoder latents. Four comparisons, mirroring a
dataset-vs-generated novelty/variety study:

* ``same_text_dataset``: dataset pairs sharing a keyword multihot vector
* ``random_dataset``: random dataset pairs
* ``generated_vs_dataset``: each generated item vs its closest fraction of the dataset
* ``generated_vs_generated``: all pairs within each prompt's generated set
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import (
    BatchTooSmallError,
    ConfigError,
    DegenerateDistributionError,
    EmptyCorpusError,
    ShapeError,
)
from .nn import make_rng
from .nn.checkpoint import atomic_write

METRICS = ("hamming", "euclidean")
COMPARISONS = ("same_text_dataset", "random_dataset", "generated_vs_dataset", "generated_vs_generated")
KDE_GRID = 256


def hamming(a: np.ndarray, b: np.ndarray) -> int:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ShapeError(f"hamming: {a.shape} vs {b.shape}")
    return int(np.count_nonzero(a != b))


def euclidean_latent(za: np.ndarray, zb: np.ndarray) -> float:
    za = np.asarray(za, dtype=np.float64)
    zb = np.asarray(zb, dtype=np.float64)
    if za.shape != zb.shape:
        raise ShapeError(f"euclidean: {za.shape} vs {zb.shape}")
    return float(np.linalg.norm(za - zb))


_METRIC_FNS: dict[str, Callable] = {"hamming": hamming, "euclidean": euclidean_latent}


def _metric_fn(metric) -> Callable:
    return _METRIC_FNS[metric] if isinstance(metric, str) else metric


def intra_set(items: Sequence, metric) -> list[float]:
    """Distances for all N(N-1)/2 unordered pairs, in (i, j) lexicographic order."""
    if len(items) < 2:
        raise BatchTooSmallError("intra-set distances need at least 2 items")
    fn = _metric_fn(metric)
    return [float(fn(items[i], items[j])) for i, j in combinations(range(len(items)), 2)]


def nearest_percentile(gen, dataset: Sequence, metric, p: float = 0.01) -> list[float]:
    """Ascending distances from gen to its closest ceil(p * |dataset|) items.

    Values tied with the cutoff value are all kept.
    """
    if len(dataset) == 0:
        raise EmptyCorpusError("nearest_percentile needs a nonempty dataset")
    if not 0.0 < p <= 1.0:
        raise ConfigError("p must lie in (0, 1]")
    fn = _metric_fn(metric)
    dists = sorted(float(fn(gen, item)) for item in dataset)
    k = math.ceil(p * len(dists) - 1e-9)
    cutoff = dists[k - 1]
    while k < len(dists) and dists[k] == cutoff:
        k += 1
    return dists[:k]


@dataclass(frozen=True)
class DensityCurve:
    grid: np.ndarray
    density: np.ndarray

    def integral(self) -> float:
        return float(np.trapezoid(self.density, self.grid))


def kde(values: Sequence[float], bandwidth: float | None = None, n_grid: int = KDE_GRID) -> DensityCurve:
    """Gaussian KDE on a grid spanning [min - 3h, max + 3h].

    Bandwidth defaults to Scott's rule, n^(-1/5) * sample std. The curve is
    rescaled so its trapezoidal integral over the grid is exactly 1.
    """
    x = np.asarray(values, dtype=np.float64)
    if x.size < 2 or not np.std(x) > 0:
        raise DegenerateDistributionError("KDE needs at least two distinct values")
    h = bandwidth if bandwidth is not None else x.size ** (-1 / 5) * np.std(x, ddof=1)
    if not h > 0:
        raise DegenerateDistributionError("bandwidth must be positive")
    grid = np.linspace(x.min() - 3 * h, x.max() + 3 * h, n_grid)
    u = (grid[:, None] - x[None, :]) / h
    density = np.exp(-0.5 * u * u).sum(axis=1) / (x.size * h * math.sqrt(2 * math.pi))
    density /= np.trapezoid(density, grid)
    return DensityCurve(grid, density)


@dataclass
class DistanceReport:
    metric: str
    comparison: str
    raw: np.ndarray

    @property
    def n(self) -> int:
        return int(self.raw.size)

    @property
    def min(self) -> float:
        return float(self.raw.min()) if self.n else math.nan

    @property
    def mean(self) -> float:
        return float(self.raw.mean()) if self.n else math.nan

    @property
    def std(self) -> float:
        # population standard deviation
        return float(self.raw.std()) if self.n else math.nan


@dataclass
class GeneratedSet:
    prompt: str
    rolls: np.ndarray  # (n, 128, 9) binary or velocity
    latents: np.ndarray  # (n, 128)


@dataclass
class ReportInputs:
    dataset_rolls: np.ndarray
    dataset_latents: np.ndarray
    dataset_keys: Sequence  # one hashable text key per dataset item
    generated: list[GeneratedSet]


@dataclass
class Report:
    rows: list[DistanceReport]
    same_prompt: dict[str, np.ndarray] = field(default_factory=dict)
    different_prompt: dict[str, np.ndarray] = field(default_factory=dict)

    def row(self, metric: str, comparison: str) -> DistanceReport:
        for r in self.rows:
            if r.metric == metric and r.comparison == comparison:
                return r
        raise KeyError((metric, comparison))


def _flat_binary(rolls: np.ndarray) -> np.ndarray:
    rolls = np.asarray(rolls)
    if rolls.dtype != np.uint8:
        rolls = (rolls >= 0.5).astype(np.uint8)
    return rolls.reshape(len(rolls), -1)


def pairwise_matrix(a: np.ndarray, b: np.ndarray, metric: str) -> np.ndarray:
    """Distance matrix between two item sets (rolls for hamming, latents for euclidean)."""
    if metric == "hamming":
        A, B = _flat_binary(a).astype(np.int32), _flat_binary(b).astype(np.int32)
        # |a - b| summed over binary cells = |a| + |b| - 2 a.b
        return (A.sum(1)[:, None] + B.sum(1)[None, :] - 2 * (A @ B.T)).astype(np.float64)
    A = np.asarray(a, dtype=np.float64)
    B = np.asarray(b, dtype=np.float64)
    sq = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2 * (A @ B.T)
    return np.sqrt(np.maximum(sq, 0.0))


def _items(inputs_rolls, inputs_latents, metric):
    return _flat_binary(inputs_rolls) if metric == "hamming" else np.asarray(inputs_latents, np.float64)


def _pair_distances(x: np.ndarray, pairs, metric: str) -> np.ndarray:
    if not pairs:
        return np.zeros(0)
    i, j = np.array(pairs).T
    if metric == "hamming":
        return np.count_nonzero(x[i] != x[j], axis=1).astype(np.float64)
    return np.linalg.norm(x[i] - x[j], axis=1)


def build_report(
    inputs: ReportInputs,
    percentile: float = 0.01,
    random_pairs: int = 360,
    max_same_text_pairs: int = 10000,
    seed: int = 0,
) -> Report:
    n_data = len(inputs.dataset_rolls)
    if n_data < 2 or len(inputs.dataset_latents) != n_data or len(inputs.dataset_keys) != n_data:
        raise ConfigError("report needs >= 2 aligned dataset rolls, latents and keys")
    if not inputs.generated:
        raise ConfigError("report needs generated sets")
    rng = make_rng(seed, 41)

    groups: dict = {}
    for idx, key in enumerate(inputs.dataset_keys):
        groups.setdefault(key, []).append(idx)
    same_pairs = [p for members in groups.values() for p in combinations(members, 2)]
    if len(same_pairs) > max_same_text_pairs:
        pick = np.sort(rng.choice(len(same_pairs), max_same_text_pairs, replace=False))
        same_pairs = [same_pairs[k] for k in pick]
    rand_pairs = []
    for _ in range(random_pairs):
        i, j = rng.choice(n_data, 2, replace=False)
        rand_pairs.append((int(i), int(j)))

    rows: list[DistanceReport] = []
    same_prompt, different_prompt = {}, {}
    for metric in METRICS:
        data = _items(inputs.dataset_rolls, inputs.dataset_latents, metric)
        gens = [_items(g.rolls, g.latents, metric) for g in inputs.generated]
        nearest = []
        for g in gens:
            D = pairwise_matrix(g, data, "hamming") if metric == "hamming" else None
            for k in range(len(g)):
                if metric == "hamming":
                    nearest.extend(_nearest_from_row(D[k], percentile))
                else:
                    nearest.extend(nearest_percentile(g[k], data, euclidean_latent, percentile))
        intra = []
        for g in gens:
            if len(g) >= 2:
                intra.extend(_pair_distances(g, list(combinations(range(len(g)), 2)), metric))
        cross = []
        for a, b in combinations(range(len(gens)), 2):
            D = pairwise_matrix(gens[a], gens[b], metric) if metric == "hamming" else _cross_euclid(gens[a], gens[b])
            cross.extend(D.ravel())
        rows += [
            DistanceReport(metric, "same_text_dataset", _pair_distances(data, same_pairs, metric)),
            DistanceReport(metric, "random_dataset", _pair_distances(data, rand_pairs, metric)),
            DistanceReport(metric, "generated_vs_dataset", np.asarray(nearest, dtype=np.float64)),
            DistanceReport(metric, "generated_vs_generated", np.asarray(intra, dtype=np.float64)),
        ]
        same_prompt[metric] = np.asarray(intra, dtype=np.float64)
        different_prompt[metric] = np.asarray(cross, dtype=np.float64)
    return Report(rows, same_prompt, different_prompt)


def _cross_euclid(a, b):
    return np.linalg.norm(a[:, None, :] - b[None, :, :], axis=2)


def _nearest_from_row(row: np.ndarray, p: float) -> list[float]:
    dists = np.sort(row)
    k = math.ceil(p * len(dists) - 1e-9)
    cutoff = dists[k - 1]
    while k < len(dists) and dists[k] == cutoff:
        k += 1
    return [float(d) for d in dists[:k]]


# --------------------------------------------------------------------------
# output


def _fmt(v: float) -> str:
    return "nan" if math.isnan(v) else f"{v:.6f}"


def report_csv(report: Report) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["metric", "comparison", "min", "mean", "std", "n"])
    for r in report.rows:
        writer.writerow([r.metric, r.comparison, _fmt(r.min), _fmt(r.mean), _fmt(r.std), r.n])
    return buf.getvalue()


def dump_values(values) -> str:
    return "".join(f"{float(v):.17g}\n" for v in values)


def density_svg(curves: dict[str, DensityCurve], title: str, width: int = 480, height: int = 300) -> str:
    """Minimal line plot of one or more density curves."""
    colors = ("#1b9e77", "#d95f02", "#7570b3", "#e7298a")
    pad = 40
    xs = np.concatenate([c.grid for c in curves.values()])
    ys = np.concatenate([c.density for c in curves.values()])
    x0, x1 = float(xs.min()), float(xs.max())
    y1 = float(ys.max()) or 1.0
    sx = (width - 2 * pad) / ((x1 - x0) or 1.0)
    sy = (height - 2 * pad) / y1
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-family="sans-serif" font-size="13">{title}</text>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<text x="{pad}" y="{height - pad + 15}" font-family="sans-serif" font-size="10">{x0:.2f}</text>',
        f'<text x="{width - pad}" y="{height - pad + 15}" text-anchor="end" font-family="sans-serif" font-size="10">{x1:.2f}</text>',
    ]
    for k, (name, c) in enumerate(curves.items()):
        pts = " ".join(
            f"{pad + (gx - x0) * sx:.2f},{height - pad - gy * sy:.2f}" for gx, gy in zip(c.grid, c.density)
        )
        color = colors[k % len(colors)]
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        parts.append(
            f'<text x="{width - pad}" y="{pad + 14 * k}" text-anchor="end" fill="{color}" '
            f'font-family="sans-serif" font-size="11">{name}</text>'
        )
    parts.append("</svg>\n")
    return "\n".join(parts)


def write_report(report: Report, out_dir: Path, plots: bool = True) -> list[Path]:
    """CSV table, raw distance dumps, density tables and (optionally) SVG plots."""
    out_dir = Path(out_dir)
    written = []

    def put(name: str, text: str) -> None:
        path = out_dir / name
        atomic_write(path, text.encode("utf-8"))
        written.append(path)

    put("report.csv", report_csv(report))
    for r in report.rows:
        put(f"raw/{r.metric}_{r.comparison}.txt", dump_values(r.raw))
    for metric in METRICS:
        put(f"raw/{metric}_different_prompt.txt", dump_values(report.different_prompt.get(metric, [])))
        curves = {}
        for label, values in (("same prompt", report.same_prompt.get(metric)), ("different prompt", report.different_prompt.get(metric))):
            try:
                curves[label] = kde(values)
            except (DegenerateDistributionError, TypeError):
                continue
        if not curves:
            continue
        rows = ["curve,x,density"]
        for label, c in curves.items():
            rows += [f"{label},{x:.6f},{y:.8f}" for x, y in zip(c.grid, c.density)]
        put(f"density_{metric}.csv", "\n".join(rows) + "\n")
        if plots:
            put(f"density_{metric}.svg", density_svg(curves, f"{metric} distance: same vs different prompt"))
    return written
