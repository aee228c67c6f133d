"""Statistics over a benchmark of trained genomes.

Kendall correlations between metric values and restoration quality, top-k
overlap matrices between images, PSNR histograms with the best shortlisted
genome highlighted, and the random best-of-N baseline.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
from scipy import stats

from .metrics import METRICS


@dataclass
class BenchRecord:
    image_id: str
    genome_id: str
    task: str
    iterations: int
    final_psnr: float
    optimal_stopping_iteration: int
    psd_db_mse: float = math.nan
    psd_db_strip_mse: float = math.nan
    psd_strip_hist_emd: float = math.nan
    bw99: float = math.nan

    @property
    def key(self) -> tuple:
        return (self.image_id, self.genome_id, self.task, self.iterations)


BENCH_FIELDS = tuple(BenchRecord.__dataclass_fields__)


class BenchStore:
    """Append-only CSV of :class:`BenchRecord` rows keyed by (image, genome, task, T)."""

    def __init__(self, path):
        self.path = Path(path)

    def read(self) -> list[BenchRecord]:
        if not self.path.exists():
            return []
        with open(self.path, newline="") as fh:
            return [_record_from_row(row) for row in csv.DictReader(fh)]

    def keys(self) -> set[tuple]:
        return {r.key for r in self.read()}

    def append(self, record: BenchRecord) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        fresh = not self.path.exists() or self.path.stat().st_size == 0
        with open(self.path, "a", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=BENCH_FIELDS)
            if fresh:
                writer.writeheader()
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in asdict(record).items()})


def _record_from_row(row: dict) -> BenchRecord:
    return BenchRecord(
        row["image_id"], row["genome_id"], row["task"], int(row["iterations"]),
        float(row["final_psnr"]), int(row["optimal_stopping_iteration"]),
        *(float(row[m]) for m in METRICS),
    )


def kendall_tau(xs, ys) -> float:
    """Tie-corrected Kendall tau-b."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape or xs.ndim != 1 or len(xs) < 2:
        raise ValueError("need two equal-length sequences of at least 2 values")
    if np.all(xs == xs[0]) or np.all(ys == ys[0]):
        raise ValueError("Kendall tau is undefined when one sequence is constant")
    return float(stats.kendalltau(xs, ys, variant="b").statistic)


def overlap_matrix(topk: dict) -> tuple[list, np.ndarray]:
    """Pairwise intersection sizes of per-image top-k sets; returns (image ids, matrix)."""
    ids = list(topk)
    sets = [set(topk[i]) for i in ids]
    if len({len(s) for s in sets}) > 1:
        raise ValueError("all top-k sets must have the same size")
    mat = np.array([[len(a & b) for b in sets] for a in sets], dtype=int)
    return ids, mat


def top_k(records, k: int, key: str = "final_psnr") -> list[str]:
    """Genome ids of the ``k`` best records (highest PSNR first)."""
    ordered = sorted(records, key=lambda r: (-getattr(r, key), r.genome_id))
    return [r.genome_id for r in ordered[:k]]


def normalize_scores(values) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if values.size < 2:
        raise ValueError("need at least two values")
    std = values.std()
    if std == 0:
        raise ValueError("zero standard deviation")
    return (values - values.mean()) / std


@dataclass
class PsnrHistogram:
    edges: np.ndarray
    counts: np.ndarray
    highlights: dict[int, float]

    def highlight_bins(self) -> dict[int, int]:
        return {n: _bin_index(self.edges, v) for n, v in self.highlights.items()}

    def write_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        bins = self.highlight_bins()
        ns = sorted(bins)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["bin_left", "count", *(f"best_of_top{n}" for n in ns)])
            for b, (left, count) in enumerate(zip(self.edges[:-1], self.counts)):
                writer.writerow([repr(float(left)), int(count), *(int(bins[n] == b) for n in ns)])
        return path


def _bin_index(edges: np.ndarray, value: float) -> int:
    return int(min(max(np.searchsorted(edges, value, side="right") - 1, 0), len(edges) - 2))


def psnr_histogram(records, metric: str = "psd_db_strip_mse", ns=(5, 15), bins: int = 20) -> PsnrHistogram:
    """Histogram of final PSNRs marking the best genome inside each metric top-N."""
    records = list(records)
    if not records:
        raise ValueError("no records")
    psnrs = np.array([r.final_psnr for r in records])
    lo, hi = psnrs.min(), psnrs.max()
    if hi == lo:
        hi = lo + 1.0
    counts, edges = np.histogram(psnrs, bins=bins, range=(lo, hi))
    ordered = sorted(records, key=lambda r: (getattr(r, metric), r.genome_id))
    highlights = {n: max(r.final_psnr for r in ordered[: min(n, len(ordered))]) for n in ns}
    return PsnrHistogram(edges, counts, highlights)


def random_selection_baseline(records, n: int = 15, trials: int = 10, seed: int = 0) -> float:
    """Mean over ``trials`` of the best final PSNR among ``n`` records drawn without replacement."""
    records = list(records)
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if n > len(records):
        raise ValueError(f"n={n} exceeds the {len(records)} available records")
    rng = np.random.default_rng(seed)
    psnrs = np.array([r.final_psnr for r in records])
    return float(np.mean([psnrs[rng.choice(len(psnrs), n, replace=False)].max() for _ in range(trials)]))


def normalized_increase_curves(records, reference: str, corrupted_psnr: dict) -> dict:
    """Normalized PSNR increase per image, genomes ordered by the reference image.

    ``corrupted_psnr`` maps image id to PSNR of its corrupted input; the
    increase is ``final_psnr - corrupted_psnr``.
    """
    by_image: dict[str, dict[str, float]] = {}
    for r in records:
        by_image.setdefault(r.image_id, {})[r.genome_id] = r.final_psnr - corrupted_psnr[r.image_id]
    ref = by_image[reference]
    genomes = [g for g in sorted(ref, key=lambda g: -ref[g]) if all(g in v for v in by_image.values())]
    return {img: normalize_scores([v[g] for g in genomes]) for img, v in by_image.items()} | {"genome_ids": genomes}


@dataclass
class CorrelationRow:
    image_id: str
    metric: str
    reference: str
    tau_final_psnr: float
    tau_optimal_stop: float
    n: int


def correlation_report(records, scores_by_reference: dict) -> list[CorrelationRow]:
    """Kendall tau per (image, metric) against final PSNR and optimal stopping iteration.

    ``scores_by_reference`` maps ``"N"`` (computed against the corrupted
    image) and optionally ``"GT"`` (against ground truth) to
    ``{(image_id, genome_id): MetricScores}``; ``bw99`` is reported under N only.
    """
    by_image: dict[str, list[BenchRecord]] = {}
    for r in records:
        by_image.setdefault(r.image_id, []).append(r)
    rows = []
    for image_id, recs in sorted(by_image.items()):
        for reference, lookup in scores_by_reference.items():
            for metric in METRICS:
                if reference != "N" and metric == "bw99":
                    continue
                pairs = [(lookup[(image_id, r.genome_id)].value(metric), r) for r in recs
                         if (image_id, r.genome_id) in lookup]
                if len(pairs) < 2:
                    raise ValueError(f"image {image_id}: fewer than two scored records")
                values = [v for v, _ in pairs]
                rows.append(CorrelationRow(
                    image_id, metric, reference,
                    _tau_or_nan(values, [r.final_psnr for _, r in pairs]),
                    _tau_or_nan(values, [r.optimal_stopping_iteration for _, r in pairs]),
                    len(pairs),
                ))
    return rows


def _tau_or_nan(xs, ys) -> float:
    try:
        return kendall_tau(xs, ys)
    except ValueError:
        return math.nan


def write_rows(rows, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = list(rows)
    with open(path, "w", newline="") as fh:
        if rows:
            writer = csv.DictWriter(fh, fieldnames=list(asdict(rows[0])))
            writer.writeheader()
            for row in rows:
                writer.writerow(asdict(row))
    return path


def write_matrix(ids, matrix, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", *ids])
        for i, row in zip(ids, matrix):
            writer.writerow([i, *map(int, row)])
    return path
