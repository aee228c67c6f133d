"""Shortlisting by metric and averaging-based final selection.

Both procedures train the top-N genomes, average their restorations with
weights inversely proportional to each genome's metric value, and keep the
genome whose restoration is closest (MSE) to that average.  The resized
variant trains the shortlist on a downscaled copy of the corrupted image and
retrains only the winner at full resolution.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .image_io import resize
from .metrics import METRICS
from .trainer import TaskObjective, TrainConfig, TrainRun, config_dict, train_dip

log = logging.getLogger(__name__)

WEIGHT_EPS = 1e-8


def rank(scores, metric: str) -> list[str]:
    """Genome ids ordered by ascending metric value, ties broken by id."""
    scores = list(scores)
    if not scores:
        raise ValueError("nothing to rank")
    for s in scores:
        if not np.isfinite(s.value(metric)):
            raise ValueError(f"genome {s.genome_id} has non-finite {metric}")
    return [s.genome_id for s in sorted(scores, key=lambda s: (s.value(metric), s.genome_id))]


def inverse_metric_weights(values, eps: float = WEIGHT_EPS) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if np.any(values < 0):
        raise ValueError("metric values must be nonnegative")
    inv = 1.0 / (values + eps)
    return inv / inv.sum()


def weighted_average(candidates, weights) -> np.ndarray:
    stack = np.stack([np.asarray(c, dtype=np.float64) for c in candidates])
    weights = np.asarray(weights, dtype=np.float64)
    if len(weights) != len(stack):
        raise ValueError("need one weight per candidate")
    return np.tensordot(weights, stack, axes=1)


def mse_to_average(candidates, weights) -> np.ndarray:
    avg = weighted_average(candidates, weights)
    return np.array([np.mean((np.asarray(c) - avg) ** 2) for c in candidates])


def select_by_average(candidates, weights) -> int:
    """Index of the candidate closest to the weighted average (lowest index on ties)."""
    candidates = list(candidates)
    if not candidates:
        raise ValueError("no candidates")
    shapes = {np.shape(c) for c in candidates}
    if len(shapes) != 1:
        raise ValueError(f"candidates have different shapes: {sorted(shapes)}")
    return int(np.argmin(mse_to_average(candidates, weights)))


@dataclass
class SelectionConfig:
    metric: str = "psd_db_strip_mse"
    n: int = 15
    mode: str = "full_sized"
    resized_dims: tuple[int, int] = (64, 64)
    train: TrainConfig = field(default_factory=TrainConfig)
    workers: int = 1

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}")
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.mode not in ("full_sized", "resized"):
            raise ValueError(f"unknown selection mode {self.mode!r}")


@dataclass
class SelectionResult:
    metric: str
    mode: str
    ranked_ids: list[str]
    candidate_ids: list[str]
    chosen_id: str
    outputs: dict[str, np.ndarray]
    weights: list[float]
    mse_to_average: list[float]
    excluded: dict[str, str]
    final: TrainRun | None = None

    def report(self) -> dict:
        return {
            "metric": self.metric,
            "mode": self.mode,
            "ranked_ids": self.ranked_ids,
            "candidates": [
                {"genome_id": g, "weight": w, "mse_to_average": m}
                for g, w, m in zip(self.candidate_ids, self.weights, self.mse_to_average)
            ],
            "excluded": self.excluded,
            "chosen_id": self.chosen_id,
            "final_psnr": self.final.final_psnr if self.final and self.final.psnr_trace else None,
            "train_config": config_dict(self.final.config) if self.final and self.final.config else None,
        }

    def export(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / "selection_report.json"
        path.write_text(json.dumps(self.report(), indent=2))
        if self.final is not None:
            self.final.export(directory, stem="restored")
        return path


def _train_job(args):
    genome, obj, config, ground_truth = args
    try:
        return train_dip(genome, obj, config, ground_truth), None
    except (RuntimeError, ValueError, FloatingPointError) as exc:
        return None, f"{type(exc).__name__}: {exc}"


def _worker_init():
    import torch

    torch.set_num_threads(1)


def train_many(jobs, workers: int = 1):
    """Run ``(genome, obj, config, gt)`` jobs; results come back in job order."""
    if workers <= 1 or len(jobs) <= 1:
        return [_train_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers, initializer=_worker_init) as pool:
        return list(pool.map(_train_job, jobs))


def _resized_objective(obj: TaskObjective, dims) -> TaskObjective:
    if obj.kind == "super_resolution":
        raise ValueError("resized selection supports denoising and inpainting only")
    target = resize(obj.target, *dims, method="bilinear")
    mask = resize(obj.mask, *dims, method="nearest") if obj.mask is not None else None
    return TaskObjective(obj.kind, target, mask, obj.factor)


def _select(genomes, scores, obj: TaskObjective, config: SelectionConfig,
            ground_truth, resized: bool) -> SelectionResult:
    by_id = {g.id: g for g in genomes}
    score_by_id = {s.genome_id: s for s in scores if s.genome_id in by_id}
    if config.n > len(score_by_id):
        raise ValueError(f"n={config.n} exceeds the {len(score_by_id)} scored genomes")
    ranked = rank(score_by_id.values(), config.metric)
    shortlist = ranked[: config.n]

    cand_obj, cand_gt = obj, ground_truth
    if resized:
        cand_obj = _resized_objective(obj, config.resized_dims)
        cand_gt = resize(ground_truth, *config.resized_dims) if ground_truth is not None else None

    results = train_many([(by_id[g], cand_obj, config.train, cand_gt) for g in shortlist], config.workers)
    runs, excluded = {}, {}
    for gid, (run, err) in zip(shortlist, results):
        if run is None:
            log.warning("candidate %s excluded: %s", gid, err)
            excluded[gid] = err
        else:
            runs[gid] = run
    if not runs:
        raise RuntimeError("every shortlisted candidate failed to train")

    survivors = [g for g in shortlist if g in runs]
    weights = inverse_metric_weights([score_by_id[g].value(config.metric) for g in survivors])
    outputs = [runs[g].final_average for g in survivors]
    distances = mse_to_average(outputs, weights)
    chosen = survivors[select_by_average(outputs, weights)]

    if resized:
        final, err = _train_job((by_id[chosen], obj, config.train, ground_truth))
        if final is None:
            raise RuntimeError(f"full-size training of chosen genome {chosen} failed: {err}")
    else:
        final = runs[chosen]
    return SelectionResult(
        config.metric, config.mode, ranked, survivors, chosen,
        {g: runs[g].final_average for g in survivors},
        weights.tolist(), distances.tolist(), excluded, final,
    )


def full_sized_selection(genomes, scores, obj: TaskObjective, config: SelectionConfig,
                         ground_truth: np.ndarray | None = None) -> SelectionResult:
    return _select(genomes, scores, obj, replace(config, mode="full_sized"), ground_truth, resized=False)


def resized_selection(genomes, scores, obj: TaskObjective, config: SelectionConfig,
                      ground_truth: np.ndarray | None = None) -> SelectionResult:
    return _select(genomes, scores, obj, replace(config, mode="resized"), ground_truth, resized=True)


def run_selection(genomes, scores, obj, config: SelectionConfig, ground_truth=None) -> SelectionResult:
    fn = resized_selection if config.mode == "resized" else full_sized_selection
    return fn(genomes, scores, obj, config, ground_truth)
