"""Training-free architecture scores computed from untrained network outputs.

Every score is "lower is better".  Three compare the spectrum of the random
output against the corrupted image; ``bw99`` looks at the output alone.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .image_io import channels
from .network import random_output
from .search_space import Genome
from .spectrum import bandwidth, emd_1d, histogram, psd, psd_db, strip_mask

METRICS = ("psd_db_mse", "psd_db_strip_mse", "psd_strip_hist_emd", "bw99")
HIST_NORMALIZATIONS = ("max", "sum", "db_minmax")

SCORE_FIELDS = ("genome_id", "psd_db_mse", "psd_db_strip_mse", "psd_strip_hist_emd", "bw99", "image_id", "seed")


def _check_pair(out, corrupted):
    if out.shape != corrupted.shape:
        raise ValueError(f"shape mismatch: {out.shape} vs {corrupted.shape}")


def psd_db_mse(out: np.ndarray, corrupted: np.ndarray) -> float:
    _check_pair(out, corrupted)
    diff = psd_db(psd(out)) - psd_db(psd(corrupted))
    return float(np.mean(diff**2))


def psd_db_strip_mse(out: np.ndarray, corrupted: np.ndarray,
                     inner_frac: float = 0.10, outer_frac: float = 0.20) -> float:
    _check_pair(out, corrupted)
    mask = strip_mask(*out.shape[:2], inner_frac, outer_frac)
    diff = psd_db(psd(out)) - psd_db(psd(corrupted))
    return float(np.sum(diff[mask] ** 2) / mask.sum())


def _normalize(values: np.ndarray, how: str) -> np.ndarray:
    if how == "max":
        top = values.max()
        return values / top if top > 0 else values
    if how == "sum":
        total = values.sum()
        return values / total if total > 0 else values
    if how == "db_minmax":
        db = psd_db(values)
        span = db.max() - db.min()
        return (db - db.min()) / span if span > 0 else np.zeros_like(db)
    raise ValueError(f"unknown normalization {how!r}; choose from {HIST_NORMALIZATIONS}")


def psd_strip_hist_emd(out: np.ndarray, corrupted: np.ndarray, bins: int = 75,
                       normalization: str = "max") -> float:
    """EMD between 75-bin histograms of the strip-masked, max-normalized PSD values."""
    _check_pair(out, corrupted)
    mask = strip_mask(*out.shape[:2])
    hists = [histogram(_normalize(psd(img)[mask], normalization), bins) for img in (out, corrupted)]
    return emd_1d(*hists)


def bw99(out: np.ndarray, p: float = 0.99) -> float:
    return float(bandwidth(psd(out), p))


@dataclass
class MetricScores:
    genome_id: str
    psd_db_mse: float
    psd_db_strip_mse: float
    psd_strip_hist_emd: float
    bw99: float
    image_id: str = ""
    seed: int = 0

    def value(self, metric: str) -> float:
        if metric not in METRICS:
            raise ValueError(f"unknown metric {metric!r}")
        return getattr(self, metric)


@dataclass
class ScoreConfig:
    init_seed: int = 0
    noise_seed: int = 0
    width: int = 32
    noise_channels: int = 32
    samples: int = 1
    hist_normalization: str = "max"


def score_output(out: np.ndarray, corrupted: np.ndarray, genome_id: str = "", image_id: str = "",
                 seed: int = 0, hist_normalization: str = "max") -> MetricScores:
    return MetricScores(
        genome_id,
        psd_db_mse(out, corrupted),
        psd_db_strip_mse(out, corrupted),
        psd_strip_hist_emd(out, corrupted, normalization=hist_normalization),
        bw99(out),
        image_id,
        seed,
    )


def score_model(genome: Genome, corrupted: np.ndarray, config: ScoreConfig | None = None,
                image_id: str = "") -> MetricScores:
    """Score one genome; a single random output feeds all four metrics.

    With ``config.samples > 1`` the scores are averaged over that many
    initializations (seeds ``init_seed``, ``init_seed + 1``, ...).
    """
    config = config or ScoreConfig()
    h, w = corrupted.shape[:2]
    rows = []
    for k in range(config.samples):
        out = random_output(genome, config.init_seed + k, config.noise_seed + k, h, w,
                            channels(corrupted), config.width, config.noise_channels)
        rows.append(score_output(out, corrupted, genome.id, image_id, config.init_seed,
                                 config.hist_normalization))
    if len(rows) == 1:
        return rows[0]
    means = {m: float(np.mean([r.value(m) for r in rows])) for m in METRICS}
    return MetricScores(genome.id, **means, image_id=image_id, seed=config.init_seed)


def write_scores(scores, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SCORE_FIELDS)
        writer.writeheader()
        for s in scores:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in asdict(s).items()})
    return path


def read_scores(path) -> list[MetricScores]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(SCORE_FIELDS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing column(s) {sorted(missing)}")
        return [
            MetricScores(
                row["genome_id"], *(float(row[m]) for m in METRICS),
                image_id=row["image_id"], seed=int(row["seed"]),
            )
            for row in reader
        ]
