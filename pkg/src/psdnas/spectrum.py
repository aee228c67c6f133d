"""Fourier-domain primitives shared by every scoring metric.

Conventions
-----------
* ``psd`` returns ``|DFT|^2 / n`` (``n`` = pixel count), averaged over color
  channels and ``fftshift``-ed so DC sits at ``(H // 2, W // 2)``.
* Strip masks are annuli around that DC pixel whose inner/outer *diameters*
  are fractions of ``min(H, W)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DB_FLOOR = -120.0
HIST_BINS = 75


def dft2(channel: np.ndarray) -> np.ndarray:
    """Unnormalized forward 2D DFT of a real array."""
    return np.fft.fft2(np.asarray(channel, dtype=np.float64))


def psd(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    n = img.shape[0] * img.shape[1]
    planes = [img] if img.ndim == 2 else [img[..., c] for c in range(img.shape[2])]
    power = np.mean([np.abs(dft2(p)) ** 2 for p in planes], axis=0) / n
    return np.fft.fftshift(power)


def psd_db(ps: np.ndarray, floor_db: float = DB_FLOOR) -> np.ndarray:
    return 10.0 * np.log10(np.maximum(ps, 10.0 ** (floor_db / 10.0)))


def center_distance(h: int, w: int) -> np.ndarray:
    """Euclidean distance of every pixel from the shifted DC bin."""
    rows = np.arange(h) - h // 2
    cols = np.arange(w) - w // 2
    return np.sqrt(rows[:, None] ** 2 + cols[None, :] ** 2)


def strip_mask(h: int, w: int, inner_frac: float = 0.10, outer_frac: float = 0.20) -> np.ndarray:
    """Boolean annulus ``r_inner <= dist < r_outer`` around DC."""
    if not 0.0 <= inner_frac < outer_frac <= 1.0:
        raise ValueError("need 0 <= inner_frac < outer_frac <= 1")
    half = min(h, w) / 2.0
    dist = center_distance(h, w)
    mask = (dist >= inner_frac * half) & (dist < outer_frac * half)
    if not mask.any():
        raise ValueError(f"strip mask is empty for a {h}x{w} image")
    return mask


@dataclass(frozen=True)
class Histogram:
    mass: np.ndarray
    lo: float = 0.0
    hi: float = 1.0

    @property
    def bin_count(self) -> int:
        return len(self.mass)

    @property
    def bin_width(self) -> float:
        return (self.hi - self.lo) / self.bin_count


def histogram(values, bins: int = HIST_BINS, value_range: tuple[float, float] = (0.0, 1.0)) -> Histogram:
    """Probability histogram; values outside ``value_range`` land in the edge bins."""
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        raise ValueError("cannot build a histogram from an empty sequence")
    lo, hi = value_range
    counts, _ = np.histogram(np.clip(values, lo, hi), bins=bins, range=(lo, hi))
    return Histogram(counts / values.size, lo, hi)


def emd_1d(a: Histogram, b: Histogram) -> float:
    """1-Wasserstein distance between two histograms on the same bins."""
    if a.bin_count != b.bin_count or (a.lo, a.hi) != (b.lo, b.hi):
        raise ValueError("histograms use different binning")
    return float(np.sum(np.abs(np.cumsum(a.mass) - np.cumsum(b.mass))) * a.bin_width)


def bandwidth(ps: np.ndarray, p: float = 0.99) -> int:
    """Smallest integer radius whose closed disc around DC holds ``p`` of the energy."""
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")
    ps = np.asarray(ps, dtype=np.float64)
    total = ps.sum()
    if not total > 0:
        raise ValueError("spectrum has zero energy")
    # dist <= r  <=>  ceil(dist) <= r for integer r
    radius = np.ceil(center_distance(*ps.shape)).astype(int)
    cumulative = np.cumsum(np.bincount(radius.ravel(), weights=ps.ravel()))
    return int(np.searchsorted(cumulative, p * total, side="left"))
