"""Image loading/saving, corruption operators, resampling and PSNR.

Images are plain ``numpy`` arrays of float64 intensities in [0, 1], shaped
``(H, W)`` for grayscale or ``(H, W, 3)`` for color.  Corrupted images are
allowed to leave [0, 1]; clipping happens only when writing to disk.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

SUPPORTED_SUFFIXES = {".png", ".pgm", ".ppm", ".pnm"}


class ImageError(ValueError):
    pass


def as_image(arr) -> np.ndarray:
    img = np.asarray(arr, dtype=np.float64)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[..., 0]
    if img.ndim not in (2, 3) or (img.ndim == 3 and img.shape[2] != 3):
        raise ImageError(f"expected (H, W) or (H, W, 3) array, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ImageError("image contains non-finite values")
    return img


def channels(img: np.ndarray) -> int:
    return 1 if img.ndim == 2 else img.shape[2]


def check_min_size(img: np.ndarray, minimum: int = 8) -> None:
    if img.shape[0] < minimum or img.shape[1] < minimum:
        raise ImageError(f"image must be at least {minimum}x{minimum}, got {img.shape[:2]}")


def load_image(path) -> np.ndarray:
    """Read an 8-bit PNG or binary PGM/PPM file into [0, 1] floats."""
    path = Path(path)
    if path.suffix.lower() not in SUPPORTED_SUFFIXES:
        raise ImageError(f"unsupported image format: {path.suffix}")
    try:
        pil = PILImage.open(path)
        pil.load()
    except (OSError, SyntaxError) as exc:
        raise ImageError(f"cannot read image {path}: {exc}") from exc
    if pil.mode in ("I", "I;16", "I;16B", "I;16L", "F"):
        raise ImageError(f"unsupported bit depth (mode {pil.mode}) in {path}")
    if pil.mode in ("1", "L"):
        pil = pil.convert("L")
    elif pil.mode != "RGB":
        pil = pil.convert("RGB")
    return np.asarray(pil, dtype=np.float64) / 255.0


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_image(img: np.ndarray, path) -> Path:
    """Write ``img`` as 8-bit; the format follows the file suffix."""
    path = Path(path)
    if path.suffix.lower() not in SUPPORTED_SUFFIXES:
        raise ImageError(f"unsupported image format: {path.suffix}")
    path.parent.mkdir(parents=True, exist_ok=True)
    data = to_uint8(as_image(img))
    PILImage.fromarray(data, mode="L" if data.ndim == 2 else "RGB").save(path)
    return path


def add_gaussian_noise(img: np.ndarray, sigma: float, seed: int, clip: bool = False) -> np.ndarray:
    """Add i.i.d. N(0, (sigma/255)^2) noise; ``sigma`` is on the 8-bit scale."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    rng = np.random.default_rng(seed)
    out = img + rng.normal(0.0, sigma / 255.0, size=img.shape)
    return np.clip(out, 0.0, 1.0) if clip else out


def apply_bernoulli_mask(img: np.ndarray, keep_prob: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Drop whole pixels independently; returns (masked image, {0,1} mask of shape (H, W))."""
    if not 0.0 < keep_prob < 1.0:
        raise ValueError("keep_prob must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    mask = (rng.random(img.shape[:2]) < keep_prob).astype(np.float64)
    if not mask.any():
        raise ImageError("mask dropped every pixel")
    return apply_mask(img, mask), mask


def apply_mask(img: np.ndarray, mask: np.ndarray) -> np.ndarray:
    if mask.shape != img.shape[:2]:
        raise ImageError(f"mask shape {mask.shape} does not match image {img.shape[:2]}")
    return img * (mask[..., None] if img.ndim == 3 else mask)


def _cubic(x: np.ndarray, a: float = -0.5) -> np.ndarray:
    x = np.abs(x)
    x2, x3 = x * x, x * x * x
    near = (a + 2) * x3 - (a + 3) * x2 + 1
    far = a * x3 - 5 * a * x2 + 8 * a * x - 4 * a
    return np.where(x <= 1, near, np.where(x < 2, far, 0.0))


def _reflect(idx: np.ndarray, n: int) -> np.ndarray:
    # half-sample symmetric: -1 -> 0, n -> n-1
    period = 2 * n
    idx = np.mod(idx, period)
    return np.where(idx >= n, period - 1 - idx, idx)


def bicubic_matrix(n_in: int, factor: int) -> np.ndarray:
    """Dense ``(n_in // factor, n_in)`` operator for antialiased Catmull-Rom decimation."""
    n_out = n_in // factor
    mat = np.zeros((n_out, n_in))
    offsets = np.arange(-2 * factor, 2 * factor + 1)
    for i in range(n_out):
        center = (i + 0.5) * factor - 0.5
        taps = np.floor(center) + offsets
        w = _cubic((taps - center) / factor)
        np.add.at(mat[i], _reflect(taps.astype(int), n_in), w)
    return mat / mat.sum(axis=1, keepdims=True)


def _apply_separable(img: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    if img.ndim == 2:
        return rows @ img @ cols.T
    return np.einsum("ij,jkc,lk->ilc", rows, img, cols)


def downsample(img: np.ndarray, factor: int, method: str = "bicubic") -> np.ndarray:
    """Shrink by an integer factor with a bicubic (a = -0.5) antialiasing kernel."""
    if method != "bicubic":
        raise ValueError(f"unsupported downsampling method {method!r}")
    if factor not in (2, 4, 8):
        raise ValueError("factor must be 2, 4 or 8")
    h, w = img.shape[:2]
    if h % factor or w % factor:
        raise ImageError(f"dimensions {h}x{w} are not divisible by {factor}")
    return _apply_separable(img, bicubic_matrix(h, factor), bicubic_matrix(w, factor))


def bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Half-pixel-centered (align_corners=False) linear interpolation operator."""
    mat = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for i in range(n_out):
        src = min(max((i + 0.5) * scale - 0.5, 0.0), n_in - 1)
        lo = int(math.floor(src))
        hi = min(lo + 1, n_in - 1)
        frac = src - lo
        mat[i, lo] += 1.0 - frac
        mat[i, hi] += frac
    return mat


def resize(img: np.ndarray, out_h: int, out_w: int, method: str = "bilinear") -> np.ndarray:
    if out_h < 8 or out_w < 8:
        raise ImageError("output dimensions must be at least 8")
    h, w = img.shape[:2]
    if method == "bilinear":
        return _apply_separable(img, bilinear_matrix(h, out_h), bilinear_matrix(w, out_w))
    if method == "nearest":
        ri = np.minimum(np.floor((np.arange(out_h) + 0.5) * h / out_h).astype(int), h - 1)
        ci = np.minimum(np.floor((np.arange(out_w) + 0.5) * w / out_w).astype(int), w - 1)
        return img[np.ix_(ri, ci)] if img.ndim == 2 else img[ri][:, ci]
    raise ValueError(f"unsupported resize method {method!r}")


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; identical inputs give ``inf``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ImageError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)
