"""DIP optimization: task losses, Adam, and the exponential output average.

Gradients come from ``torch.autograd``; :func:`adam_step` and
:func:`exponential_average` are plain transcriptions usable on numpy arrays or
torch tensors alike.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch

from .image_io import bicubic_matrix, channels, psnr, save_image
from .network import DEPTH_FACTOR, build, make_noise, to_image
from .search_space import Genome

log = logging.getLogger(__name__)

DEFAULT_ITERATIONS = {"denoising": 1200, "inpainting": 9500, "super_resolution": 4500}


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TaskObjective:
    kind: str
    target: np.ndarray
    mask: np.ndarray | None = None
    factor: int | None = None

    def __post_init__(self):
        if self.kind not in DEFAULT_ITERATIONS:
            raise ValueError(f"unknown task {self.kind!r}")
        if (self.mask is not None) != (self.kind == "inpainting"):
            raise ValueError("a mask is required for inpainting and only for inpainting")
        if (self.factor is not None) != (self.kind == "super_resolution"):
            raise ValueError("a factor is required for super-resolution and only for it")

    @property
    def output_shape(self) -> tuple[int, int]:
        h, w = self.target.shape[:2]
        scale = self.factor or 1
        return h * scale, w * scale


@dataclass
class TrainConfig:
    iterations: int = 1200
    learning_rate: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    gamma: float = 0.99
    width: int = 32
    noise_channels: int = 32
    init_seed: int = 0
    noise_seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")

    @classmethod
    def for_task(cls, kind: str, **overrides) -> "TrainConfig":
        return cls(iterations=DEFAULT_ITERATIONS[kind], **overrides)

    @property
    def torch_dtype(self):
        return {"float32": torch.float32, "float64": torch.float64}[self.dtype]


@dataclass
class TrainRun:
    genome_id: str
    final_average: np.ndarray
    loss_trace: list[float]
    psnr_trace: list[float] = field(default_factory=list)
    config: TrainConfig | None = None

    @property
    def final_psnr(self) -> float:
        return self.psnr_trace[-1] if self.psnr_trace else math.nan

    @property
    def optimal_stopping_iteration(self) -> int:
        """1-based iteration with the best PSNR of the running average."""
        return int(np.argmax(self.psnr_trace)) + 1 if self.psnr_trace else 0

    def export(self, directory, stem: str = "run") -> tuple[Path, Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        csv_path = directory / f"{stem}_trace.csv"
        with open(csv_path, "w") as fh:
            fh.write("iteration,loss,psnr\n")
            for t, loss in enumerate(self.loss_trace, start=1):
                p = self.psnr_trace[t - 1] if self.psnr_trace else math.nan
                fh.write(f"{t},{loss!r},{p!r}\n")
        png_path = save_image(self.final_average, directory / f"{stem}.png")
        return csv_path, png_path


def image_to_tensor(img: np.ndarray, dtype=torch.float32) -> torch.Tensor:
    arr = img[None] if img.ndim == 2 else np.transpose(img, (2, 0, 1))
    return torch.from_numpy(np.ascontiguousarray(arr)).to(dtype)[None]


class Downsampler:
    """Differentiable bicubic decimation matching :func:`psdnas.image_io.downsample`."""

    def __init__(self, height: int, width: int, factor: int, dtype=torch.float32):
        self.rows = torch.from_numpy(bicubic_matrix(height, factor)).to(dtype)
        self.cols = torch.from_numpy(bicubic_matrix(width, factor)).to(dtype)

    def __call__(self, x: torch.Tensor) -> torch.Tensor:
        return self.rows @ x @ self.cols.T


def task_loss(output: torch.Tensor, target: torch.Tensor, kind: str,
              mask: torch.Tensor | None = None, down: Downsampler | None = None) -> torch.Tensor:
    """Sum-of-squares DIP objective on ``(1, C, H, W)`` tensors."""
    if kind == "super_resolution":
        output = down(output)
    if output.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(output.shape)} vs {tuple(target.shape)}")
    diff = output - target
    if kind == "inpainting":
        diff = diff * mask
    return (diff**2).sum()


def loss(net_output: np.ndarray, obj: TaskObjective) -> float:
    """Numpy front end of :func:`task_loss` for already-computed images."""
    out = image_to_tensor(net_output, torch.float64)
    target = image_to_tensor(obj.target, torch.float64)
    mask = torch.from_numpy(obj.mask).to(torch.float64) if obj.mask is not None else None
    down = None
    if obj.kind == "super_resolution":
        down = Downsampler(net_output.shape[0], net_output.shape[1], obj.factor, torch.float64)
    return float(task_loss(out, target, obj.kind, mask, down))


@dataclass
class AdamState:
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params, grads, state: AdamState, t: int, lr: float = 0.01,
              betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
    """One bias-corrected Adam update, in place; ``t`` is the 1-based step index."""
    if t < 1:
        raise ValueError("t must be >= 1")
    b1, b2 = betas
    if not state.m:
        state.m = [g * 0 for g in grads]
        state.v = [g * 0 for g in grads]
    c1 = 1 - b1**t
    c2 = 1 - b2**t
    for k, (p, g) in enumerate(zip(params, grads)):
        state.m[k] = b1 * state.m[k] + (1 - b1) * g
        state.v[k] = b2 * state.v[k] + (1 - b2) * g * g
        p -= lr * (state.m[k] / c1) / ((state.v[k] / c2) ** 0.5 + eps)
    return params


def exponential_average(outputs, gamma: float = 0.99):
    """Running ``a_t = gamma * a_{t-1} + (1 - gamma) * x_t`` seeded with ``x_1``."""
    avg = None
    for x in outputs:
        avg = x.copy() if avg is None else gamma * avg + (1 - gamma) * x
    if avg is None:
        raise ValueError("exponential_average needs at least one output")
    return avg


def train_dip(genome: Genome, obj: TaskObjective, config: TrainConfig,
              ground_truth: np.ndarray | None = None) -> TrainRun:
    h, w = obj.output_shape
    if h % DEPTH_FACTOR or w % DEPTH_FACTOR:
        raise ValueError(f"output dims {h}x{w} must be divisible by {DEPTH_FACTOR}")
    dtype = config.torch_dtype
    n_ch = channels(obj.target)
    net = build(genome, config.width, config.noise_channels, n_ch, config.init_seed, dtype)
    z = make_noise(config.noise_seed, h, w, config.noise_channels, dtype)
    target = image_to_tensor(obj.target, dtype)
    mask = torch.from_numpy(obj.mask).to(dtype) if obj.mask is not None else None
    down = Downsampler(h, w, obj.factor, dtype) if obj.kind == "super_resolution" else None
    if ground_truth is not None and ground_truth.shape[:2] != (h, w):
        raise ValueError("ground truth must match the network output size")

    params = list(net.parameters())
    state = AdamState()
    avg = None
    losses, psnrs = [], []
    for t in range(1, config.iterations + 1):
        out = net(z)
        value = task_loss(out, target, obj.kind, mask, down)
        if not torch.isfinite(value):
            raise TrainingDiverged(f"genome {genome.id}: non-finite loss at iteration {t}")
        for p in params:
            p.grad = None
        value.backward()
        with torch.no_grad():
            adam_step(params, [p.grad for p in params], state, t,
                      config.learning_rate, config.betas, config.eps)
            x_t = out.detach()
            avg = x_t.clone() if avg is None else config.gamma * avg + (1 - config.gamma) * x_t
        losses.append(float(value.detach()))
        if ground_truth is not None:
            psnrs.append(psnr(to_image(avg), ground_truth))
    log.debug("genome %s: final loss %.4g", genome.id, losses[-1])
    return TrainRun(genome.id, to_image(avg), losses, psnrs, config)


def config_dict(config: TrainConfig) -> dict:
    d = asdict(config)
    d["betas"] = list(d["betas"])
    return d
