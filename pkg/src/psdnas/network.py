"""Turn a :class:`~psdnas.search_space.Genome` into a randomly initialized CNN.

Topology: 3x3 stem (Z -> C), five stride-2 encoder cells, five 2x decoder
cells, 1x1 head (C -> image channels) and a sigmoid.  Every cell is
``resample -> [merge] -> transform -> batch-norm -> activation``; cross-level
features reach their decoder stage through chained 2x bilinear upsamplers and
are merged by concatenation plus a 1x1 projection back to C channels.
"""

from __future__ import annotations

import math
import struct

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .search_space import N_LEVELS, CellSpec, Genome

DEPTH_FACTOR = 2**N_LEVELS
NOISE_SCALE = 0.1


def _activation(name: str) -> nn.Module:
    return {
        "relu": nn.ReLU(),
        "leaky_relu_0.2": nn.LeakyReLU(0.2),
        "sigmoid": nn.Sigmoid(),
        "none": nn.Identity(),
    }[name]


class BatchStatNorm(nn.Module):
    """Batch normalization that always uses the current batch statistics.

    Unlike ``nn.BatchNorm2d`` it accepts a single value per channel (the
    bottleneck of a 32x32 input), where it reduces to the bias.
    """

    def __init__(self, width: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(width))
        self.bias = nn.Parameter(torch.zeros(width))

    def forward(self, x):
        mean = x.mean(dim=(0, 2, 3), keepdim=True)
        var = x.var(dim=(0, 2, 3), unbiased=False, keepdim=True)
        scale = self.weight.view(1, -1, 1, 1) / torch.sqrt(var + self.eps)
        return (x - mean) * scale + self.bias.view(1, -1, 1, 1)


class Resample(nn.Module):
    """Parameter-free 2x up- or downsampling by interpolation."""

    def __init__(self, mode: str, scale: float):
        super().__init__()
        self.mode = mode
        self.scale = scale

    def forward(self, x):
        size = (int(x.shape[-2] * self.scale), int(x.shape[-1] * self.scale))
        if self.mode == "nearest":
            return F.interpolate(x, size=size, mode="nearest")
        return F.interpolate(x, size=size, mode=self.mode, align_corners=False)


def _transform(cell: CellSpec, width: int) -> nn.Module:
    if cell.transform == "identity":
        return nn.Identity()
    pad = cell.dilation * (cell.kernel_size - 1) // 2
    if cell.transform == "conv":
        return nn.Conv2d(width, width, cell.kernel_size, padding=pad, dilation=cell.dilation)
    return nn.Sequential(
        nn.Conv2d(width, width, cell.kernel_size, padding=pad, dilation=cell.dilation, groups=width),
        nn.Conv2d(width, width, 1),
    )


class Cell(nn.Module):
    def __init__(self, cell: CellSpec, width: int, direction: str, n_inputs: int = 0):
        super().__init__()
        if cell.spatial_sampling == "transposed_conv":
            if direction == "up":
                self.resample = nn.ConvTranspose2d(width, width, 4, stride=2, padding=1)
            else:
                self.resample = nn.Conv2d(width, width, 4, stride=2, padding=1)
        else:
            self.resample = Resample(cell.spatial_sampling, 2.0 if direction == "up" else 0.5)
        self.merge = nn.Conv2d(width * (1 + n_inputs), width, 1) if n_inputs else None
        self.transform = _transform(cell, width)
        self.norm = BatchStatNorm(width)
        self.act = _activation(cell.activation)

    def forward(self, x, extra=()):
        x = self.resample(x)
        if self.merge is not None:
            x = self.merge(torch.cat([x, *extra], dim=1))
        return self.act(self.norm(self.transform(x)))


class Network(nn.Module):
    def __init__(self, genome: Genome, width: int = 32, noise_channels: int = 32, out_channels: int = 1):
        super().__init__()
        if width < 4 or noise_channels < 1:
            raise ValueError("need width >= 4 and noise_channels >= 1")
        for i, j in genome.cross_connections:
            # a connection must point from a coarser encoder level to a finer decoder stage
            assert i <= j, "cross connection would create a cycle"
        self.genome_id = genome.id
        self.width = width
        self.noise_channels = noise_channels
        self.out_channels = out_channels
        self.connections = genome.cross_connections
        self.stem = nn.Conv2d(noise_channels, width, 3, padding=1)
        self.encoder = nn.ModuleList(Cell(c, width, "down") for c in genome.encoder_cells)
        incoming = [sum(1 for _, j in self.connections if j == stage) for stage in range(N_LEVELS)]
        self.decoder = nn.ModuleList(
            Cell(c, width, "up", incoming[k]) for k, c in enumerate(genome.decoder_cells)
        )
        self.head = nn.Conv2d(width, out_channels, 1)

    def forward(self, z):
        if z.shape[-2] % DEPTH_FACTOR or z.shape[-1] % DEPTH_FACTOR:
            raise ValueError(f"spatial dims {tuple(z.shape[-2:])} must be divisible by {DEPTH_FACTOR}")
        x = self.stem(z)
        levels = [None] * N_LEVELS
        for stage, cell in enumerate(self.encoder):
            x = cell(x)
            levels[N_LEVELS - 1 - stage] = x
        for stage, cell in enumerate(self.decoder):
            extra = []
            for i, j in self.connections:
                if j == stage:
                    feat = levels[i]
                    for _ in range(j - i + 1):
                        feat = F.interpolate(feat, scale_factor=2.0, mode="bilinear", align_corners=False)
                    extra.append(feat)
            x = cell(x, extra)
        return torch.sigmoid(self.head(x))


def _init_parameters(net: nn.Module, seed: int) -> None:
    gen = torch.Generator().manual_seed(int(seed) % 2**63)
    with torch.no_grad():
        for module in net.modules():
            if isinstance(module, (nn.Conv2d, nn.ConvTranspose2d)):
                w = module.weight
                if isinstance(module, nn.ConvTranspose2d):
                    fan_in = w.shape[0] * w.shape[2] * w.shape[3]
                else:
                    fan_in = w[0].numel()
                bound = math.sqrt(6.0 / fan_in)
                w.copy_(torch.rand(w.shape, generator=gen, dtype=torch.float64) * 2 * bound - bound)
                if module.bias is not None:
                    module.bias.zero_()


def build(genome: Genome, width: int = 32, noise_channels: int = 32, out_channels: int = 1,
          init_seed: int = 0, dtype=torch.float32) -> Network:
    """Build ``genome`` with He-uniform (fan-in) weights and zero biases."""
    net = Network(genome, width, noise_channels, out_channels).to(dtype)
    _init_parameters(net, init_seed)
    return net


def parameter_count(net: nn.Module) -> int:
    return sum(p.numel() for p in net.parameters())


def make_noise(seed: int, height: int, width: int, noise_channels: int = 32, dtype=torch.float32) -> torch.Tensor:
    """Network input ``z ~ U(0, 0.1)`` of shape ``(1, Z, H, W)``."""
    gen = torch.Generator().manual_seed(int(seed) % 2**63)
    z = torch.rand((1, noise_channels, height, width), generator=gen, dtype=torch.float64) * NOISE_SCALE
    return z.to(dtype)


def to_image(out: torch.Tensor) -> np.ndarray:
    arr = out.detach().to(torch.float64).cpu().numpy()[0]
    return arr[0] if arr.shape[0] == 1 else np.transpose(arr, (1, 2, 0))


def forward(net: Network, z: torch.Tensor) -> np.ndarray:
    with torch.no_grad():
        return to_image(net(z))


def random_output(genome: Genome, init_seed: int, noise_seed: int, height: int, width: int,
                  channels: int = 1, width_channels: int = 32, noise_channels: int = 32) -> np.ndarray:
    """Output of the untrained network for ``genome``: build, draw noise, forward."""
    if height % DEPTH_FACTOR or width % DEPTH_FACTOR:
        raise ValueError(f"height and width must be divisible by {DEPTH_FACTOR}")
    net = build(genome, width_channels, noise_channels, channels, init_seed)
    return forward(net, make_noise(noise_seed, height, width, noise_channels))


def save_checkpoint(net: Network, path) -> None:
    """Flat binary: magic, genome id, shape table, then little-endian float32 values."""
    tensors = [(name, p.detach().to(torch.float32).cpu().numpy()) for name, p in net.named_parameters()]
    with open(path, "wb") as fh:
        fh.write(b"PSDN")
        fh.write(net.genome_id.encode().ljust(32, b"\0"))
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors:
            encoded = name.encode()
            fh.write(struct.pack("<I", len(encoded)) + encoded)
            fh.write(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        for _, arr in tensors:
            fh.write(arr.astype("<f4").tobytes())


def load_checkpoint(net: Network, path) -> None:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != b"PSDN":
        raise ValueError("not a network checkpoint")
    genome_id = data[4:36].rstrip(b"\0").decode()
    if genome_id != net.genome_id:
        raise ValueError(f"checkpoint is for genome {genome_id}, network is {net.genome_id}")
    pos = 36
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    table = []
    for _ in range(count):
        (n,) = struct.unpack_from("<I", data, pos)
        name = data[pos + 4:pos + 4 + n].decode()
        pos += 4 + n
        (ndim,) = struct.unpack_from("<I", data, pos)
        shape = struct.unpack_from(f"<{ndim}I", data, pos + 4)
        pos += 4 + 4 * ndim
        table.append((name, shape))
    params = dict(net.named_parameters())
    with torch.no_grad():
        for name, shape in table:
            size = int(np.prod(shape))
            values = np.frombuffer(data, dtype="<f4", count=size, offset=pos).reshape(shape)
            pos += 4 * size
            params[name].copy_(torch.from_numpy(values.copy()))
