"""Reverse-mode gradients against central differences and adjoint identities (float64)."""

import numpy as np
import pytest
import torch
from torch import nn

from oracles import central_difference
from psdnas.network import BatchStatNorm, Resample, build, make_noise
from psdnas.search_space import CellSpec, Genome, sample_space
from psdnas.trainer import Downsampler, task_loss

torch.manual_seed(0)
REL_TOL = 1e-5
DT = torch.float64


def _rel_error(analytic, numeric):
    gap = np.max(np.abs(analytic - numeric))
    scale = max(np.max(np.abs(numeric)), np.max(np.abs(analytic)))
    if scale < 1e-9:
        # analytically zero gradient (e.g. a bias feeding batch statistics)
        return 0.0 if gap < 1e-9 else np.inf
    return gap / scale


def _check(fn, tensors, max_coords=None, per_tensor=True):
    """Compare autograd with central differences.

    ``per_tensor=False`` normalizes by the largest gradient over all tensors;
    used for whole networks, where some deep tensors have gradients so small
    that the h=1e-6 difference quotient is dominated by float64 rounding.
    """
    for t in tensors:
        t.grad = None
    fn().backward()
    numeric = central_difference(fn, tensors, max_coords=max_coords)
    pairs = []
    for k, t in enumerate(tensors):
        idx, fd = numeric[k]
        pairs.append((t.grad.detach().reshape(-1).numpy()[idx], fd))
    if per_tensor:
        for k, (ad, fd) in enumerate(pairs):
            assert _rel_error(ad, fd) < REL_TOL, f"tensor {k}"
    else:
        ad = np.concatenate([a for a, _ in pairs])
        fd = np.concatenate([f for _, f in pairs])
        assert _rel_error(ad, fd) < REL_TOL


def _probe(shape, seed=0):
    g = torch.Generator().manual_seed(seed)
    return torch.randn(shape, generator=g, dtype=DT)


def _scalar(module, x):
    weights = _probe(module(x).shape, 1)
    return lambda: (module(x) * weights).sum()


def _x(shape=(1, 3, 8, 8), seed=2):
    return _probe(shape, seed).requires_grad_(True)


OPS = {
    "conv_dilated": lambda: nn.Conv2d(3, 3, 3, padding=2, dilation=2),
    "conv_k7_d3": lambda: nn.Conv2d(3, 3, 7, padding=9, dilation=3),
    "separable": lambda: nn.Sequential(nn.Conv2d(3, 3, 5, padding=2, groups=3), nn.Conv2d(3, 3, 1)),
    "transposed_conv": lambda: nn.ConvTranspose2d(3, 3, 4, stride=2, padding=1),
    "strided_conv": lambda: nn.Conv2d(3, 3, 4, stride=2, padding=1),
    "up_bilinear": lambda: Resample("bilinear", 2.0),
    "up_nearest": lambda: Resample("nearest", 2.0),
    "up_bicubic": lambda: Resample("bicubic", 2.0),
    "down_bilinear": lambda: Resample("bilinear", 0.5),
    "down_nearest": lambda: Resample("nearest", 0.5),
    "down_bicubic": lambda: Resample("bicubic", 0.5),
    "sigmoid": lambda: nn.Sigmoid(),
    "leaky_relu": lambda: nn.LeakyReLU(0.2),
    "relu": lambda: nn.ReLU(),
    "batch_norm": lambda: BatchStatNorm(3),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_op_gradients(name):
    module = OPS[name]().to(DT)
    for p in module.parameters():
        with torch.no_grad():
            p.copy_(_probe(p.shape, 5))
    x = _x()
    _check(_scalar(module, x), [x, *module.parameters()])


def test_concat_projection_gradient():
    proj = nn.Conv2d(9, 3, 1).to(DT)
    a, b, c = _x(seed=3), _x(seed=4), _x(seed=5)
    w = _probe((1, 3, 8, 8), 6)
    _check(lambda: (proj(torch.cat([a, b, c], dim=1)) * w).sum(), [a, b, c, *proj.parameters()])


def test_downsampler_gradient():
    down = Downsampler(16, 16, 4, DT)
    x = _x((1, 2, 16, 16))
    w = _probe((1, 2, 4, 4), 7)
    _check(lambda: (down(x) * w).sum(), [x])


@pytest.mark.parametrize("kind", ["denoising", "inpainting", "super_resolution"])
def test_loss_gradients(kind):
    x = _x((1, 1, 16, 16))
    down = Downsampler(16, 16, 2, DT) if kind == "super_resolution" else None
    target = _probe((1, 1, 8, 8) if down else (1, 1, 16, 16), 8)
    mask = (_probe((16, 16), 9) > 0).to(DT) if kind == "inpainting" else None
    _check(lambda: task_loss(x, target, kind, mask, down), [x])


def _cover_genomes():
    """Sampled genomes plus hand-made ones so every attribute value occurs."""
    genomes = list(sample_space(3, seed=17))
    for sampling, transform, act in [
        ("transposed_conv", "separable_conv", "leaky_relu_0.2"),
        ("bicubic", "identity", "sigmoid"),
        ("nearest", "conv", "none"),
    ]:
        k, d = (1, 1) if transform == "identity" else (5, 2)
        cell = CellSpec(sampling, transform, k, d, act)
        genomes.append(Genome((cell,) * 5, (cell,) * 5, ((0, 2), (1, 1), (3, 4))))
    return genomes


@pytest.mark.parametrize("genome", _cover_genomes(), ids=lambda g: g.id)
def test_network_parameter_gradients(genome):
    net = build(genome, width=4, noise_channels=2, out_channels=1, init_seed=3, dtype=DT)
    z = make_noise(1, 64, 64, 2, DT)
    # a target close to the current output keeps the loss small, so the
    # central difference is not swamped by rounding in the 4096-term sum
    with torch.no_grad():
        target = net(z) + 0.01 * _probe((1, 1, 64, 64), 11)
    params = list(net.parameters())
    loss = lambda: task_loss(net(z), target, "denoising")  # noqa: E731
    _check(loss, params, max_coords=12, per_tensor=False)

    # directional derivative along a random direction in full parameter space
    direction = [_probe(p.shape, 20 + k) for k, p in enumerate(params)]
    for p in params:
        p.grad = None
    loss().backward()
    analytic = sum(float((p.grad * d).sum()) for p, d in zip(params, direction))
    h = 1e-6
    with torch.no_grad():
        for p, d in zip(params, direction):
            p.add_(h * d)
        up = float(loss())
        for p, d in zip(params, direction):
            p.sub_(2 * h * d)
        down = float(loss())
        for p, d in zip(params, direction):
            p.add_(h * d)
    numeric = (up - down) / (2 * h)
    assert abs(analytic - numeric) / abs(numeric) < REL_TOL


def _adjoint_gap(op, in_shape, seed=0):
    x = _probe(in_shape, seed).requires_grad_(True)
    ax = op(x)
    y = _probe(ax.shape, seed + 1)
    (aty,) = torch.autograd.grad(ax, x, grad_outputs=y)
    lhs = float((ax * y).sum().detach())
    rhs = float((x * aty).sum().detach())
    return abs(lhs - rhs) / max(abs(lhs), 1.0)


LINEAR = {
    "up_bilinear": lambda: Resample("bilinear", 2.0),
    "up_nearest": lambda: Resample("nearest", 2.0),
    "up_bicubic": lambda: Resample("bicubic", 2.0),
    "down_bilinear": lambda: Resample("bilinear", 0.5),
    "down_bicubic": lambda: Resample("bicubic", 0.5),
    "conv": lambda: nn.Conv2d(3, 3, 5, padding=4, dilation=2, bias=False),
    "transposed_conv": lambda: nn.ConvTranspose2d(3, 3, 4, stride=2, padding=1, bias=False),
    "strided_conv": lambda: nn.Conv2d(3, 3, 4, stride=2, padding=1, bias=False),
    "downsampler": lambda: Downsampler(16, 16, 2, DT),
}


@pytest.mark.parametrize("name", sorted(LINEAR))
def test_adjoint_consistency(name):
    op = LINEAR[name]()
    if isinstance(op, nn.Module):
        op = op.to(DT)
    assert _adjoint_gap(op, (1, 3, 16, 16)) < 1e-10


def _dense(op, in_shape):
    n = int(np.prod(in_shape))
    cols = []
    for i in range(n):
        e = torch.zeros(n, dtype=DT)
        e[i] = 1
        cols.append(op(e.reshape(in_shape)).reshape(-1))
    return torch.stack(cols, dim=1)


@pytest.mark.parametrize("mode", ["bilinear", "nearest", "bicubic"])
def test_resampling_gradient_is_explicit_adjoint(mode):
    op = Resample(mode, 2.0)
    shape = (1, 1, 4, 4)
    mat = _dense(op, shape)
    x = _probe(shape, 3).requires_grad_(True)
    upstream = _probe((1, 1, 8, 8), 4)
    op(x).backward(upstream)
    expected = (mat.T @ upstream.reshape(-1)).reshape(shape)
    assert torch.allclose(x.grad, expected, atol=1e-12)


def test_zero_upstream_gives_zero_gradients():
    net = build(sample_space(1, 3)[0], 4, 2, dtype=DT)
    out = net(make_noise(0, 32, 32, 2, DT))
    out.backward(torch.zeros_like(out))
    assert all(torch.count_nonzero(p.grad) == 0 for p in net.parameters())
