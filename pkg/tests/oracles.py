"""Slow, independent reference computations used to check the fast paths."""

import math

import numpy as np
from scipy.optimize import linprog


def naive_dft2(x):
    h, w = x.shape
    out = np.zeros((h, w), dtype=complex)
    for u in range(h):
        for v in range(w):
            acc = 0j
            for r in range(h):
                for c in range(w):
                    acc += x[r, c] * np.exp(-2j * np.pi * (u * r / h + v * c / w))
            out[u, v] = acc
    return out


def transport_emd(a, b, width):
    """Earth mover's distance by solving the transport LP on bin centers."""
    n = len(a)
    cost = np.abs(np.arange(n)[:, None] - np.arange(n)[None, :]) * width
    a_eq = np.zeros((2 * n, n * n))
    for i in range(n):
        a_eq[i, i * n:(i + 1) * n] = 1
        a_eq[n + i, i::n] = 1
    res = linprog(cost.ravel(), A_eq=a_eq, b_eq=np.concatenate([a, b]), bounds=(0, None), method="highs")
    return res.fun


def pair_count_tau_b(x, y):
    n = len(x)
    conc = disc = tie_x = tie_y = 0
    for i in range(n):
        for j in range(i + 1, n):
            dx = np.sign(x[i] - x[j])
            dy = np.sign(y[i] - y[j])
            if dx == 0 and dy == 0:
                tie_x += 1
                tie_y += 1
            elif dx == 0:
                tie_x += 1
            elif dy == 0:
                tie_y += 1
            elif dx == dy:
                conc += 1
            else:
                disc += 1
    n0 = n * (n - 1) / 2
    return (conc - disc) / math.sqrt((n0 - tie_x) * (n0 - tie_y))


def loop_mse(a, b):
    a = np.atleast_3d(a)
    b = np.atleast_3d(b)
    total = 0.0
    for i in range(a.shape[0]):
        for j in range(a.shape[1]):
            for c in range(a.shape[2]):
                total += (a[i, j, c] - b[i, j, c]) ** 2
    return total / a.size


def loop_psnr(a, b):
    return 10 * math.log10(1.0 / loop_mse(a, b))


def loop_psd(img):
    """|DFT|^2 / n per channel via the naive DFT, channel-averaged and centered."""
    img = np.atleast_3d(img)
    h, w, c = img.shape
    acc = np.zeros((h, w))
    for k in range(c):
        acc += np.abs(naive_dft2(img[..., k])) ** 2 / (h * w)
    acc /= c
    out = np.zeros((h, w))
    for u in range(h):
        for v in range(w):
            out[(u + h // 2) % h, (v + w // 2) % w] = acc[u, v]
    return out


def loop_db(value, floor=-120.0):
    return 10 * math.log10(value) if value > 10 ** (floor / 10) else floor


def loop_annulus(h, w, inner, outer):
    half = min(h, w) / 2
    mask = np.zeros((h, w), dtype=bool)
    for i in range(h):
        for j in range(w):
            d = math.hypot(i - h // 2, j - w // 2)
            mask[i, j] = inner * half <= d < outer * half
    return mask


def loop_hist(values, bins=75, lo=0.0, hi=1.0):
    counts = [0] * bins
    width = (hi - lo) / bins
    for v in values:
        k = int((v - lo) // width)
        counts[min(max(k, 0), bins - 1)] += 1
    return np.array(counts) / len(values)


def radial_bandwidth(ps, p):
    h, w = ps.shape
    total = ps.sum()
    r = 0
    while True:
        inside = 0.0
        for i in range(h):
            for j in range(w):
                if (i - h // 2) ** 2 + (j - w // 2) ** 2 <= r * r:
                    inside += ps[i, j]
        if inside >= p * total:
            return r
        r += 1


def central_difference(fn, params, h=1e-6, max_coords=None, rng=None):
    """Numerical gradient of scalar ``fn()`` w.r.t. float64 torch tensors ``params``.

    When ``max_coords`` is set, only that many random coordinates per tensor
    are probed; the returned dict maps tensor index to (flat indices, grads).
    """
    import torch

    rng = rng or np.random.default_rng(0)
    out = {}
    with torch.no_grad():
        for k, p in enumerate(params):
            flat = p.view(-1)
            idx = np.arange(flat.numel())
            if max_coords is not None and flat.numel() > max_coords:
                idx = rng.choice(flat.numel(), max_coords, replace=False)
            grads = np.empty(len(idx))
            for n, i in enumerate(idx):
                orig = flat[i].item()
                flat[i] = orig + h
                up = float(fn())
                flat[i] = orig - h
                down = float(fn())
                flat[i] = orig
                grads[n] = (up - down) / (2 * h)
            out[k] = (idx, grads)
    return out
