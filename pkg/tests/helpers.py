"""Independent oracles shared by the test modules.

Everything here is deliberately naive (sorting, explicit loops, finite
differences) and never calls the code paths it checks.
"""

from __future__ import annotations

import math

import numpy as np


def finite_difference(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of a scalar function of a flat array."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f(x)
        flat[i] = orig - h
        down = f(x)
        flat[i] = orig
        gflat[i] = (up - down) / (2 * h)
    return grad


def rel_err(a: np.ndarray, b: np.ndarray, floor: float = 1e-7) -> float:
    a, b = np.asarray(a), np.asarray(b)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))


def grad_close(a, b, rel: float = 1e-4, abs_near_zero: float = 1e-7) -> bool:
    """Relative agreement, with an absolute criterion for near-zero entries."""
    a, b = np.asarray(a), np.asarray(b)
    diff = np.abs(a - b)
    mag = np.maximum(np.abs(a), np.abs(b))
    ok = (diff <= abs_near_zero) | (diff <= rel * mag)
    return bool(np.all(ok))


def brute_force_mask(scores: np.ndarray, rate: float) -> np.ndarray:
    """Keep the top max(1, round-half-up(rate*n)) scores; ties by flat index."""
    flat = np.asarray(scores, dtype=np.float64).ravel()
    keep = max(1, int(math.floor(rate * flat.size + 0.5)))
    keep = min(keep, flat.size)
    order = sorted(range(flat.size), key=lambda i: (-flat[i], i))
    mask = np.zeros(flat.size)
    for i in order[:keep]:
        mask[i] = 1.0
    return mask.reshape(np.asarray(scores).shape)


def brute_force_preserved(theta: np.ndarray, mask: np.ndarray) -> int:
    """Count non-zeros of theta * mask after explicit broadcasting, one by one."""
    theta = np.asarray(theta)
    if mask.shape != theta.shape:
        expand = mask.reshape((theta.shape[0],) + (1,) * (theta.ndim - 1))
        mask = np.broadcast_to(expand, theta.shape)
    count = 0
    for t, m in zip(theta.ravel(), np.asarray(mask).ravel()):
        if t * m != 0:
            count += 1
    return count


def mac_count(c_i: int, c_o: int, kernel: int, spatial_out: int, is_fc: bool) -> float:
    """Straight multiply-accumulate count for one layer."""
    if is_fc:
        return float(c_i * c_o)
    return float(c_i * c_o * kernel * kernel * spatial_out * spatial_out)


def erk_water_fill(sizes, raws, budget: float):
    """Scale densities to the budget, repeatedly capping at 1."""
    sizes = list(map(float, sizes))
    raws = list(map(float, raws))
    capped = [False] * len(sizes)
    density = [0.0] * len(sizes)
    while True:
        rest = budget - sum(s for s, c in zip(sizes, capped) if c)
        mass = sum(r * s for r, s, c in zip(raws, sizes, capped) if not c)
        scale = rest / mass
        changed = False
        for i in range(len(sizes)):
            if capped[i]:
                density[i] = 1.0
            else:
                density[i] = scale * raws[i]
                if density[i] > 1.0:
                    capped[i] = True
                    changed = True
        if not changed:
            return density


def lamp_scores_naive(weights) -> np.ndarray:
    """Suffix-sum LAMP scores via explicit per-element loops."""
    flat = np.abs(np.asarray(weights, dtype=np.float64)).ravel()
    out = np.zeros_like(flat)
    for i, w in enumerate(flat):
        denom = sum(v * v for v in flat if v >= w)
        out[i] = (w * w) / denom if denom > 0 else 0.0
    return out.reshape(np.asarray(weights).shape)


def train_batches(n: int, rng: np.random.Generator, size: int = 8, classes: int = 2):
    """Small random classification batch for gradient checks."""
    x = rng.uniform(0, 1, size=(n, 1, size, size))
    y = rng.integers(0, classes, size=n)
    return x, y
