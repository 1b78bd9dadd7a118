"""PSNR / SSIM on the luma channel, and the endpoint distribution distance."""
from __future__ import annotations

import numpy as np
from scipy.signal import convolve2d

from .diffusion import sample_endpoint
from .errors import ConfigError, DimensionError, DomainError

PSNR_CAP = 100.0
_BT601 = np.array([0.299, 0.587, 0.114])


def luma(img):
    """BT.601 Y of a (3, H, W) image; single-channel images pass through."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3:
        raise DimensionError(f"expected (C, H, W), got {img.shape}")
    if img.shape[0] == 1:
        return img[0]
    if img.shape[0] != 3:
        raise DimensionError(f"expected 1 or 3 channels, got {img.shape[0]}")
    return np.tensordot(_BT601, img, axes=1)


def psnr(a, b, peak: float = 1.0, cap: float = PSNR_CAP) -> float:
    if np.shape(a) != np.shape(b):
        raise DimensionError(f"shape mismatch: {np.shape(a)} vs {np.shape(b)}")
    mse = float(np.mean((luma(a) - luma(b)) ** 2))
    if mse == 0.0:
        return cap
    return min(cap, 10.0 * np.log10(peak**2 / mse))


def gaussian_window(size: int = 11, sigma: float = 1.5):
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def ssim(a, b, data_range: float = 1.0, K1: float = 0.01, K2: float = 0.03,
         win_size: int = 11, sigma: float = 1.5) -> float:
    """Mean SSIM over all fully-contained Gaussian windows of the Y channel."""
    if np.shape(a) != np.shape(b):
        raise DimensionError(f"shape mismatch: {np.shape(a)} vs {np.shape(b)}")
    x, y = luma(a), luma(b)
    if min(x.shape) < win_size:
        raise DomainError(f"image {x.shape} smaller than the {win_size}x{win_size} window")
    w = gaussian_window(win_size, sigma)
    filt = lambda z: convolve2d(z, w, mode="valid")  # noqa: E731
    C1, C2 = (K1 * data_range) ** 2, (K2 * data_range) ** 2
    mx, my = filt(x), filt(y)
    sxx = filt(x * x) - mx * mx
    syy = filt(y * y) - my * my
    sxy = filt(x * y) - mx * my
    s = ((2 * mx * my + C1) * (2 * sxy + C2)) / ((mx * mx + my * my + C1) * (sxx + syy + C2))
    return float(s.mean())


def endpoints(sched, samples, seed: int):
    """Diffusing endpoints of ``samples`` with noise drawn from ``seed``, stacked to (n, D)."""
    rng = np.random.default_rng(seed)
    out = []
    for s in samples:
        eps = rng.standard_normal(s.Iin.shape)
        out.append(sample_endpoint(sched, s.Iin, eps).ravel())
    return np.stack(out)


def moment_distance(xa, xb) -> float:
    """Per-pixel mean squared gap of means plus that of standard deviations."""
    return float(np.mean((xa.mean(0) - xb.mean(0)) ** 2) + np.mean((xa.std(0) - xb.std(0)) ** 2))


def endpoint_distance(sched, samples_a, samples_b, n: int = 200, seed: int = 0) -> float:
    """Moment distance between the endpoint distributions of two tasks.

    Both sides use the same noise stream (common random numbers), so sample-set
    differences rather than independent noise draws drive the result.  Pass
    sample lists built on the same clean images to pair them fully.
    """
    if n < 100:
        raise ConfigError(f"endpoint n: need at least 100 draws per task, got {n}")
    if len(samples_a) < n or len(samples_b) < n:
        raise ConfigError(f"endpoint n: need {n} samples per task, got {len(samples_a)}/{len(samples_b)}")
    xa = endpoints(sched, samples_a[:n], seed)
    xb = endpoints(sched, samples_b[:n], seed)
    return moment_distance(xa, xb)


def paired_task_samples(tasks, n: int, seed: int = 0, size: int = 32):
    """``{task: [TaskSample]}`` where index i of every task degrades the same clean image."""
    from .degradations import degrade, synth_clean

    ss = np.random.SeedSequence([seed, 7])
    seeds = ss.generate_state(2 * n, dtype=np.uint64).reshape(n, 2)
    cleans = [synth_clean(int(cs), size) for cs, _ in seeds]
    return {t: [degrade(t, I0, int(ds)) for I0, (_, ds) in zip(cleans, seeds)] for t in tasks}


def distance_matrix(sched, tasks, n: int = 200, seed: int = 0, size: int = 32):
    samples = paired_task_samples(tasks, n, seed, size)
    m = np.zeros((len(tasks), len(tasks)))
    for i, ta in enumerate(tasks):
        for j, tb in enumerate(tasks):
            if j > i:
                m[i, j] = m[j, i] = endpoint_distance(sched, samples[ta], samples[tb], n, seed)
    return m
