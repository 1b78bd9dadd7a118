"""Procedural clean images and five toy degradations.

Every generator is keyed by an integer seed, so a (spec, seed) pair always
reproduces the same data bit for bit.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np
from scipy import ndimage

from .errors import ConfigError

TASKS = ("derain", "lowlight", "desnow", "dehaze", "deblur")

# per-task share of each training batch
PAPER_TASK_WEIGHTS = {"dehaze": 0.4, "lowlight": 0.1, "derain": 0.2, "desnow": 0.2, "deblur": 0.1}


@dataclass
class TaskSample:
    task: str
    I0: np.ndarray
    Iin: np.ndarray
    Ires: np.ndarray
    params: dict = field(default_factory=dict)

    @classmethod
    def from_pair(cls, task, I0, Iin, **params):
        return cls(task, I0, Iin, Iin - I0, params)


@dataclass
class DatasetSpec:
    image_size: int = 32
    samples_per_task: int = 16
    seed: int = 0
    task_weights: dict = field(default_factory=lambda: dict(PAPER_TASK_WEIGHTS))
    equalize_lowlight: bool = False

    def __post_init__(self):
        self.task_weights = normalize_weights(self.task_weights)
        if self.image_size < 8:
            raise ConfigError(f"data.image_size: must be >= 8, got {self.image_size}")
        if self.samples_per_task < 1:
            raise ConfigError("data.samples_per_task: must be >= 1")

    def weight_vector(self):
        return np.array([self.task_weights[t] for t in TASKS])


def normalize_weights(weights) -> dict:
    """Validate task weights (dict or 5-sequence in TASKS order) and fill missing tasks with 0."""
    if not isinstance(weights, dict):
        weights = dict(zip(TASKS, weights, strict=True))
    unknown = set(weights) - set(TASKS)
    if unknown:
        raise ConfigError(f"task_weights: unknown task(s) {sorted(unknown)}")
    w = {t: float(weights.get(t, 0.0)) for t in TASKS}
    if any(v < 0 or not math.isfinite(v) for v in w.values()):
        raise ConfigError("task_weights: weights must be finite and nonnegative")
    if abs(sum(w.values()) - 1.0) > 1e-9:
        raise ConfigError(f"task_weights: must sum to 1, got {sum(w.values())!r}")
    return w


def synth_clean(seed: int, size: int = 32) -> np.ndarray:
    """Two-colour linear gradient with 2-5 random rectangles or discs, shape (3, size, size)."""
    if size < 8:
        raise ConfigError(f"size must be >= 8, got {size}")
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    c1, c2 = rng.random(3), rng.random(3)
    theta = rng.uniform(0, 2 * np.pi)
    proj = (xx - size / 2) * np.cos(theta) + (yy - size / 2) * np.sin(theta)
    u = (proj - proj.min()) / (np.ptp(proj) + 1e-12)
    img = c1[:, None, None] * (1 - u) + c2[:, None, None] * u
    for _ in range(rng.integers(2, 6)):
        color = _contrasting_color(rng, img)[:, None, None]
        if rng.random() < 0.5:
            w, h = rng.integers(size // 8, size // 2 + 1, size=2)
            x0, y0 = rng.integers(0, size - w + 1), rng.integers(0, size - h + 1)
            mask = (xx >= x0) & (xx < x0 + w) & (yy >= y0) & (yy < y0 + h)
        else:
            r = rng.uniform(size / 16, size / 4)
            cx, cy = rng.uniform(0, size, size=2)
            mask = (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r
        img = np.where(mask[None], color, img)
    return np.clip(img, 0.0, 1.0)


def _luma(c):
    return 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]


def _contrasting_color(rng, img, min_contrast=0.25, tries=20):
    """Random colour whose luma differs from the image's mean luma by >= min_contrast."""
    bg = _luma(img.mean(axis=(1, 2)))
    for _ in range(tries):
        c = rng.random(3)
        if abs(_luma(c) - bg) >= min_contrast:
            return c
    return np.full(3, 0.0 if bg > 0.5 else 1.0)


def haze(I0, tau, A):
    """Atmospheric scattering: I0 * tau + A * (1 - tau)."""
    return I0 * tau + A * (1.0 - tau)


def low_light(I0, gamma, gain):
    return np.clip(gain * I0**gamma, 0.0, 1.0)


def box_blur(I0, k):
    return ndimage.uniform_filter(I0, size=(1, k, k), mode="reflect")


def rain_streaks(I0, rng, count=None):
    """Add 5-15 bright near-vertical (70-110 deg) line segments, additive 0.3-0.6."""
    _, H, W = I0.shape
    layer = np.zeros((H, W))
    count = rng.integers(5, 16) if count is None else count
    for _ in range(count):
        ang = np.deg2rad(rng.uniform(70, 110))
        length = rng.uniform(0.25, 0.6) * H
        cx, cy = rng.uniform(0, W), rng.uniform(0, H)
        s = np.arange(-length / 2, length / 2, 0.5)
        xs = np.rint(cx + s * np.cos(ang)).astype(int)
        ys = np.rint(cy - s * np.sin(ang)).astype(int)
        keep = (xs >= 0) & (xs < W) & (ys >= 0) & (ys < H)
        mask = np.zeros((H, W), dtype=bool)
        mask[ys[keep], xs[keep]] = True
        layer += rng.uniform(0.3, 0.6) * mask
    return np.clip(I0 + layer[None], 0.0, 1.0)


def snow_flakes(I0, rng, count=None):
    """Add 10-30 soft discs of radius 1-3 px, additive 0.4-0.8 at the centre."""
    _, H, W = I0.shape
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    layer = np.zeros((H, W))
    count = rng.integers(10, 31) if count is None else count
    for _ in range(count):
        r = rng.uniform(1, 3)
        cx, cy = rng.uniform(0, W), rng.uniform(0, H)
        d2 = ((xx - cx) ** 2 + (yy - cy) ** 2) / (r * r)
        layer += rng.uniform(0.4, 0.8) * np.clip(1.0 - d2, 0.0, 1.0)
    return np.clip(I0 + layer[None], 0.0, 1.0)


def equalize_histogram(img, bins=256):
    """Per-channel histogram equalisation on [0, 1] values."""
    out = np.empty_like(img)
    for c in range(img.shape[0]):
        hist, edges = np.histogram(img[c], bins=bins, range=(0.0, 1.0))
        cdf = np.cumsum(hist).astype(np.float64)
        cdf = (cdf - cdf[0]) / max(cdf[-1] - cdf[0], 1.0)
        out[c] = np.interp(img[c], edges[1:], cdf)
    return out


def degrade(task: str, I0, seed: int, equalize_lowlight: bool = False) -> TaskSample:
    """Degrade a clean image with randomly drawn task parameters."""
    rng = np.random.default_rng(seed)
    I0 = np.asarray(I0, dtype=np.float64)
    if task == "derain":
        return TaskSample.from_pair(task, I0, rain_streaks(I0, rng))
    if task == "lowlight":
        gamma, gain = rng.uniform(1.8, 2.6), rng.uniform(0.5, 0.8)
        Iin = low_light(I0, gamma, gain)
        if equalize_lowlight:
            Iin = equalize_histogram(Iin)
        return TaskSample.from_pair(task, I0, Iin, gamma=gamma, gain=gain)
    if task == "desnow":
        return TaskSample.from_pair(task, I0, snow_flakes(I0, rng))
    if task == "dehaze":
        tau, A = rng.uniform(0.4, 0.8), rng.uniform(0.8, 1.0)
        return TaskSample.from_pair(task, I0, haze(I0, tau, A), tau=tau, A=A)
    if task == "deblur":
        k = int(rng.choice([3, 5]))
        return TaskSample.from_pair(task, I0, box_blur(I0, k), k=k)
    raise ConfigError(f"task: unknown task {task!r}, expected one of {TASKS}")


def draw_tasks(weights, n: int, rng) -> list[str]:
    """``n`` i.i.d. task names drawn with the given mixing weights."""
    w = normalize_weights(weights)
    idx = rng.choice(len(TASKS), size=n, p=[w[t] for t in TASKS])
    return [TASKS[i] for i in idx]


def make_batch(spec: DatasetSpec, batch_size: int = 10, seed: int = 0) -> list[TaskSample]:
    """A mixed-task batch; every sample gets a fresh clean image."""
    if batch_size < 1:
        raise ConfigError("batch_size: must be >= 1")
    rng = np.random.default_rng(seed)
    tasks = draw_tasks(spec.task_weights, batch_size, rng)
    seeds = rng.integers(0, 2**63, size=(batch_size, 2))
    return [degrade(task, synth_clean(int(cs), spec.image_size), int(ds), spec.equalize_lowlight)
            for task, (cs, ds) in zip(tasks, seeds)]


_SPLITS = {"train": 1, "test": 2}


def make_split(spec: DatasetSpec, split: str = "test", tasks=TASKS) -> list[TaskSample]:
    """``samples_per_task`` pairs per task from a seed stream disjoint from training batches."""
    if split not in _SPLITS:
        raise ConfigError(f"split: expected one of {sorted(_SPLITS)}, got {split!r}")
    out = []
    for task in tasks:
        ss = np.random.SeedSequence([spec.seed, _SPLITS[split], TASKS.index(task)])
        seeds = ss.generate_state(2 * spec.samples_per_task, dtype=np.uint64).reshape(-1, 2)
        for cs, ds in seeds:
            I0 = synth_clean(int(cs), spec.image_size)
            out.append(degrade(task, I0, int(ds), spec.equalize_lowlight))
    return out
