"""Binary PPM/PGM (P6/P5, 8-bit) reading and writing, plus the on-disk pair layout
``<root>/<split>/<task>/<id>_{clean,degraded}.ppm``."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .degradations import TASKS, TaskSample
from .errors import ConfigError, MissingFileError


def to_uint8(img):
    return np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_ppm(path, img):
    """Write a (3, H, W) image as P6, or (1, H, W) as P5; values clipped to [0, 1]."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[0] not in (1, 3):
        raise ConfigError(f"PPM needs a (1|3, H, W) image, got {img.shape}")
    c, h, w = img.shape
    magic = b"P6" if c == 3 else b"P5"
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(b"%s\n%d %d\n255\n" % (magic, w, h))
        f.write(to_uint8(img).transpose(1, 2, 0).tobytes())


def _tokens(data):
    """Header tokens of a netpbm file, skipping comments; returns (tokens, data offset)."""
    toks, i = [], 0
    while len(toks) < 4:
        while i < len(data) and data[i : i + 1].isspace():
            i += 1
        if data[i : i + 1] == b"#":
            while i < len(data) and data[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < len(data) and not data[j : j + 1].isspace():
            j += 1
        if j == i:
            raise ConfigError("truncated PPM header")
        toks.append(data[i:j])
        i = j
    return toks, i + 1  # single whitespace byte after maxval


def read_ppm(path) -> np.ndarray:
    """Read P6/P5 into a float64 (C, H, W) array scaled to [0, 1]."""
    path = Path(path)
    if not path.exists():
        raise MissingFileError(f"no such image: {path}")
    data = path.read_bytes()
    toks, off = _tokens(data)
    magic = toks[0]
    if magic not in (b"P6", b"P5"):
        raise ConfigError(f"{path}: unsupported netpbm type {magic!r}")
    w, h, maxval = (int(t) for t in toks[1:])
    if maxval != 255:
        raise ConfigError(f"{path}: only 8-bit PPM is supported (maxval {maxval})")
    c = 3 if magic == b"P6" else 1
    raw = np.frombuffer(data, dtype=np.uint8, count=w * h * c, offset=off)
    return raw.reshape(h, w, c).transpose(2, 0, 1).astype(np.float64) / 255.0


def save_pairs(root, split: str, samples) -> list[Path]:
    written = []
    counters = {}
    for s in samples:
        i = counters.get(s.task, 0)
        counters[s.task] = i + 1
        d = Path(root) / split / s.task
        write_ppm(d / f"{i:05d}_clean.ppm", s.I0)
        write_ppm(d / f"{i:05d}_degraded.ppm", s.Iin)
        written += [d / f"{i:05d}_clean.ppm", d / f"{i:05d}_degraded.ppm"]
    return written


def load_pairs(root, split: str = "test") -> list[TaskSample]:
    """Load every ``*_clean.ppm`` / ``*_degraded.ppm`` pair under ``root/split/<task>``."""
    base = Path(root) / split
    if not base.is_dir():
        raise MissingFileError(f"no dataset split directory: {base}")
    samples = []
    for task in TASKS:
        for clean in sorted((base / task).glob("*_clean.ppm")):
            degraded = clean.with_name(clean.name.replace("_clean.ppm", "_degraded.ppm"))
            samples.append(TaskSample.from_pair(task, read_ppm(clean), read_ppm(degraded)))
    if not samples:
        raise MissingFileError(f"no image pairs found under {base}")
    return samples
