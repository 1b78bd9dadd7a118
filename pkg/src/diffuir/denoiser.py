"""Small residual-prediction U-Net with hand-written reverse-mode gradients.

Each level is two 3x3 conv + ReLU layers; the timestep embedding is projected
and added as a per-channel bias after the first conv of every block.  Levels
are joined by 2x2 average pooling on the way down and nearest-neighbour
upsampling plus skip concatenation on the way up.  The output conv starts at
zero, so a fresh model predicts a zero residual (identity restoration).
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
import math

import numpy as np

from .errors import ConfigError, DimensionError
from .kernels import conv3x3, conv3x3_backward


@dataclass(frozen=True)
class Architecture:
    base_width: int = 8
    multipliers: tuple = (1, 2)
    in_channels: int = 6
    out_channels: int = 3
    T: int = 50
    temb_dim: int = 16

    def __post_init__(self):
        object.__setattr__(self, "multipliers", tuple(int(m) for m in self.multipliers))
        if self.base_width < 1 or not self.multipliers or min(self.multipliers) < 1:
            raise ConfigError("model: base_width and multipliers must be positive and nonempty")
        if self.in_channels not in (self.out_channels, 2 * self.out_channels):
            raise ConfigError("model: in_channels must be out_channels (no concat) or twice it")
        if self.temb_dim < 2 or self.temb_dim % 2:
            raise ConfigError("model: temb_dim must be a positive even number")

    @property
    def widths(self):
        return [self.base_width * m for m in self.multipliers]

    @property
    def levels(self):
        return len(self.multipliers)

    @property
    def implicit_condition(self):
        """True when the degraded image is concatenated to the network input."""
        return self.in_channels == 2 * self.out_channels

    def to_dict(self):
        return asdict(self)


@dataclass
class DenoiserParams:
    arch: Architecture
    arrays: dict = field(default_factory=dict)

    @property
    def count(self):
        return int(sum(a.size for a in self.arrays.values()))

    @property
    def dtype(self):
        return next(iter(self.arrays.values())).dtype

    def shapes(self):
        return {k: v.shape for k, v in self.arrays.items()}

    def copy(self):
        return DenoiserParams(self.arch, {k: v.copy() for k, v in self.arrays.items()})

    def astype(self, dtype):
        return DenoiserParams(self.arch, {k: v.astype(dtype) for k, v in self.arrays.items()})


def layer_shapes(arch: Architecture):
    w = arch.widths
    shapes = {}

    def block(prefix, cin, cout):
        shapes[f"{prefix}.conv1.w"] = (cout, cin, 3, 3)
        shapes[f"{prefix}.conv1.b"] = (cout,)
        shapes[f"{prefix}.temb.w"] = (arch.temb_dim, cout)
        shapes[f"{prefix}.temb.b"] = (cout,)
        shapes[f"{prefix}.conv2.w"] = (cout, cout, 3, 3)
        shapes[f"{prefix}.conv2.b"] = (cout,)

    cin = arch.in_channels
    for i, wi in enumerate(w):
        block(f"enc{i}", cin, wi)
        cin = wi
    for i in reversed(range(arch.levels - 1)):
        block(f"dec{i}", w[i + 1] + w[i], w[i])
    shapes["out.w"] = (arch.out_channels, w[0], 3, 3)
    shapes["out.b"] = (arch.out_channels,)
    return shapes


def init_denoiser(seed: int = 0, base_width: int = 8, multipliers=(1, 2), in_channels: int = 6,
                  out_channels: int | None = None, T: int = 50, dtype=np.float64) -> DenoiserParams:
    """He-uniform weights (bound sqrt(6 / fan_in)), zero biases, zero output layer."""
    if out_channels is None:
        out_channels = in_channels // 2 if in_channels % 2 == 0 else in_channels
    arch = Architecture(base_width, tuple(multipliers), in_channels, out_channels, T)
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape in layer_shapes(arch).items():
        if name.startswith("out.") or name.endswith(".b"):
            arrays[name] = np.zeros(shape, dtype=dtype)
            continue
        fan_in = shape[0] if name.endswith("temb.w") else int(np.prod(shape[1:]))
        bound = math.sqrt(6.0 / fan_in)
        arrays[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return DenoiserParams(arch, arrays)


def timestep_embedding(t, T: int, dim: int = 16, dtype=np.float64):
    """Sinusoidal features, angular frequencies geometric from 1 down to 1/T."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = float(T) ** (-np.arange(half) / max(half - 1, 1))
    ang = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1).astype(dtype)


def _pool(x):
    n, c, h, w = x.shape
    return x.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))


def _pool_back(g):
    return np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * 0.25


def _up(x):
    return np.repeat(np.repeat(x, 2, axis=2), 2, axis=3)


def _up_back(g):
    n, c, h, w = g.shape
    return g.reshape(n, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))


def _block_forward(p, prefix, h, emb):
    a1 = conv3x3(h, p[f"{prefix}.conv1.w"], p[f"{prefix}.conv1.b"])
    a1 += (emb @ p[f"{prefix}.temb.w"] + p[f"{prefix}.temb.b"])[:, :, None, None]
    z1 = np.maximum(a1, 0)
    z2 = np.maximum(conv3x3(z1, p[f"{prefix}.conv2.w"], p[f"{prefix}.conv2.b"]), 0)
    return z2, (h, z1, z2)


def _block_backward(p, prefix, cache, g, emb, grads, need_input_grad=True):
    h, z1, z2 = cache
    g = g * (z2 > 0)
    g1, grads[f"{prefix}.conv2.w"], grads[f"{prefix}.conv2.b"] = conv3x3_backward(
        z1, p[f"{prefix}.conv2.w"], g)
    g1 *= z1 > 0
    gc = g1.sum(axis=(2, 3))
    grads[f"{prefix}.temb.w"] = emb.T @ gc
    grads[f"{prefix}.temb.b"] = gc.sum(axis=0)
    gh, grads[f"{prefix}.conv1.w"], grads[f"{prefix}.conv1.b"] = conv3x3_backward(
        h, p[f"{prefix}.conv1.w"], g1, need_input_grad)
    return gh


def _prepare(params: DenoiserParams, It, Iin, t):
    arch = params.arch
    It = np.asarray(It)
    single = It.ndim == 3
    if single:
        It = It[None]
        Iin = None if Iin is None else np.asarray(Iin)[None]
    if It.ndim != 4:
        raise DimensionError(f"expected (C,H,W) or (N,C,H,W), got shape {It.shape}")
    if It.shape[1] != arch.out_channels:
        raise DimensionError(f"model expects {arch.out_channels}-channel images, got {It.shape[1]}")
    if arch.implicit_condition:
        if Iin is None or np.shape(Iin) != It.shape:
            raise DimensionError(f"condition shape {np.shape(Iin)} does not match {It.shape}")
        x = np.concatenate([It, Iin], axis=1)
    else:
        x = It
    div = 2 ** (arch.levels - 1)
    if x.shape[2] % div or x.shape[3] % div:
        raise DimensionError(f"spatial size {x.shape[2:]} must be divisible by {div}")
    x = np.ascontiguousarray(x, dtype=params.dtype)
    t = np.broadcast_to(np.asarray(t), (x.shape[0],))
    emb = timestep_embedding(t, arch.T, arch.temb_dim, params.dtype)
    return x, emb, single


def forward(params: DenoiserParams, It, Iin, t, return_cache: bool = False):
    """Predicted residual with the shape of ``It``.

    With an implicit-condition architecture the network input is ``It`` and
    ``Iin`` stacked along channels; otherwise ``Iin`` is ignored.
    """
    p = params.arrays
    x, emb, single = _prepare(params, It, Iin, t)
    L = params.arch.levels
    h = x
    caches, skips = [], []
    for i in range(L):
        if i > 0:
            h = _pool(h)
        h, c = _block_forward(p, f"enc{i}", h, emb)
        caches.append(c)
        skips.append(h)
    for i in reversed(range(L - 1)):
        h = np.concatenate([_up(h), skips[i]], axis=1)
        h, c = _block_forward(p, f"dec{i}", h, emb)
        caches.append(c)
    out = conv3x3(h, p["out.w"], p["out.b"])
    cache = {"emb": emb, "blocks": caches, "h": h, "single": single}
    if single:
        out = out[0]
    return (out, cache) if return_cache else out


def backward(params: DenoiserParams, cache, upstream_grad):
    """Gradient of ``sum(upstream_grad * forward(...))`` w.r.t. every parameter."""
    p = params.arrays
    arch = params.arch
    g = np.asarray(upstream_grad, dtype=params.dtype)
    if cache["single"]:
        g = g[None]
    if g.shape[1:] != (arch.out_channels,) + cache["h"].shape[2:] or g.shape[0] != cache["h"].shape[0]:
        raise DimensionError(f"upstream gradient shape {g.shape} does not match the output")
    g = np.ascontiguousarray(g)
    emb = cache["emb"]
    L = arch.levels
    widths = arch.widths
    grads = {}
    gh, grads["out.w"], grads["out.b"] = conv3x3_backward(cache["h"], p["out.w"], g)
    blocks = list(cache["blocks"])
    skip_grads = [None] * L
    for i in range(L - 1):
        gcat = _block_backward(p, f"dec{i}", blocks.pop(), gh, emb, grads)
        gh = _up_back(gcat[:, :widths[i + 1]])
        skip_grads[i] = gcat[:, widths[i + 1]:]
    for i in reversed(range(L)):
        if skip_grads[i] is not None:
            gh = gh + skip_grads[i]
        gh = _block_backward(p, f"enc{i}", blocks.pop(), gh, emb, grads, need_input_grad=i > 0)
        if i > 0:
            gh = _pool_back(gh)
    return {k: grads[k] for k in p}


def value_and_grad_l1(params: DenoiserParams, It, Iin, t, target):
    """Mean absolute error of the residual prediction and its parameter gradients."""
    pred, cache = forward(params, It, Iin, t, return_cache=True)
    diff = pred - target
    loss = float(np.mean(np.abs(diff)))
    grads = backward(params, cache, np.sign(diff) / diff.size)
    return loss, grads, pred
