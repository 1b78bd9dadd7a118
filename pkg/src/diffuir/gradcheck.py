"""Central finite-difference check of the denoiser's analytic gradients."""
from __future__ import annotations

import numpy as np

from . import denoiser


def relative_error(analytic, numeric, floor=1e-8):
    """|a - n| / max(|a|, |n|), with both-tiny pairs measured against ``floor``."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def random_problem(seed: int, size: int = 8, channels: int = 1, base_width: int = 8,
                   multipliers=(1, 2), T: int = 50, implicit_condition: bool = True,
                   param_scale: float = 3.0):
    """Fully randomised params (output layer included) and inputs in double precision.

    Parameters are drawn at ``param_scale`` times the init scale.  The network is
    piecewise affine in any single parameter, so a central difference is exact
    unless the step pushes some ReLU input across zero; larger weights keep the
    1e-4 step small next to typical pre-activation magnitudes.
    """
    rng = np.random.default_rng(seed)
    in_ch = 2 * channels if implicit_condition else channels
    params = denoiser.init_denoiser(seed, base_width, multipliers, in_ch, channels, T)
    for name, a in params.arrays.items():
        # nonzero biases and output layer, otherwise whole paths have zero gradient
        a[...] = rng.uniform(-0.5, 0.5, a.shape) if a.ndim == 1 or name.startswith("out.") else a
        a *= param_scale
    It = rng.standard_normal((1, channels, size, size))
    Iin = rng.random((1, channels, size, size))
    t = np.array([int(rng.integers(1, T + 1))])
    upstream = rng.standard_normal((1, channels, size, size))
    return params, It, Iin, t, upstream


def check(seed: int = 0, h: float = 1e-4, **problem):
    """Max relative error between backprop and finite differences over every parameter.

    The probed scalar is ``sum(upstream * forward(...))``.  Along one parameter
    the network is piecewise affine, so a difference quotient is exact unless
    the probe moves some ReLU input across zero.  Each probe therefore uses the
    central difference when neither side changes the activation pattern, and
    the one-sided quotient of a clean side otherwise.  Probes where both sides
    cross sit on a kink, where the function has no derivative; they are left
    out of the error and counted.

    Returns ``(max_rel_err, per_param_max, kinks)`` with ``kinks`` the dict
    ``{"one_sided": n, "skipped": m}``.
    """
    params, It, Iin, t, upstream = random_problem(seed, **problem)
    out0, cache = denoiser.forward(params, It, Iin, t, return_cache=True)
    f0 = float(np.sum(upstream * out0))
    base_pattern = _pattern(cache)

    def loss():
        out, c = denoiser.forward(params, It, Iin, t, return_cache=True)
        same = all(np.array_equal(a, b) for a, b in zip(_pattern(c), base_pattern))
        return float(np.sum(upstream * out)), same

    grads = denoiser.backward(params, cache, upstream)
    per_param = {}
    kinks = {"one_sided": 0, "skipped": 0}
    for name, a in params.arrays.items():
        flat = a.reshape(-1)
        analytic = grads[name].reshape(-1)
        errs = []
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up, up_ok = loss()
            flat[i] = old - h
            down, down_ok = loss()
            flat[i] = old
            if up_ok and down_ok:
                numeric = (up - down) / (2 * h)
            elif up_ok or down_ok:
                kinks["one_sided"] += 1
                numeric = (up - f0) / h if up_ok else (f0 - down) / h
            else:
                kinks["skipped"] += 1
                continue
            errs.append(float(relative_error(analytic[i], numeric)))
        per_param[name] = max(errs, default=0.0)
    return max(per_param.values()), per_param, kinks


def _pattern(cache):
    """ReLU on/off masks of every block, in forward order."""
    return [z > 0 for _, z1, z2 in cache["blocks"] for z in (z1, z2)]
