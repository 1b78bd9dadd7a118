"""Compiled vs numpy 3x3 convolution kernels on the shapes a desk training step uses.

    python benchmarks/bench_kernels.py [--repeats 20] [--batch 10] [--dtype float32]

Also times one full training step (forward + backward + Adam) with each backend.
"""
import argparse
import time

import numpy as np

from diffuir import denoiser, kernels
from diffuir.degradations import DatasetSpec, make_batch
from diffuir.schedule import build_schedule
from diffuir.training import AdamState, train_step


def desk_layers(batch, width=8, size=32):
    """(x shape, w shape) of every conv in the default two-level network."""
    w2 = 2 * width
    return [
        ((batch, 6, size, size), (width, 6, 3, 3)),
        ((batch, width, size, size), (width, width, 3, 3)),
        ((batch, width, size // 2, size // 2), (w2, width, 3, 3)),
        ((batch, w2, size // 2, size // 2), (w2, w2, 3, 3)),
        ((batch, w2 + width, size, size), (width, w2 + width, 3, 3)),
        ((batch, width, size, size), (width, width, 3, 3)),
        ((batch, width, size, size), (3, width, 3, 3)),
    ]


def best_of(fn, repeats):
    fn()
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench_convs(impl, layers, dtype, repeats):
    rng = np.random.default_rng(0)
    data = []
    for xs, ws in layers:
        x = rng.standard_normal(xs).astype(dtype)
        w = rng.standard_normal(ws).astype(dtype)
        b = np.zeros(ws[0], dtype)
        g = rng.standard_normal((xs[0], ws[0]) + xs[2:]).astype(dtype)
        data.append((x, w, b, g))

    def run():
        for x, w, b, g in data:
            impl.conv3x3(x, w, b)
            impl.conv3x3_backward(x, w, g, True)

    return best_of(run, repeats)


def bench_step(impl, dtype, repeats):
    saved = kernels._impl
    kernels._impl = impl
    try:
        p = denoiser.init_denoiser(0, dtype=dtype)
        opt = AdamState.zeros_like(p)
        sched = build_schedule()
        batch = make_batch(DatasetSpec(), 10, 0)
        return best_of(lambda: train_step(p, opt, sched, batch, np.random.default_rng(0)), repeats)
    finally:
        kernels._impl = saved


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=20)
    ap.add_argument("--batch", type=int, default=10)
    ap.add_argument("--dtype", default="float32", choices=["float32", "float64"])
    args = ap.parse_args()
    dtype = np.dtype(args.dtype)
    if kernels.compiled is None:
        print("compiled extension not built; only the numpy fallback is timed")
    backends = [("numpy", kernels.python)]
    if kernels.compiled is not None:
        backends.append(("compiled", kernels.compiled))
    layers = desk_layers(args.batch)
    print(f"dtype={dtype.name} batch={args.batch} best of {args.repeats}")
    print(f"{'backend':<10}{'convs fwd+bwd (ms)':>22}{'train step (ms)':>18}")
    res = {}
    for name, impl in backends:
        c = bench_convs(impl, layers, dtype, args.repeats) * 1e3
        s = bench_step(impl, dtype, max(3, args.repeats // 4)) * 1e3
        res[name] = (c, s)
        print(f"{name:<10}{c:>22.2f}{s:>18.2f}")
    if len(res) == 2:
        print(f"speedup   {res['numpy'][0] / res['compiled'][0]:>22.2f}x"
              f"{res['numpy'][1] / res['compiled'][1]:>17.2f}x")


if __name__ == "__main__":
    main()
