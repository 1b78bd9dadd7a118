from hypothesis import given, settings, strategies as st
import numpy as np
import pytest
from scipy.signal import correlate

from diffuir import kernels

BACKENDS = [kernels.python] + ([kernels.compiled] if kernels.compiled is not None else [])
IDS = ["python", "compiled"][:len(BACKENDS)]


def reference_conv(x, w, b):
    """Direct same-padded cross-correlation via scipy, one (n, co) plane at a time."""
    n, c, h, wd = x.shape
    out = np.empty((n, w.shape[0], h, wd))
    for i in range(n):
        for o in range(w.shape[0]):
            out[i, o] = sum(correlate(x[i, k], w[o, k], mode="same") for k in range(c)) + b[o]
    return out


def reference_grads(x, w, g):
    # the conv is linear in x and w: gradients via the adjoint identities
    n, c, h, wd = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    gw = np.zeros_like(w)
    for ky in range(3):
        for kx in range(3):
            gw[:, :, ky, kx] = np.einsum("nohw,nchw->oc", g, xp[:, :, ky:ky + h, kx:kx + wd])
    gx = np.zeros_like(xp)
    for ky in range(3):
        for kx in range(3):
            gx[:, :, ky:ky + h, kx:kx + wd] += np.einsum("nohw,oc->nchw", g, w[:, :, ky, kx])
    return gx[:, :, 1:-1, 1:-1], gw, g.sum(axis=(0, 2, 3))


shapes = st.tuples(st.integers(1, 3), st.integers(1, 5), st.integers(1, 4),
                   st.integers(1, 9), st.integers(1, 9))


@pytest.mark.parametrize("impl", BACKENDS, ids=IDS)
@settings(max_examples=40, deadline=None)
@given(shape=shapes, seed=st.integers(0, 2**31))
def test_conv_matches_reference(impl, shape, seed):
    n, c, co, h, w_ = shape
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, c, h, w_))
    w = rng.standard_normal((co, c, 3, 3))
    b = rng.standard_normal(co)
    g = rng.standard_normal((n, co, h, w_))
    np.testing.assert_allclose(impl.conv3x3(x, w, b), reference_conv(x, w, b), atol=1e-11)
    gx, gw, gb = impl.conv3x3_backward(x, w, g, True)
    rx, rw, rb = reference_grads(x, w, g)
    np.testing.assert_allclose(gx, rx, atol=1e-11)
    np.testing.assert_allclose(gw, rw, atol=1e-11)
    np.testing.assert_allclose(gb, rb, atol=1e-11)
    assert impl.conv3x3_backward(x, w, g, False)[0] is None


@pytest.mark.skipif(kernels.compiled is None, reason="extension not built")
@pytest.mark.parametrize("dtype,tol", [(np.float64, 1e-12), (np.float32, 2e-5)])
def test_backends_agree_on_desk_shapes(dtype, tol):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((10, 6, 32, 32)).astype(dtype)
    w = rng.standard_normal((8, 6, 3, 3)).astype(dtype)
    b = rng.standard_normal(8).astype(dtype)
    g = rng.standard_normal((10, 8, 32, 32)).astype(dtype)
    a = kernels.compiled.conv3x3(x, w, b)
    assert a.dtype == dtype
    np.testing.assert_allclose(a, kernels.python.conv3x3(x, w, b), rtol=tol, atol=tol * 10)
    for u, v in zip(kernels.compiled.conv3x3_backward(x, w, g),
                    kernels.python.conv3x3_backward(x, w, g)):
        np.testing.assert_allclose(u, v, rtol=tol, atol=tol * 100)


def test_backend_selected():
    assert kernels.BACKEND in ("python", "compiled")
    if kernels.compiled is not None:
        assert kernels.BACKEND == "compiled" or __import__("os").environ.get("DIFFUIR_KERNELS") == "python"
