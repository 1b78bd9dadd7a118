# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Direct 3x3 same-padding convolution kernels (NCHW, stride 1).

The input is zero-padded once per call; every output row then accumulates all
nine taps in a single pass along the contiguous width axis, which keeps the
loop body long enough for the compiler to vectorise.  The input gradient is the
same kernel applied to the upstream gradient with flipped, transposed weights.
"""
import numpy as np
from libc.stdlib cimport malloc, free

ctypedef fused real:
    float
    double


def _forward_padded(const real[:, :, :, ::1] xp, const real[:, :, :, ::1] w,
                    const real[::1] b, real[:, :, :, ::1] out):
    cdef Py_ssize_t N = out.shape[0], CO = out.shape[1], H = out.shape[2], W = out.shape[3]
    cdef Py_ssize_t C = xp.shape[1]
    cdef Py_ssize_t n, co, ci, y, x
    cdef real w00, w01, w02, w10, w11, w12, w20, w21, w22
    cdef real* orow
    cdef const real* r0
    cdef const real* r1
    cdef const real* r2
    with nogil:
        for n in range(N):
            for co in range(CO):
                for y in range(H):
                    orow = &out[n, co, y, 0]
                    for x in range(W):
                        orow[x] = b[co]
                for ci in range(C):
                    w00 = w[co, ci, 0, 0]; w01 = w[co, ci, 0, 1]; w02 = w[co, ci, 0, 2]
                    w10 = w[co, ci, 1, 0]; w11 = w[co, ci, 1, 1]; w12 = w[co, ci, 1, 2]
                    w20 = w[co, ci, 2, 0]; w21 = w[co, ci, 2, 1]; w22 = w[co, ci, 2, 2]
                    for y in range(H):
                        orow = &out[n, co, y, 0]
                        r0 = &xp[n, ci, y, 0]
                        r1 = &xp[n, ci, y + 1, 0]
                        r2 = &xp[n, ci, y + 2, 0]
                        for x in range(W):
                            orow[x] += (w00 * r0[x] + w01 * r0[x + 1] + w02 * r0[x + 2]
                                        + w10 * r1[x] + w11 * r1[x + 1] + w12 * r1[x + 2]
                                        + w20 * r2[x] + w21 * r2[x + 1] + w22 * r2[x + 2])


def _weight_grad_padded(const real[:, :, :, ::1] xp, const real[:, :, :, ::1] g,
                        real[:, :, :, ::1] gw):
    cdef Py_ssize_t N = g.shape[0], CO = g.shape[1], H = g.shape[2], W = g.shape[3]
    cdef Py_ssize_t C = xp.shape[1]
    cdef Py_ssize_t n, co, ci, y, x, ky, kx
    cdef real s
    cdef const real* grow
    cdef const real* r
    # per-column partial sums; summed once per tap so no scalar reduction sits in the hot loop
    cdef real* acc = <real*> malloc(W * sizeof(real))
    if acc == NULL:
        raise MemoryError()
    try:
        with nogil:
            for co in range(CO):
                for ci in range(C):
                    for ky in range(3):
                        for kx in range(3):
                            for x in range(W):
                                acc[x] = 0
                            for n in range(N):
                                for y in range(H):
                                    grow = &g[n, co, y, 0]
                                    r = &xp[n, ci, y + ky, kx]
                                    for x in range(W):
                                        acc[x] += grow[x] * r[x]
                            s = 0
                            for x in range(W):
                                s += acc[x]
                            gw[co, ci, ky, kx] = s
    finally:
        free(acc)


def _pad(a):
    return np.pad(a, ((0, 0), (0, 0), (1, 1), (1, 1)))


def conv3x3(x, w, b):
    out = np.empty((x.shape[0], w.shape[0], x.shape[2], x.shape[3]), dtype=x.dtype)
    _forward_padded(_pad(x), np.ascontiguousarray(w), np.ascontiguousarray(b), out)
    return out


def conv3x3_backward(x, w, g, need_input_grad=True):
    g = np.ascontiguousarray(g)
    gw = np.empty_like(w)
    _weight_grad_padded(_pad(x), g, gw)
    gb = g.sum(axis=(0, 2, 3))
    gx = None
    if need_input_grad:
        w_t = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
        gx = np.empty_like(x)
        _forward_padded(_pad(g), w_t, np.zeros(w.shape[1], dtype=w.dtype), gx)
    return gx, gw, gb
