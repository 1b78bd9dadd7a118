"""Pure numpy 3x3 convolution (im2col + matmul), used when the extension is absent."""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _im2col(x):
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))  # n, c, h, w, 3, 3
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, c * 9)


def conv3x3(x, w, b):
    n, _, h, wd = x.shape
    co = w.shape[0]
    out = _im2col(x) @ w.reshape(co, -1).T + b
    return np.ascontiguousarray(out.reshape(n, h, wd, co).transpose(0, 3, 1, 2))


def conv3x3_backward(x, w, g, need_input_grad=True):
    n, c, h, wd = x.shape
    co = w.shape[0]
    g2 = g.transpose(0, 2, 3, 1).reshape(-1, co)
    gw = (g2.T @ _im2col(x)).reshape(w.shape)
    gb = g.sum(axis=(0, 2, 3))
    if not need_input_grad:
        return None, gw, gb
    dcols = (g2 @ w.reshape(co, -1)).reshape(n, h, wd, c, 3, 3)
    gxp = np.zeros((n, c, h + 2, wd + 2), dtype=g.dtype)
    for ky in range(3):
        for kx in range(3):
            gxp[:, :, ky:ky + h, kx:kx + wd] += dcols[..., ky, kx].transpose(0, 3, 1, 2)
    return np.ascontiguousarray(gxp[:, :, 1:-1, 1:-1]), gw, gb
