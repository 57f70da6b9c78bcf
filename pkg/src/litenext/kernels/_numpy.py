"""Pure-numpy reference kernels.

Every function here has a numba twin in ``_numba`` with the same signature
and the same summation order where that matters for determinism.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(xpad, k, stride, out_h, out_w):
    b, c = xpad.shape[:2]
    win = sliding_window_view(xpad, (k, k), axis=(2, 3))
    win = win[:, :, : stride * (out_h - 1) + 1 : stride, : stride * (out_w - 1) + 1 : stride]
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(b * out_h * out_w, c * k * k)


def col2im(dcols, b, c, hp, wp, k, stride, out_h, out_w):
    d = dcols.reshape(b, out_h, out_w, c, k, k)
    dx = np.zeros((b, c, hp, wp), dtype=dcols.dtype)
    hs = stride * (out_h - 1) + 1
    ws = stride * (out_w - 1) + 1
    for i in range(k):
        for j in range(k):
            dx[:, :, i : i + hs : stride, j : j + ws : stride] += d[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return dx


def dwconv_forward(xpad, w, out_h, out_w):
    b, c = xpad.shape[:2]
    k = w.shape[-1]
    out = np.zeros((b, c, out_h, out_w), dtype=xpad.dtype)
    for i in range(k):
        for j in range(k):
            out += w[None, :, 0, i, j, None, None] * xpad[:, :, i : i + out_h, j : j + out_w]
    return out


def dwconv_backward(xpad, w, g):
    b, c, out_h, out_w = g.shape
    k = w.shape[-1]
    dxpad = np.zeros_like(xpad)
    dw = np.zeros_like(w)
    for i in range(k):
        for j in range(k):
            dxpad[:, :, i : i + out_h, j : j + out_w] += w[None, :, 0, i, j, None, None] * g
            dw[:, 0, i, j] = np.einsum("bchw,bchw->c", g, xpad[:, :, i : i + out_h, j : j + out_w])
    return dxpad, dw


def maxpool2_forward(x):
    b, c, h, w = x.shape
    win = x.reshape(b, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h // 2, w // 2, 4)
    # argmax returns the first maximum, i.e. row-major tie-breaking inside the window
    idx = np.argmax(win, axis=-1).astype(np.int8)
    out = np.take_along_axis(win, idx[..., None].astype(np.intp), axis=-1)[..., 0]
    return np.ascontiguousarray(out), idx


def maxpool2_backward(g, idx):
    b, c, h2, w2 = g.shape
    d = np.zeros((b, c, h2, w2, 4), dtype=g.dtype)
    np.put_along_axis(d, idx[..., None].astype(np.intp), g[..., None], axis=-1)
    return d.reshape(b, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, 2 * h2, 2 * w2)


def box_filter(s, k, value):
    """k x k correlation of a 2-D map with a constant kernel, zero padded."""
    r = (k - 1) // 2
    h, w = s.shape
    sp = np.zeros((h + 2 * r, w + 2 * r), dtype=np.float64)
    sp[r : r + h, r : r + w] = s
    out = np.zeros((h, w), dtype=np.float64)
    for i in range(k):
        for j in range(k):
            out += value * sp[i : i + h, j : j + w]
    return out
