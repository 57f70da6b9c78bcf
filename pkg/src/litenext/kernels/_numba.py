"""numba kernels mirroring ``_numpy``.

Loops are serial with a fixed accumulation order so results are
reproducible run to run.
"""
import numpy as np
from numba import njit

_opts = dict(cache=True, nogil=True)


@njit(**_opts)
def im2col(xpad, k, stride, out_h, out_w):
    b, c = xpad.shape[0], xpad.shape[1]
    cols = np.empty((b * out_h * out_w, c * k * k), dtype=xpad.dtype)
    row = 0
    for n in range(b):
        for oh in range(out_h):
            for ow in range(out_w):
                col = 0
                h0 = oh * stride
                w0 = ow * stride
                for ci in range(c):
                    for i in range(k):
                        for j in range(k):
                            cols[row, col] = xpad[n, ci, h0 + i, w0 + j]
                            col += 1
                row += 1
    return cols


@njit(**_opts)
def col2im(dcols, b, c, hp, wp, k, stride, out_h, out_w):
    dx = np.zeros((b, c, hp, wp), dtype=dcols.dtype)
    row = 0
    for n in range(b):
        for oh in range(out_h):
            for ow in range(out_w):
                col = 0
                h0 = oh * stride
                w0 = ow * stride
                for ci in range(c):
                    for i in range(k):
                        for j in range(k):
                            dx[n, ci, h0 + i, w0 + j] += dcols[row, col]
                            col += 1
                row += 1
    return dx


@njit(**_opts)
def dwconv_forward(xpad, w, out_h, out_w):
    b, c = xpad.shape[0], xpad.shape[1]
    k = w.shape[3]
    out = np.zeros((b, c, out_h, out_w), dtype=xpad.dtype)
    for n in range(b):
        for ci in range(c):
            for i in range(k):
                for j in range(k):
                    wv = w[ci, 0, i, j]
                    for oh in range(out_h):
                        for ow in range(out_w):
                            out[n, ci, oh, ow] += wv * xpad[n, ci, oh + i, ow + j]
    return out


@njit(**_opts)
def dwconv_backward(xpad, w, g):
    b, c, out_h, out_w = g.shape
    k = w.shape[3]
    dxpad = np.zeros_like(xpad)
    dw = np.zeros_like(w)
    for n in range(b):
        for ci in range(c):
            for i in range(k):
                for j in range(k):
                    wv = w[ci, 0, i, j]
                    acc = 0.0
                    for oh in range(out_h):
                        for ow in range(out_w):
                            gv = g[n, ci, oh, ow]
                            dxpad[n, ci, oh + i, ow + j] += wv * gv
                            acc += gv * xpad[n, ci, oh + i, ow + j]
                    dw[ci, 0, i, j] += acc
    return dxpad, dw


@njit(**_opts)
def maxpool2_forward(x):
    b, c, h, w = x.shape
    out = np.empty((b, c, h // 2, w // 2), dtype=x.dtype)
    idx = np.empty((b, c, h // 2, w // 2), dtype=np.int8)
    for n in range(b):
        for ci in range(c):
            for oh in range(h // 2):
                for ow in range(w // 2):
                    best = x[n, ci, 2 * oh, 2 * ow]
                    arg = 0
                    for q in range(1, 4):
                        v = x[n, ci, 2 * oh + q // 2, 2 * ow + q % 2]
                        if v > best:
                            best = v
                            arg = q
                    out[n, ci, oh, ow] = best
                    idx[n, ci, oh, ow] = arg
    return out, idx


@njit(**_opts)
def maxpool2_backward(g, idx):
    b, c, h2, w2 = g.shape
    dx = np.zeros((b, c, 2 * h2, 2 * w2), dtype=g.dtype)
    for n in range(b):
        for ci in range(c):
            for oh in range(h2):
                for ow in range(w2):
                    q = idx[n, ci, oh, ow]
                    dx[n, ci, 2 * oh + q // 2, 2 * ow + q % 2] = g[n, ci, oh, ow]
    return dx


@njit(**_opts)
def box_filter(s, k, value):
    r = (k - 1) // 2
    h, w = s.shape
    out = np.zeros((h, w), dtype=np.float64)
    for i in range(k):
        for j in range(k):
            for y in range(h):
                sy = y + i - r
                if sy < 0 or sy >= h:
                    continue
                for x in range(w):
                    sx = x + j - r
                    if sx < 0 or sx >= w:
                        continue
                    out[y, x] += value * s[sy, sx]
    return out
