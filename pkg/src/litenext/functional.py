"""Differentiable image ops used by the network.

All image tensors are NCHW. Convolutions are cross-correlations with zero
padding; bilinear resampling uses half-pixel centres (align_corners=False).
"""
from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
from scipy.special import erf

from . import kernels
from .tensor import ShapeError, Tensor, _make

_SQRT1_2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _check_rank(x: Tensor, rank: int, op: str) -> None:
    if x.ndim != rank:
        raise ShapeError(f"{op}: expected a rank-{rank} input, got shape {x.shape}")


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    _check_rank(x, 4, "conv2d")
    if stride < 1:
        raise ValueError(f"conv2d: stride must be >= 1, got {stride}")
    if padding < 0:
        raise ValueError(f"conv2d: padding must be >= 0, got {padding}")
    b, cin, h, w = x.shape
    cout, wcin, k, k2 = weight.shape
    if wcin != cin:
        raise ShapeError(f"conv2d: input channels (dim 1) = {cin} but weight expects {wcin}")
    if k != k2:
        raise ShapeError(f"conv2d: kernel must be square, got {k}x{k2}")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"conv2d: bias must have shape ({cout},), got {bias.shape}")
    out_h = (h + 2 * padding - k) // stride + 1
    out_w = (w + 2 * padding - k) // stride + 1
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"conv2d: kernel {k} larger than padded input {h}x{w}")

    wmat = weight.data.reshape(cout, cin * k * k)
    if k == 1 and stride == 1 and padding == 0:
        cols = x.data.transpose(0, 2, 3, 1).reshape(b * h * w, cin)
    else:
        xpad = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
        cols = kernels.im2col(np.ascontiguousarray(xpad), k, stride, out_h, out_w)
    y = cols @ wmat.T
    if bias is not None:
        y += bias.data
    out = np.ascontiguousarray(y.reshape(b, out_h, out_w, cout).transpose(0, 3, 1, 2))

    def fn(g):
        gm = g.transpose(0, 2, 3, 1).reshape(b * out_h * out_w, cout)
        dw = (gm.T @ cols).reshape(weight.shape) if weight.requires_grad else None
        db = gm.sum(axis=0) if bias is not None and bias.requires_grad else None
        dx = None
        if x.requires_grad:
            dcols = gm @ wmat
            if k == 1 and stride == 1 and padding == 0:
                dx = np.ascontiguousarray(dcols.reshape(b, h, w, cin).transpose(0, 3, 1, 2))
            else:
                hp, wp = h + 2 * padding, w + 2 * padding
                dxp = kernels.col2im(dcols, b, cin, hp, wp, k, stride, out_h, out_w)
                dx = dxp[:, :, padding : padding + h, padding : padding + w]
        return dx, dw, db

    inputs = (x, weight) + ((bias,) if bias is not None else (Tensor(np.zeros(cout, x.dtype)),))
    return _make(out, inputs, fn)


def depthwise_conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, padding: int | None = None) -> Tensor:
    _check_rank(x, 4, "depthwise_conv2d")
    b, c, h, w = x.shape
    wc, one, k, k2 = weight.shape
    if k % 2 == 0 or k != k2:
        raise ValueError(f"depthwise_conv2d: kernel must be square with odd size, got {k}x{k2}")
    if wc != c or one != 1:
        raise ShapeError(f"depthwise_conv2d: input channels (dim 1) = {c} but weight has shape {weight.shape}")
    if padding is None:
        padding = (k - 1) // 2
    if padding != (k - 1) // 2:
        raise ValueError(f"depthwise_conv2d: padding must be {(k - 1) // 2} to keep the spatial size")
    p = padding
    xpad = np.ascontiguousarray(np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))))
    wd = np.ascontiguousarray(weight.data)
    out = kernels.dwconv_forward(xpad, wd, h, w)
    if bias is not None:
        out += bias.data[None, :, None, None]

    def fn(g):
        dxp, dw = kernels.dwconv_backward(xpad, wd, np.ascontiguousarray(g))
        db = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return dxp[:, :, p : p + h, p : p + w], dw, db

    inputs = (x, weight) + ((bias,) if bias is not None else (Tensor(np.zeros(c, x.dtype)),))
    return _make(out, inputs, fn)


def maxpool2x2(x: Tensor) -> Tensor:
    _check_rank(x, 4, "maxpool2x2")
    h, w = x.shape[2:]
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2x2: spatial dims must be even, got {h}x{w}")
    out, idx = kernels.maxpool2_forward(np.ascontiguousarray(x.data))
    return _make(out, (x,), lambda g: (kernels.maxpool2_backward(np.ascontiguousarray(g), idx),))


@lru_cache(maxsize=64)
def _interp_matrix(n_in: int, n_out: int, dtype_str: str) -> np.ndarray:
    """Row o holds the half-pixel bilinear weights of output o over the inputs."""
    m = np.zeros((n_out, n_in), dtype=np.float64)
    scale = n_in / n_out
    for o in range(n_out):
        src = max((o + 0.5) * scale - 0.5, 0.0)
        i0 = min(int(math.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        lam = src - i0 if i0 < n_in - 1 else 0.0
        m[o, i0] += 1.0 - lam
        m[o, i1] += lam
    m.setflags(write=False)
    return m.astype(dtype_str)


def resize_bilinear(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Separable half-pixel bilinear resampling in either direction."""
    _check_rank(x, 4, "resize_bilinear")
    if out_h < 1 or out_w < 1:
        raise ValueError(f"resize_bilinear: target size must be positive, got {out_h}x{out_w}")
    h, w = x.shape[2:]
    if (h, w) == (out_h, out_w):
        return x
    ah = _interp_matrix(h, out_h, x.dtype.str)
    aw = _interp_matrix(w, out_w, x.dtype.str)
    out = np.matmul(np.matmul(ah, x.data), aw.T)
    return _make(out, (x,), lambda g: (np.matmul(np.matmul(ah.T, g), aw),))


def upsample_bilinear(x: Tensor, out_h: int, out_w: int) -> Tensor:
    if out_h < 1 or out_w < 1:
        raise ValueError(f"upsample_bilinear: target size must be positive, got {out_h}x{out_w}")
    h, w = x.shape[2:]
    if out_h < h or out_w < w:
        raise ShapeError(f"upsample_bilinear: target {out_h}x{out_w} smaller than input {h}x{w}")
    return resize_bilinear(x, out_h, out_w)


def layer_norm_channels(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalise the channel vector at every (b, h, w), then apply gamma/beta."""
    _check_rank(x, 4, "layer_norm_channels")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"layer_norm_channels: gamma/beta must have shape ({c},)")
    if eps <= 0:
        raise ValueError("layer_norm_channels: eps must be positive")
    xd = x.data
    mu = xd.mean(axis=1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gamma.data[None, :, None, None]
    out = xhat * gd + beta.data[None, :, None, None]

    def fn(g):
        dgamma = (g * xhat).sum(axis=(0, 2, 3))
        dbeta = g.sum(axis=(0, 2, 3))
        dxhat = g * gd
        dx = inv * (dxhat - dxhat.mean(axis=1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=1, keepdims=True))
        return dx, dgamma, dbeta

    return _make(out, (x, gamma, beta), fn)


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, x * Phi(x)."""
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd * _SQRT1_2))
    out = xd * cdf

    def fn(g):
        pdf = np.exp(-0.5 * xd * xd) * _INV_SQRT_2PI
        return (g * (cdf + xd * pdf),)

    return _make(out.astype(xd.dtype, copy=False), (x,), fn)


def _sigmoid(a: np.ndarray) -> np.ndarray:
    z = np.exp(-np.abs(a))
    return np.where(a >= 0, 1.0 / (1.0 + z), z / (1.0 + z)).astype(a.dtype, copy=False)


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    return _make(s, (x,), lambda g: (g * s * (1.0 - s),))


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    _check_rank(x, 2, "linear")
    if weight.shape[1] != x.shape[1]:
        raise ShapeError(f"linear: input features (dim 1) = {x.shape[1]} but weight expects {weight.shape[1]}")
    xd, wd = x.data, weight.data
    out = xd @ wd.T
    if bias is not None:
        out = out + bias.data

    def fn(g):
        return g @ wd, g.T @ xd, (g.sum(axis=0) if bias is not None else None)

    inputs = (x, weight) + ((bias,) if bias is not None else (Tensor(np.zeros(weight.shape[0], x.dtype)),))
    return _make(out, inputs, fn)


def global_avg_pool(x: Tensor) -> Tensor:
    _check_rank(x, 4, "global_avg_pool")
    b, c, h, w = x.shape
    return _make(x.data.mean(axis=(2, 3)), (x,), lambda g: (np.broadcast_to(g[:, :, None, None] / (h * w), x.shape).copy(),))


def global_max_pool(x: Tensor) -> Tensor:
    _check_rank(x, 4, "global_max_pool")
    b, c, h, w = x.shape
    flat = x.data.reshape(b, c, h * w)
    idx = flat.argmax(axis=2)  # first maximum in row-major order

    def fn(g):
        d = np.zeros_like(flat)
        np.put_along_axis(d, idx[:, :, None], g[:, :, None], axis=2)
        return (d.reshape(x.shape),)

    return _make(np.take_along_axis(flat, idx[:, :, None], axis=2)[:, :, 0], (x,), fn)


def softmax(x: Tensor) -> Tensor:
    """Softmax along the last axis."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def fn(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _make(s, (x,), fn)
