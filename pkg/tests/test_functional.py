import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import gradcheck
from litenext import functional as F
from litenext import tensor as T
from litenext.tensor import ShapeError, Tape, Tensor

torch = pytest.importorskip("torch")


def _t(a):
    return torch.tensor(np.asarray(a), dtype=torch.float64)


def _weighted(f, seed, shape):
    """Scalar probe sum(f(...) * r) with a fixed random r, so every output element matters."""
    r = np.random.default_rng(seed + 100).standard_normal(shape)
    return lambda *xs: T.tsum(f(*xs) * r)


# forward values against torch ------------------------------------------------------
@pytest.mark.parametrize("k,pad,stride", [(1, 0, 1), (3, 1, 1), (3, 0, 2), (5, 2, 1)])
def test_conv2d_matches_torch(rng, k, pad, stride):
    x = rng.standard_normal((2, 3, 9, 8))
    w = rng.standard_normal((4, 3, k, k))
    b = rng.standard_normal(4)
    ours = F.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, padding=pad).data
    ref = torch.nn.functional.conv2d(_t(x), _t(w), _t(b), stride=stride, padding=pad).numpy()
    np.testing.assert_allclose(ours, ref, rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("k", [3, 7])
def test_depthwise_conv2d_matches_torch(rng, k):
    x = rng.standard_normal((2, 5, 10, 12))
    w = rng.standard_normal((5, 1, k, k))
    b = rng.standard_normal(5)
    ours = F.depthwise_conv2d(Tensor(x), Tensor(w), Tensor(b)).data
    ref = torch.nn.functional.conv2d(_t(x), _t(w), _t(b), padding=k // 2, groups=5).numpy()
    np.testing.assert_allclose(ours, ref, rtol=1e-10, atol=1e-12)


def test_maxpool_matches_torch(rng):
    x = rng.standard_normal((2, 3, 6, 8))
    np.testing.assert_array_equal(F.maxpool2x2(Tensor(x)).data, torch.nn.functional.max_pool2d(_t(x), 2).numpy())


def test_maxpool_ties_route_gradient_to_first_in_row_major_order():
    x = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
    with Tape() as tape:
        y = T.tsum(F.maxpool2x2(x))
    tape.backward(y)
    np.testing.assert_array_equal(x.grad[0, 0], [[1, 0], [0, 0]])


@pytest.mark.parametrize("src,dst", [((4, 4), (16, 16)), ((5, 3), (7, 11)), ((16, 16), (4, 4)), ((6, 9), (6, 9))])
def test_resize_bilinear_matches_torch_half_pixel(rng, src, dst):
    x = rng.standard_normal((2, 3, *src))
    ours = F.resize_bilinear(Tensor(x), *dst).data
    ref = torch.nn.functional.interpolate(_t(x), size=dst, mode="bilinear", align_corners=False).numpy()
    np.testing.assert_allclose(ours, ref, rtol=1e-10, atol=1e-12)


def test_bilinear_scalar_oracle():
    # 2 -> 4 upsample of [a, b]: half-pixel centres give a, 0.75a+0.25b, 0.25a+0.75b, b
    x = Tensor(np.array([[[[1.0, 5.0]]]]))
    out = F.resize_bilinear(x, 1, 4).data[0, 0, 0]
    np.testing.assert_allclose(out, [1.0, 2.0, 4.0, 5.0])


def test_resize_of_constant_is_constant():
    x = Tensor(np.full((1, 2, 5, 7), 3.25))
    np.testing.assert_allclose(F.resize_bilinear(x, 13, 4).data, 3.25)


def test_upsample_rejects_shrinking():
    with pytest.raises(ShapeError):
        F.upsample_bilinear(Tensor(np.ones((1, 1, 8, 8))), 4, 4)
    with pytest.raises(ValueError):
        F.upsample_bilinear(Tensor(np.ones((1, 1, 8, 8))), 0, 8)


def test_layer_norm_matches_torch(rng):
    x = rng.standard_normal((2, 6, 4, 5)) * 3 + 1
    g, b = rng.standard_normal(6), rng.standard_normal(6)
    ours = F.layer_norm_channels(Tensor(x), Tensor(g), Tensor(b), 1e-6).data
    ref = torch.nn.functional.layer_norm(_t(x).permute(0, 2, 3, 1), (6,), _t(g), _t(b), 1e-6).permute(0, 3, 1, 2).numpy()
    np.testing.assert_allclose(ours, ref, rtol=1e-9, atol=1e-10)


def test_gelu_is_exact_erf_form(rng):
    x = rng.standard_normal(200) * 4
    np.testing.assert_allclose(F.gelu(Tensor(x)).data, torch.nn.functional.gelu(_t(x)).numpy(), rtol=1e-12, atol=1e-14)


def test_sigmoid_is_stable_at_extremes():
    s = F.sigmoid(Tensor(np.array([-1000.0, 0.0, 1000.0]))).data
    np.testing.assert_array_equal(s, [0.0, 0.5, 1.0])
    assert np.all(np.isfinite(s))


def test_softmax_rows_sum_to_one(rng):
    s = F.softmax(Tensor(rng.standard_normal((3, 4)) * 50)).data
    np.testing.assert_allclose(s.sum(axis=-1), 1.0)


def test_global_pools(rng):
    x = rng.standard_normal((2, 3, 4, 5))
    np.testing.assert_allclose(F.global_avg_pool(Tensor(x)).data, x.mean(axis=(2, 3)))
    np.testing.assert_array_equal(F.global_max_pool(Tensor(x)).data, x.max(axis=(2, 3)))


# shape validation ------------------------------------------------------------------
def test_conv2d_channel_mismatch_names_dimension():
    with pytest.raises(ShapeError, match="dim 1"):
        F.conv2d(Tensor(np.ones((1, 3, 5, 5))), Tensor(np.ones((2, 4, 3, 3))))


def test_depthwise_even_kernel_rejected():
    with pytest.raises(ValueError, match="odd"):
        F.depthwise_conv2d(Tensor(np.ones((1, 2, 5, 5))), Tensor(np.ones((2, 1, 4, 4))))


def test_maxpool_odd_size_rejected():
    with pytest.raises(ShapeError):
        F.maxpool2x2(Tensor(np.ones((1, 1, 5, 4))))


# gradients -------------------------------------------------------------------------
def _distinct(rng, shape):
    """Values with no ties so max-type ops stay differentiable under perturbation."""
    return rng.permutation(np.arange(np.prod(shape), dtype=np.float64)).reshape(shape) / 10.0


GRAD_CASES = {
    "conv2d_3x3": lambda rng: (
        (lambda x, w, b: F.conv2d(x, w, b, padding=1)),
        [rng.standard_normal((2, 3, 6, 5)), rng.standard_normal((4, 3, 3, 3)), rng.standard_normal(4)],
    ),
    "conv2d_1x1": lambda rng: (
        (lambda x, w, b: F.conv2d(x, w, b)),
        [rng.standard_normal((2, 3, 4, 4)), rng.standard_normal((2, 3, 1, 1)), rng.standard_normal(2)],
    ),
    "conv2d_stride2": lambda rng: (
        (lambda x, w, b: F.conv2d(x, w, b, stride=2, padding=1)),
        [rng.standard_normal((1, 2, 7, 7)), rng.standard_normal((3, 2, 3, 3)), rng.standard_normal(3)],
    ),
    "depthwise_conv2d": lambda rng: (
        (lambda x, w, b: F.depthwise_conv2d(x, w, b)),
        [rng.standard_normal((2, 3, 8, 8)), rng.standard_normal((3, 1, 7, 7)), rng.standard_normal(3)],
    ),
    "maxpool2x2": lambda rng: ((lambda x: F.maxpool2x2(x)), [_distinct(rng, (2, 2, 4, 6))]),
    "resize_up": lambda rng: ((lambda x: F.resize_bilinear(x, 7, 9)), [rng.standard_normal((1, 2, 3, 4))]),
    "resize_down": lambda rng: ((lambda x: F.resize_bilinear(x, 3, 2)), [rng.standard_normal((1, 2, 8, 6))]),
    "layer_norm": lambda rng: (
        (lambda x, g, b: F.layer_norm_channels(x, g, b)),
        [rng.standard_normal((2, 5, 3, 3)), rng.standard_normal(5), rng.standard_normal(5)],
    ),
    "gelu": lambda rng: ((lambda x: F.gelu(x)), [rng.standard_normal((3, 7)) * 2]),
    "sigmoid": lambda rng: ((lambda x: F.sigmoid(x)), [rng.standard_normal((3, 7)) * 3]),
    "linear": lambda rng: (
        (lambda x, w, b: F.linear(x, w, b)),
        [rng.standard_normal((3, 5)), rng.standard_normal((4, 5)), rng.standard_normal(4)],
    ),
    "global_avg_pool": lambda rng: ((lambda x: F.global_avg_pool(x)), [rng.standard_normal((2, 3, 4, 4))]),
    "global_max_pool": lambda rng: ((lambda x: F.global_max_pool(x)), [_distinct(rng, (2, 3, 4, 4))]),
    "softmax": lambda rng: ((lambda x: F.softmax(x)), [rng.standard_normal((3, 5))]),
}


@pytest.mark.parametrize("name", sorted(GRAD_CASES))
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_functional_gradients_match_finite_differences(name, seed):
    rng = np.random.default_rng(seed)
    op, inputs = GRAD_CASES[name](rng)
    out_shape = op(*[Tensor(a) for a in inputs]).shape
    assert gradcheck(_weighted(op, seed, out_shape), inputs, seed=seed) < 1e-3


def test_conv2d_backward_matches_torch(rng):
    x = rng.standard_normal((2, 3, 7, 6))
    w = rng.standard_normal((4, 3, 3, 3))
    g = rng.standard_normal((2, 4, 7, 6))
    xt, wt = Tensor(x, requires_grad=True), Tensor(w, requires_grad=True)
    with Tape() as tape:
        y = T.tsum(F.conv2d(xt, wt, padding=1) * g)
    tape.backward(y)
    tx, tw = _t(x).requires_grad_(), _t(w).requires_grad_()
    (torch.nn.functional.conv2d(tx, tw, padding=1) * _t(g)).sum().backward()
    np.testing.assert_allclose(xt.grad, tx.grad.numpy(), rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(wt.grad, tw.grad.numpy(), rtol=1e-10, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 12), st.integers(1, 12))
def test_interp_matrix_rows_are_convex(n_in, n_out):
    a = F._interp_matrix(n_in, n_out, "<f8")
    assert a.shape == (n_out, n_in)
    assert np.all(a >= 0)
    np.testing.assert_allclose(a.sum(axis=1), 1.0)


@settings(max_examples=30, deadline=None)
@given(st.floats(-30, 30), st.floats(-30, 30))
def test_gelu_derivative_bounded(a, b):
    x = Tensor(np.array([a, b]), requires_grad=True)
    with Tape() as tape:
        y = T.tsum(F.gelu(x))
    tape.backward(y)
    # d/dx x*Phi(x) lies in [-0.17, 1.13]
    assert np.all(x.grad > -0.2) and np.all(x.grad < 1.2)
    assert not math.isnan(float(x.grad.sum()))
