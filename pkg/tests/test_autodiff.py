"""Gradient and example checks for the reverse-mode autodiff engine.

Every differentiable op is validated against central finite differences on
small random inputs; hand-computable cases (uniform softmax, pooling ties,
identity convolution kernels) are asserted exactly.
"""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import langarm.autodiff as ad
from langarm.autodiff import Tensor


def finite_diff(fn, tensors, h=1e-6):
    """Central-difference gradient of the scalar ``fn()`` w.r.t. each tensor."""

    def value():
        with ad.no_grad():
            return float(fn().data)

    grads = []
    for t in tensors:
        g = np.zeros_like(t.data)
        flat, gflat = t.data.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = value()
            flat[i] = orig - h
            f_minus = value()
            flat[i] = orig
            gflat[i] = (f_plus - f_minus) / (2.0 * h)
        grads.append(g)
    return grads


def assert_grads_match(fn, tensors, rtol=1e-5, atol=1e-8):
    for t in tensors:
        t.zero_grad()
    fn().backward()
    for t, numeric in zip(tensors, finite_diff(fn, tensors)):
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        np.testing.assert_allclose(analytic, numeric, rtol=rtol, atol=atol)


def leaf(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


# -- arithmetic ----------------------------------------------------------------


def test_add_with_broadcasting():
    rng = np.random.default_rng(0)
    a, b = leaf(rng, 3, 4), leaf(rng, 4)
    assert_grads_match(lambda: ad.tsum(ad.mul(ad.add(a, b), 1.7)), [a, b])


def test_sub_and_mul():
    rng = np.random.default_rng(1)
    a, b = leaf(rng, 2, 5), leaf(rng, 2, 5)
    assert_grads_match(lambda: ad.tsum(ad.mul(ad.sub(a, b), b)), [a, b])


def test_matmul_gradients():
    rng = np.random.default_rng(2)
    a, b = leaf(rng, 3, 4), leaf(rng, 4, 2)
    assert_grads_match(lambda: ad.tsum(ad.matmul(a, b)), [a, b])


def test_matmul_rejects_bad_shapes():
    with pytest.raises(ValueError):
        ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


def test_bmm_gradients():
    rng = np.random.default_rng(3)
    a, b = leaf(rng, 2, 3, 4), leaf(rng, 2, 4, 2)
    assert_grads_match(lambda: ad.tsum(ad.bmm(a, b)), [a, b])


def test_sum_backward_is_ones():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    ad.tsum(x).backward()
    np.testing.assert_array_equal(x.grad, np.ones((2, 3)))


def test_tanh_backward_matches_identity():
    x = Tensor(np.array([0.0, 0.5, -1.2]), requires_grad=True)
    ad.tsum(ad.tanh(x)).backward()
    np.testing.assert_allclose(x.grad, 1.0 - np.tanh(x.data) ** 2, rtol=1e-12)


def test_exp_square_mean_gradients():
    rng = np.random.default_rng(4)
    x = leaf(rng, 4, 3)
    assert_grads_match(lambda: ad.tmean(ad.square(ad.exp(ad.mul(x, 0.3)))), [x])


# -- clamping and selection ------------------------------------------------------


def test_clip_gradient_only_in_interior():
    x = Tensor(np.array([-2.0, 0.0, 2.0]), requires_grad=True)
    ad.tsum(ad.clip(x, -1.0, 1.0)).backward()
    np.testing.assert_array_equal(x.grad, [0.0, 1.0, 0.0])


def test_minimum_tie_splits_gradient():
    a = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
    b = Tensor(np.array([2.0, 2.0, 2.0]), requires_grad=True)
    ad.tsum(ad.minimum(a, b)).backward()
    np.testing.assert_array_equal(a.grad, [1.0, 0.5, 0.0])
    np.testing.assert_array_equal(b.grad, [0.0, 0.5, 1.0])


def test_maximum_tie_splits_gradient():
    a = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    b = Tensor(np.array([2.0, 2.0]), requires_grad=True)
    ad.tsum(ad.maximum(a, b)).backward()
    np.testing.assert_array_equal(a.grad, [0.0, 0.5])
    np.testing.assert_array_equal(b.grad, [1.0, 0.5])


def test_minimum_gradients_off_ties():
    rng = np.random.default_rng(5)
    a, b = leaf(rng, 6), leaf(rng, 6)
    assert_grads_match(lambda: ad.tsum(ad.minimum(a, b)), [a, b])


# -- reductions and shape ops -----------------------------------------------------


def test_mean_over_axis_gradients():
    rng = np.random.default_rng(6)
    x = leaf(rng, 3, 5)
    assert_grads_match(lambda: ad.tsum(ad.square(ad.tmean(x, axis=1))), [x])


def test_reshape_transpose_roundtrip_gradients():
    rng = np.random.default_rng(7)
    x = leaf(rng, 2, 3, 4)
    fn = lambda: ad.tsum(ad.square(ad.transpose(ad.reshape(x, (6, 4)), (1, 0))))
    assert_grads_match(fn, [x])


def test_concat_routes_gradient_to_each_part():
    rng = np.random.default_rng(8)
    a, b = leaf(rng, 2, 3), leaf(rng, 2, 2)
    assert_grads_match(lambda: ad.tsum(ad.square(ad.concat([a, b], axis=1))), [a, b])


def test_getitem_scatters_gradient():
    x = Tensor(np.arange(5.0), requires_grad=True)
    ad.tsum(ad.getitem(x, np.array([0, 0, 3]))).backward()
    np.testing.assert_array_equal(x.grad, [2.0, 0.0, 0.0, 1.0, 0.0])


def test_backward_requires_scalar():
    x = Tensor(np.zeros(3), requires_grad=True)
    with pytest.raises(ValueError):
        ad.tanh(x).backward()


def test_no_grad_suppresses_graph():
    x = Tensor(np.ones(3), requires_grad=True)
    with ad.no_grad():
        y = ad.tanh(x)
    assert not y.requires_grad and y._parents == ()


# -- neural-net primitives ---------------------------------------------------------


def test_softmax_of_zeros_is_uniform():
    out = ad.softmax(Tensor(np.zeros((2, 3))))
    np.testing.assert_allclose(out.data, np.full((2, 3), 1.0 / 3.0), rtol=1e-15)


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(9)
    out = ad.softmax(Tensor(rng.standard_normal((4, 7)) * 10.0))
    np.testing.assert_allclose(out.data.sum(axis=-1), np.ones(4), atol=1e-12)


def test_softmax_is_shift_invariant():
    rng = np.random.default_rng(10)
    x = rng.standard_normal((3, 5))
    a = ad.softmax(Tensor(x)).data
    b = ad.softmax(Tensor(x + 123.0)).data
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_softmax_gradients():
    rng = np.random.default_rng(11)
    x = leaf(rng, 3, 4)
    w = rng.standard_normal((3, 4))
    assert_grads_match(lambda: ad.tsum(ad.mul(ad.softmax(x), w)), [x])


def test_layer_norm_forward_oracle():
    rng = np.random.default_rng(12)
    x = rng.standard_normal((4, 6))
    gain = rng.standard_normal(6)
    bias = rng.standard_normal(6)
    out = ad.layer_norm(Tensor(x), Tensor(gain), Tensor(bias)).data
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    expect = (x - mu) / np.sqrt(var + 1e-5) * gain + bias
    np.testing.assert_allclose(out, expect, rtol=1e-12)


def test_layer_norm_gradients():
    rng = np.random.default_rng(13)
    x, gain, bias = leaf(rng, 3, 5), leaf(rng, 5), leaf(rng, 5)
    fn = lambda: ad.tsum(ad.square(ad.layer_norm(x, gain, bias)))
    assert_grads_match(fn, [x, gain, bias], rtol=1e-4, atol=1e-7)


def test_embedding_lookup_and_accumulation():
    table = Tensor(np.arange(12.0).reshape(4, 3), requires_grad=True)
    ids = np.array([[1, 1, 3]])
    out = ad.embedding(table, ids)
    np.testing.assert_array_equal(out.data[0, 0], table.data[1])
    ad.tsum(out).backward()
    np.testing.assert_array_equal(table.grad[1], [2.0, 2.0, 2.0])
    np.testing.assert_array_equal(table.grad[0], [0.0, 0.0, 0.0])


def test_embedding_rejects_out_of_range_ids():
    with pytest.raises(ValueError):
        ad.embedding(Tensor(np.zeros((4, 3))), np.array([4]))


def test_masked_mean_matches_explicit_loop():
    rng = np.random.default_rng(14)
    x = rng.standard_normal((3, 5, 4))
    mask = (rng.random((3, 5, 1)) < 0.7).astype(np.float64)
    mask[:, 0] = 1.0  # every row keeps at least one position
    out = ad.masked_mean(Tensor(x), mask, axis=1).data
    for b in range(3):
        keep = mask[b, :, 0] == 1.0
        np.testing.assert_allclose(out[b], x[b, keep].mean(axis=0), rtol=1e-12)


def test_masked_mean_rejects_all_masked_rows():
    with pytest.raises(ValueError):
        ad.masked_mean(Tensor(np.ones((2, 3))), np.zeros((2, 3)), axis=1)


def test_masked_mean_gradients():
    rng = np.random.default_rng(15)
    x = leaf(rng, 2, 4, 3)
    mask = np.ones((2, 4, 1))
    mask[0, 2:] = 0.0
    assert_grads_match(lambda: ad.tsum(ad.square(ad.masked_mean(x, mask, axis=1))), [x])


# -- pooling and convolution --------------------------------------------------------


def test_maxpool_example():
    x = Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]), requires_grad=True)
    out = ad.maxpool2x2(x)
    np.testing.assert_array_equal(out.data, [[[[4.0]]]])
    ad.tsum(out).backward()
    np.testing.assert_array_equal(x.grad, [[[[0.0, 0.0], [0.0, 1.0]]]])


def test_maxpool_tie_shares_gradient():
    x = Tensor(np.full((1, 1, 2, 2), 7.0), requires_grad=True)
    ad.tsum(ad.maxpool2x2(x)).backward()
    np.testing.assert_array_equal(x.grad, np.full((1, 1, 2, 2), 0.25))


def test_maxpool_rejects_odd_dims():
    with pytest.raises(ValueError):
        ad.maxpool2x2(Tensor(np.zeros((1, 1, 3, 4))))


def test_maxpool_gradients():
    rng = np.random.default_rng(16)
    x = leaf(rng, 2, 3, 4, 6)  # random floats: ties have probability zero
    assert_grads_match(lambda: ad.tsum(ad.square(ad.maxpool2x2(x))), [x])


def _conv_naive(x, w):
    n, c, h, wd = x.shape
    co = w.shape[0]
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    out = np.zeros((n, co, h, wd))
    for b in range(n):
        for o in range(co):
            for y in range(h):
                for xx in range(wd):
                    patch = xp[b, :, y : y + 3, xx : xx + 3]
                    out[b, o, y, xx] = (patch * w[o]).sum()
    return out


def test_conv2d_matches_naive_loops():
    rng = np.random.default_rng(17)
    x = rng.standard_normal((2, 3, 4, 5))
    w = rng.standard_normal((4, 3, 3, 3))
    out = ad.conv2d(Tensor(x), Tensor(w)).data
    np.testing.assert_allclose(out, _conv_naive(x, w), rtol=1e-10, atol=1e-12)


def test_conv2d_identity_kernel_preserves_input():
    rng = np.random.default_rng(18)
    x = rng.standard_normal((1, 2, 5, 4))
    w = np.zeros((2, 2, 3, 3))
    w[0, 0, 1, 1] = 1.0
    w[1, 1, 1, 1] = 1.0
    out = ad.conv2d(Tensor(x), Tensor(w)).data
    np.testing.assert_allclose(out, x, atol=1e-15)


def test_conv2d_gradients():
    rng = np.random.default_rng(19)
    x, w = leaf(rng, 2, 3, 4, 4), leaf(rng, 2, 3, 3, 3)
    assert_grads_match(
        lambda: ad.tsum(ad.square(ad.conv2d(x, w))), [x, w], rtol=1e-4, atol=1e-7
    )


def test_conv2d_rejects_channel_mismatch():
    with pytest.raises(ValueError):
        ad.conv2d(Tensor(np.zeros((1, 3, 4, 4))), Tensor(np.zeros((2, 5, 3, 3))))


def test_precomputed_patch_cache_is_equivalent():
    rng = np.random.default_rng(20)
    xdata = rng.standard_normal((2, 3, 4, 4))
    w_plain = Tensor(rng.standard_normal((2, 3, 3, 3)), requires_grad=True)
    w_cached = Tensor(w_plain.data.copy(), requires_grad=True)

    x_plain = Tensor(xdata)
    ad.tsum(ad.square(ad.conv2d(x_plain, w_plain))).backward()

    x_cached = ad.precompute_conv_cols(Tensor(xdata))
    out = ad.conv2d(x_cached, w_cached)
    ad.tsum(ad.square(out)).backward()

    np.testing.assert_array_equal(out.data, ad.conv2d(x_plain, w_plain).data)
    np.testing.assert_array_equal(w_cached.grad, w_plain.grad)


def test_check_finite_flag_traps_overflow(monkeypatch):
    monkeypatch.setattr(ad, "CHECK_FINITE", True)
    with pytest.raises(FloatingPointError):
        ad.exp(Tensor(np.array([1000.0])))


# -- property-based checks ------------------------------------------------------------


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.integers(1, 4), st.integers(1, 4))
def test_tanh_gradient_property(seed, rows, cols):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.standard_normal((rows, cols)), requires_grad=True)
    ad.tsum(ad.tanh(x)).backward()
    np.testing.assert_allclose(x.grad, 1.0 - np.tanh(x.data) ** 2, rtol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.integers(1, 5))
def test_softmax_rows_always_sum_to_one(seed, n):
    rng = np.random.default_rng(seed)
    out = ad.softmax(Tensor(rng.standard_normal((n, 6)) * 30.0))
    np.testing.assert_allclose(out.data.sum(axis=-1), np.ones(n), atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_clip_output_within_bounds(seed):
    rng = np.random.default_rng(seed)
    out = ad.clip(Tensor(rng.standard_normal(20) * 5.0), -1.0, 1.0)
    assert np.all(out.data >= -1.0) and np.all(out.data <= 1.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_broadcast_add_gradient_shapes(seed):
    rng = np.random.default_rng(seed)
    a = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    b = Tensor(rng.standard_normal((1, 4)), requires_grad=True)
    c = Tensor(rng.standard_normal(()), requires_grad=True)
    ad.tsum(ad.add(ad.add(a, b), c)).backward()
    assert a.grad.shape == (3, 4)
    np.testing.assert_array_equal(b.grad, np.full((1, 4), 3.0))
    np.testing.assert_array_equal(c.grad, 12.0)
