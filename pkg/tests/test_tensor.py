import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from interfero import tensor as T

import gradcheck
from oracles import central_difference, direct_conv, relative_error


def make_layer(kernels, bias, act="none", dtype=np.float64):
    return T.ConvLayer(T.NetTensor(kernels, dtype), T.NetTensor(bias, dtype), act)


class TestNetTensor:
    def test_grad_matches_values_shape(self):
        t = T.NetTensor(np.ones((2, 3)))
        assert t.grad.shape == t.values.shape
        assert not t.grad.any()

    @pytest.mark.parametrize("shape", [(0,), (2, 0), ()])
    def test_rejects_empty_extents(self, shape):
        with pytest.raises(T.ShapeError):
            T.NetTensor(np.zeros(shape))

    def test_layer_requires_3x3(self):
        with pytest.raises(T.ShapeError):
            make_layer(np.zeros((1, 1, 5, 5)), np.zeros(1))

    def test_layer_bias_shape(self):
        with pytest.raises(T.ShapeError):
            make_layer(np.zeros((2, 1, 3, 3)), np.zeros(3))


class TestConvForward:
    def test_all_ones_kernel(self):
        layer = make_layer(np.ones((1, 1, 3, 3)), [0.0])
        y = T.conv2d_forward(np.ones((1, 3, 3)), layer)
        np.testing.assert_array_equal(y[0], [[4, 6, 4], [6, 9, 6], [4, 6, 4]])

    def test_delta_kernel_is_identity(self):
        k = np.zeros((1, 1, 3, 3))
        k[0, 0, 1, 1] = 1
        x = np.random.default_rng(0).normal(size=(1, 7, 5))
        np.testing.assert_array_equal(T.conv2d_forward(x, make_layer(k, [0.0])), x)

    def test_matches_direct_oracle(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(2, 4, 5))
        k, b = rng.normal(size=(3, 2, 3, 3)), rng.normal(size=3)
        np.testing.assert_allclose(T.conv2d_forward(x, make_layer(k, b)),
                                   direct_conv(x, k, b), atol=1e-6)

    @pytest.mark.parametrize("act", ["relu", "sigmoid"])
    def test_activation_applied(self, act):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(3, 6, 4))
        k, b = rng.normal(size=(2, 3, 3, 3)), rng.normal(size=2)
        np.testing.assert_allclose(T.conv2d_forward(x, make_layer(k, b, act)),
                                   direct_conv(x, k, b, act), atol=1e-6)

    def test_float32_layer_matches_oracle(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(4, 16, 16)).astype(np.float32)
        k, b = rng.normal(size=(2, 4, 3, 3)), rng.normal(size=2)
        y = T.conv2d_forward(x, make_layer(k, b, dtype=np.float32))
        ref = direct_conv(x.astype(np.float64), k.astype(np.float32), b.astype(np.float32))
        np.testing.assert_allclose(y, ref, atol=1e-4)

    def test_batched_equals_single(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(3, 2, 5, 5))
        layer = make_layer(rng.normal(size=(4, 2, 3, 3)), rng.normal(size=4), "relu")
        batched = T.conv2d_forward(x, layer)
        for i in range(3):
            np.testing.assert_allclose(batched[i], T.conv2d_forward(x[i], layer), atol=1e-12)

    def test_channel_mismatch(self):
        layer = make_layer(np.zeros((1, 2, 3, 3)), [0.0])
        with pytest.raises(T.ShapeError):
            T.conv2d_forward(np.zeros((3, 4, 4)), layer)

    def test_chunked_rows_match(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(3, 2, 17, 11))
        layer = make_layer(rng.normal(size=(4, 3, 3, 3)), rng.normal(size=4), "relu")
        full, _ = T.conv_forward_cn(x, layer)
        chunked = T.conv_rows_cn(x, layer, max_elems=3 * 9 * 2 * 11 * 2)
        np.testing.assert_allclose(chunked, full, atol=1e-12)

    def test_fused_upconv_matches_upsample_then_conv(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(3, 2, 4, 5))
        layer = make_layer(rng.normal(size=(2, 3, 3, 3)), rng.normal(size=2), "sigmoid")
        fused, _ = T.upconv_forward_cn(x, layer, 3)
        plain, _ = T.conv_forward_cn(T.upsample_nearest(x, 3), layer)
        np.testing.assert_allclose(fused, plain, atol=1e-12)
        chunked = T.conv_rows_cn(x, layer, factor=3, max_elems=3 * 9 * 2 * 5)
        np.testing.assert_allclose(chunked, plain, atol=1e-12)


class TestConvBackward:
    def test_finite_differences_2x6x6(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(2, 6, 6))
        layer = make_layer(rng.normal(size=(3, 2, 3, 3)), rng.normal(size=3), "sigmoid")
        w = rng.normal(size=(3, 6, 6))

        def f():
            return float(np.sum(T.conv2d_forward(x, layer) * w))

        dx, kg, bg = T.conv2d_backward(x, layer, w, accumulate=False)
        assert relative_error(dx, central_difference(f, x)) < 1e-3
        assert relative_error(kg, central_difference(f, layer.kernels.values)) < 1e-3
        assert relative_error(bg, central_difference(f, layer.bias.values)) < 1e-3

    def test_zero_upstream(self):
        rng = np.random.default_rng(8)
        layer = make_layer(rng.normal(size=(2, 2, 3, 3)), rng.normal(size=2), "relu")
        dx, kg, bg = T.conv2d_backward(rng.normal(size=(2, 4, 4)), layer, np.zeros((2, 4, 4)))
        assert not dx.any() and not kg.any() and not bg.any()

    def test_single_pixel_delta(self):
        k = np.zeros((1, 1, 3, 3))
        k[0, 0, 1, 1] = 1.0
        layer = make_layer(k, [0.0])
        _, kg, bg = T.conv2d_backward(np.array([[[2.5]]]), layer, np.array([[[-3.0]]]))
        assert kg[0, 0, 1, 1] == pytest.approx(2.5 * -3.0)
        assert bg[0] == pytest.approx(-3.0)

    def test_bias_grad_is_spatial_sum(self):
        rng = np.random.default_rng(9)
        layer = make_layer(rng.normal(size=(2, 1, 3, 3)), np.zeros(2))
        up = rng.normal(size=(2, 5, 5))
        _, _, bg = T.conv2d_backward(rng.normal(size=(1, 5, 5)), layer, up)
        np.testing.assert_allclose(bg, up.sum(axis=(1, 2)))

    def test_accumulates_into_buffers(self):
        rng = np.random.default_rng(10)
        layer = make_layer(rng.normal(size=(1, 1, 3, 3)), [0.0])
        x, up = rng.normal(size=(1, 4, 4)), rng.normal(size=(1, 4, 4))
        _, kg, _ = T.conv2d_backward(x, layer, up)
        T.conv2d_backward(x, layer, up)
        np.testing.assert_allclose(layer.kernels.grad, 2 * kg)


def test_randomised_gradient_suite():
    cases = gradcheck.all_cases(seed=11)
    assert len(cases) >= 20
    for name, err in cases:
        assert err < 1e-3, name


class TestMaxPool:
    def test_block_max(self):
        out, _ = T.maxpool_forward(np.arange(1, 10, dtype=float).reshape(1, 3, 3), 3)
        assert out.shape == (1, 1, 1) and out[0, 0, 0] == 9

    def test_constant_tie_breaks_first(self):
        out, argmax = T.maxpool_forward(np.full((1, 6, 6), 2.0), 3)
        assert np.all(out == 2.0)
        assert np.all(argmax == 0)

    def test_shape(self):
        out, _ = T.maxpool_forward(np.zeros((1, 6, 6)), 3)
        assert out.shape == (1, 2, 2)

    def test_not_divisible(self):
        with pytest.raises(T.ShapeError):
            T.maxpool_forward(np.zeros((1, 7, 6)), 3)

    def test_backward_routes_ones(self):
        x = np.random.default_rng(12).normal(size=(1, 6, 6))
        _, argmax = T.maxpool_forward(x, 3)
        g = T.maxpool_backward(argmax, np.ones((1, 2, 2)), 3)
        assert g.sum() == 4 and np.count_nonzero(g) == 4
        np.testing.assert_array_equal(np.sort(x[g == 1]),
                                      np.sort(T.maxpool_forward(x, 3)[0].ravel()))

    def test_backward_zero(self):
        _, argmax = T.maxpool_forward(np.zeros((2, 6, 3)), 3)
        assert not T.maxpool_backward(argmax, np.zeros((2, 2, 1)), 3).any()


class TestUpsample:
    def test_block_copy(self):
        np.testing.assert_array_equal(T.upsample_nearest(np.array([[[5.0]]]), 3),
                                      np.full((1, 3, 3), 5.0))

    def test_factor_one(self):
        x = np.random.default_rng(13).normal(size=(2, 3, 4))
        np.testing.assert_array_equal(T.upsample_nearest(x, 1), x)

    def test_up_of_pool_on_constant(self):
        x = np.full((2, 6, 9), -1.5)
        np.testing.assert_array_equal(T.upsample_nearest(T.maxpool_forward(x, 3)[0], 3), x)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 4), st.integers(1, 5), st.integers(1, 5), st.integers(0, 2 ** 31))
    def test_adjoint_of_block_sum(self, f, h, w, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(2, h, w))
        y = rng.normal(size=(2, h * f, w * f))
        lhs = np.sum(T.upsample_nearest(x, f) * y)
        rhs = np.sum(x * T.upsample_backward(y, f))
        assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-10)


class TestActivations:
    def test_sigmoid_zero(self):
        assert T.activation_apply(np.array(0.0), "sigmoid") == 0.5

    def test_relu_values(self):
        np.testing.assert_array_equal(T.activation_apply(np.array([-2.0, 3.0]), "relu"), [0, 3])

    def test_sigmoid_derivative_at_zero(self):
        y = T.activation_apply(np.array([0.0]), "sigmoid")
        d = T.activation_derivative(y, "sigmoid")[0]
        numeric = (T.activation_apply(np.array([1e-5]), "sigmoid")
                   - T.activation_apply(np.array([-1e-5]), "sigmoid"))[0] / 2e-5
        assert d == 0.25
        assert abs(d - numeric) < 1e-6

    def test_sigmoid_no_overflow(self):
        with np.errstate(over="raise"):
            y = T.activation_apply(np.array([-1000.0, 1000.0]), "sigmoid")
        np.testing.assert_array_equal(y, [0.0, 1.0])

    def test_unknown(self):
        with pytest.raises(ValueError):
            T.activation_apply(np.zeros(1), "tanh")


class TestLosses:
    def test_mse_zero(self):
        assert T.mse_loss(np.ones(4), np.ones(4))[0] == 0.0

    def test_mse_example(self):
        loss, grad = T.mse_loss(np.zeros(2), np.ones(2))
        assert loss == 1.0
        np.testing.assert_array_equal(grad, [-1.0, -1.0])

    def test_mse_homogeneous(self):
        rng = np.random.default_rng(14)
        p, t = rng.normal(size=10), rng.normal(size=10)
        assert T.mse_loss(3 * p, 3 * t)[0] == pytest.approx(9 * T.mse_loss(p, t)[0])

    def test_mse_shape_mismatch(self):
        with pytest.raises(T.ShapeError):
            T.mse_loss(np.zeros(2), np.zeros(3))

    def test_penalty_equal_weights(self):
        layer = make_layer(np.full((2, 2, 3, 3), 0.3), np.zeros(2))
        value, grad = T.weight_std_penalty(layer, 1.0)
        assert value == 0.0 and not grad.any()

    def test_penalty_two_points(self):
        # nine weights at -1 and nine at +1: population std 1
        k = np.ones((1, 2, 3, 3))
        k[0, 0] = -1.0
        value, _ = T.weight_std_penalty(make_layer(k, [0.0]), 1.0)
        assert value == pytest.approx(1.0)

    def test_penalty_zero_lambda(self):
        rng = np.random.default_rng(15)
        value, grad = T.weight_std_penalty(make_layer(rng.normal(size=(1, 1, 3, 3)), [0.0]), 0.0)
        assert value == 0.0 and not grad.any()

    def test_penalty_negative_lambda(self):
        with pytest.raises(ValueError):
            T.weight_std_penalty(make_layer(np.zeros((1, 1, 3, 3)), [0.0]), -1.0)


class TestAdam:
    def test_first_step(self):
        p = T.NetTensor([1.0], np.float64)
        p.grad[:] = 1.0
        T.adam_step([p], T.AdamState(lr=0.1))
        assert p.values[0] == pytest.approx(0.9, abs=1e-6)

    def test_zero_gradient_identity(self):
        p = T.NetTensor(np.random.default_rng(16).normal(size=5), np.float64)
        before = p.values.copy()
        state = T.AdamState(lr=0.1)
        for _ in range(10):
            T.adam_step([p], state)
        np.testing.assert_array_equal(p.values, before)
        assert state.t == 10

    def test_quadratic(self):
        p = T.NetTensor([3.0], np.float64)
        state = T.AdamState(lr=0.1)
        for _ in range(200):
            p.grad[:] = 2 * p.values
            T.adam_step([p], state)
        assert abs(p.values[0]) < 0.1


class TestXavier:
    def test_deterministic(self):
        a = T.xavier_init((8, 8, 3, 3), 42)
        b = T.xavier_init((8, 8, 3, 3), 42)
        np.testing.assert_array_equal(a.values, b.values)

    def test_variance_and_support(self):
        shape = (8, 8, 3, 3)
        fan = 9 * 8
        samples = np.concatenate([T.xavier_init(shape, s).values.ravel() for s in range(20)])
        assert samples.size >= 10000
        target = 2.0 / (fan + fan)
        assert abs(samples.var() - target) < 0.2 * target
        assert np.abs(samples).max() <= np.sqrt(6.0 / (fan + fan))
