import math

import numpy as np
import pytest

from jitmask.nn import (
    AdamConfig,
    AdamState,
    ConvLayer,
    adam_step,
    bce_loss,
    conv2d_backward,
    conv2d_forward,
    relu_backward,
    relu_forward,
    sgd_step,
    sigmoid_backward,
    sigmoid_forward,
    upsample2x_bilinear_forward,
    upsample2x_bilinear_backward,
)

from reference import bce_reference, conv2d_reference, finite_difference, upsample2x_reference


def rand_layer(rng, cout, cin, k=3, stride=1, dtype=np.float64):
    w = rng.normal(0, 0.5, size=(cout, cin, k, k)).astype(dtype)
    b = rng.normal(0, 0.1, size=cout).astype(dtype)
    return ConvLayer(weights=w, bias=b, stride=stride)


def assert_close(actual, expected, rtol=1e-4, atol=1e-6):
    np.testing.assert_allclose(actual, expected, rtol=rtol, atol=atol)


class TestConvForward:
    def test_ones_kernel_hand_example(self):
        # 3x3 input of ones, 3x3 kernel of ones, stride 1, pad 1:
        # corners see 4 cells, edges 6, center 9
        x = np.ones((1, 1, 3, 3), dtype=np.float32)
        layer = ConvLayer(np.ones((1, 1, 3, 3), dtype=np.float32), np.zeros(1, dtype=np.float32))
        out = conv2d_forward(x, layer)
        expected = np.array([[4, 6, 4], [6, 9, 6], [4, 6, 4]], dtype=np.float32)
        assert np.array_equal(out[0, 0], expected)

    def test_identity_kernel(self, rng):
        x = rng.normal(size=(1, 2, 5, 5)).astype(np.float32)
        w = np.zeros((2, 2, 3, 3), dtype=np.float32)
        w[0, 0, 1, 1] = 1.0
        w[1, 1, 1, 1] = 1.0
        layer = ConvLayer(w, np.zeros(2, dtype=np.float32))
        assert_close(conv2d_forward(x, layer), x, rtol=0, atol=0)

    def test_stride2_shape(self, rng):
        x = rng.normal(size=(1, 1, 4, 4)).astype(np.float32)
        layer = rand_layer(rng, 3, 1, stride=2, dtype=np.float32)
        assert conv2d_forward(x, layer).shape == (1, 3, 2, 2)

    def test_channel_mismatch(self, rng):
        x = rng.normal(size=(1, 2, 4, 4)).astype(np.float32)
        layer = rand_layer(rng, 1, 3, dtype=np.float32)
        with pytest.raises(ValueError):
            conv2d_forward(x, layer)

    def test_matches_naive_reference(self, rng):
        for _ in range(40):
            cin = int(rng.integers(1, 3))
            cout = int(rng.integers(1, 3))
            h = int(rng.integers(1, 7))
            w = int(rng.integers(1, 7))
            k = 3 if max(h, w) >= 2 else 1
            stride = int(rng.integers(1, 3))
            x = rng.uniform(-1, 1, size=(1, cin, h, w)).astype(np.float32)
            layer = rand_layer(rng, cout, cin, k=k, stride=stride, dtype=np.float32)
            ref = conv2d_reference(x, layer.weights, layer.bias, stride, layer.padding)
            assert_close(conv2d_forward(x, layer), ref, rtol=1e-5, atol=1e-5)

    def test_padding_must_be_half_kernel(self):
        with pytest.raises(ValueError):
            ConvLayer(np.zeros((1, 1, 3, 3)), np.zeros(1), padding=0)

    def test_even_kernel_rejected(self):
        with pytest.raises(ValueError):
            ConvLayer(np.zeros((1, 1, 2, 2)), np.zeros(1))


class TestConvBackward:
    def test_zero_grad_out(self, rng):
        x = rng.normal(size=(1, 2, 4, 4))
        layer = rand_layer(rng, 2, 2)
        gx, gw, gb = conv2d_backward(x, layer, np.zeros((1, 2, 4, 4)))
        assert not gx.any() and not gw.any() and not gb.any()

    def test_single_pixel_grad_gives_input_patch(self, rng):
        # one active output at (oy, ox): dL/dW[oc] is exactly the input patch
        x = rng.normal(size=(1, 1, 5, 5))
        layer = rand_layer(rng, 1, 1)
        g = np.zeros((1, 1, 5, 5))
        g[0, 0, 2, 3] = 1.0
        _, gw, gb = conv2d_backward(x, layer, g)
        patch = x[0, 0, 1:4, 2:5]
        assert_close(gw[0, 0], patch, rtol=1e-12, atol=1e-12)
        assert gb[0] == 1.0

    def test_gradients_match_finite_differences(self, rng):
        for trial in range(12):
            cin = int(rng.integers(1, 3))
            cout = int(rng.integers(1, 3))
            h = int(rng.integers(2, 6))
            w = int(rng.integers(2, 6))
            stride = int(rng.integers(1, 3))
            x = rng.uniform(-1, 1, size=(1, cin, h, w))
            layer = rand_layer(rng, cout, cin, stride=stride)
            out = conv2d_forward(x, layer)
            g = rng.uniform(-1, 1, size=out.shape)
            gx, gw, gb = conv2d_backward(x, layer, g)

            def loss_wrt_x(xv):
                return float(np.sum(conv2d_reference(xv, layer.weights, layer.bias, stride, layer.padding) * g))

            def loss_wrt_w(wv):
                return float(np.sum(conv2d_reference(x, wv, layer.bias, stride, layer.padding) * g))

            def loss_wrt_b(bv):
                return float(np.sum(conv2d_reference(x, layer.weights, bv, stride, layer.padding) * g))

            assert_close(gx, finite_difference(loss_wrt_x, x))
            assert_close(gw, finite_difference(loss_wrt_w, layer.weights))
            assert_close(gb, finite_difference(loss_wrt_b, layer.bias))


class TestElementwise:
    def test_relu_values(self):
        x = np.array([[[[-1.0, 0.0, 2.0]]]])
        assert relu_forward(x).ravel().tolist() == [0.0, 0.0, 2.0]

    def test_sigmoid_zero(self):
        assert sigmoid_forward(np.zeros((1, 1, 1, 1)))[0, 0, 0, 0] == 0.5

    def test_sigmoid_extremes_finite(self):
        x = np.array([[[[-500.0, 500.0]]]])
        y = sigmoid_forward(x)
        assert np.isfinite(y).all()
        assert y[0, 0, 0, 0] == pytest.approx(0.0, abs=1e-12)
        assert y[0, 0, 0, 1] == pytest.approx(1.0, abs=1e-12)

    def test_relu_backward_matches_fd(self, rng):
        # sampled away from the kink: |x| > 1e-2
        for _ in range(50):
            x = rng.uniform(-1, 1, size=(1, 2, 3, 3))
            x = np.where(np.abs(x) < 1e-2, 0.5, x)
            g = rng.uniform(-1, 1, size=x.shape)
            gx = relu_backward(x, g)

            def loss(xv):
                return float(np.sum(np.maximum(xv, 0) * g))

            assert_close(gx, finite_difference(loss, x))

    def test_sigmoid_backward_matches_fd(self, rng):
        for _ in range(50):
            x = rng.uniform(-3, 3, size=(1, 1, 4, 3))
            g = rng.uniform(-1, 1, size=x.shape)
            y = sigmoid_forward(x)
            gx = sigmoid_backward(y, g)

            def loss(xv):
                return float(np.sum((1.0 / (1.0 + np.exp(-xv))) * g))

            assert_close(gx, finite_difference(loss, x))


class TestUpsample:
    def test_doubles_spatial_dims(self, rng):
        x = rng.normal(size=(1, 3, 4, 5))
        assert upsample2x_bilinear_forward(x).shape == (1, 3, 8, 10)

    def test_constant_stays_constant(self):
        x = np.full((1, 2, 3, 3), 0.7)
        out = upsample2x_bilinear_forward(x)
        assert_close(out, np.full((1, 2, 6, 6), 0.7), rtol=1e-12, atol=1e-12)

    def test_matches_reference(self, rng):
        for _ in range(10):
            c = int(rng.integers(1, 4))
            h = int(rng.integers(1, 6))
            w = int(rng.integers(1, 6))
            x = rng.normal(size=(1, c, h, w))
            assert_close(upsample2x_bilinear_forward(x), upsample2x_reference(x), rtol=1e-12, atol=1e-12)

    def test_backward_matches_fd(self, rng):
        for _ in range(12):
            c = int(rng.integers(1, 3))
            h = int(rng.integers(1, 5))
            w = int(rng.integers(1, 5))
            x = rng.uniform(-1, 1, size=(1, c, h, w))
            g = rng.uniform(-1, 1, size=(1, c, 2 * h, 2 * w))
            gx = upsample2x_bilinear_backward(g)

            def loss(xv):
                return float(np.sum(upsample2x_reference(xv) * g))

            assert_close(gx, finite_difference(loss, x))


class TestBceLoss:
    def test_zero_logits_half_target(self):
        z = np.zeros((1, 1, 2, 2))
        t = np.full((1, 1, 2, 2), 0.5)
        loss, grad = bce_loss(z, t)
        assert loss == pytest.approx(math.log(2), rel=1e-12)
        assert_close(grad, np.zeros_like(z), rtol=0, atol=1e-12)

    def test_saturated_correct_prediction(self):
        z = np.full((1, 1, 1, 1), 20.0)
        t = np.ones((1, 1, 1, 1))
        loss, grad = bce_loss(z, t)
        assert loss == pytest.approx(0.0, abs=1e-8)
        assert abs(grad).max() < 1e-8

    def test_finite_for_large_logits(self):
        z = np.array([[[[-100.0, 100.0, -50.0, 50.0]]]])
        t = np.array([[[[1.0, 0.0, 0.5, 0.5]]]])
        loss, grad = bce_loss(z, t)
        assert np.isfinite(loss)
        assert np.isfinite(grad).all()

    def test_matches_reference_and_fd(self, rng):
        for _ in range(25):
            z = rng.uniform(-4, 4, size=(1, 1, 3, 4))
            t = rng.uniform(0, 1, size=z.shape)
            loss, grad = bce_loss(z, t)
            assert loss == pytest.approx(bce_reference(z, t), rel=1e-9)

            def f(zv):
                return bce_reference(zv, t)

            assert_close(grad, finite_difference(f, z))

    def test_target_out_of_range(self):
        z = np.zeros((1, 1, 1, 1))
        with pytest.raises(ValueError):
            bce_loss(z, np.full_like(z, 1.5))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            bce_loss(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 2, 3)))

    def test_background_weight_changes_loss(self, rng):
        z = rng.normal(size=(1, 1, 4, 4))
        t = (rng.random(z.shape) > 0.5).astype(np.float64)
        plain, _ = bce_loss(z, t)
        weighted, grad = bce_loss(z, t, background_weight=0.25)
        assert weighted != pytest.approx(plain)
        # weighted gradient still matches finite differences of the weighted loss
        wmap = np.where(t < 0.5, 0.25, 1.0)

        def f(zv):
            per = np.maximum(zv, 0) - zv * t + np.log1p(np.exp(-np.abs(zv)))
            return float((per * wmap).sum() / wmap.sum())

        assert_close(grad, finite_difference(f, z))


class TestOptimizers:
    def test_sgd_example(self):
        # p=1, g=0.5, lr=0.2 -> 0.9
        (out,) = sgd_step([np.array([1.0])], [np.array([0.5])], lr=0.2)
        assert out[0] == pytest.approx(0.9)

    def test_sgd_zero_grad(self, rng):
        p = rng.normal(size=(3, 3))
        (out,) = sgd_step([p], [np.zeros_like(p)], lr=0.2)
        assert np.array_equal(out, p)

    def test_sgd_linearity(self, rng):
        p = rng.normal(size=4)
        g1 = rng.normal(size=4)
        g2 = rng.normal(size=4)
        (two_steps,) = sgd_step(sgd_step([p], [g1], 0.1), [g2], 0.1)
        (one_step,) = sgd_step([p], [g1 + g2], 0.1)
        assert_close(two_steps, one_step, rtol=1e-12, atol=1e-12)

    def test_adam_first_step_magnitude(self):
        # constant gradient: bias correction makes the first update ~= lr
        p = np.zeros(5)
        g = np.ones(5)
        state = AdamState.zeros_like([p])
        (out,), state = adam_step([p], [g], state, AdamConfig(lr=0.001))
        assert_close(out, np.full(5, -0.001), rtol=1e-6, atol=0)
        assert state.step_count == 1

    def test_adam_zero_grad_fresh_state(self, rng):
        p = rng.normal(size=(2, 2))
        state = AdamState.zeros_like([p])
        (out,), _ = adam_step([p], [np.zeros_like(p)], state)
        assert np.array_equal(out, p)

    def test_adam_defaults(self):
        cfg = AdamConfig()
        assert (cfg.lr, cfg.beta1, cfg.beta2, cfg.eps) == (0.001, 0.9, 0.999, 1e-8)

    def test_adam_matches_hand_rolled_two_steps(self, rng):
        p = rng.normal(size=3)
        g1 = rng.normal(size=3)
        g2 = rng.normal(size=3)
        cfg = AdamConfig(lr=0.01)
        state = AdamState.zeros_like([p])
        (p1,), state = adam_step([p], [g1], state, cfg)
        (p2,), state = adam_step([p1], [g2], state, cfg)
        # independent straight-line evaluation
        m = 0.1 * g1
        v = 0.001 * g1 * g1
        ph = p - 0.01 * (m / 0.1) / (np.sqrt(v / 0.001) + 1e-8)
        m = 0.9 * m + 0.1 * g2
        v = 0.999 * v + 0.001 * g2 * g2
        ph = ph - 0.01 * (m / (1 - 0.9**2)) / (np.sqrt(v / (1 - 0.999**2)) + 1e-8)
        assert_close(p2, ph, rtol=1e-10, atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            sgd_step([np.zeros(2)], [np.zeros(3)], 0.1)
