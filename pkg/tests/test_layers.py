"""Layer kernels vs naive oracles and finite-difference gradients."""

import math

import numpy as np
import pytest

from helpers import FD_STEP, check_layer_gradients, numerical_gradient, assert_grad_close, probe_weights
from neurofuse.errors import ShapeError
from neurofuse.layers import (Conv3D, Dense, Dropout, MaxPool3D, TimeDistributed,
                              conv_output_extent, relu_backward, relu_forward,
                              softmax, softmax_backward)


def naive_conv3d(x, kernels, bias, stride, padding):
    """Direct 7-loop convolution, independent of the layer implementation."""
    kx, ky, kz, c_in, c_out = kernels.shape
    d = x.shape[:3]
    if padding == "same":
        out = [math.ceil(d[a] / stride[a]) for a in range(3)]
        pad_lo = []
        for a, k in zip(range(3), (kx, ky, kz)):
            total = max((out[a] - 1) * stride[a] + k - d[a], 0)
            pad_lo.append(total // 2)
    else:
        out = [(d[a] - k) // stride[a] + 1 for a, k in zip(range(3), (kx, ky, kz))]
        pad_lo = [0, 0, 0]
    y = np.zeros(tuple(out) + (c_out,), dtype=np.float64)
    for a in range(out[0]):
        for b in range(out[1]):
            for c in range(out[2]):
                for o in range(c_out):
                    acc = float(bias[o])
                    for i in range(kx):
                        for j in range(ky):
                            for l in range(kz):
                                sa = a * stride[0] + i - pad_lo[0]
                                sb = b * stride[1] + j - pad_lo[1]
                                sc = c * stride[2] + l - pad_lo[2]
                                if 0 <= sa < d[0] and 0 <= sb < d[1] and 0 <= sc < d[2]:
                                    for ci in range(c_in):
                                        acc += float(x[sa, sb, sc, ci]) * float(kernels[i, j, l, ci, o])
                    y[a, b, c, o] = acc
    return y


def naive_maxpool3d(x, window, stride):
    d = x.shape[:3]
    out = [(d[a] - window[a]) // stride[a] + 1 for a in range(3)]
    y = np.zeros(tuple(out) + (x.shape[3],), dtype=x.dtype)
    for a in range(out[0]):
        for b in range(out[1]):
            for c in range(out[2]):
                block = x[a * stride[0]:a * stride[0] + window[0],
                          b * stride[1]:b * stride[1] + window[1],
                          c * stride[2]:c * stride[2] + window[2]]
                y[a, b, c] = block.reshape(-1, x.shape[3]).max(axis=0)
    return y


def distinct_pool_input(rng, shape, window, stride, margin):
    """Random input whose every pool window has a top-2 gap > margin."""
    while True:
        x = rng.normal(scale=4.0, size=shape).astype(np.float32)
        pool = MaxPool3D(window, stride)
        out = pool.output_shape(x.shape)
        ok = True
        for a in range(out[0]):
            for b in range(out[1]):
                for c in range(out[2]):
                    block = x[a * stride[0]:a * stride[0] + window[0],
                              b * stride[1]:b * stride[1] + window[1],
                              c * stride[2]:c * stride[2] + window[2]]
                    for ch in range(shape[3]):
                        vals = np.sort(block[..., ch].reshape(-1))
                        if len(vals) > 1 and vals[-1] - vals[-2] < margin:
                            ok = False
        if ok:
            return x


class TestConv3DForward:
    def test_identity_kernel(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(3, 4, 5, 1)).astype(np.float32)
        layer = Conv3D(np.ones((1, 1, 1, 1, 1), np.float32), np.zeros(1, np.float32))
        y, _ = layer.forward(x)
        np.testing.assert_array_equal(y, x)

    def test_window_sum(self):
        x = np.ones((4, 4, 4, 1), np.float32)
        layer = Conv3D(np.ones((3, 3, 3, 1, 1), np.float32), np.zeros(1, np.float32),
                       padding="valid")
        y, _ = layer.forward(x)
        assert y.shape == (2, 2, 2, 1)
        np.testing.assert_allclose(y, 27.0)

    def test_matches_naive_oracle_same_stride2(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(5, 5, 5, 2)).astype(np.float32)
        layer = Conv3D.create(2, 3, stride=(2, 2, 2), padding="same", rng=rng)
        y, _ = layer.forward(x)
        expected = naive_conv3d(x, layer.kernels, layer.bias, (2, 2, 2), "same")
        assert y.shape == expected.shape
        np.testing.assert_allclose(y, expected, atol=1e-5)

    def test_matches_naive_oracle_valid(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(6, 5, 4, 2)).astype(np.float32)
        layer = Conv3D.create(2, 2, stride=(1, 2, 1), padding="valid", rng=rng)
        y, _ = layer.forward(x)
        expected = naive_conv3d(x, layer.kernels, layer.bias, (1, 2, 1), "valid")
        np.testing.assert_allclose(y, expected, atol=1e-5)

    @pytest.mark.parametrize("d", [4, 5, 7, 8])
    def test_same_padding_extent_arithmetic(self, d):
        assert conv_output_extent(d, 3, 1, "same") == d
        assert conv_output_extent(d, 3, 2, "same") == math.ceil(d / 2)

    def test_channel_mismatch(self):
        rng = np.random.default_rng(3)
        layer = Conv3D.create(2, 1, rng=rng)
        with pytest.raises(ShapeError):
            layer.forward(np.zeros((4, 4, 4, 3), np.float32))

    def test_collapsed_output_rejected(self):
        rng = np.random.default_rng(4)
        layer = Conv3D.create(1, 1, kernel=(3, 3, 3), padding="valid", rng=rng)
        with pytest.raises(ShapeError):
            layer.forward(np.zeros((2, 4, 4, 1), np.float32))

    def test_even_kernel_with_same_padding_rejected(self):
        with pytest.raises(ShapeError):
            Conv3D(np.ones((2, 3, 3, 1, 1), np.float32), np.zeros(1, np.float32))


class TestConv3DBackward:
    def test_zero_dy_gives_zero_grads(self):
        rng = np.random.default_rng(5)
        layer = Conv3D.create(1, 2, stride=(2, 2, 2), rng=rng)
        x = rng.normal(size=(4, 4, 4, 1)).astype(np.float32)
        y, cache = layer.forward(x)
        dx, grads = layer.backward(cache, np.zeros_like(y))
        assert not dx.any() and not grads["kernels"].any() and not grads["bias"].any()

    def test_scalar_chain_rule(self):
        x = np.float32([[[[3.0]]]])
        w = np.float32(2.0)
        layer = Conv3D(np.full((1, 1, 1, 1, 1), w), np.zeros(1, np.float32), stride=(1, 1, 1))
        y, cache = layer.forward(x)
        dy = np.float32([[[[5.0]]]])
        dx, grads = layer.backward(cache, dy)
        assert grads["kernels"].item() == pytest.approx(3.0 * 5.0)
        assert dx.item() == pytest.approx(2.0 * 5.0)

    @pytest.mark.parametrize("stride,padding", [((1, 1, 1), "same"), ((2, 2, 2), "same"),
                                                ((1, 1, 1), "valid")])
    def test_gradients_match_finite_differences(self, stride, padding):
        rng = np.random.default_rng(6)
        layer = Conv3D.create(2, 2, stride=stride, padding=padding, rng=rng)
        x = rng.normal(size=(4, 5, 4, 2)).astype(np.float32)

        def forward():
            return layer.forward(x)[0]

        def backward(w):
            _, cache = layer.forward(x)
            dx, grads = layer.backward(cache, w)
            return {"kernels": grads["kernels"], "bias": grads["bias"], "x": dx}

        check_layer_gradients(forward, backward,
                              {"kernels": layer.kernels, "bias": layer.bias, "x": x}, rng)


class TestMaxPool3D:
    def test_constant_input_first_index_tie(self):
        x = np.ones((4, 4, 4, 1), np.float32)
        pool = MaxPool3D()
        y, cache = pool.forward(x)
        np.testing.assert_allclose(y, 1.0)
        dy = np.ones_like(y)
        dx = pool.backward(cache, dy)
        # gradient lands on the first (lowest flat index) element of each window
        expected = np.zeros_like(x)
        expected[::2, ::2, ::2] = 1.0
        np.testing.assert_array_equal(dx, expected)

    def test_full_volume_window(self):
        x = np.arange(8, dtype=np.float32).reshape(2, 2, 2, 1)
        pool = MaxPool3D((2, 2, 2))
        y, cache = pool.forward(x)
        assert y.item() == 7.0
        dx = pool.backward(cache, np.float32([[[[2.5]]]]))
        expected = np.zeros_like(x)
        expected[1, 1, 1, 0] = 2.5
        np.testing.assert_array_equal(dx, expected)

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(6, 6, 6, 2)).astype(np.float32)
        pool = MaxPool3D((2, 2, 2))
        y, _ = pool.forward(x)
        np.testing.assert_array_equal(y, naive_maxpool3d(x, (2, 2, 2), (2, 2, 2)))

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(8)
        pool = MaxPool3D((2, 2, 2))
        x = distinct_pool_input(rng, (6, 6, 6, 2), (2, 2, 2), (2, 2, 2), margin=6 * FD_STEP)

        def forward():
            return pool.forward(x)[0]

        def backward(w):
            _, cache = pool.forward(x)
            return {"x": pool.backward(cache, w)}

        check_layer_gradients(forward, backward, {"x": x}, rng)

    def test_window_larger_than_input_rejected(self):
        with pytest.raises(ShapeError):
            MaxPool3D((2, 2, 2)).forward(np.zeros((4, 4, 1, 1), np.float32))


class TestDense:
    def test_identity_weights(self):
        layer = Dense(np.eye(3, dtype=np.float32), np.zeros(3, np.float32))
        x = np.float32([1.0, -2.0, 0.5])
        y, _ = layer.forward(x)
        np.testing.assert_array_equal(y, x)

    def test_hand_case(self):
        layer = Dense(np.eye(2, dtype=np.float32), np.ones(2, np.float32))
        y, _ = layer.forward(np.float32([1.0, 2.0]))
        np.testing.assert_array_equal(y, np.float32([2.0, 3.0]))

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(9)
        layer = Dense.create(5, 4, rng)
        x = rng.normal(size=5).astype(np.float32)

        def forward():
            return layer.forward(x)[0]

        def backward(w):
            _, cache = layer.forward(x)
            dx, grads = layer.backward(cache, w)
            return {"weights": grads["weights"], "bias": grads["bias"], "x": dx}

        check_layer_gradients(forward, backward,
                              {"weights": layer.weights, "bias": layer.bias, "x": x}, rng)

    def test_extent_mismatch(self):
        layer = Dense(np.zeros((3, 2), np.float32), np.zeros(2, np.float32))
        with pytest.raises(ShapeError):
            layer.forward(np.zeros(4, np.float32))


class TestReLU:
    def test_values(self):
        y, _ = relu_forward(np.float32([-1.0, 0.0, 2.0]))
        np.testing.assert_array_equal(y, np.float32([0.0, 0.0, 2.0]))

    def test_all_negative(self):
        x = -np.abs(np.random.default_rng(10).normal(size=8)).astype(np.float32) - 0.1
        y, cache = relu_forward(x)
        assert not y.any()
        assert not relu_backward(cache, np.ones_like(x)).any()

    def test_gradient_away_from_kink(self):
        rng = np.random.default_rng(11)
        x = rng.normal(size=16).astype(np.float32)
        x += np.sign(x) * np.float32(0.1)  # keep clear of the kink at 0

        def forward():
            return relu_forward(x)[0]

        def backward(w):
            _, cache = relu_forward(x)
            return {"x": relu_backward(cache, w)}

        check_layer_gradients(forward, backward, {"x": x}, rng)


class TestSoftmax:
    def test_equal_logits(self):
        np.testing.assert_allclose(softmax(np.zeros(3, np.float32)), 1.0 / 3.0, atol=1e-6)

    def test_closed_form(self):
        p = softmax(np.float32([0.0, math.log(2.0)]))
        np.testing.assert_allclose(p, [1.0 / 3.0, 2.0 / 3.0], atol=1e-6)

    def test_shift_invariance(self):
        rng = np.random.default_rng(12)
        logits = rng.normal(size=5).astype(np.float32)
        np.testing.assert_allclose(softmax(logits), softmax(logits + np.float32(10.0)), atol=1e-6)

    def test_probability_vector(self):
        rng = np.random.default_rng(13)
        for _ in range(20):
            p = softmax(rng.normal(scale=5.0, size=7).astype(np.float32))
            assert abs(float(p.sum()) - 1.0) < 1e-5
            assert np.all(p > 0.0) and np.all(p < 1.0)

    def test_backward_matches_finite_differences(self):
        rng = np.random.default_rng(14)
        logits = rng.normal(size=4).astype(np.float32)
        w = probe_weights((4,), rng)
        analytic = softmax_backward(softmax(logits), w)
        numeric = numerical_gradient(lambda: np.sum(softmax(logits) * w), logits)
        assert_grad_close(analytic, numeric, floor=0.02)


class TestDropout:
    def test_rate_zero_identity(self):
        x = np.random.default_rng(15).normal(size=100).astype(np.float32)
        layer = Dropout(0.0, rng_seed=1)
        for training in (True, False):
            y, _ = layer.forward(x, training)
            np.testing.assert_array_equal(y, x)

    def test_inference_identity(self):
        x = np.random.default_rng(16).normal(size=100).astype(np.float32)
        y, cache = Dropout(0.7, rng_seed=1).forward(x, training=False)
        np.testing.assert_array_equal(y, x)
        assert cache is None

    def test_inverted_scaling_keeps_mean(self):
        x = np.ones(100_000, np.float32)
        y, _ = Dropout(0.1, rng_seed=2).forward(x, training=True)
        assert 0.98 <= float(y.mean()) <= 1.02

    def test_mask_reused_by_backward(self):
        x = np.random.default_rng(17).normal(size=1000).astype(np.float32)
        layer = Dropout(0.4, rng_seed=3)
        y, mask = layer.forward(x, training=True)
        dy = np.ones_like(x)
        dx = layer.backward(mask, dy)
        np.testing.assert_array_equal(dx == 0.0, y == 0.0)

    def test_fixed_mask_gradient(self):
        rng = np.random.default_rng(18)
        x = rng.normal(size=50).astype(np.float32)
        mask = rng.random(50) >= 0.3

        def forward():
            return Dropout.apply_mask(x, mask, 0.3)

        def backward(w):
            return {"x": Dropout.apply_mask(w, mask, 0.3)}

        check_layer_gradients(forward, backward, {"x": x}, rng)

    def test_rate_one_rejected(self):
        with pytest.raises(ValueError):
            Dropout(1.0)


class _DenseRelu:
    """Minimal inner block for exercising the time-distributed wrapper."""

    def __init__(self, rng):
        self.dense = Dense.create(6, 3, rng)

    def forward(self, frame):
        y, c_dense = self.dense.forward(frame.reshape(-1))
        a, c_relu = relu_forward(y)
        return a, (c_dense, c_relu)

    def backward(self, cache, dy):
        c_dense, c_relu = cache
        dx, grads = self.dense.backward(c_dense, relu_backward(c_relu, dy))
        return dx.reshape(1, 2, 3, 1), {"weights": grads["weights"], "bias": grads["bias"]}


class TestTimeDistributed:
    def _make(self, seed=19):
        rng = np.random.default_rng(seed)
        return TimeDistributed(_DenseRelu(rng)), rng

    def test_single_frame_equals_direct(self):
        td, rng = self._make()
        x = rng.normal(size=(1, 1, 2, 3, 1)).astype(np.float32)
        out, _ = td.forward(x)
        direct, _ = td.inner.forward(x[0])
        np.testing.assert_array_equal(out[0], direct)

    def test_identical_frames_identical_rows(self):
        td, rng = self._make()
        frame = rng.normal(size=(1, 2, 3, 1)).astype(np.float32)
        out, _ = td.forward(np.stack([frame, frame]))
        np.testing.assert_array_equal(out[0], out[1])

    def test_permuting_frames_permutes_rows(self):
        td, rng = self._make()
        x = rng.normal(size=(4, 1, 2, 3, 1)).astype(np.float32)
        perm = np.array([2, 0, 3, 1])
        out, _ = td.forward(x)
        out_perm, _ = td.forward(x[perm])
        np.testing.assert_array_equal(out_perm, out[perm])

    def test_parameter_grads_sum_over_frames(self):
        td, rng = self._make()
        x = rng.normal(size=(3, 1, 2, 3, 1)).astype(np.float32)

        def forward():
            return td.forward(x)[0]

        def backward(w):
            _, caches = td.forward(x)
            dxs, grads = td.backward(caches, w)
            return {"weights": grads["weights"], "bias": grads["bias"], "x": dxs}

        check_layer_gradients(forward, backward,
                              {"weights": td.inner.dense.weights,
                               "bias": td.inner.dense.bias, "x": x}, rng)

    def test_frame_index_in_error(self):
        td, rng = self._make()
        bad = np.zeros((2, 1, 2, 4, 1), np.float32)  # wrong frame width
        with pytest.raises(ShapeError, match="frame 0"):
            td.forward(bad)
