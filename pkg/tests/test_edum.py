import numpy as np
import pytest

from evalign.edum import (
    EdumParams,
    conv2d,
    edum_forward,
    global_average_pool,
    modulated_kernel,
    sigmoid,
    spatial_attention,
    transposed_conv2d,
    transposed_output_size,
)
from evalign.errors import ShapeMismatch
from oracles import transposed_conv_direct


def with_attention_bias(params, bias):
    return EdumParams(params.kernel, params.mod_weight, params.mod_bias, np.zeros_like(params.att_weight), bias)


class TestTransposedConv:
    def test_single_pixel_keeps_centre_adjacent_taps(self, rng):
        k = rng.normal(size=(1, 1, 3, 3))
        out = transposed_conv2d(np.array([[[2.5]]]), k)
        assert out.shape == (1, 2, 2)
        assert np.array_equal(out[0], 2.5 * k[0, 0, 1:, 1:])

    def test_impulse_reproduces_kernel(self, rng):
        k = rng.normal(size=(1, 1, 3, 3))
        x = np.zeros((1, 4, 4))
        x[0, 0, 0] = 1.0
        full = transposed_conv2d(x, k, stride=2, padding=0, output_padding=0)
        assert np.array_equal(full[0, :3, :3], k[0, 0])
        assert not full[0, 3:].any() and not full[0, :, 3:].any()

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_direct_summation(self, seed):
        rng = np.random.default_rng(seed)
        c_in, c_out = rng.integers(1, 4, 2)
        x = rng.normal(size=(c_in, 8, 8))
        w = rng.normal(size=(c_in, c_out, 3, 3))
        got = transposed_conv2d(x, w)
        np.testing.assert_allclose(got, transposed_conv_direct(x, w, 2, 1, 1), rtol=0, atol=1e-10)

    @pytest.mark.parametrize("geometry", [(1, 0, 0), (2, 0, 1), (3, 2, 1), (2, 1, 0)])
    def test_other_geometries(self, rng, geometry):
        stride, padding, output_padding = geometry
        x = rng.normal(size=(2, 5, 6))
        w = rng.normal(size=(2, 3, 3, 3))
        got = transposed_conv2d(x, w, stride, padding, output_padding)
        ref = transposed_conv_direct(x, w, stride, padding, output_padding)
        np.testing.assert_allclose(got, ref, rtol=0, atol=1e-10)

    def test_output_size_formula(self):
        assert transposed_output_size(8, 3, 2, 1, 1) == 16
        assert transposed_output_size(1, 3, 2, 1, 1) == 2

    @pytest.mark.parametrize("seed", range(10))
    def test_adjoint_of_strided_convolution(self, seed):
        rng = np.random.default_rng(seed)
        c_big, c_small, h, w = 3, 2, int(rng.integers(2, 9)), int(rng.integers(2, 9))
        weight = rng.normal(size=(c_small, c_big, 3, 3))
        x = rng.normal(size=(c_big, 2 * h, 2 * w))
        y = rng.normal(size=(c_small, h, w))
        lhs = np.sum(conv2d(x, weight, stride=2, padding=1) * y)
        rhs = np.sum(x * transposed_conv2d(y, weight))
        assert abs(lhs - rhs) <= 1e-8 * max(1.0, abs(lhs))

    def test_bias_and_batch_axis(self, rng):
        x = rng.normal(size=(1, 2, 3, 3))
        w = rng.normal(size=(2, 2, 3, 3))
        out = transposed_conv2d(x, w, bias=[1.0, -1.0])
        np.testing.assert_array_equal(out, transposed_conv2d(x[0], w) + np.array([1.0, -1.0])[:, None, None])

    def test_shape_errors(self, rng):
        with pytest.raises(ShapeMismatch):
            transposed_conv2d(rng.normal(size=(2, 3, 3)), rng.normal(size=(3, 2, 3, 3)))
        with pytest.raises(ShapeMismatch):
            transposed_conv2d(rng.normal(size=(2, 2, 3, 3)), rng.normal(size=(2, 2, 3, 3)))


class TestEdum:
    def test_output_doubles_resolution(self, rng):
        params = EdumParams.init(4, seed=0)
        out = edum_forward(rng.normal(size=(4, 8, 8)), rng.normal(size=(4, 16, 16)), params)
        assert out.shape == (4, 16, 16)

    @pytest.mark.parametrize("hw", [(1, 1), (3, 5), (7, 2)])
    def test_output_dims_exact(self, rng, hw):
        h, w = hw
        out = edum_forward(rng.normal(size=(2, h, w)), rng.normal(size=(2, 2 * h, 2 * w)), EdumParams.init(2))
        assert out.shape == (2, 2 * h, 2 * w)

    def test_suppressed_attention_is_plain_deconvolution(self, rng):
        params = with_attention_bias(EdumParams.init(3, seed=1), -40.0)
        ev = rng.normal(size=(3, 5, 5))
        out = edum_forward(ev, rng.normal(size=(3, 10, 10)), params)
        plain = transposed_conv2d(ev, params.kernel)
        assert np.abs(out - plain).max() < 1e-6

    def test_saturated_attention_doubles(self, rng):
        params = with_attention_bias(EdumParams.init(3, seed=1), 40.0)
        ev = rng.normal(size=(3, 5, 5))
        out = edum_forward(ev, rng.normal(size=(3, 10, 10)), params)
        assert np.abs(out - 2 * transposed_conv2d(ev, params.kernel)).max() < 1e-6

    def test_identity_modulation(self, rng):
        params = EdumParams.init(3, seed=2)
        assert np.array_equal(modulated_kernel(rng.normal(size=(3, 4, 4)), params), params.kernel)

    def test_modulation_scales_input_channels(self, rng):
        base = EdumParams.init(2, seed=0)
        params = EdumParams(base.kernel, np.eye(2), np.zeros(2), base.att_weight)
        ev = np.stack([np.full((3, 3), 2.0), np.full((3, 3), -0.5)])
        k = modulated_kernel(ev, params)
        np.testing.assert_allclose(k[0], 2.0 * base.kernel[0])
        np.testing.assert_allclose(k[1], -0.5 * base.kernel[1])

    def test_pooling_is_homogeneous(self, rng):
        x = rng.normal(size=(4, 6, 7))
        np.testing.assert_allclose(global_average_pool(3.5 * x), 3.5 * global_average_pool(x), rtol=1e-14)
        np.testing.assert_allclose(global_average_pool(x), x.mean(axis=(1, 2)))

    def test_attention_in_open_unit_interval(self, rng):
        params = EdumParams.init(3, seed=4)
        att = spatial_attention(10 * rng.normal(size=(3, 12, 12)), params)
        assert att.shape == (12, 12)
        assert np.all((att > 0) & (att < 1))

    def test_attention_uses_mean_and_max(self):
        base = EdumParams.init(2, seed=0)
        w = np.zeros((1, 2, 7, 7))
        w[0, 1, 3, 3] = 1.0   # centre tap on the channel-max plane
        params = EdumParams(base.kernel, base.mod_weight, base.mod_bias, w)
        rgb = np.zeros((2, 4, 4))
        rgb[1, 2, 2] = 3.0
        att = spatial_attention(rgb, params)
        assert att[2, 2] == pytest.approx(sigmoid(3.0))
        assert att[0, 0] == 0.5

    def test_sigmoid_is_stable(self):
        s = sigmoid(np.array([-800.0, 0.0, 800.0]))
        assert np.array_equal(s, [0.0, 0.5, 1.0])

    def test_shape_checks(self, rng):
        params = EdumParams.init(2)
        with pytest.raises(ShapeMismatch):
            edum_forward(rng.normal(size=(2, 4, 4)), rng.normal(size=(2, 8, 9)), params)
        with pytest.raises(ShapeMismatch):
            edum_forward(rng.normal(size=(3, 4, 4)), rng.normal(size=(3, 8, 8)), params)
        with pytest.raises(ShapeMismatch):
            EdumParams(np.zeros((2, 3, 3, 3)), np.zeros((2, 2)), np.ones(2), np.zeros((1, 2, 7, 7)))

    def test_tensor_round_trip(self):
        params = EdumParams.init(3, seed=5)
        back = EdumParams.from_tensors(params.tensors())
        for name in ("kernel", "mod_weight", "mod_bias", "att_weight"):
            assert np.array_equal(getattr(back, name), getattr(params, name))
        assert back.att_bias == params.att_bias


def test_conv2d_matches_loops(rng):
    x = rng.normal(size=(2, 5, 6))
    w = rng.normal(size=(3, 2, 3, 3))
    got = conv2d(x, w, padding=1)
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    ref = np.zeros((3, 5, 6))
    for o in range(3):
        for i in range(5):
            for j in range(6):
                ref[o, i, j] = np.sum(xp[:, i:i + 3, j:j + 3] * w[o])
    np.testing.assert_allclose(got, ref, atol=1e-12)
