"""Kernel contracts checked against scalar-math oracles."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sweepsplat.errors import ShapeError
from sweepsplat.kernels import (
    MlpSpec,
    SeededRng,
    bilinear_sample,
    bilinear_upsample_x2,
    conv1d,
    conv2d,
    conv3d,
    finite_difference_probe,
    l2_normalize,
    mlp_forward,
    scaled_sigmoid_2,
    sigmoid,
    softmax_axis,
    softplus,
    trilinear_upsample_x2,
)


def conv2d_oracle(x, w, b, stride=1):
    """Direct quadruple-loop convolution with same padding."""
    c_out, c_in, k, _ = w.shape
    p = k // 2
    xp = np.pad(np.asarray(x, dtype=np.float64), ((0, 0), (p, p), (p, p)))
    h_out = (x.shape[1] + 2 * p - k) // stride + 1
    w_out = (x.shape[2] + 2 * p - k) // stride + 1
    out = np.zeros((c_out, h_out, w_out))
    for o in range(c_out):
        for i in range(h_out):
            for j in range(w_out):
                acc = 0.0
                for c in range(c_in):
                    for a in range(k):
                        for bb in range(k):
                            acc += xp[c, i * stride + a, j * stride + bb] * float(w[o, c, a, bb])
                out[o, i, j] = acc + (float(b[o]) if b is not None else 0.0)
    return out


def conv3d_oracle(x, w, b):
    c_out, c_in, k = w.shape[0], w.shape[1], w.shape[2]
    p = k // 2
    xp = np.pad(np.asarray(x, dtype=np.float64), ((0, 0), (p, p), (p, p), (p, p)))
    out = np.zeros((c_out,) + x.shape[1:])
    for o in range(c_out):
        for d in range(x.shape[1]):
            for i in range(x.shape[2]):
                for j in range(x.shape[3]):
                    acc = 0.0
                    for c in range(c_in):
                        for a in range(k):
                            for bb in range(k):
                                for cc in range(k):
                                    acc += xp[c, d + a, i + bb, j + cc] * float(w[o, c, a, bb, cc])
                    out[o, d, i, j] = acc + float(b[o])
    return out


class TestConv2d:
    def test_all_ones_same_padding(self):
        """Constant field: center sums 9 taps, corner sums 4."""
        x = np.ones((1, 3, 3), dtype=np.float32)
        w = np.ones((1, 1, 3, 3), dtype=np.float32)
        out = conv2d(x, w)
        assert out[0, 1, 1] == pytest.approx(9.0)
        assert out[0, 0, 0] == pytest.approx(4.0)

    def test_identity_kernel_passthrough(self, rng):
        x = rng.standard_normal((2, 5, 7)).astype(np.float32)
        w = np.zeros((2, 2, 3, 3), dtype=np.float32)
        for c in range(2):
            w[c, c, 1, 1] = 1.0
        np.testing.assert_allclose(conv2d(x, w), x, atol=1e-7)

    def test_matches_loop_oracle(self, rng):
        for _ in range(5):
            x = rng.standard_normal((2, 5, 5)).astype(np.float32)
            w = rng.standard_normal((3, 2, 3, 3)).astype(np.float32)
            b = rng.standard_normal(3).astype(np.float32)
            got = conv2d(x, w, b)
            want = conv2d_oracle(x, w, b)
            np.testing.assert_allclose(got, want, rtol=1e-6, atol=1e-6)

    def test_strided_matches_oracle(self, rng):
        x = rng.standard_normal((2, 6, 8)).astype(np.float32)
        w = rng.standard_normal((4, 2, 3, 3)).astype(np.float32)
        b = rng.standard_normal(4).astype(np.float32)
        got = conv2d(x, w, b, stride=2)
        want = conv2d_oracle(x, w, b, stride=2)
        assert got.shape == (4, 3, 4)
        np.testing.assert_allclose(got, want, rtol=1e-6, atol=1e-6)

    def test_channel_mismatch_names_axis(self, rng):
        x = rng.standard_normal((2, 4, 4)).astype(np.float32)
        w = rng.standard_normal((1, 3, 3, 3)).astype(np.float32)
        with pytest.raises(ShapeError, match="axis 1"):
            conv2d(x, w)

    def test_even_kernel_rejected_for_same_padding(self, rng):
        x = rng.standard_normal((1, 4, 4)).astype(np.float32)
        w = rng.standard_normal((1, 1, 2, 2)).astype(np.float32)
        with pytest.raises(ShapeError, match="odd"):
            conv2d(x, w)


class TestConv3d:
    def test_identity_kernel(self, rng):
        x = rng.standard_normal((1, 3, 3, 3)).astype(np.float32)
        w = np.zeros((1, 1, 1, 1, 1), dtype=np.float32)
        w[0, 0, 0, 0, 0] = 1.0
        np.testing.assert_allclose(conv3d(x, w), x, atol=1e-7)

    def test_all_ones_center(self):
        x = np.ones((1, 3, 3, 3), dtype=np.float32)
        w = np.ones((1, 1, 3, 3, 3), dtype=np.float32)
        assert conv3d(x, w)[0, 1, 1, 1] == pytest.approx(27.0)

    def test_matches_loop_oracle(self, rng):
        x = rng.standard_normal((2, 4, 4, 4)).astype(np.float32)
        w = rng.standard_normal((2, 2, 3, 3, 3)).astype(np.float32)
        b = rng.standard_normal(2).astype(np.float32)
        np.testing.assert_allclose(conv3d(x, w, b), conv3d_oracle(x, w, b), rtol=1e-6, atol=1e-6)


class TestConv1d:
    def test_identity_kernel(self, rng):
        x = rng.standard_normal((3, 9)).astype(np.float32)
        w = np.zeros((3, 3, 3), dtype=np.float32)
        for c in range(3):
            w[c, c, 1] = 1.0
        np.testing.assert_allclose(conv1d(x, w), x, atol=1e-7)

    def test_ones_kernel_constant_input(self):
        x = np.full((1, 6), 2.0, dtype=np.float32)
        w = np.ones((1, 1, 3), dtype=np.float32)
        out = conv1d(x, w)
        np.testing.assert_allclose(out[0, 1:-1], 6.0, atol=1e-6)
        assert out[0, 0] == pytest.approx(4.0)

    def test_matches_loop_oracle(self, rng):
        x = rng.standard_normal((2, 7)).astype(np.float32)
        w = rng.standard_normal((3, 2, 3)).astype(np.float32)
        b = rng.standard_normal(3).astype(np.float32)
        want = np.zeros((3, 7))
        xp = np.pad(x.astype(np.float64), ((0, 0), (1, 1)))
        for o in range(3):
            for i in range(7):
                acc = 0.0
                for c in range(2):
                    for a in range(3):
                        acc += xp[c, i + a] * float(w[o, c, a])
                want[o, i] = acc + float(b[o])
        np.testing.assert_allclose(conv1d(x, w, b), want, rtol=1e-6, atol=1e-6)


class TestBilinearSample:
    def test_exact_on_lattice(self, rng):
        feat = rng.standard_normal((2, 4, 6)).astype(np.float32)
        xx, yy = np.meshgrid(np.arange(6.0), np.arange(4.0))
        out = bilinear_sample(feat, np.stack([xx, yy]))
        np.testing.assert_allclose(out, feat, atol=1e-7)

    def test_center_of_2x2_is_mean(self):
        feat = np.array([[[0.0, 1.0], [2.0, 3.0]]], dtype=np.float32)
        out = bilinear_sample(feat, np.array([[[0.5]], [[0.5]]]))
        assert out[0, 0, 0] == pytest.approx(1.5)

    def test_matches_scalar_formula(self, rng):
        feat = rng.standard_normal((3, 5, 7)).astype(np.float32)
        coords = np.stack([rng.uniform(0, 6, (4, 4)), rng.uniform(0, 4, (4, 4))])
        got = bilinear_sample(feat, coords)
        for i in range(4):
            for j in range(4):
                x, y = coords[0, i, j], coords[1, i, j]
                x0, y0 = int(np.floor(x)), int(np.floor(y))
                fx, fy = x - x0, y - y0
                x1, y1 = min(x0 + 1, 6), min(y0 + 1, 4)
                for c in range(3):
                    want = (
                        float(feat[c, y0, x0]) * (1 - fx) * (1 - fy)
                        + float(feat[c, y0, x1]) * fx * (1 - fy)
                        + float(feat[c, y1, x0]) * (1 - fx) * fy
                        + float(feat[c, y1, x1]) * fx * fy
                    )
                    assert got[c, i, j] == pytest.approx(want, abs=1e-6)

    def test_out_of_bounds_zero_with_mask(self, rng):
        feat = rng.standard_normal((1, 4, 4)).astype(np.float32) + 5.0
        coords = np.array([[[-0.5, 1.0, 5.0]], [[1.0, -0.2, 1.0]]])
        out, mask = bilinear_sample(feat, coords, return_mask=True)
        np.testing.assert_array_equal(mask, [[False, False, False]])
        np.testing.assert_array_equal(out, np.zeros((1, 1, 3), dtype=np.float32))

    def test_linear_along_axis(self, rng):
        """Sampling at a midpoint equals the mean of the two axis neighbours."""
        feat = rng.standard_normal((1, 5, 5)).astype(np.float32)
        mid = bilinear_sample(feat, np.array([[[2.5]], [[3.0]]]))[0, 0, 0]
        assert mid == pytest.approx(0.5 * (feat[0, 3, 2] + feat[0, 3, 3]), abs=1e-6)


class TestUpsample:
    def test_constant_preserved(self):
        x = np.full((2, 3, 4), 1.25, dtype=np.float32)
        np.testing.assert_allclose(bilinear_upsample_x2(x), 1.25, atol=1e-7)

    def test_single_pixel(self):
        x = np.array([[[3.0]]], dtype=np.float32)
        np.testing.assert_allclose(bilinear_upsample_x2(x), np.full((1, 2, 2), 3.0), atol=1e-7)

    def test_matches_per_pixel_formula(self, rng):
        x = rng.standard_normal((1, 3, 3)).astype(np.float32)
        got = bilinear_upsample_x2(x)
        x64 = x.astype(np.float64)
        for i in range(6):
            for j in range(6):
                sy = (i + 0.5) / 2 - 0.5
                sx = (j + 0.5) / 2 - 0.5
                y0, x0 = int(np.floor(sy)), int(np.floor(sx))
                fy, fx = sy - y0, sx - x0
                y0c, y1c = np.clip([y0, y0 + 1], 0, 2)
                x0c, x1c = np.clip([x0, x0 + 1], 0, 2)
                want = (
                    x64[0, y0c, x0c] * (1 - fx) * (1 - fy)
                    + x64[0, y0c, x1c] * fx * (1 - fy)
                    + x64[0, y1c, x0c] * (1 - fx) * fy
                    + x64[0, y1c, x1c] * fx * fy
                )
                assert got[0, i, j] == pytest.approx(want, abs=1e-6)

    def test_trilinear_constant(self):
        x = np.full((1, 2, 3, 2), -0.5, dtype=np.float32)
        out = trilinear_upsample_x2(x)
        assert out.shape == (1, 4, 6, 4)
        np.testing.assert_allclose(out, -0.5, atol=1e-7)


class TestSoftmax:
    def test_two_equal_logits(self):
        out = softmax_axis(np.zeros((2, 1), dtype=np.float32), axis=0)
        np.testing.assert_allclose(out, 0.5, atol=1e-7)

    def test_log3_quarters(self):
        out = softmax_axis(np.array([0.0, np.log(3.0)], dtype=np.float32), axis=0)
        np.testing.assert_allclose(out, [0.25, 0.75], atol=1e-6)

    def test_matches_exp_sum_oracle(self, rng):
        x = rng.standard_normal((5, 3, 4)).astype(np.float32)
        got = softmax_axis(x, axis=0)
        e = np.exp(x.astype(np.float64))
        np.testing.assert_allclose(got, e / e.sum(axis=0), atol=1e-6)

    @given(st.integers(0, 2**32 - 1), st.floats(-50, 50))
    @settings(max_examples=30, deadline=None)
    def test_sums_to_one_and_shift_invariant(self, seed, shift):
        r = np.random.default_rng(seed)
        x = r.standard_normal((6, 2, 2)).astype(np.float32) * 10
        p = softmax_axis(x, axis=0)
        np.testing.assert_allclose(p.sum(axis=0), 1.0, atol=1e-6)
        p_shifted = softmax_axis(x + np.float32(shift), axis=0)
        np.testing.assert_allclose(p, p_shifted, atol=1e-6)


class TestActivations:
    def test_closed_forms_at_reference_points(self):
        for x in (-1.0, 0.0, 1.0):
            xs = np.array([x], dtype=np.float32)
            assert sigmoid(xs)[0] == pytest.approx(1.0 / (1.0 + np.exp(-x)), abs=1e-6)
            assert softplus(xs)[0] == pytest.approx(np.log1p(np.exp(x)), abs=1e-6)
            assert scaled_sigmoid_2(xs)[0] == pytest.approx(2.0 / (1.0 + np.exp(-x)), abs=1e-6)

    def test_sigmoid_at_zero(self):
        assert sigmoid(np.zeros(1, dtype=np.float32))[0] == 0.5

    def test_softplus_at_zero(self):
        assert softplus(np.zeros(1, dtype=np.float32))[0] == pytest.approx(np.log(2.0), abs=1e-6)

    def test_l2_normalize_345(self):
        out = l2_normalize(np.array([3.0, 4.0], dtype=np.float32))
        np.testing.assert_allclose(out, [0.6, 0.8], atol=1e-7)

    def test_l2_normalize_zero_vector_raises(self):
        with pytest.raises(ValueError, match="zero vector"):
            l2_normalize(np.zeros(3, dtype=np.float32))

    def test_ranges(self, rng):
        x = (rng.standard_normal(100) * 20).astype(np.float32)
        s = sigmoid(x)
        assert np.all(s >= 0) and np.all(s <= 1)
        assert np.all(softplus(x) >= 0)
        s2 = scaled_sigmoid_2(x)
        assert np.all(s2 >= 0) and np.all(s2 <= 2)
        assert scaled_sigmoid_2(np.zeros(1, dtype=np.float32))[0] == 1.0


class TestMlp:
    def test_identity_single_layer(self, rng):
        x = rng.standard_normal((4, 3)).astype(np.float32)
        spec = MlpSpec(widths=(3, 3))
        layers = [(np.eye(3, dtype=np.float32), np.zeros(3, dtype=np.float32))]
        np.testing.assert_allclose(mlp_forward(spec, layers, x), x, atol=1e-7)

    def test_zero_weights_sigmoid_head(self, rng):
        x = rng.standard_normal((5, 4)).astype(np.float32)
        spec = MlpSpec(widths=(4, 2), output_activation="sigmoid")
        layers = [(np.zeros((2, 4), dtype=np.float32), np.zeros(2, dtype=np.float32))]
        np.testing.assert_allclose(mlp_forward(spec, layers, x), 0.5, atol=1e-7)

    def test_two_layer_matches_matrix_oracle(self, rng):
        x = rng.standard_normal((6, 5)).astype(np.float32)
        w1 = rng.standard_normal((8, 5)).astype(np.float32)
        b1 = rng.standard_normal(8).astype(np.float32)
        w2 = rng.standard_normal((3, 8)).astype(np.float32)
        b2 = rng.standard_normal(3).astype(np.float32)
        spec = MlpSpec(widths=(5, 8, 3))
        got = mlp_forward(spec, [(w1, b1), (w2, b2)], x)
        h = np.maximum(x.astype(np.float64) @ w1.T.astype(np.float64) + b1, 0.0)
        want = h @ w2.T.astype(np.float64) + b2
        np.testing.assert_allclose(got, want, rtol=1e-5, atol=1e-6)

    def test_batch_shape_passthrough(self, rng):
        x = rng.standard_normal((2, 3, 4)).astype(np.float32)
        spec = MlpSpec(widths=(4, 2))
        layers = [(rng.standard_normal((2, 4)).astype(np.float32), np.zeros(2, dtype=np.float32))]
        assert mlp_forward(spec, layers, x).shape == (2, 3, 2)

    def test_spec_needs_a_layer(self):
        with pytest.raises(ShapeError):
            MlpSpec(widths=(4,))


class TestFiniteDifference:
    def test_gradient_of_sum_is_ones(self, rng):
        x = rng.standard_normal((2, 3)).astype(np.float32)
        grad = finite_difference_probe(lambda a: float(np.sum(a)), x)
        np.testing.assert_allclose(grad, 1.0, atol=1e-3)

    def test_gradient_of_half_norm_is_x(self, rng):
        x = rng.standard_normal(5).astype(np.float32)
        grad = finite_difference_probe(lambda a: 0.5 * float(np.sum(a.astype(np.float64) ** 2)), x, eps=1e-3)
        np.testing.assert_allclose(grad, x, atol=1e-4)


class TestSeededRng:
    def test_same_name_same_bits(self):
        a = SeededRng(7).uniform_init("fpn.conv.weight", (4, 4), 16)
        b = SeededRng(7).uniform_init("fpn.conv.weight", (4, 4), 16)
        assert np.array_equal(a, b)

    def test_different_names_differ(self):
        a = SeededRng(7).uniform_init("a", (8,), 4)
        b = SeededRng(7).uniform_init("b", (8,), 4)
        assert not np.array_equal(a, b)

    def test_draw_order_independent(self):
        r1 = SeededRng(3)
        _ = r1.uniform_init("first", (4,), 2)
        x1 = r1.uniform_init("second", (4,), 2)
        x2 = SeededRng(3).uniform_init("second", (4,), 2)
        assert np.array_equal(x1, x2)

    def test_bound_respects_fan_in(self):
        x = SeededRng(0).uniform_init("w", (1000,), 16)
        assert np.max(np.abs(x)) <= np.sqrt(1.0 / 16) + 1e-7


class TestKernelDeterminism:
    def test_conv2d_bit_identical_across_runs(self, rng):
        x = rng.standard_normal((3, 8, 8)).astype(np.float32)
        w = rng.standard_normal((4, 3, 3, 3)).astype(np.float32)
        assert np.array_equal(conv2d(x, w), conv2d(x, w))

    def test_all_kernels_finite_on_finite_input(self, rng):
        x = (rng.standard_normal((2, 6, 6)) * 100).astype(np.float32)
        w = rng.standard_normal((2, 2, 3, 3)).astype(np.float32)
        for out in (conv2d(x, w), bilinear_upsample_x2(x), softmax_axis(x, 0), sigmoid(x), softplus(x)):
            assert np.all(np.isfinite(out))
