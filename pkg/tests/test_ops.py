"""
Tests for the differentiable primitives against closed forms and
brute-force loop oracles.
"""

import numpy as np
import pytest

from src.errors import DimensionError, DomainError, ParameterError
from src.ndarr import ops
from src.ndarr.rng import RngStream
from src.ndarr.tensor import Tensor


def _conv_loop(x, w, b, stride, padding):
    """Direct quadruple-loop cross-correlation in float64."""
    x = np.pad(x.astype(np.float64), ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    batch, c_in, h, width = x.shape
    c_out, _, k, _ = w.shape
    out_h = (h - k) // stride + 1
    out_w = (width - k) // stride + 1
    out = np.zeros((batch, c_out, out_h, out_w))
    for n in range(batch):
        for o in range(c_out):
            for i in range(out_h):
                for j in range(out_w):
                    patch = x[n, :, i * stride:i * stride + k, j * stride:j * stride + k]
                    out[n, o, i, j] = np.sum(patch * w[o]) + b[o]
    return out


def _matmul_loop(x, w, b):
    out = np.zeros((x.shape[0], w.shape[1]))
    for i in range(x.shape[0]):
        for j in range(w.shape[1]):
            out[i, j] = sum(float(x[i, k]) * float(w[k, j]) for k in range(x.shape[1])) + b[j]
    return out


# =============================================================================
# conv2d
# =============================================================================

class TestConv2d:
    def test_identity_kernel(self, rng):
        x = rng.normal(shape=(1, 1, 4, 4))
        out = ops.conv2d(Tensor(x), Tensor(np.ones((1, 1, 1, 1))), Tensor(np.zeros(1)))
        np.testing.assert_allclose(out.data, x.astype(np.float32))

    def test_all_ones_kernel_on_constant_field(self):
        x = np.full((1, 1, 5, 5), 2.0)
        out = ops.conv2d(Tensor(x), Tensor(np.ones((1, 1, 3, 3))), Tensor(np.zeros(1)))
        assert out.shape == (1, 1, 3, 3)
        np.testing.assert_allclose(out.data, 18.0)

    def test_matches_loop_oracle(self, rng):
        x = rng.normal(shape=(1, 2, 5, 5)).astype(np.float32)
        w = rng.normal(shape=(3, 2, 3, 3)).astype(np.float32)
        b = rng.normal(shape=3).astype(np.float32)
        out = ops.conv2d(Tensor(x), Tensor(w), Tensor(b))
        np.testing.assert_allclose(out.data, _conv_loop(x, w, b, 1, 0), rtol=1e-5, atol=1e-5)

    @pytest.mark.parametrize("seed", range(20))
    def test_seeded_cases_match_loop_oracle(self, seed):
        r = RngStream(seed)
        c_in, c_out = (int(v) for v in r.integers(1, 4, shape=2))
        k = int(r.integers(0, 2)) * 2 + 1
        stride = int(r.integers(1, 3))
        padding = int(r.integers(0, 2))
        h, w_ = (int(v) for v in r.integers(k, 8, shape=2))
        x = r.normal(shape=(2, c_in, h, w_)).astype(np.float32)
        w = r.normal(shape=(c_out, c_in, k, k)).astype(np.float32)
        b = r.normal(shape=c_out).astype(np.float32)
        out = ops.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, padding=padding)
        expected = _conv_loop(x, w, b, stride, padding)
        assert out.shape == expected.shape
        np.testing.assert_allclose(out.data, expected, rtol=1e-5, atol=1e-5)

    def test_output_extent(self):
        out = ops.conv2d(Tensor(np.zeros((1, 1, 7, 6))), Tensor(np.zeros((2, 1, 3, 3))), Tensor(np.zeros(2)),
                         stride=2, padding=1)
        # floor((H + 2p - k) / s) + 1
        assert out.shape == (1, 2, 4, 3)

    def test_channel_mismatch(self):
        with pytest.raises(DimensionError):
            ops.conv2d(Tensor(np.zeros((1, 2, 5, 5))), Tensor(np.zeros((1, 3, 3, 3))), Tensor(np.zeros(1)))

    def test_even_kernel_rejected(self):
        with pytest.raises(ParameterError):
            ops.conv2d(Tensor(np.zeros((1, 1, 5, 5))), Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros(1)))

    def test_input_smaller_than_kernel(self):
        with pytest.raises(DimensionError):
            ops.conv2d(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 3, 3))), Tensor(np.zeros(1)))


# =============================================================================
# linear
# =============================================================================

class TestLinear:
    def test_identity_weight(self, rng):
        x = rng.normal(shape=(2, 3))
        out = ops.linear(Tensor(x), Tensor(np.eye(3)), Tensor(np.zeros(3)))
        np.testing.assert_allclose(out.data, x.astype(np.float32))

    def test_zero_weight_gives_bias_rows(self):
        b = np.array([1.0, -2.0, 0.5, 3.0])
        out = ops.linear(Tensor(np.ones((2, 3))), Tensor(np.zeros((3, 4))), Tensor(b))
        np.testing.assert_allclose(out.data, np.tile(b, (2, 1)))

    @pytest.mark.parametrize("seed", range(20))
    def test_matches_loop_oracle(self, seed):
        r = RngStream(seed)
        x = r.normal(shape=(2, 3)).astype(np.float32)
        w = r.normal(shape=(3, 4)).astype(np.float32)
        b = r.normal(shape=4).astype(np.float32)
        out = ops.linear(Tensor(x), Tensor(w), Tensor(b))
        np.testing.assert_allclose(out.data, _matmul_loop(x, w, b), rtol=1e-5, atol=1e-6)

    def test_inner_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            ops.linear(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))), Tensor(np.zeros(2)))


# =============================================================================
# softmax
# =============================================================================

class TestSoftmax:
    def test_uniform_input(self):
        out = ops.softmax(Tensor([0.7, 0.7, 0.7]), axis=0)
        np.testing.assert_allclose(out.data, [1 / 3] * 3, atol=1e-7)

    def test_closed_form(self):
        out = ops.softmax(Tensor([0.0, np.log(3.0)]), axis=0)
        np.testing.assert_allclose(out.data, [0.25, 0.75], atol=1e-6)

    def test_matches_extended_precision_oracle(self, rng):
        x = rng.normal(shape=7).astype(np.float32)
        e = np.exp(x.astype(np.longdouble))
        expected = (e / e.sum()).astype(np.float64)
        np.testing.assert_allclose(ops.softmax(Tensor(x), axis=0).data, expected, atol=1e-6)

    def test_large_magnitudes_still_normalised(self, rng):
        x = rng.normal(0.0, 100.0, shape=(4, 9))
        out = ops.softmax(Tensor(x), axis=1).data
        assert (out >= 0).all()
        np.testing.assert_allclose(out.sum(axis=1, dtype=np.float64), 1.0, atol=1e-6)

    def test_log_softmax_matches_log_of_softmax(self, rng):
        x = rng.normal(shape=(3, 5))
        np.testing.assert_allclose(
            ops.log_softmax(Tensor(x), axis=1).data,
            np.log(ops.softmax(Tensor(x), axis=1).data),
            atol=1e-5,
        )

    def test_bad_axis(self):
        with pytest.raises(ParameterError):
            ops.softmax(Tensor([1.0, 2.0]), axis=1)


# =============================================================================
# elementwise
# =============================================================================

class TestElementwise:
    def test_sigmoid_zero(self):
        assert ops.elementwise(Tensor([0.0]), "sigmoid").item() == 0.5

    def test_sigmoid_is_stable_for_large_inputs(self):
        out = ops.sigmoid(Tensor([-200.0, 200.0])).data
        np.testing.assert_allclose(out, [0.0, 1.0])

    def test_relu_of_negative(self):
        x = Tensor([-0.5, -3.0])
        np.testing.assert_array_equal(ops.elementwise(x, "relu").data, [0.0, 0.0])

    def test_log_of_non_positive(self):
        with pytest.raises(DomainError):
            ops.elementwise(Tensor([1.0, 0.0]), "log")

    def test_binary_ops(self):
        a, b = Tensor([1.0, 2.0]), Tensor([3.0, 5.0])
        np.testing.assert_array_equal(ops.elementwise(a, "add", b).data, [4.0, 7.0])
        np.testing.assert_array_equal(ops.elementwise(a, "sub", b).data, [-2.0, -3.0])
        np.testing.assert_array_equal(ops.elementwise(a, "mul", b).data, [3.0, 10.0])
        np.testing.assert_array_equal(ops.elementwise(a, "neg").data, [-1.0, -2.0])

    def test_scalar_broadcast_only(self):
        np.testing.assert_array_equal(ops.mul(Tensor([1.0, 2.0]), 3.0).data, [3.0, 6.0])
        with pytest.raises(DimensionError):
            ops.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros(3)))

    def test_mul_gradient(self):
        a = Tensor([1.5], requires_grad=True)
        b = Tensor([-2.0], requires_grad=True)
        ops.sum(a * b).backward()
        np.testing.assert_allclose(a.grad, [-2.0])
        np.testing.assert_allclose(b.grad, [1.5])

    def test_scalar_operand_gradient_is_summed(self):
        a = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        s = Tensor(2.0, requires_grad=True)
        ops.sum(a * s).backward()
        np.testing.assert_allclose(s.grad, 6.0)
        assert s.grad.shape == ()

    def test_unknown_function(self):
        with pytest.raises(ParameterError):
            ops.elementwise(Tensor([1.0]), "tanh")
        with pytest.raises(ParameterError):
            ops.elementwise(Tensor([1.0]), "add")


# =============================================================================
# reduce
# =============================================================================

class TestReduce:
    def test_sum_all(self):
        assert ops.reduce(Tensor(np.ones((2, 3))), "sum").item() == 6.0

    def test_mean_axis0(self):
        out = ops.reduce(Tensor([[1.0, 3.0], [3.0, 5.0]]), "mean", [0])
        np.testing.assert_array_equal(out.data, [2.0, 4.0])

    def test_empty_axes_is_identity(self):
        x = Tensor([1.0, 2.0])
        assert ops.reduce(x, "sum", []) is x

    def test_associativity(self, rng):
        x = rng.normal(shape=(3, 4, 5))
        joint = ops.sum(Tensor(x), [0, 1]).data
        sequential = ops.sum(ops.sum(Tensor(x), [0]), [0]).data
        np.testing.assert_allclose(joint, sequential, atol=1e-5)

    def test_negative_axis(self):
        out = ops.sum(Tensor(np.ones((2, 3))), [-1])
        np.testing.assert_array_equal(out.data, [3.0, 3.0])

    def test_repeated_axes_rejected(self):
        with pytest.raises(ParameterError):
            ops.sum(Tensor(np.ones((2, 3))), [0, 0])

    def test_unknown_kind(self):
        with pytest.raises(ParameterError):
            ops.reduce(Tensor([1.0]), "max")

    def test_mean_gradient(self):
        x = Tensor(np.ones((2, 5)), requires_grad=True)
        ops.mean(x).backward()
        np.testing.assert_allclose(x.grad, np.full((2, 5), 0.1))


# =============================================================================
# upsample_nearest
# =============================================================================

class TestUpsample:
    def test_factor_one_is_identity(self, rng):
        x = Tensor(rng.normal(shape=(1, 2, 3, 3)))
        assert ops.upsample_nearest(x, 1) is x

    def test_single_pixel_becomes_block(self):
        out = ops.upsample_nearest(Tensor(np.full((1, 1, 1, 1), 4.5)), 2)
        np.testing.assert_array_equal(out.data, np.full((1, 1, 2, 2), 4.5))

    def test_gradient_of_sum_is_factor_squared(self, rng):
        x = Tensor(rng.normal(shape=(1, 2, 3, 3)), requires_grad=True)
        ops.sum(ops.upsample_nearest(x, 2)).backward()
        np.testing.assert_allclose(x.grad, 4.0)

    def test_factor_below_one(self):
        with pytest.raises(ParameterError):
            ops.upsample_nearest(Tensor(np.zeros((1, 1, 2, 2))), 0)


# =============================================================================
# Shape plumbing
# =============================================================================

class TestShapeOps:
    def test_reshape_infers_axis(self):
        assert ops.reshape(Tensor(np.zeros((2, 6))), (3, -1)).shape == (3, 4)

    def test_reshape_mismatch(self):
        with pytest.raises(DimensionError):
            ops.reshape(Tensor(np.zeros((2, 6))), (5, 2))

    def test_transpose_requires_permutation(self):
        assert ops.transpose(Tensor(np.zeros((2, 3, 4))), (2, 0, 1)).shape == (4, 2, 3)
        with pytest.raises(ParameterError):
            ops.transpose(Tensor(np.zeros((2, 3))), (0, 0))

    def test_expand_gradient_sums_broadcast_axes(self):
        x = Tensor([[1.0, 2.0, 3.0]], requires_grad=True)
        ops.sum(ops.expand(x, (4, 3))).backward()
        np.testing.assert_allclose(x.grad, [[4.0, 4.0, 4.0]])

    def test_expand_with_leading_axes(self):
        x = Tensor(np.ones((2, 3)), requires_grad=True)
        ops.sum(ops.expand(x, (5, 2, 3))).backward()
        np.testing.assert_allclose(x.grad, np.full((2, 3), 5.0))

    def test_expand_incompatible(self):
        with pytest.raises(DimensionError):
            ops.expand(Tensor(np.zeros((2, 3))), (2, 4))

    def test_stack_and_concat(self):
        a, b = Tensor(np.zeros((2, 3))), Tensor(np.ones((2, 3)))
        assert ops.stack([a, b], axis=0).shape == (2, 2, 3)
        assert ops.stack([a, b], axis=-1).shape == (2, 3, 2)
        assert ops.concat([a, b], axis=1).shape == (2, 6)
        with pytest.raises(DimensionError):
            ops.stack([a, Tensor(np.zeros((3, 2)))])

    def test_crop_keeps_top_left(self):
        x = Tensor(np.arange(16.0).reshape(1, 1, 4, 4), requires_grad=True)
        out = ops.crop(x, 2, 3)
        np.testing.assert_array_equal(out.data[0, 0], [[0, 1, 2], [4, 5, 6]])
        ops.sum(out).backward()
        assert x.grad.sum() == 6.0
        with pytest.raises(DimensionError):
            ops.crop(x, 5, 1)
