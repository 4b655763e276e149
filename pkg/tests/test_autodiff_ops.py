import itertools

import numpy as np
import pytest

from refine3d.autodiff import ops
from refine3d.autodiff import tensor as tensor_module
from refine3d.autodiff.gradcheck import grad_check, relative_error
from refine3d.autodiff.tensor import Tensor, backward, no_grad, precision, record_branches, set_debug_checks
from refine3d.errors import DimensionError, GraphError, NumericError

SEEDS = range(5)
TOL = 1e-5


def weighted_sum(seed):
    """Scalar reduction with fixed random weights per output shape, so no gradient is trivially zero."""
    cache = {}

    def reduce(out):
        if out.shape not in cache:
            cache[out.shape] = np.random.default_rng(seed + 100).standard_normal(out.shape)
        return ops.sum(ops.mul(out, Tensor(cache[out.shape])))

    return reduce


def away_from_zero(rng, shape, margin=0.05):
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin * 2, x)


# =============================================================================
# Gradient checks
# =============================================================================

class TestElementwiseGradients:
    @pytest.mark.parametrize("seed", SEEDS)
    @pytest.mark.parametrize("shape_a,shape_b", [((3, 4), (3, 4)), ((2, 3, 4), (4,))])
    def test_add_sub_mul_with_broadcast(self, seed, shape_a, shape_b):
        rng = np.random.default_rng(seed)
        a, b = rng.standard_normal(shape_a), rng.standard_normal(shape_b)
        reduce = weighted_sum(seed)
        for op in (ops.add, ops.sub, ops.mul):
            assert grad_check(lambda x: reduce(op(x, Tensor(b))), a) < TOL
            assert grad_check(lambda x: reduce(op(Tensor(a), x)), b) < TOL

    @pytest.mark.parametrize("seed", SEEDS)
    @pytest.mark.parametrize("shape", [(5,), (2, 3, 4)])
    def test_log_scalar_mul_neg(self, seed, shape):
        rng = np.random.default_rng(seed)
        x = rng.uniform(0.2, 2.0, shape)
        reduce = weighted_sum(seed)
        assert grad_check(lambda t: reduce(ops.log(t)), x) < TOL
        assert grad_check(lambda t: reduce(ops.scalar_mul(t, -2.5)), x) < TOL
        assert grad_check(lambda t: reduce(ops.neg(t)), x) < TOL

    @pytest.mark.parametrize("seed", SEEDS)
    @pytest.mark.parametrize("shape", [(6,), (2, 3, 4)])
    def test_activations(self, seed, shape):
        rng = np.random.default_rng(seed)
        x = away_from_zero(rng, shape)
        reduce = weighted_sum(seed)
        assert grad_check(lambda t: reduce(ops.relu(t)), x) < TOL
        assert grad_check(lambda t: reduce(ops.leaky_relu(t)), x) < TOL
        assert grad_check(lambda t: reduce(ops.sigmoid(t)), x) < TOL

    @pytest.mark.parametrize("seed", SEEDS)
    @pytest.mark.parametrize("shape", [(3, 5), (2, 3, 4)])
    def test_softmax(self, seed, shape):
        x = np.random.default_rng(seed).standard_normal(shape)
        reduce = weighted_sum(seed)
        assert grad_check(lambda t: reduce(ops.softmax(t, axis=-1)), x) < TOL

    @pytest.mark.parametrize("seed", SEEDS)
    def test_clip_inside_and_outside(self, seed):
        rng = np.random.default_rng(seed)
        x = np.concatenate([rng.uniform(0.1, 0.9, 6), rng.uniform(1.2, 2.0, 3), rng.uniform(-2.0, -0.2, 3)])
        reduce = weighted_sum(seed)
        assert grad_check(lambda t: reduce(ops.clip(t, 0.0, 1.0)), x) < TOL


class TestReductionAndStructuralGradients:
    @pytest.mark.parametrize("seed", SEEDS)
    @pytest.mark.parametrize("axis", [None, 0, (1, 2)])
    def test_sum_mean(self, seed, axis):
        x = np.random.default_rng(seed).standard_normal((2, 3, 4))
        reduce = weighted_sum(seed)
        assert grad_check(lambda t: reduce(ops.sum(t, axis=axis)), x) < TOL
        assert grad_check(lambda t: reduce(ops.mean(t, axis=axis, keepdims=True)), x) < TOL

    @pytest.mark.parametrize("seed", SEEDS)
    @pytest.mark.parametrize("shape_a,shape_b", [((2, 3), (3, 4)), ((2, 4, 5), (5, 3))])
    def test_matmul(self, seed, shape_a, shape_b):
        rng = np.random.default_rng(seed)
        a, b = rng.standard_normal(shape_a), rng.standard_normal(shape_b)
        reduce = weighted_sum(seed)
        assert grad_check(lambda x: reduce(ops.matmul(x, Tensor(b))), a) < TOL
        assert grad_check(lambda x: reduce(ops.matmul(Tensor(a), x)), b) < TOL

    @pytest.mark.parametrize("seed", SEEDS)
    def test_reshape_transpose_slice(self, seed):
        x = np.random.default_rng(seed).standard_normal((2, 3, 4))
        reduce = weighted_sum(seed)
        assert grad_check(lambda t: reduce(ops.reshape(t, (6, 4))), x) < TOL
        assert grad_check(lambda t: reduce(ops.transpose(t, (2, 0, 1))), x) < TOL
        assert grad_check(lambda t: reduce(ops.slice(t, (slice(None), 1, slice(1, 3)))), x) < TOL

    @pytest.mark.parametrize("seed", SEEDS)
    @pytest.mark.parametrize("axis", [0, 1])
    def test_concat_stack(self, seed, axis):
        rng = np.random.default_rng(seed)
        x, other = rng.standard_normal((2, 3)), rng.standard_normal((2, 3))
        reduce = weighted_sum(seed)
        assert grad_check(lambda t: reduce(ops.concat([t, Tensor(other), t], axis=axis)), x) < TOL
        assert grad_check(lambda t: reduce(ops.stack([Tensor(other), t], axis=axis)), x) < TOL


class TestConvolutionGradients:
    @pytest.mark.parametrize("seed", SEEDS)
    @pytest.mark.parametrize("stride,pad", [(1, 1), (2, 0)])
    def test_conv2d(self, seed, stride, pad):
        rng = np.random.default_rng(seed)
        x, w, b = rng.standard_normal((2, 2, 5, 5)), rng.standard_normal((3, 2, 3, 3)), rng.standard_normal(3)
        reduce = weighted_sum(seed)
        conv = lambda x_, w_, b_: reduce(ops.conv2d(x_, w_, b_, stride=stride, pad=pad))  # noqa: E731
        assert grad_check(lambda t: conv(t, Tensor(w), Tensor(b)), x) < TOL
        assert grad_check(lambda t: conv(Tensor(x), t, Tensor(b)), w) < TOL
        assert grad_check(lambda t: conv(Tensor(x), Tensor(w), t), b) < TOL

    @pytest.mark.parametrize("seed", SEEDS)
    @pytest.mark.parametrize("kernel,pad", [(3, 1), (4, 2)])
    def test_conv3d(self, seed, kernel, pad):
        rng = np.random.default_rng(seed)
        x, w = rng.standard_normal((1, 2, 4, 4, 4)), rng.standard_normal((2, 2, kernel, kernel, kernel))
        reduce = weighted_sum(seed)
        assert grad_check(lambda t: reduce(ops.conv3d(t, Tensor(w), pad=pad)), x) < TOL
        assert grad_check(lambda t: reduce(ops.conv3d(Tensor(x), t, pad=pad)), w) < TOL

    @pytest.mark.parametrize("seed", SEEDS)
    @pytest.mark.parametrize("kernel,stride,pad,output_pad", [(3, 2, 1, 1), (4, 2, 1, 0), (3, 1, 1, 0)])
    def test_conv_transpose3d(self, seed, kernel, stride, pad, output_pad):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((1, 2, 3, 3, 3))
        w = rng.standard_normal((2, 2, kernel, kernel, kernel))
        b = rng.standard_normal(2)
        reduce = weighted_sum(seed)

        def deconv(x_, w_, b_):
            return reduce(ops.conv_transpose3d(x_, w_, b_, stride=stride, pad=pad, output_pad=output_pad))

        assert grad_check(lambda t: deconv(t, Tensor(w), Tensor(b)), x) < TOL
        assert grad_check(lambda t: deconv(Tensor(x), t, Tensor(b)), w) < TOL
        assert grad_check(lambda t: deconv(Tensor(x), Tensor(w), t), b) < TOL


class TestPoolingAndNormGradients:
    @pytest.mark.parametrize("seed", SEEDS)
    @pytest.mark.parametrize("shape", [(2, 2, 4, 4), (1, 2, 4, 4, 4)])
    def test_maxpool_distinct_values(self, seed, shape):
        rng = np.random.default_rng(seed)
        # a permutation keeps every window maximum unique and well separated
        x = rng.permutation(np.prod(shape)).reshape(shape) * 0.01
        reduce = weighted_sum(seed)
        assert grad_check(lambda t: reduce(ops.maxpool(t, 2)), x, eps=1e-4) < TOL

    @pytest.mark.parametrize("seed", SEEDS)
    @pytest.mark.parametrize("shape", [(2, 3, 2, 2), (1, 2, 2, 2, 2)])
    def test_upsample_nearest(self, seed, shape):
        x = np.random.default_rng(seed).standard_normal(shape)
        reduce = weighted_sum(seed)
        assert grad_check(lambda t: reduce(ops.upsample_nearest(t, 2)), x) < TOL

    @pytest.mark.parametrize("seed", SEEDS)
    @pytest.mark.parametrize("mode", ["train", "eval"])
    def test_batchnorm(self, seed, mode):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((2, 3, 3, 3, 3))
        gamma, beta = rng.uniform(0.5, 1.5, 3), rng.standard_normal(3)
        reduce = weighted_sum(seed)

        def norm(x_, g_, b_):
            running_mean, running_var = Tensor(np.zeros(3)), Tensor(np.ones(3) * 1.3)
            return reduce(ops.batchnorm(x_, g_, b_, running_mean, running_var, mode=mode))

        assert grad_check(lambda t: norm(t, Tensor(gamma), Tensor(beta)), x) < TOL
        assert grad_check(lambda t: norm(Tensor(x), t, Tensor(beta)), gamma) < TOL
        assert grad_check(lambda t: norm(Tensor(x), Tensor(gamma), t), beta) < TOL


# =============================================================================
# Forward semantics
# =============================================================================

def naive_conv2d(x, w, stride, pad):
    xp = np.pad(x, [(0, 0), (0, 0), (pad, pad), (pad, pad)])
    n, _, h, wd = xp.shape
    k, _, kh, kw = w.shape
    oh, ow = (h - kh) // stride + 1, (wd - kw) // stride + 1
    out = np.zeros((n, k, oh, ow))
    for b, o, i, j in itertools.product(range(n), range(k), range(oh), range(ow)):
        patch = xp[b, :, i * stride : i * stride + kh, j * stride : j * stride + kw]
        out[b, o, i, j] = np.sum(patch * w[o])
    return out


def naive_conv_transpose3d(x, w, stride, pad, output_pad):
    n, cin, d, h, wd = x.shape
    _, cout, k, _, _ = w.shape
    full = [(e - 1) * stride + k + output_pad for e in (d, h, wd)]
    buf = np.zeros((n, cout, *full))
    for b, c, i, j, l in itertools.product(range(n), range(cin), range(d), range(h), range(wd)):
        buf[b, :, i * stride : i * stride + k, j * stride : j * stride + k, l * stride : l * stride + k] += (
            x[b, c, i, j, l] * w[c]
        )
    return buf[:, :, pad : full[0] - pad, pad : full[1] - pad, pad : full[2] - pad]


def naive_conv3d(x, w, bias, stride, pad):
    xp = np.pad(x, [(0, 0), (0, 0)] + [(pad, pad)] * 3)
    n, c, d, h, wd = xp.shape
    k, _, kd, kh, kw = w.shape
    od, oh, ow = (d - kd) // stride + 1, (h - kh) // stride + 1, (wd - kw) // stride + 1
    out = np.zeros((n, k, od, oh, ow))
    for b, o, i, j, l in itertools.product(range(n), range(k), range(od), range(oh), range(ow)):
        total = bias[o]
        for ch, a, p, q in itertools.product(range(c), range(kd), range(kh), range(kw)):
            total += xp[b, ch, i * stride + a, j * stride + p, l * stride + q] * w[o, ch, a, p, q]
        out[b, o, i, j, l] = total
    return out


def naive_matmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            for k in range(a.shape[1]):
                out[i, j] += a[i, k] * b[k, j]
    return out


def two_pass_batchnorm(x, gamma, beta, running_mean, running_var, momentum, eps):
    """Per-channel mean in one pass, variance in a second; returns (output, running mean, running var)"""
    channels = x.shape[1]
    per_channel = np.moveaxis(x, 1, 0).reshape(channels, -1)
    count = per_channel.shape[1]
    out = np.empty_like(x)
    new_mean, new_var = np.empty(channels), np.empty(channels)
    for c in range(channels):
        mean = 0.0
        for value in per_channel[c]:
            mean += value
        mean /= count
        var = 0.0
        for value in per_channel[c]:
            var += (value - mean) ** 2
        var /= count
        out[:, c] = gamma[c] * (x[:, c] - mean) / np.sqrt(var + eps) + beta[c]
        new_mean[c] = momentum * running_mean[c] + (1 - momentum) * mean
        new_var[c] = momentum * running_var[c] + (1 - momentum) * var * count / (count - 1)
    return out, new_mean, new_var


def worst_relative_error(got, expected):
    return max(relative_error(float(g), float(e)) for g, e in zip(np.ravel(got), np.ravel(expected)))


class TestForwardSemantics:
    def test_conv2d_matches_loops(self, rng):
        x, w = rng.standard_normal((2, 3, 7, 7)), rng.standard_normal((4, 3, 3, 3))
        for stride, pad in [(1, 0), (1, 1), (2, 1)]:
            got = ops.conv2d(Tensor(x), Tensor(w), stride=stride, pad=pad).data
            np.testing.assert_allclose(got, naive_conv2d(x, w, stride, pad), atol=1e-10)

    @pytest.mark.parametrize("seed", range(3))
    @pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1)])
    def test_conv3d_matches_direct_sum(self, seed, stride, pad):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((2, 2, 5, 4, 5))
        w = rng.standard_normal((3, 2, 3, 3, 3))
        bias = rng.standard_normal(3)
        got = ops.conv3d(Tensor(x), Tensor(w), Tensor(bias), stride=stride, pad=pad).data
        expected = naive_conv3d(x, w, bias, stride, pad)
        assert got.shape == expected.shape
        assert worst_relative_error(got, expected) <= 1e-6

    @pytest.mark.parametrize("seed", SEEDS)
    def test_matmul_matches_triple_loop(self, seed):
        rng = np.random.default_rng(seed)
        a, b = rng.standard_normal((3, 4)), rng.standard_normal((4, 2))
        got = ops.matmul(Tensor(a), Tensor(b)).data
        assert worst_relative_error(got, naive_matmul(a, b)) <= 1e-6

    def test_conv_transpose3d_matches_scatter_loops(self, rng):
        x, w = rng.standard_normal((1, 2, 3, 3, 3)), rng.standard_normal((2, 3, 3, 3, 3))
        got = ops.conv_transpose3d(Tensor(x), Tensor(w), stride=2, pad=1, output_pad=1).data
        np.testing.assert_allclose(got, naive_conv_transpose3d(x, w, 2, 1, 1), atol=1e-10)

    @pytest.mark.parametrize("n,k,stride,pad,output_pad", [(2, 3, 2, 1, 1), (4, 4, 2, 1, 0), (5, 3, 1, 1, 0)])
    def test_conv_transpose3d_output_extent(self, n, k, stride, pad, output_pad):
        x = Tensor(np.zeros((1, 1, n, n, n)))
        w = Tensor(np.zeros((1, 1, k, k, k)))
        out = ops.conv_transpose3d(x, w, stride=stride, pad=pad, output_pad=output_pad)
        expected = (n - 1) * stride - 2 * pad + k + output_pad
        assert out.shape == (1, 1, expected, expected, expected)

    def test_maxpool_tie_goes_to_first_element(self):
        x = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
        out = ops.maxpool(x, 2)
        backward(ops.sum(out))
        np.testing.assert_array_equal(x.grad[0, 0], [[1.0, 0.0], [0.0, 0.0]])

    def test_maxpool_floors_odd_extent(self):
        x = Tensor(np.arange(125, dtype=np.float64).reshape(1, 1, 5, 5, 5))
        assert ops.maxpool(x, 2).shape == (1, 1, 2, 2, 2)

    def test_sigmoid_is_stable_for_large_inputs(self):
        out = ops.sigmoid(Tensor(np.array([-800.0, 0.0, 800.0]))).data
        np.testing.assert_array_equal(out, [0.0, 0.5, 1.0])

    def test_batchnorm_train_normalizes_and_updates_running_stats(self, rng):
        x = rng.normal(3.0, 2.0, (4, 2, 3, 3))
        running_mean, running_var = Tensor(np.zeros(2)), Tensor(np.ones(2))
        out = ops.batchnorm(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)), running_mean, running_var).data
        np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 0.0, atol=1e-10)
        np.testing.assert_allclose(out.var(axis=(0, 2, 3)), 1.0, atol=1e-3)
        np.testing.assert_allclose(running_mean.data, 0.1 * x.mean(axis=(0, 2, 3)), rtol=1e-10)

    @pytest.mark.parametrize("shape", [(4, 3, 5), (3, 2, 3, 4), (2, 2, 3, 3, 3)])
    def test_batchnorm_matches_two_pass_statistics(self, rng, shape):
        x = rng.normal(1.5, 3.0, shape)
        channels = shape[1]
        gamma, beta = rng.uniform(0.5, 2.0, channels), rng.standard_normal(channels)
        mean0, var0 = rng.standard_normal(channels), rng.uniform(0.5, 2.0, channels)
        running_mean, running_var = Tensor(mean0.copy()), Tensor(var0.copy())
        got = ops.batchnorm(Tensor(x), Tensor(gamma), Tensor(beta), running_mean, running_var).data
        out, new_mean, new_var = two_pass_batchnorm(x, gamma, beta, mean0, var0, ops.BN_MOMENTUM, ops.BN_EPS)
        assert worst_relative_error(got, out) <= 1e-6
        assert worst_relative_error(running_mean.data, new_mean) <= 1e-6
        assert worst_relative_error(running_var.data, new_var) <= 1e-6

    def test_batchnorm_eval_uses_running_stats(self, rng):
        x = rng.standard_normal((2, 2, 3))
        out = ops.batchnorm(
            Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)),
            Tensor(np.array([1.0, -1.0])), Tensor(np.array([4.0, 4.0])), mode="eval",
        ).data
        expected = (x - np.array([1.0, -1.0])[None, :, None]) / np.sqrt(4.0 + 1e-5)
        np.testing.assert_allclose(out, expected, rtol=1e-10)


# =============================================================================
# Graph behaviour and errors
# =============================================================================

class TestGraph:
    def test_second_backward_on_same_record_fails(self):
        x = Tensor(np.ones(3), requires_grad=True)
        loss = ops.sum(ops.mul(x, x))
        backward(loss)
        with pytest.raises(GraphError):
            backward(loss)

    def test_gradients_accumulate_until_zero_grad(self):
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        for _ in range(2):
            backward(ops.sum(ops.scalar_mul(x, 3.0)))
        np.testing.assert_array_equal(x.grad, [6.0, 6.0])
        x.zero_grad()
        np.testing.assert_array_equal(x.grad, [0.0, 0.0])

    def test_non_scalar_loss_is_rejected(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(GraphError):
            backward(ops.mul(x, x))

    def test_no_grad_records_nothing(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with no_grad():
            out = ops.sum(ops.mul(x, x))
        assert not out.requires_grad
        backward(out)
        np.testing.assert_array_equal(x.grad, np.zeros(3))

    def test_shared_subexpression_sums_both_paths(self):
        x = Tensor(np.array([2.0]), requires_grad=True)
        y = ops.mul(x, x)
        backward(ops.sum(ops.add(y, y)))
        np.testing.assert_allclose(x.grad, [8.0])

    def test_precision_switches_default_dtype(self):
        with precision(np.float64):
            assert Tensor([1, 2]).dtype == np.float64
        assert Tensor([1, 2]).dtype == np.float32
        with pytest.raises(ValueError):
            with precision(np.int32):
                pass

    def test_debug_checks_catch_non_finite(self):
        set_debug_checks(True)
        try:
            with pytest.raises(NumericError):
                ops.log(Tensor(np.array([0.0, 1.0])))
        finally:
            set_debug_checks(False)

    def test_debug_flag_is_read_on_first_use(self, monkeypatch):
        monkeypatch.setattr(tensor_module, "_debug_checks", None)
        monkeypatch.setenv("REFINE3D_THREADS", "many")
        monkeypatch.setenv("REFINE3D_DEBUG", "1")
        with pytest.raises(NumericError):
            ops.log(Tensor(np.array([0.0, 1.0])))


class TestShapeErrors:
    def test_item_needs_a_single_element(self):
        assert Tensor([[2.5]]).item() == 2.5
        with pytest.raises(DimensionError):
            Tensor([1.0, 2.0]).item()
        with pytest.raises(DimensionError):
            Tensor(np.zeros((0,))).item()

    def test_matmul_inner_mismatch(self):
        with pytest.raises(DimensionError):
            ops.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))

    def test_broadcast_mismatch(self):
        with pytest.raises(DimensionError):
            ops.add(Tensor(np.ones((2, 3))), Tensor(np.ones((4,))))

    def test_conv_channel_mismatch(self):
        with pytest.raises(DimensionError):
            ops.conv3d(Tensor(np.ones((1, 2, 4, 4, 4))), Tensor(np.ones((1, 3, 3, 3, 3))))

    def test_conv_kernel_larger_than_input(self):
        with pytest.raises(DimensionError):
            ops.conv2d(Tensor(np.ones((1, 1, 2, 2))), Tensor(np.ones((1, 1, 5, 5))))

    def test_maxpool_window_larger_than_input(self):
        with pytest.raises(DimensionError):
            ops.maxpool(Tensor(np.ones((1, 1, 1, 4))), 2)

    def test_output_pad_must_be_below_stride(self):
        with pytest.raises(DimensionError):
            ops.conv_transpose3d(Tensor(np.ones((1, 1, 2, 2, 2))), Tensor(np.ones((1, 1, 3, 3, 3))), stride=1, output_pad=1)

    def test_relative_error_floor(self):
        assert relative_error(0.0, 0.0) == 0.0
        assert relative_error(1.0, 1.0 + 1e-9) < 1e-8


class TestOracles:
    def test_linear_function_is_exact(self, rng):
        a = rng.standard_normal((3, 4))
        weights = rng.standard_normal((3, 4))
        assert grad_check(lambda t: ops.sum(ops.mul(t, Tensor(weights))), a) <= 1e-10

    def test_conv2d_sigmoid_composite(self, rng):
        x, w = rng.standard_normal((1, 2, 5, 5)), rng.standard_normal((2, 2, 3, 3))
        reduce = weighted_sum(7)
        assert grad_check(lambda t: reduce(ops.sigmoid(ops.conv2d(t, Tensor(w), pad=1))), x) <= 1e-5

    def test_softmax_rows_sum_to_one_and_follow_permutations(self, rng):
        x = rng.standard_normal((4, 6))
        out = ops.softmax(Tensor(x), axis=-1).data
        np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-6)
        perm = rng.permutation(6)
        np.testing.assert_allclose(ops.softmax(Tensor(x[:, perm]), axis=-1).data, out[:, perm], atol=1e-12)

    def test_reshape_round_trip_is_bitwise(self, rng):
        x = rng.standard_normal(1024)
        seed_volume = ops.reshape(Tensor(x), (128, 2, 2, 2))
        np.testing.assert_array_equal(seed_volume.data[1, 0, 0, 0], x[8])
        assert np.array_equal(ops.reshape(seed_volume, (1024,)).data, x)

    def test_backward_without_grad_tensors_is_a_no_op(self):
        out = ops.sum(ops.mul(Tensor(np.ones(3)), Tensor(np.ones(3))))
        backward(out)
        assert out.grad is None

    def test_branch_patterns_see_a_relu_switch(self):
        with record_branches() as below:
            ops.relu(Tensor(np.array([-1e-6, 2.0])))
        with record_branches() as above:
            ops.relu(Tensor(np.array([1e-6, 2.0])))
        with record_branches() as again:
            ops.relu(Tensor(np.array([1e-6, 3.0])))
        assert below != above
        assert above == again
