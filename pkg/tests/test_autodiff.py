import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from agtcnet.autodiff import (
    BatchNormState,
    LayerParam,
    MaxNorm,
    MinMax,
    RngStream,
    SELU_ALPHA,
    SELU_LAMBDA,
    Tensor,
    apply_constraints,
    avg_pool,
    batch_norm,
    concat,
    conv2d,
    depthwise_conv2d,
    dropout,
    glorot_uniform,
    linear,
    multi_head_attention,
    positional_encoding,
    prelu,
    scaled_add,
    selu,
    separable_conv2d,
    softmax,
)
from gradcheck import check_gradients, param

TOL = 1e-5


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


class TestTape:
    def test_shared_subexpression_accumulates(self):
        x = Tensor([2.0, 3.0], requires_grad=True)
        y = x * x + x
        y.backward(np.ones(2))
        np.testing.assert_allclose(x.grad, 2 * x.data + 1)

    def test_no_tape_without_grad(self):
        y = Tensor([1.0]) * 2.0
        assert y._parents == () and not y.requires_grad

    def test_concat_split(self, rng):
        a, b = param((2, 3), rng), param((2, 4), rng)
        assert max(check_gradients(lambda a, b: concat([a, b], axis=-1), [a, b])) < TOL


class TestGlorot:
    def test_support(self):
        t = glorot_uniform((50, 40), 50, 40, RngStream(0))
        limit = math.sqrt(6 / 90)
        assert np.all(np.abs(t.data) <= limit)

    def test_same_seed_same_tensor(self):
        a = glorot_uniform((8, 8), 8, 8, RngStream(7))
        b = glorot_uniform((8, 8), 8, 8, RngStream(7))
        assert np.array_equal(a.data, b.data)

    def test_sample_mean(self):
        fan_in, fan_out = 30, 70
        limit = math.sqrt(6 / (fan_in + fan_out))
        t = glorot_uniform((10_000,), fan_in, fan_out, RngStream(3))
        assert abs(t.data.mean()) < 3 * limit / math.sqrt(3 * 10_000)

    def test_bad_fans(self):
        with pytest.raises(ValueError):
            glorot_uniform((2,), 0, 3, RngStream(0))


class TestRngStream:
    def test_resume_from_counter(self):
        a = RngStream(11)
        a.random(5)
        resumed = RngStream(11, counter=a.counter)
        assert np.array_equal(a.random(7), resumed.random(7))

    def test_permutation_is_permutation(self):
        p = RngStream(5).permutation(40)
        assert sorted(p.tolist()) == list(range(40))

    def test_substreams_differ_and_repeat(self):
        base = RngStream(9)
        assert np.array_equal(base.substream("x", 1).random(4), RngStream(9).substream("x", 1).random(4))
        assert not np.array_equal(base.substream("x", 1).random(4), base.substream("x", 2).random(4))


class TestConv2d:
    def test_valid_length(self, rng):
        x = Tensor(rng.standard_normal((1, 2, 375, 1)))
        k = Tensor(rng.standard_normal((1, 32, 1, 3)))
        assert conv2d(x, k).shape == (1, 2, 344, 3)

    def test_delta_kernel_shifts(self, rng):
        x = Tensor(rng.standard_normal((2, 3, 10, 1)))
        k = np.zeros((1, 4, 1, 1))
        k[0, 2, 0, 0] = 1.0
        out = conv2d(x, Tensor(k)).data
        np.testing.assert_array_equal(out[..., 0], x.data[:, :, 2:9, 0])

    def test_same_padding_trailing_extra(self):
        x = Tensor(np.arange(1.0, 6.0).reshape(1, 1, 5, 1))
        k = Tensor(np.ones((1, 2, 1, 1)))
        # kernel 2 needs one pad sample; it goes after the sequence
        np.testing.assert_array_equal(conv2d(x, k, padding="same").data.ravel(), [3, 5, 7, 9, 5])

    def test_same_with_stride(self, rng):
        x = Tensor(rng.standard_normal((1, 1, 9, 2)))
        k = Tensor(rng.standard_normal((1, 3, 2, 1)))
        assert conv2d(x, k, stride=(1, 2), padding="same").shape == (1, 1, 5, 1)

    def test_kernel_too_large(self, rng):
        with pytest.raises(ValueError):
            conv2d(Tensor(np.zeros((1, 1, 4, 1))), Tensor(np.zeros((1, 5, 1, 1))))

    def test_gradient(self, rng):
        x, k = param((2, 3, 7, 2), rng), param((2, 3, 2, 3), rng)
        assert max(check_gradients(lambda x, k: conv2d(x, k), [x, k])) < 1e-6

    @pytest.mark.parametrize("stride,padding", [((1, 2), "same"), ((2, 1), "valid"), (1, "same")])
    def test_gradient_stride_padding(self, rng, stride, padding):
        x, k = param((1, 4, 8, 2), rng), param((2, 3, 2, 2), rng)
        errs = check_gradients(lambda x, k: conv2d(x, k, stride=stride, padding=padding), [x, k])
        assert max(errs) < TOL


class TestDepthwise:
    def test_spatial_collapse_shape(self, rng):
        x = Tensor(rng.standard_normal((1, 22, 171, 24)))
        k = Tensor(rng.standard_normal((22, 1, 24, 2)))
        assert depthwise_conv2d(x, k).shape == (1, 1, 171, 48)

    def test_identity_depth1(self, rng):
        x = Tensor(rng.standard_normal((2, 3, 6, 4)))
        k = np.zeros((1, 1, 4, 1))
        k[0, 0, :, 0] = 1.0
        np.testing.assert_array_equal(depthwise_conv2d(x, Tensor(k)).data, x.data)

    def test_feature_ordering(self, rng):
        x = Tensor(rng.standard_normal((1, 1, 3, 2)))
        k = np.zeros((1, 1, 2, 3))
        k[0, 0, 1, 2] = 5.0  # input feature 1, multiplier 2 -> output 1*3+2 = 5
        out = depthwise_conv2d(x, Tensor(k)).data
        np.testing.assert_array_equal(out[..., 5], 5.0 * x.data[..., 1])
        assert np.count_nonzero(out[..., :5]) == 0

    def test_gradient(self, rng):
        x, k = param((2, 3, 7, 2), rng), param((2, 3, 2, 3), rng)
        errs = check_gradients(lambda x, k: depthwise_conv2d(x, k, padding="same"), [x, k])
        assert max(errs) < 1e-6


class TestSeparable:
    def test_parameter_formula(self):
        dk, pk = (1, 8, 8, 4), (1, 1, 32, 16)
        assert np.prod(dk) + np.prod(pk) == 768

    def test_identity(self, rng):
        x = Tensor(rng.standard_normal((1, 2, 5, 3)))
        dk = np.zeros((1, 1, 3, 1))
        dk[0, 0, :, 0] = 1
        pk = np.eye(3).reshape(1, 1, 3, 3)
        np.testing.assert_array_equal(separable_conv2d(x, Tensor(dk), Tensor(pk)).data, x.data)

    def test_gradient(self, rng):
        x, dk, pk = param((2, 2, 6, 2), rng), param((1, 3, 2, 2), rng), param((1, 1, 4, 3), rng)
        errs = check_gradients(lambda x, d, p: separable_conv2d(x, d, p, padding="same"), [x, dk, pk])
        assert max(errs) < TOL


class TestBatchNorm:
    def test_train_normalizes(self, rng):
        x = Tensor(rng.standard_normal((4, 3, 10, 5)) * 3 + 2)
        out = batch_norm(x, Tensor(np.ones(5)), Tensor(np.zeros(5)), BatchNormState(5), "train").data
        np.testing.assert_allclose(out.mean(axis=(0, 1, 2)), 0, atol=1e-6)
        # var + eps in the denominator leaves the variance slightly under 1
        var = x.data.var(axis=(0, 1, 2))
        np.testing.assert_allclose(out.var(axis=(0, 1, 2)), var / (var + 1e-3), atol=1e-6)

    def test_infer_identity(self, rng):
        x = Tensor(rng.standard_normal((2, 2, 3, 4)))
        state = BatchNormState(4)
        state.moving_var = np.full(4, 1.0 - 1e-3)  # var + eps == 1
        out = batch_norm(x, Tensor(np.ones(4)), Tensor(np.zeros(4)), state, "infer").data
        np.testing.assert_allclose(out, x.data, atol=1e-12)

    def test_running_stats_momentum(self, rng):
        x = Tensor(rng.standard_normal((8, 1, 4, 2)))
        state = BatchNormState(2)
        batch_norm(x, Tensor(np.ones(2)), Tensor(np.zeros(2)), state, "train")
        np.testing.assert_allclose(state.moving_mean, 0.01 * x.data.mean(axis=(0, 1, 2)))
        np.testing.assert_allclose(state.moving_var, 0.99 + 0.01 * x.data.var(axis=(0, 1, 2)))

    @pytest.mark.parametrize("mode", ["train", "infer"])
    def test_gradient(self, rng, mode):
        x, g, b = param((3, 2, 5, 3), rng), param((3,), rng), param((3,), rng)
        errs = check_gradients(lambda x, g, b: batch_norm(x, g, b, BatchNormState(3), mode), [x, g, b])
        assert max(errs) < TOL


class TestActivations:
    def test_selu_values(self):
        out = selu(Tensor([0.0, 1.0, -50.0])).data
        assert out[0] == 0.0
        assert out[1] == 1.0507009873554805
        assert out[2] == pytest.approx(-SELU_LAMBDA * SELU_ALPHA, abs=1e-12)
        assert -SELU_LAMBDA * SELU_ALPHA == pytest.approx(-1.7581, abs=1e-4)

    def test_selu_gradient(self, rng):
        x = param((4, 5), rng)
        assert max(check_gradients(selu, [x])) < TOL

    def test_prelu_limits(self, rng):
        x = Tensor(rng.standard_normal(20))
        np.testing.assert_array_equal(prelu(x, Tensor([0.0])).data, np.maximum(x.data, 0))
        np.testing.assert_array_equal(prelu(x, Tensor([1.0])).data, x.data)

    def test_prelu_gradient(self, rng):
        x, a = param((3, 4, 2), rng), param((1,), rng, 0.3)
        assert max(check_gradients(prelu, [x, a])) < TOL

    def test_prelu_alpha_gradient_formula(self, rng):
        x = Tensor(rng.standard_normal(30))
        a = Tensor([0.2], requires_grad=True)
        up = rng.standard_normal(30)
        prelu(x, a).backward(up)
        assert a.grad[0] == pytest.approx((up * x.data)[x.data <= 0].sum())


class TestPooling:
    @pytest.mark.parametrize("n,pool,stride,expected", [(344, 4, 2, 171), (171, 4, 4, 42), (42, 4, 4, 10)])
    def test_lengths(self, n, pool, stride, expected):
        x = Tensor(np.zeros((1, 1, n, 1)))
        assert avg_pool(x, (1, pool), (1, stride)).shape[2] == expected

    def test_constant(self):
        out = avg_pool(Tensor(np.full((2, 3, 11, 2), 4.5)), (1, 4), (1, 2)).data
        np.testing.assert_array_equal(out, 4.5)

    def test_too_large(self):
        with pytest.raises(ValueError):
            avg_pool(Tensor(np.zeros((1, 1, 3, 1))), (1, 4), (1, 1))

    def test_gradient(self, rng):
        x = param((2, 2, 11, 3), rng)
        assert max(check_gradients(lambda x: avg_pool(x, (1, 4), (1, 2)), [x])) < TOL


class TestDropout:
    def test_rate_zero_identity(self, rng):
        x = Tensor(rng.standard_normal(10))
        for mode in ("train", "infer"):
            assert dropout(x, 0.0, mode, RngStream(0)) is x

    def test_infer_identity(self, rng):
        x = Tensor(rng.standard_normal(10))
        assert dropout(x, 0.9, "infer", RngStream(0)) is x

    def test_statistics(self):
        x = Tensor(np.ones(100_000))
        out = dropout(x, 0.25, "train", RngStream(2)).data
        zero_fraction = np.mean(out == 0)
        assert abs(zero_fraction - 0.25) < 0.01
        assert abs(out.mean() - 1.0) < 0.02

    def test_bad_rate(self):
        with pytest.raises(ValueError):
            dropout(Tensor(np.ones(3)), 1.0, "train", RngStream(0))

    def test_gradient_frozen_mask(self, rng):
        x = param((4, 6), rng)
        errs = check_gradients(lambda x: dropout(x, 0.4, "train", RngStream(5)), [x])
        assert max(errs) < TOL


class TestLinear:
    def test_identity(self, rng):
        x = Tensor(rng.standard_normal((3, 4)))
        np.testing.assert_array_equal(linear(x, Tensor(np.eye(4)), Tensor(np.zeros(4))).data, x.data)

    def test_param_count(self):
        assert 960 * 4 + 4 == 3844

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            linear(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))

    def test_gradient(self, rng):
        x, w, b = param((2, 3, 5), rng), param((5, 4), rng), param((4,), rng)
        assert max(check_gradients(linear, [x, w, b])) < TOL


class TestSoftmax:
    def test_equal_inputs(self):
        np.testing.assert_allclose(softmax(Tensor(np.full((2, 5), 3.0))).data, 0.2)

    def test_sums_to_one(self, rng):
        p = softmax(Tensor(rng.standard_normal((6, 9)) * 20), axis=0).data
        np.testing.assert_allclose(p.sum(axis=0), 1.0, atol=1e-12)

    def test_shift_invariance(self, rng):
        x = rng.standard_normal((3, 4))
        np.testing.assert_allclose(softmax(Tensor(x)).data, softmax(Tensor(x + 17.0)).data, atol=1e-15)

    def test_mask_zero_and_zero_grad(self, rng):
        x = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
        mask = np.array([[1, 0, 1, 1], [1, 1, 0, 0], [0, 0, 0, 1]], bool)
        p = softmax(x, axis=-1, mask=mask)
        assert np.all(p.data[~mask] == 0.0)
        np.testing.assert_allclose(p.data.sum(-1), 1.0, atol=1e-12)
        p.backward(rng.standard_normal((3, 4)))
        assert np.all(x.grad[~mask] == 0.0)

    def test_all_masked_errors(self):
        with pytest.raises(ValueError):
            softmax(Tensor(np.zeros((2, 3))), mask=np.array([[1, 1, 1], [0, 0, 0]], bool))

    def test_all_masked_fallback(self):
        p = softmax(Tensor(np.zeros((1, 3))), mask=np.zeros((1, 3), bool), uniform_fallback=True)
        np.testing.assert_allclose(p.data, 1 / 3)

    def test_gradient_masked(self, rng):
        x = param((3, 4), rng)
        mask = np.array([[1, 0, 1, 1], [1, 1, 0, 0], [0, 0, 0, 1]], bool)
        assert max(check_gradients(lambda x: softmax(x, axis=-1, mask=mask), [x])) < TOL


class TestPositionalEncoding:
    def test_zero_scale_identity(self, rng):
        x = Tensor(rng.standard_normal((2, 1, 10, 8)))
        out = scaled_add(x, positional_encoding(10, 8), Tensor([0.0])).data
        np.testing.assert_array_equal(out, x.data)

    def test_first_row(self):
        pe = positional_encoding(5, 12)
        np.testing.assert_array_equal(pe[0, 0::2], 0.0)
        np.testing.assert_array_equal(pe[0, 1::2], 1.0)

    def test_range(self):
        pe = positional_encoding(200, 96)
        assert np.all(np.abs(pe) <= 1.0)

    def test_odd_dim(self):
        with pytest.raises(ValueError):
            positional_encoding(4, 7)

    def test_gradient(self, rng):
        x, s = param((2, 1, 5, 4), rng), param((1,), rng)
        pe = positional_encoding(5, 4)
        assert max(check_gradients(lambda x, s: scaled_add(x, pe, s), [x, s])) < TOL


def _mha_params(rng, d, heads, kd, vd):
    shapes = {
        "query.kernel": (d, heads * kd), "query.bias": (heads * kd,),
        "key.kernel": (d, heads * kd), "key.bias": (heads * kd,),
        "value.kernel": (d, heads * vd), "value.bias": (heads * vd,),
        "output.kernel": (heads * vd, d), "output.bias": (d,),
    }
    return {k: param(s, rng, 0.5) for k, s in shapes.items()}


class TestAttention:
    def test_single_position(self, rng):
        p = _mha_params(rng, 6, 2, 3, 3)
        x = Tensor(rng.standard_normal((2, 1, 6)))
        out, weights = multi_head_attention(x, x, x, p, 2, 3, 3, return_scores=True)
        np.testing.assert_array_equal(weights, 1.0)
        v = x.data @ p["value.kernel"].data + p["value.bias"].data
        expected = v @ p["output.kernel"].data + p["output.bias"].data
        np.testing.assert_allclose(out.data, expected, atol=1e-12)

    def test_rows_sum_to_one(self, rng):
        p = _mha_params(rng, 6, 2, 3, 3)
        x = Tensor(rng.standard_normal((2, 7, 6)))
        _, weights = multi_head_attention(x, x, x, p, 2, 3, 3, return_scores=True)
        np.testing.assert_allclose(weights.sum(-1), 1.0, atol=1e-9)

    def test_param_count(self):
        p = _mha_params(np.random.default_rng(0), 96, 2, 8, 8)
        assert sum(t.size for t in p.values()) == 3 * (96 * 16 + 16) + (16 * 96 + 96) == 6288

    def test_shape_mismatch(self, rng):
        p = _mha_params(rng, 6, 2, 3, 3)
        with pytest.raises(ValueError):
            multi_head_attention(Tensor(np.zeros((1, 2, 6))), Tensor(np.zeros((1, 3, 6))),
                                 Tensor(np.zeros((1, 4, 6))), p, 2, 3, 3)

    def test_gradient(self, rng):
        p = _mha_params(rng, 4, 2, 3, 2)
        names = list(p)
        x = param((2, 5, 4), rng)

        def fn(x, *ws):
            return multi_head_attention(x, x, x, dict(zip(names, ws)), 2, 3, 2,
                                        dropout_rate=0.3, mode="train", rng=RngStream(4))

        assert max(check_gradients(fn, [x, *p.values()])) < TOL


class TestConstraints:
    def test_max_norm_projects(self):
        w = np.array([[2.0], [0.0]])  # column norm 2
        p = LayerParam("w", Tensor(w.copy()), MaxNorm(1.0, axis=0))
        apply_constraints([p])
        np.testing.assert_allclose(p.tensor.data, [[1.0], [0.0]])

    def test_max_norm_feasible_untouched(self):
        w = np.array([[0.06], [0.08]])  # norm 0.1
        p = LayerParam("w", Tensor(w.copy()), MaxNorm(0.25, axis=0))
        apply_constraints([p])
        np.testing.assert_array_equal(p.tensor.data, w)

    def test_min_max_clamps(self):
        p = LayerParam("s", Tensor([1.3]), MinMax(0.0, 1.0))
        apply_constraints([p])
        assert p.tensor.data[0] == 1.0

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.1, 3.0))
    def test_max_norm_direction_preserved(self, seed, limit):
        w = np.random.default_rng(seed).standard_normal((5, 3)) * 2
        out = MaxNorm(limit, axis=0).project(w)
        norms = np.linalg.norm(out, axis=0)
        assert np.all(norms <= limit * (1 + 1e-12))
        cos = (out * w).sum(0) / (np.linalg.norm(w, axis=0) * norms)
        np.testing.assert_allclose(cos, 1.0, atol=1e-12)
