import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from linet.errors import ConfigError, NumericalError
from linet.gate import (GateConfig, dense_softmax_gate, retention_to_k, topk_mask, topk_softmax,
                        topk_softmax_backward)
from linet.gradcheck import grad_check
from linet import tensor as tn
from linet.tensor import Tensor


def sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


class TestRetentionToK:
    @pytest.mark.parametrize("r, n, k", [(0.5, 96, 48), (0.1, 7, 1), (1.0, 10, 10), (0.7, 10, 7),
                                         (0.3, 7, 3), (0.7, 1, 1)])
    def test_values(self, r, n, k):
        assert retention_to_k(r, n) == k

    @pytest.mark.parametrize("r", [0.0, -0.1, 1.01])
    def test_out_of_range(self, r):
        with pytest.raises(ConfigError):
            retention_to_k(r, 10)

    def test_gate_config_validates(self):
        with pytest.raises(ConfigError):
            GateConfig(0.0)


class TestTopKSoftmax:
    def test_full_retention_is_uniform_on_ties(self):
        out = topk_softmax(Tensor([1.0, 1.0, 1.0]), GateConfig(1.0))
        np.testing.assert_allclose(out.weights.data, [1 / 3] * 3, atol=1e-15)

    def test_reference_k2(self):
        out = topk_softmax(Tensor([3.0, 1.0, 2.0]), GateConfig(2 / 3))
        assert out.k == 2
        oracle = [sigmoid(1.0), 0.0, sigmoid(-1.0)]
        np.testing.assert_allclose(out.weights.data, oracle, rtol=1e-14)
        np.testing.assert_allclose(out.weights.data, [0.73106, 0, 0.26894], atol=1e-5)

    def test_single_winner(self):
        out = topk_softmax(Tensor([5.0, 0, 0, 0]), GateConfig(0.25))
        np.testing.assert_array_equal(out.weights.data, [1, 0, 0, 0])

    def test_ties_go_to_lower_index(self):
        mask = topk_mask(np.array([1.0, 2.0, 2.0, 2.0]), 2, 0)
        np.testing.assert_array_equal(mask, [False, True, True, False])

    def test_unselected_are_exact_zero(self, rng):
        out = topk_softmax(Tensor(rng.normal(size=(4, 10))), GateConfig(0.3, axis=1))
        assert np.all(out.weights.data[~out.mask] == 0.0)

    def test_per_slice_selection_along_axis(self, rng):
        z = rng.normal(size=(2, 6, 3))
        out = topk_softmax(Tensor(z), GateConfig(0.5, axis=1))
        np.testing.assert_array_equal(out.mask.sum(axis=1), np.full((2, 3), 3))
        np.testing.assert_allclose(out.weights.data.sum(axis=1), 1.0, atol=1e-12)

    def test_non_finite_logits(self):
        with pytest.raises(NumericalError):
            topk_softmax(Tensor([1.0, np.nan]), GateConfig(0.5))

    def test_bad_axis(self):
        with pytest.raises(ConfigError):
            topk_softmax(Tensor(np.zeros((2, 3))), GateConfig(0.5, axis=2))

    def test_frozen_mask_shape_checked(self):
        with pytest.raises(ConfigError):
            topk_softmax(Tensor([1.0, 2.0]), GateConfig(0.5), mask=np.array([True]))

    def test_float32_preserved(self, rng):
        out = topk_softmax(Tensor(rng.normal(size=(3, 8)).astype(np.float32)), GateConfig(0.5))
        assert out.weights.dtype == np.float32


class TestGateProperties:
    @settings(max_examples=60, deadline=None)
    @given(arrays(np.float64, st.integers(1, 40), elements=st.floats(-30, 30)),
           st.sampled_from([0.1, 0.3, 0.5, 0.7, 0.9, 1.0]), st.floats(-100, 100))
    def test_invariants(self, z, r, shift):
        out = topk_softmax(Tensor(z), GateConfig(r))
        w, m, k = out.weights.data, out.mask, out.k
        assert np.all(w >= 0)
        assert m.sum() == k and np.count_nonzero(w) <= k
        assert math.isclose(w[m].sum(), 1.0, abs_tol=1e-6)
        if not m.all():
            assert z[m].min() >= z[~m].max()
        shifted = topk_softmax(Tensor(z + shift), GateConfig(r))
        ordered = np.sort(z)[::-1]
        gap = ordered[k - 1] - ordered[k] if k < z.size else np.inf
        # shifting can round a near-tie into an exact tie; only well-separated boundaries must hold
        if gap > 1e-9 * (1 + abs(shift) + np.abs(z).max()):
            np.testing.assert_array_equal(shifted.mask, m)
            np.testing.assert_allclose(shifted.weights.data, w, atol=1e-12)

    def test_exactly_k_nonzero_with_distinct_logits(self, rng):
        z = rng.permutation(20).astype(float)
        out = topk_softmax(Tensor(z), GateConfig(0.3))
        assert np.count_nonzero(out.weights.data) == out.k == 6


class TestBackward:
    def test_reference_row(self):
        out = topk_softmax(Tensor([3.0, 1.0, 2.0]), GateConfig(2 / 3))
        grad = topk_softmax_backward(np.array([1.0, 0.0, 0.0]), out)
        p0, p2 = sigmoid(1.0), sigmoid(-1.0)
        np.testing.assert_allclose(grad, [p0 * (1 - p0), 0.0, -p0 * p2], rtol=1e-14)
        np.testing.assert_allclose(grad, [0.19661, 0, -0.19661], atol=1e-5)

    def test_zero_upstream(self, rng):
        out = topk_softmax(Tensor(rng.normal(size=5)), GateConfig(0.6))
        np.testing.assert_array_equal(topk_softmax_backward(np.zeros(5), out), np.zeros(5))

    def test_full_k_matches_dense(self, rng):
        z, g = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
        sparse = topk_softmax_backward(g, topk_softmax(Tensor(z), GateConfig(1.0)))
        p = tn.softmax_axis(Tensor(z)).data
        np.testing.assert_allclose(sparse, p * (g - (g * p).sum(-1, keepdims=True)), atol=1e-15)

    def test_autograd_agrees_with_explicit_backward(self, rng):
        z = Tensor(rng.normal(size=(2, 5)), requires_grad=True)
        g = rng.normal(size=(2, 5))
        out = topk_softmax(z, GateConfig(0.6))
        tn.sum(out.weights * Tensor(g)).backward()
        np.testing.assert_allclose(z.grad, topk_softmax_backward(g, out), atol=1e-15)

    @pytest.mark.parametrize("seed", range(5))
    def test_finite_differences_with_frozen_mask(self, seed):
        rng = np.random.default_rng(seed)
        z0 = rng.permutation(18).reshape(3, 6) * 0.5 + rng.normal(scale=0.01, size=(3, 6))
        mask = topk_softmax(Tensor(z0), GateConfig(0.5)).mask
        proj = Tensor(rng.normal(size=(3, 6)))
        z = Tensor(z0, requires_grad=True)
        report = grad_check(lambda a: tn.sum(topk_softmax(a, GateConfig(0.5), mask).weights * proj), [z])
        assert report.passed, report.line()


class TestDenseGate:
    def test_pair(self):
        np.testing.assert_array_equal(dense_softmax_gate(Tensor([0.0, 0.0])).weights.data, [0.5, 0.5])

    def test_bitwise_equal_to_softmax(self, rng):
        z = rng.normal(size=(2, 5, 4))
        for axis in range(3):
            np.testing.assert_array_equal(dense_softmax_gate(Tensor(z), axis).weights.data,
                                          tn.softmax_axis(Tensor(z), axis).data)

    def test_equals_full_retention(self, rng):
        z = Tensor(rng.normal(size=(3, 7)))
        np.testing.assert_array_equal(dense_softmax_gate(z).weights.data,
                                      topk_softmax(z, GateConfig(1.0)).weights.data)
        assert dense_softmax_gate(z).mask.all()
