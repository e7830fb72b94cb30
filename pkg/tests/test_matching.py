import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from shiftselect.matching import (
    TAU_INIT,
    LossState,
    aggregate_similarity,
    frame_similarities,
    inverted_softmax,
    similarity_matrix,
    symmetric_ce_loss,
)
from shiftselect.numerics import Tensor, grad_check

finite = st.floats(-1.0, 1.0, allow_nan=False)


class TestFrameSimilarities:
    def test_cosine(self):
        out = frame_similarities(np.array([1.0, 0.0]), np.array([[2.0, 0.0], [0.0, 3.0], [-1.0, 1.0]])).data
        np.testing.assert_allclose(out, [1.0, 0.0, -math.sqrt(0.5)], atol=1e-12)

    def test_bounded(self):
        rng = np.random.default_rng(0)
        out = frame_similarities(rng.normal(size=6), rng.normal(size=(9, 6))).data
        assert np.all(np.abs(out) <= 1 + 1e-12)


class TestAggregate:
    def test_lambda_zero_is_mean(self):
        s = np.array([0.2, 0.8, -0.3, 0.5])
        assert aggregate_similarity(s, 0.0).item() == np.mean(s)

    def test_constant(self):
        for lam in (0.0, 1.0, 4.0, 64.0):
            assert aggregate_similarity(np.full(5, 0.37), lam).item() == pytest.approx(0.37, abs=1e-15)

    def test_known_value(self):
        # w = softmax([0.8, 3.2]) computed independently
        w_hi = 1.0 / (1.0 + math.exp(-2.4))
        expected = 0.2 * (1 - w_hi) + 0.8 * w_hi
        got = aggregate_similarity(np.array([0.2, 0.8]), 4.0).item()
        assert got == pytest.approx(expected, abs=1e-12)
        assert got == pytest.approx(0.7501, abs=1e-4)

    def test_large_lambda_approaches_max(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            s = rng.uniform(-1, 1, size=6)
            s[np.argmax(s)] = np.sort(s)[-2] + 0.1 + rng.random() * 0.5
            assert abs(aggregate_similarity(s, 64.0).item() - s.max()) < 1e-2

    @settings(max_examples=200, deadline=None)
    @given(arrays(np.float64, st.integers(1, 8), elements=finite), st.sampled_from([0.0, 1.0, 4.0, 16.0]), st.data())
    def test_monotone_above_threshold(self, s, lam, data):
        """ds/ds_j = w_j (1 + lam (s_j - s)), so raising s_j never lowers s while s_j >= s - 1/lam."""
        i = data.draw(st.integers(0, len(s) - 1))
        base = aggregate_similarity(s, lam).item()
        if lam > 0 and s[i] < base - 1.0 / lam:
            return
        bumped = s.copy()
        bumped[i] += data.draw(st.floats(0.0, 1.0))
        assert aggregate_similarity(bumped, lam).item() >= base - 1e-12

    def test_partial_derivative(self):
        rng = np.random.default_rng(4)
        s = Tensor(rng.uniform(-1, 1, size=6), requires_grad=True)
        out = aggregate_similarity(s, 4.0)
        out.backward()
        w = np.exp(4.0 * s.data) / np.exp(4.0 * s.data).sum()
        np.testing.assert_allclose(s.grad, w * (1 + 4.0 * (s.data - out.item())), atol=1e-12)

    def test_not_globally_monotone(self):
        # a low outlier that rises toward the mean pulls weight away from the max
        low = aggregate_similarity(np.array([1.0, 0.0]), 4.0).item()
        mid = aggregate_similarity(np.array([1.0, 0.5]), 4.0).item()
        assert mid < low

    def test_negative_lambda(self):
        with pytest.raises(ValueError):
            aggregate_similarity(np.zeros(3), -1.0)


class TestSimilarityMatrix:
    def test_single_pair(self):
        rng = np.random.default_rng(0)
        q, v = rng.normal(size=(1, 6)), rng.normal(size=(1, 4, 6))
        expected = aggregate_similarity(frame_similarities(q[0], v[0])).item()
        assert similarity_matrix(q, v).data[0, 0] == pytest.approx(expected, abs=1e-12)

    def test_loop_oracle(self):
        rng = np.random.default_rng(1)
        q, v = rng.normal(size=(4, 6)), rng.normal(size=(4, 3, 6))
        got = similarity_matrix(q, v, 4.0).data
        for i in range(4):
            for j in range(4):
                c = [q[i] @ f / (np.linalg.norm(q[i]) * np.linalg.norm(f)) for f in v[j]]
                w = np.exp(4.0 * np.array(c))
                assert got[i, j] == pytest.approx((w / w.sum()) @ c, abs=1e-12)

    def test_duplicate_column(self):
        rng = np.random.default_rng(2)
        q, v = rng.normal(size=(3, 6)), rng.normal(size=(2, 3, 6))
        got = similarity_matrix(q, np.concatenate([v, v[:1]])).data
        np.testing.assert_array_equal(got[:, 2], got[:, 0])

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            similarity_matrix(np.zeros((2, 4)), np.zeros((2, 3, 5)))


class TestLoss:
    def test_single_pair(self):
        assert symmetric_ce_loss(np.array([[0.4]]), 10.0).item() == pytest.approx(0.0, abs=1e-15)

    def test_identity_two_by_two(self):
        got = symmetric_ce_loss(np.eye(2), 1.0).item()
        assert got == pytest.approx(math.log1p(math.exp(-1.0)), abs=1e-12)
        assert got == pytest.approx(0.31326, abs=1e-5)

    def test_shift_invariance(self):
        sim = np.random.default_rng(0).uniform(-1, 1, size=(5, 5))
        a = symmetric_ce_loss(sim, 3.0).item()
        b = symmetric_ce_loss(sim + 0.7, 3.0).item()
        assert a == pytest.approx(b, abs=1e-12)

    def test_permutation_consistency(self):
        rng = np.random.default_rng(1)
        sim = rng.uniform(-1, 1, size=(6, 6))
        p = rng.permutation(6)
        assert symmetric_ce_loss(sim[p][:, p], 5.0).item() == pytest.approx(symmetric_ce_loss(sim, 5.0).item(), abs=1e-12)

    def test_non_square(self):
        with pytest.raises(ValueError):
            symmetric_ce_loss(np.zeros((2, 3)), 1.0)

    def test_gradient_including_temperature(self):
        rng = np.random.default_rng(2)
        state = LossState(5.0)

        def loss(sim, log_tau):
            state.log_tau = log_tau
            return symmetric_ce_loss(sim, state)

        report = grad_check(loss, [rng.uniform(-1, 1, size=(4, 4)), np.array([math.log(5.0)])], tol=1e-5)
        assert report.passed, report

    def test_temperature_state(self):
        state = LossState()
        assert state.tau.item() == pytest.approx(TAU_INIT)
        state.log_tau.data[:] = 10.0
        assert state.tau.item() == pytest.approx(100.0)
        state.log_tau.data[:] = -3.0
        assert state.tau.item() == pytest.approx(1.0)


class TestInvertedSoftmax:
    def test_single_query(self):
        sim = np.array([[0.3, 0.9, -0.2]])
        np.testing.assert_allclose(inverted_softmax(sim, 20.0), sim, atol=1e-15)

    def test_diagonal_dominant(self):
        sim = 0.9 * np.eye(4) + 0.1
        out = inverted_softmax(sim, 20.0)
        np.testing.assert_array_equal(np.argmax(out, axis=1), np.arange(4))

    def test_hub_is_demoted(self):
        sim = np.array([[0.9, 0.1, 0.8], [0.2, 0.7, 0.85], [0.1, 0.2, 0.6]])
        assert np.argmax(sim[1]) == 2
        out = inverted_softmax(sim, 20.0)
        # column 2 attracts every query; query 1 now prefers its own video
        assert np.argmax(out[1]) == 1
        assert np.argsort(-out[1]).tolist().index(2) == 1

    def test_identical_columns_keep_argmax(self):
        rng = np.random.default_rng(3)
        profile = rng.uniform(-1, 1, size=5)
        sim = np.tile(profile[:, None], (1, 4)) + np.arange(4)[None, :] * 1e-3
        out = inverted_softmax(sim, 20.0)
        np.testing.assert_array_equal(np.argmax(out, axis=1), np.argmax(sim, axis=1))

    def test_bad_beta(self):
        with pytest.raises(ValueError):
            inverted_softmax(np.eye(2), 0.0)

    def test_accepts_tensor(self):
        np.testing.assert_array_equal(inverted_softmax(Tensor(np.eye(3))), inverted_softmax(np.eye(3)))
