import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from guidecap.corpus import FrequentWordSet, Vocabulary
from guidecap.exceptions import DimensionError
from guidecap.guiding import (compose_input, discriminative_loss, guiding_backward_batch, guiding_forward,
                              guiding_forward_batch, hinge_rank_loss, violated_fraction)
from guidecap.numerics import relative_error, scalar_fd

scores = arrays(np.float64, st.integers(2, 8), elements=st.floats(-5, 5, allow_nan=False))


def _params(rng, d=3, Z=4):
    return rng.normal(size=(Z, d + Z)), rng.normal(size=Z)


class TestGuidingForward:
    def test_singleton(self, rng):
        W, b = _params(rng)
        a, e = rng.normal(size=3), rng.uniform(size=4)
        np.testing.assert_allclose(guiding_forward([a], e, W, b), W @ np.concatenate([a, e]) + b)

    def test_both_masked_is_bias(self, rng):
        W, b = _params(rng)
        for _ in range(3):
            v = guiding_forward(rng.normal(size=(5, 3)), rng.uniform(size=4), W, b, True, True)
            np.testing.assert_array_equal(v, b)

    def test_masks(self, rng):
        W, b = _params(rng)
        A, e = rng.normal(size=(5, 3)), rng.uniform(size=4)
        np.testing.assert_array_equal(guiding_forward(A, e, W, b, mask_A=True),
                                      guiding_forward(np.zeros_like(A), e, W, b))
        np.testing.assert_array_equal(guiding_forward(A, e, W, b, mask_e=True),
                                      guiding_forward(A, np.zeros(4), W, b))

    @given(st.integers(0, 10_000), st.integers(1, 8))
    def test_permutation_bitwise(self, seed, k):
        rng = np.random.default_rng(seed)
        W, b = _params(rng)
        A, e = rng.normal(size=(k, 3)), rng.uniform(size=4)
        perm = rng.permutation(k)
        assert np.array_equal(guiding_forward(A, e, W, b), guiding_forward(A[perm], e, W, b))

    def test_winners(self, rng):
        W, b = _params(rng)
        A = rng.normal(size=(5, 3))
        v = guiding_forward(A, np.zeros(4), W, b)
        u = np.concatenate([A, np.zeros((5, 4))], axis=1) @ W.T + b
        np.testing.assert_array_equal(v.winners, u.argmax(axis=0))

    def test_dim_mismatch(self, rng):
        W, b = _params(rng)
        with pytest.raises(DimensionError):
            guiding_forward(rng.normal(size=(2, 5)), np.zeros(4), W, b)

    def test_backward(self, rng):
        W, b = _params(rng)
        A, e = rng.normal(size=(2, 5, 3)), rng.uniform(size=(2, 4))
        dv = rng.normal(size=(2, 4))
        _, _, cache = guiding_forward_batch(A, e, W, b)
        dW, db, _ = guiding_backward_batch(dv, cache, W)
        f = lambda W_, b_: float((guiding_forward_batch(A, e, W_, b_)[0] * dv).sum())
        assert relative_error(dW, scalar_fd(lambda t: f(t, b), W)).max() < 1e-6
        assert relative_error(db, scalar_fd(lambda t: f(W, t), b)).max() < 1e-6


class TestCompose:
    def test_zero_wv(self, rng):
        emb = rng.normal(size=6)
        assert np.array_equal(compose_input(emb, rng.normal(size=4), np.zeros((6, 4))), emb)

    def test_zero_v(self, rng):
        emb = rng.normal(size=6)
        assert np.array_equal(compose_input(emb, np.zeros(4), rng.normal(size=(6, 4))), emb)

    def test_constant_over_steps(self, rng):
        emb, v, Wv = rng.normal(size=6), rng.normal(size=4), rng.normal(size=(6, 4))
        assert np.array_equal(compose_input(emb, v, Wv), compose_input(emb, v, Wv))

    def test_mismatch(self, rng):
        with pytest.raises(DimensionError):
            compose_input(np.zeros(6), np.zeros(3), np.zeros((6, 4)))


class TestDiscriminative:
    def test_hand_example(self):
        loss, _ = hinge_rank_loss(np.array([2.0, 0.5, 1.5]), np.array([1, 0, 0]))
        assert abs(loss - 1 / 6) < 1e-12

    def test_satisfied(self):
        assert hinge_rank_loss(np.array([3.0, 1.0, 0.5]), np.array([1, 0, 0]))[0] == 0

    def test_empty_c(self):
        assert hinge_rank_loss(np.array([3.0, 1.0]), np.array([0, 0]))[0] == 0

    def test_caption_helper(self):
        v = Vocabulary.from_tokens(["<start>", "<end>", "<unk>", "dog", "cat", "sat"])
        fws = FrequentWordSet(["dog", "cat", "sat"], v)
        assert abs(discriminative_loss([2.0, 0.5, 1.5], [0, 3, 1], fws) - 1 / 6) < 1e-12

    @given(scores, st.data())
    def test_nonnegative_and_shift(self, s, data):
        labels = np.array(data.draw(st.lists(st.booleans(), min_size=len(s), max_size=len(s))))
        c = data.draw(st.floats(-10, 10))
        l0 = hinge_rank_loss(s, labels)[0]
        assert l0 >= 0
        assert abs(l0 - hinge_rank_loss(s + c, labels)[0]) < 1e-9

    @given(st.integers(0, 10_000))
    def test_gradient_away_from_kinks(self, seed):
        rng = np.random.default_rng(seed)
        s = rng.normal(size=6) * 2
        labels = rng.integers(0, 2, size=6)
        diffs = 1 - (s[:, None] - s[None, :])
        if np.min(np.abs(diffs)) <= 1e-3:
            return
        _, g = hinge_rank_loss(s, labels)
        want = scalar_fd(lambda t: float(hinge_rank_loss(t, labels)[0]), s, 1e-6)
        assert relative_error(g, want).max() <= 1e-4

    def test_violated_fraction(self):
        s = np.array([[2.0, 0.5, 1.5], [0.0, 1.0, 2.0]])
        labels = np.array([[1, 0, 0], [1, 0, 0]])
        assert violated_fraction(s, labels) == pytest.approx(2 / 4)
