import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import random_net
from guidecap.exceptions import DataError, DimensionError
from guidecap.model import (DecoderState, attend, attend_backward, attend_forward, embed, init_decoder_state,
                            lstm_backward, lstm_forward, lstm_step, make_batch, output_distribution)
from guidecap.numerics import ParamStore, finite_diff_grad, relative_error, scalar_fd
from guidecap.trainer import init_params


def _att_params(rng, d=5, H=4, att=3, scale=1.0):
    s = ParamStore()
    s.add("dec.W_a", scale * rng.normal(size=(att, d)))
    s.add("dec.b_a", rng.normal(size=att), bias=True)
    s.add("dec.W_h", scale * rng.normal(size=(att, H)))
    s.add("dec.w", scale * rng.normal(size=att))
    return s


class TestAttend:
    def test_identical_annotations_uniform(self, rng):
        P = _att_params(rng)
        alpha, z = attend(np.tile(rng.normal(size=5), (4, 1)), rng.normal(size=4), P)
        np.testing.assert_allclose(alpha, 0.25, atol=1e-15)

    def test_single_annotation(self, rng):
        P = _att_params(rng)
        a = rng.normal(size=(1, 5))
        alpha, z = attend(a, rng.normal(size=4), P)
        assert alpha.tolist() == [1.0]
        np.testing.assert_allclose(z, a[0])

    @given(st.integers(0, 10_000), st.integers(1, 9))
    def test_simplex_and_hull(self, seed, k):
        rng = np.random.default_rng(seed)
        P = _att_params(rng, scale=3.0)
        A = rng.normal(size=(k, 5)) * 4
        alpha, z = attend(A, rng.normal(size=4), P)
        assert abs(alpha.sum() - 1) < 1e-9 and np.all(alpha >= 0) and np.all(alpha <= 1)
        assert np.all(A.min(axis=0) - 1e-9 <= z) and np.all(z <= A.max(axis=0) + 1e-9)

    def test_dim_mismatch(self, rng):
        with pytest.raises(DimensionError):
            attend(rng.normal(size=(3, 4)), rng.normal(size=4), _att_params(rng))
        with pytest.raises(DimensionError):
            attend(rng.normal(size=(3, 5)), rng.normal(size=2), _att_params(rng))

    def test_backward(self, rng):
        P = _att_params(rng)
        M, h = rng.normal(size=(2, 4, 5)), rng.normal(size=(2, 4))
        dz = rng.normal(size=(2, 5))
        names = ["dec.W_a", "dec.b_a", "dec.W_h", "dec.w"]
        args = lambda: [P[n] for n in names]
        _, _, cache = attend_forward(M, h, *args())
        dM, dh, grads = attend_backward(dz, cache, P["dec.W_a"], P["dec.W_h"], P["dec.w"])
        f = lambda: float((attend_forward(M, h, *args())[1] * dz).sum())
        fd = finite_diff_grad(f, P)
        for n, g in zip(names, grads):
            assert relative_error(g, fd[n]).max() < 1e-6, n
        assert relative_error(dM, scalar_fd(lambda t: float((attend_forward(t, h, *args())[1] * dz).sum()), M)).max() < 1e-6
        assert relative_error(dh, scalar_fd(lambda t: float((attend_forward(M, t, *args())[1] * dz).sum()), h)).max() < 1e-6


def _lstm_params(rng, n_in=3, H=4, d=5, T=None, b=None):
    s = ParamStore()
    s.add("dec.T", rng.normal(size=(4 * H, n_in + H + d)) if T is None else T)
    s.add("dec.b", np.zeros(4 * H) if b is None else b, bias=True)
    return s


class TestLSTM:
    def test_zero_weights_closed_form(self, rng):
        P = _lstm_params(rng, T=np.zeros((16, 12)))
        c_prev = rng.normal(size=4)
        s = lstm_step(rng.normal(size=3), DecoderState(rng.normal(size=4), c_prev), rng.normal(size=5), P)
        np.testing.assert_allclose(s.c, 0.5 * c_prev, rtol=1e-15)
        np.testing.assert_allclose(s.h, 0.5 * np.tanh(0.5 * c_prev), rtol=1e-15)

    def test_saturated_forget(self, rng):
        b = np.concatenate([np.full(4, -40.0), np.full(4, 40.0), np.zeros(8)])
        P = _lstm_params(rng, T=np.zeros((16, 12)), b=b)
        c_prev = rng.normal(size=4)
        s = lstm_step(rng.normal(size=3), DecoderState(np.zeros(4), c_prev), rng.normal(size=5), P)
        np.testing.assert_allclose(s.c, c_prev, atol=1e-12)

    @given(st.integers(0, 10_000))
    def test_h_bounded(self, seed):
        rng = np.random.default_rng(seed)
        P = _lstm_params(rng)
        s = lstm_step(rng.normal(size=3) * 5, DecoderState(rng.uniform(-1, 1, 4), rng.normal(size=4) * 5),
                      rng.normal(size=5), P)
        assert np.all(np.abs(s.h) < 1)

    def test_dim_mismatch(self, rng):
        with pytest.raises(DimensionError):
            lstm_step(np.zeros(2), DecoderState(np.zeros(4), np.zeros(4)), np.zeros(5), _lstm_params(rng))

    def test_backward(self, rng):
        P = _lstm_params(rng, b=rng.normal(size=16))
        x, h, z, c = (rng.normal(size=(2, n)) for n in (3, 4, 5, 4))
        dh, dc = rng.normal(size=(2, 4)), rng.normal(size=(2, 4))
        out = lambda: lstm_forward(x, h, z, c, P["dec.T"], P["dec.b"])
        f = lambda: float((out()[0] * dh).sum() + (out()[1] * dc).sum())
        du, dc_prev, dT, db = lstm_backward(dh, dc, out()[2], P["dec.T"])
        fd = finite_diff_grad(f, P)
        assert relative_error(dT, fd["dec.T"]).max() < 1e-6
        assert relative_error(db, fd["dec.b"]).max() < 1e-6
        g = lambda cp: float((lstm_forward(x, h, z, cp, P["dec.T"], P["dec.b"])[0] * dh).sum()
                             + (lstm_forward(x, h, z, cp, P["dec.T"], P["dec.b"])[1] * dc).sum())
        assert relative_error(dc_prev, scalar_fd(g, c)).max() < 1e-6


class TestInitAndOutput:
    def test_zero_init(self, rng):
        P = ParamStore()
        P.add("init.W_h", np.zeros((4, 5)))
        P.add("init.W_c", np.zeros((4, 5)))
        s = init_decoder_state(rng.normal(size=(3, 5)), P)
        assert not s.h.any() and not s.c.any()

    def test_init_permutation_and_range(self, rng):
        P = ParamStore()
        P.add("init.W_h", rng.normal(size=(4, 5)) * 10)
        P.add("init.W_c", rng.normal(size=(4, 5)))
        A = rng.normal(size=(6, 5))
        s1, s2 = init_decoder_state(A, P), init_decoder_state(A[::-1], P)
        np.testing.assert_allclose(s1.h, s2.h, atol=1e-15)
        assert np.all(np.abs(s1.h) <= 1)

    def test_uniform_output(self):
        P = ParamStore()
        P.add("W_out", np.zeros((7, 4)))
        np.testing.assert_allclose(output_distribution(np.ones(4), P), 1 / 7)

    def test_output_shift_and_sum(self, rng):
        P = ParamStore()
        P.add("W_out", rng.normal(size=(7, 4)))
        h = rng.normal(size=4)
        p = output_distribution(h, P)
        assert abs(p.sum() - 1) < 1e-9
        with pytest.raises(DimensionError):
            output_distribution(np.ones(3), P)

    def test_embed(self):
        P = ParamStore()
        P.add("E", np.eye(4))
        np.testing.assert_array_equal(embed(2, P), [0, 0, 1, 0])
        assert np.array_equal(embed(1, P), embed(1, P))
        with pytest.raises(IndexError):
            embed(4, P)


def _batch(rng, net, n=1, L=5):
    caps = [[0, *rng.integers(3, net.vocab_size, size=L).tolist(), 1] for _ in range(n)]
    A = [rng.normal(size=(4, net.annot_dim)) for _ in range(n)]
    e = [rng.uniform(size=net.n_frequent) for _ in range(n)]
    labels = [rng.integers(0, 2, size=net.n_frequent) for _ in range(n)]
    return make_batch(A, e, caps, labels)


class TestSoftAttentionNet:
    def test_embedding_gradient_rows(self, rng):
        net = random_net()
        b = _batch(rng, net)
        net.params.zero_grad()
        net.loss(b, grad=True)
        used = set(b.tokens[0, :-1].tolist())
        dE = net.params.grad("E")
        for row in range(net.vocab_size):
            assert (np.abs(dE[row]).sum() > 0) == (row in used)
        store = net.params.astype(np.longdouble)
        saved, net.params = net.params, store
        try:
            fd = finite_diff_grad(lambda: net.loss(b).total, store, names=["E"])["E"]
        finally:
            net.params = saved
        assert relative_error(dE, fd).max() < 1e-4

    def test_gradient_linear_in_lambda(self, rng):
        net = random_net(seed=2)
        b = _batch(rng, net, n=3)
        grads = {}
        for lam in (0.0, 1.0, 10.0):
            net.params.zero_grad()
            net.loss(b, lam, grad=True)
            grads[lam] = net.params.grads()
        for name in grads[0.0]:
            np.testing.assert_allclose(grads[10.0][name] - grads[0.0][name],
                                       10 * (grads[1.0][name] - grads[0.0][name]), atol=1e-10)

    def test_batch_mean_of_pairs(self, rng):
        net = random_net(seed=3)
        b = _batch(rng, net, n=3)
        whole = net.loss(b)
        parts = [net.loss(make_batch([b.A[i]], [b.e[i]], [b.tokens[i].tolist()], [b.labels[i]])) for i in range(3)]
        assert whole.nll == pytest.approx(np.mean([p.nll for p in parts]), rel=1e-12)
        assert whole.dis1 == pytest.approx(np.mean([p.dis1 for p in parts]), rel=1e-12)

    def test_padding_ignored(self, rng):
        net = random_net(seed=4)
        A, e = rng.normal(size=(4, 6)), rng.uniform(size=5)
        short = [0, 5, 6, 1]
        long_ = [0, 5, 6, 7, 8, 9, 1]
        lab = np.zeros(5)
        alone = net.loss(make_batch([A], [e], [short], [lab]))
        pair = net.loss(make_batch([A, A], [e, e], [short, long_], [lab, lab]))
        second = net.loss(make_batch([A], [e], [long_], [lab]))
        assert pair.nll == pytest.approx((alone.nll + second.nll) / 2, rel=1e-12)

    def test_unguided_ignores_guidance(self, rng):
        net = random_net(guided=False)
        b = _batch(rng, net)
        assert net.loss(b).dis1 == 0 and net.loss(b, 10).total == net.loss(b, 0).total

    def test_input_checks(self, rng):
        net = random_net()
        with pytest.raises(DataError):
            make_batch([np.zeros((4, 6))], [np.zeros(5)], [[0]], [np.zeros(5)])
        with pytest.raises(DimensionError):
            make_batch([np.zeros((4, 6)), np.zeros((3, 6))], [np.zeros(5)] * 2, [[0, 1]] * 2, [np.zeros(5)] * 2)
        b = make_batch([np.zeros((4, 7))], [np.zeros(5)], [[0, 1]], [np.zeros(5)])
        with pytest.raises(DimensionError):
            net.loss(b)
