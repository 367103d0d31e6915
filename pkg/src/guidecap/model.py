"""Attention LSTM decoder and the guided Soft-Attention captioning network.

All network math is batched over a leading axis ``B``. The single-record
functions at the top of the module (``attend``, ``lstm_step``...) wrap the
batched kernels for direct use and testing.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import guiding
from .exceptions import DataError, DimensionError
from .numerics import DTYPE, _check, log_softmax, sigmoid, softmax, softmax_backward, split_gates
from .objective import LOG_FLOOR, LossBreakdown, total_loss_soft


@dataclass
class DecoderState:
    h: np.ndarray
    c: np.ndarray


# --- kernels -------------------------------------------------------------------

def attend_forward(M, h_prev, W_a, b_a, W_h, w):
    """Additive attention over memory ``M`` (B, k, m) given ``h_prev`` (B, H)."""
    _check(M.shape[-1] == W_a.shape[1], f"attend: W_a expects {W_a.shape[1]}-dim annotations, got {M.shape[-1]}")
    _check(h_prev.shape[-1] == W_h.shape[1], f"attend: W_h expects hidden {W_h.shape[1]}, got {h_prev.shape[-1]}")
    pre = np.tanh(M @ W_a.T + b_a + (h_prev @ W_h.T)[:, None, :])
    alpha = softmax(pre @ w, axis=-1)
    z = (alpha[:, None, :] @ M)[:, 0, :]
    return alpha, z, (M, h_prev, pre, alpha)


def attend_backward(dz, cache, W_a, W_h, w):
    """Returns ``dM, dh_prev`` and the parameter grads ``(dW_a, db_a, dW_h, dw)``."""
    M, h_prev, pre, alpha = cache
    dalpha = (M @ dz[:, :, None])[:, :, 0]
    dM = alpha[:, :, None] * dz[:, None, :]
    dscore = softmax_backward(dalpha, alpha)
    dw = np.einsum("bk,bka->a", dscore, pre)
    dact = dscore[:, :, None] * w * (1.0 - pre * pre)
    dhp = dact.sum(axis=1)
    dW_h = dhp.T @ h_prev
    dh_prev = dhp @ W_h
    dW_a = np.einsum("bka,bkm->am", dact, M)
    db_a = dact.sum(axis=(0, 1))
    dM += dact @ W_a
    return dM, dh_prev, (dW_a, db_a, dW_h, dw)


def lstm_forward(x, h_prev, z, c_prev, T, b):
    """Gates (i, f, o, g) from ``T [x; h_prev; z] + b``."""
    u = np.concatenate([x, h_prev, z], axis=-1)
    _check(u.shape[-1] == T.shape[1], f"lstm_step: T expects input of length {T.shape[1]}, got {u.shape[-1]}")
    a = u @ T.T + b
    ai, af, ao, ag = split_gates(a)
    i, f, o, g = sigmoid(ai), sigmoid(af), sigmoid(ao), np.tanh(ag)
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    return h, c, (u, c_prev, i, f, o, g, tc)


def lstm_backward(dh, dc, cache, T):
    """Returns ``du`` (split by the caller), ``dc_prev``, ``dT``, ``db``."""
    u, c_prev, i, f, o, g, tc = cache
    do = dh * tc
    dc = dc + dh * o * (1.0 - tc * tc)
    da = np.concatenate([dc * g * i * (1.0 - i),
                         dc * c_prev * f * (1.0 - f),
                         do * o * (1.0 - o),
                         dc * i * (1.0 - g * g)], axis=-1)
    return da @ T, dc * f, da.T @ u, da.sum(axis=0)


def init_state_forward(M, W_h0, W_c0):
    m = M.mean(axis=1)
    return np.tanh(m @ W_h0.T), np.tanh(m @ W_c0.T), m


# --- single-record public ops ----------------------------------------------------

def _p(params, prefix, name):
    return params[f"{prefix}.{name}"]


def attend(A, h_prev, params, prefix: str = "dec"):
    """Returns ``(alpha, z_hat)`` for one record."""
    A = np.asarray(A, dtype=DTYPE)
    _check(A.ndim == 2 and A.shape[0] >= 1, "attend: A must be a non-empty (k, d) array")
    alpha, z, _ = attend_forward(A[None], np.asarray(h_prev, dtype=DTYPE)[None],
                                 _p(params, prefix, "W_a"), _p(params, prefix, "b_a"),
                                 _p(params, prefix, "W_h"), _p(params, prefix, "w"))
    return alpha[0], z[0]


def lstm_step(x, state: DecoderState, z_hat, params, prefix: str = "dec") -> DecoderState:
    h, c, _ = lstm_forward(np.asarray(x, dtype=DTYPE)[None], state.h[None], np.asarray(z_hat, dtype=DTYPE)[None],
                           state.c[None], _p(params, prefix, "T"), _p(params, prefix, "b"))
    return DecoderState(h[0], c[0])


def init_decoder_state(A, params, prefix: str = "init") -> DecoderState:
    A = np.asarray(A, dtype=DTYPE)
    h, c, _ = init_state_forward(A[None], _p(params, prefix, "W_h"), _p(params, prefix, "W_c"))
    return DecoderState(h[0], c[0])


def output_distribution(h, params) -> np.ndarray:
    W = params["W_out"]
    _check(np.shape(h)[-1] == W.shape[1], f"output_distribution: W_out expects hidden {W.shape[1]}, got {np.shape(h)[-1]}")
    return softmax(np.asarray(h, dtype=DTYPE) @ W.T)


def embed(y: int, params) -> np.ndarray:
    E = params["E"]
    if not 0 <= int(y) < E.shape[0]:
        raise IndexError(f"token id {y} outside vocabulary of size {E.shape[0]}")
    return E[int(y)].copy()


# --- rollout engine --------------------------------------------------------------

def rollout_forward(X, M, h0, c0, params, prefixes: Sequence[str]):
    """Run one attention-LSTM step per entry of ``prefixes``.

    ``X`` is (S, B, in). Returns hidden states (S, B, H), final ``(h, c)``
    and per-step caches.
    """
    h, c = h0, c0
    hs, caches = [], []
    for t, pf in enumerate(prefixes):
        alpha, z, acache = attend_forward(M, h, params[pf + ".W_a"], params[pf + ".b_a"],
                                          params[pf + ".W_h"], params[pf + ".w"])
        h, c, lcache = lstm_forward(X[t], h, z, c, params[pf + ".T"], params[pf + ".b"])
        hs.append(h)
        caches.append((acache, lcache, alpha))
    return np.stack(hs), h, c, caches


def rollout_backward(dH, dhT, dcT, caches, params, prefixes, acc, n_in: int):
    """Reverse of :func:`rollout_forward`.

    ``dH`` is the external gradient on each step's hidden output. Parameter
    gradients go through ``acc(name, grad)``. Returns ``dX, dM, dh0, dc0``.
    """
    dh, dc = dhT.copy(), dcT.copy()
    dX = np.zeros(dH.shape[:2] + (n_in,), dtype=DTYPE)
    dM = None
    H = dH.shape[-1]
    for t in range(len(prefixes) - 1, -1, -1):
        pf = prefixes[t]
        acache, lcache, _ = caches[t]
        dh = dh + dH[t]
        du, dc, dT, db = lstm_backward(dh, dc, lcache, params[pf + ".T"])
        acc(pf + ".T", dT)
        acc(pf + ".b", db)
        dX[t] = du[:, :n_in]
        dh = du[:, n_in:n_in + H]
        dMt, dh_att, (dW_a, db_a, dW_h, dw) = attend_backward(du[:, n_in + H:], acache, params[pf + ".W_a"],
                                                               params[pf + ".W_h"], params[pf + ".w"])
        dh = dh + dh_att
        dM = dMt if dM is None else dM + dMt
        acc(pf + ".W_a", dW_a)
        acc(pf + ".b_a", db_a)
        acc(pf + ".W_h", dW_h)
        acc(pf + ".w", dw)
    return dX, dM, dh, dc


def attention_lstm_specs(prefix: str, n_in: int, hidden: int, mem: int, att: int):
    return {
        f"{prefix}.W_a": ((att, mem), False),
        f"{prefix}.b_a": ((att,), True),
        f"{prefix}.W_h": ((att, hidden), False),
        f"{prefix}.w": ((att,), False),
        f"{prefix}.T": ((4 * hidden, n_in + hidden + mem), False),
        f"{prefix}.b": ((4 * hidden,), True),
    }


# --- batches -----------------------------------------------------------------------

@dataclass
class Batch:
    """Teacher-forcing batch of (image, caption) pairs.

    ``tokens`` is (B, L+1) starting with START and END-padded; ``mask`` (B, L)
    marks real prediction targets ``tokens[:, 1:]``; ``labels`` (B, F) marks
    frequent words present in each caption.
    """

    A: np.ndarray
    e: np.ndarray
    tokens: np.ndarray
    mask: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.tokens)


def make_batch(A_list, e_list, captions: Sequence[Sequence[int]], labels, end_id: int = 1) -> Batch:
    if not captions:
        raise DataError("empty batch")
    if any(len(c) < 2 for c in captions):
        raise DataError("every caption needs at least START and one target token")
    shapes = {np.shape(a) for a in A_list}
    if len(shapes) != 1:
        raise DimensionError(f"annotation sets in one batch must share a shape, got {sorted(shapes)}")
    L = max(len(c) for c in captions) - 1
    tokens = np.full((len(captions), L + 1), end_id, dtype=np.int64)
    mask = np.zeros((len(captions), L), dtype=DTYPE)
    for b, cap in enumerate(captions):
        tokens[b, :len(cap)] = cap
        mask[b, :len(cap) - 1] = 1.0
    return Batch(np.stack(A_list).astype(DTYPE), np.stack(e_list).astype(DTYPE), tokens, mask,
                 np.asarray(labels, dtype=DTYPE))


# --- networks ------------------------------------------------------------------------

class _Accumulator:
    def __init__(self, store):
        self.store = store

    def __call__(self, name, g):
        self.store.grad(name)[...] += g


class SoftAttentionNet:
    """Guided attention-LSTM decoder over encoder annotation vectors.

    ``guided=False`` drops the guiding path entirely (plain Soft Attention).
    ``mask_annotations`` / ``mask_attributes`` zero the corresponding half of
    every ``[a_i; e]`` fed to the guiding network.
    """

    variant = "soft"

    def __init__(self, vocab_size, n_frequent, annot_dim, hidden=64, embed=32, attention=None,
                 guided=True, mask_annotations=False, mask_attributes=False):
        self.vocab_size = vocab_size
        self.n_frequent = n_frequent
        self.annot_dim = annot_dim
        self.hidden = hidden
        self.embed = embed
        self.attention = attention or hidden
        self.guided = guided
        self.mask_annotations = mask_annotations
        self.mask_attributes = mask_attributes
        self.params = None

    def dims(self) -> Dict[str, object]:
        return {"variant": self.variant, "vocab_size": self.vocab_size, "n_frequent": self.n_frequent,
                "annot_dim": self.annot_dim, "hidden": self.hidden, "embed": self.embed,
                "attention": self.attention, "guided": self.guided,
                "mask_annotations": self.mask_annotations, "mask_attributes": self.mask_attributes}

    def param_specs(self) -> Dict[str, Tuple[tuple, bool]]:
        d, H, Ed, Z = self.annot_dim, self.hidden, self.embed, self.n_frequent
        specs = {"E": ((self.vocab_size, Ed), False), "W_out": ((self.vocab_size, H), False),
                 "init.W_h": ((H, d), False), "init.W_c": ((H, d), False)}
        specs.update(attention_lstm_specs("dec", Ed, H, d, self.attention))
        specs.update({"g.W": ((Z, d + Z), False), "g.b": ((Z,), True), "g.W_v": ((Ed, Z), False)})
        return specs

    # --- shared pieces

    def _check_inputs(self, A, e):
        if A.shape[-1] != self.annot_dim:
            raise DimensionError(f"model expects {self.annot_dim}-dim annotations, got {A.shape[-1]}")
        if e.shape[-1] != self.n_frequent:
            raise DimensionError(f"model expects {self.n_frequent} attributes, got {e.shape[-1]}")

    def _guide(self, prefix, M, e, mask_A, zero):
        P = self.params
        v, winners, cache = guiding.guiding_forward_batch(M, e, P[prefix + ".W"], P[prefix + ".b"],
                                                          mask_A, self.mask_attributes)
        if zero:
            v = np.zeros_like(v)
        return v, guiding.compose_input(np.zeros((len(v), self.embed)), v, P[prefix + ".W_v"]), cache

    def _guide_backward(self, prefix, dgv, v, cache, dis_grad, acc):
        P = self.params
        dW_v, dv = guiding.compose_backward(dgv, v, P[prefix + ".W_v"])
        acc(prefix + ".W_v", dW_v)
        if dis_grad is not None:
            dv = dv + dis_grad
        dW, db, dB = guiding.guiding_backward_batch(dv, cache, P[prefix + ".W"])
        acc(prefix + ".W", dW)
        acc(prefix + ".b", db)
        return dB

    def _decoder_loss(self, batch, M, h0, c0, gv, grad, acc):
        """Teacher-forced decoder; returns summed nll, token nll, and backward outputs."""
        P = self.params
        B = len(batch)
        y_in = batch.tokens[:, :-1].T
        X = P["E"][y_in]
        if gv is not None:
            X = X + gv[None]
        Hs, hT, cT, caches = rollout_forward(X, M, h0, c0, P, ["dec"] * len(y_in))
        logits = Hs @ P["W_out"].T
        logp = log_softmax(logits)
        targets = batch.tokens[:, 1:].T
        lp = np.take_along_axis(logp, targets[:, :, None], axis=-1)[:, :, 0]
        tok = -np.maximum(lp, np.log(LOG_FLOOR)) * batch.mask.T
        token_nll = tok.T[batch.mask > 0].tolist()
        nll = tok.sum() / B
        if not grad:
            return nll, token_nll, None
        dlogits = np.exp(logp)
        np.put_along_axis(dlogits, targets[:, :, None],
                          np.take_along_axis(dlogits, targets[:, :, None], axis=-1) - 1.0, axis=-1)
        dlogits *= batch.mask.T[:, :, None] / B
        acc("W_out", np.einsum("sbv,sbh->vh", dlogits, Hs))
        dH = dlogits @ P["W_out"]
        zeros = np.zeros_like(h0)
        dX, dM, dh0, dc0 = rollout_backward(dH, zeros, zeros, caches, P, ["dec"] * len(y_in), acc, self.embed)
        dE = np.zeros_like(P["E"])
        np.add.at(dE, y_in.reshape(-1), dX.reshape(-1, self.embed))
        acc("E", dE)
        return nll, token_nll, (dX.sum(axis=0), dM, dh0, dc0)

    @staticmethod
    def _init_backward(dh0, dc0, h0, c0, m, acc, prefix="init"):
        acc(prefix + ".W_h", (dh0 * (1.0 - h0 * h0)).T @ m)
        acc(prefix + ".W_c", (dc0 * (1.0 - c0 * c0)).T @ m)

    # --- public API

    def loss(self, batch: Batch, lam: float = 10.0, grad: bool = False, zero_guidance: bool = False) -> LossBreakdown:
        """Mean-over-pairs loss. With ``grad`` the gradients are added to the store."""
        P = self.params
        self._check_inputs(batch.A, batch.e)
        acc = _Accumulator(P)
        B = len(batch)
        h0, c0, m = init_state_forward(batch.A, P["init.W_h"], P["init.W_c"])
        gv = v = gcache = None
        if self.guided:
            v, gv, gcache = self._guide("g", batch.A, batch.e, self.mask_annotations, zero_guidance)
        nll, token_nll, back = self._decoder_loss(batch, batch.A, h0, c0, gv, grad, acc)
        dis = 0.0
        dis_grad = None
        if self.guided:
            dis_rows, dis_g = guiding.hinge_rank_loss(v, batch.labels)
            dis = dis_rows.mean()
            dis_grad = lam * dis_g / B
        if grad:
            dgv, _, dh0, dc0 = back
            self._init_backward(dh0, dc0, h0, c0, m, acc)
            if self.guided and not zero_guidance:
                self._guide_backward("g", dgv, v, gcache, dis_grad, acc)
        return total_loss_soft(nll, dis, lam, token_nll)

    def guiding_vectors(self, A, e) -> List[np.ndarray]:
        """Guiding vectors per guiding network, batched."""
        v, _, _ = self._guide("g", A, e, self.mask_annotations, False)
        return [v]

    def prepare(self, A, e):
        """Per-record decoding context for a batch of records ``A`` (B, k, d), ``e`` (B, F)."""
        A = np.asarray(A, dtype=DTYPE)
        e = np.asarray(e, dtype=DTYPE)
        self._check_inputs(A, e)
        P = self.params
        h0, c0, _ = init_state_forward(A, P["init.W_h"], P["init.W_c"])
        gv = self._guide("g", A, e, self.mask_annotations, False)[1] if self.guided else None
        return {"M": A, "gv": gv, "h": h0, "c": c0}

    def step(self, ctx, y, h, c, rows=None):
        """One decoder step; ``rows`` selects context rows per hypothesis. Returns ``(logp, h, c)``."""
        P = self.params
        M = ctx["M"] if rows is None else ctx["M"][rows]
        x = P["E"][np.asarray(y)]
        if ctx["gv"] is not None:
            x = x + (ctx["gv"] if rows is None else ctx["gv"][rows])
        _, z, _ = attend_forward(M, h, P["dec.W_a"], P["dec.b_a"], P["dec.W_h"], P["dec.w"])
        h, c, _ = lstm_forward(x, h, z, c, P["dec.T"], P["dec.b"])
        return log_softmax(h @ P["W_out"].T), h, c
