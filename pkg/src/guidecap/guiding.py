"""Guiding network, guided decoder input, and the margin-based word ranking loss.

The guiding network is one linear layer applied to every ``[a_i; e]`` followed
by a max over ``i`` per output dimension. Its output ``v`` is held fixed for the
whole caption and enters every decoder input through ``W_v``. The same ``v``
is read as a score per frequent word by :func:`discriminative_loss`.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .numerics import DTYPE, _check, elementwise_max_pool, max_pool_backward


class GuidingVector(np.ndarray):
    """``v`` plus the argmax slot per dimension (``winners``)."""

    def __new__(cls, v, winners):
        obj = np.asarray(v, dtype=DTYPE).view(cls)
        obj.winners = winners
        return obj

    def __array_finalize__(self, obj):
        self.winners = getattr(obj, "winners", None)


def guiding_inputs(A, e, mask_A: bool = False, mask_e: bool = False):
    """Stack ``b_i = [a_i; e]`` for a batch. ``A`` is (B, k, d), ``e`` is (B, F)."""
    A = np.asarray(A, dtype=DTYPE)
    e = np.asarray(e, dtype=DTYPE)
    if mask_A:
        A = np.zeros_like(A)
    if mask_e:
        e = np.zeros_like(e)
    return np.concatenate([A, np.broadcast_to(e[:, None, :], A.shape[:2] + e.shape[-1:])], axis=-1)


def guiding_forward_batch(A, e, W, b, mask_A=False, mask_e=False):
    """Returns ``v`` (B, Z), winners (B, Z) and the cache for backward."""
    bvec = guiding_inputs(A, e, mask_A, mask_e)
    _check(bvec.shape[-1] == W.shape[1],
           f"guiding: W expects inputs of length {W.shape[1]}, got [a; e] of length {bvec.shape[-1]}")
    u = bvec @ W.T + b
    v, winners = elementwise_max_pool(u)
    return v, winners, (bvec, winners, u.shape[1])


def guiding_backward_batch(dv, cache, W):
    """Returns ``(dW, db, dB)`` where ``dB`` is the gradient wrt the stacked ``[a_i; e]``."""
    bvec, winners, k = cache
    du = max_pool_backward(dv, winners, k)
    dW = np.einsum("bkz,bki->zi", du, bvec)
    db = du.sum(axis=(0, 1))
    return dW, db, du @ W


def guiding_forward(A, e, W_g, b_g, mask_A: bool = False, mask_e: bool = False) -> GuidingVector:
    """Single record: ``A`` is (k, d) or a list of vectors, ``e`` has length F."""
    A = np.asarray(A, dtype=DTYPE)
    e = np.asarray(e, dtype=DTYPE)
    _check(A.ndim == 2 and A.shape[0] >= 1, "guiding_forward: A must be a non-empty (k, d) array")
    v, winners, _ = guiding_forward_batch(A[None], e[None], W_g, b_g, mask_A, mask_e)
    return GuidingVector(v[0], winners[0])


def compose_input(embedding, v, W_v):
    """``x_t = E y_t + W_v v``; ``embedding`` may carry leading time/batch axes."""
    v = np.asarray(v)
    _check(W_v.shape[1] == v.shape[-1], f"compose_input: W_v has {W_v.shape[1]} cols, v has {v.shape[-1]}")
    _check(W_v.shape[0] == np.shape(embedding)[-1],
           f"compose_input: W_v has {W_v.shape[0]} rows, embedding has {np.shape(embedding)[-1]}")
    return embedding + v @ W_v.T


def compose_backward(dgv, v, W_v):
    """Gradient of ``gv = v W_v^T`` given ``dgv`` (B, embed); returns ``(dW_v, dv)``."""
    return dgv.T @ v, dgv @ W_v


def hinge_rank_loss(scores, labels):
    """Batched ``(1/Z) sum_{j in C} sum_{i not in C} max(0, 1 - (s_j - s_i))``.

    ``labels`` marks C per row. Returns per-row losses and the gradient of
    their sum wrt ``scores``; the subgradient at the kink is 0.
    """
    s = np.asarray(scores)
    if s.ndim == 1:
        loss, grad = hinge_rank_loss(s[None], np.asarray(labels)[None])
        return loss[0], grad[0]
    pos = np.asarray(labels, dtype=bool)
    Z = s.shape[-1]
    margin = 1.0 - s[:, :, None] + s[:, None, :]
    active = pos[:, :, None] & ~pos[:, None, :] & (margin > 0)
    loss = np.where(active, margin, 0.0).sum(axis=(1, 2)) / Z
    grad = (active.sum(axis=1) - active.sum(axis=2)) / Z
    return loss, grad.astype(s.dtype)


def discriminative_loss(v, caption: Sequence[int], fws) -> float:
    """Loss for one caption (token ids) against the frequent word set ``fws``."""
    v = np.asarray(v, dtype=DTYPE)
    _check(v.shape == (len(fws),), f"discriminative_loss: |v|={v.shape} but |fws|={len(fws)}")
    labels = fws.indicator_ids(caption)
    return float(hinge_rank_loss(v, labels)[0])


def violated_fraction(scores, labels) -> float:
    """Fraction of (j in C, i not in C) pairs with ``s_j <= s_i`` over a batch."""
    s = np.asarray(scores, dtype=DTYPE)
    pos = np.asarray(labels, dtype=bool)
    pairs = pos[:, :, None] & ~pos[:, None, :]
    n = pairs.sum()
    if n == 0:
        return 0.0
    bad = pairs & (s[:, :, None] <= s[:, None, :])
    return float(bad.sum() / n)
