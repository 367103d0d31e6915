"""Review Net with two guiding networks.

Review steps attend over the encoder annotations ``A1`` and emit one thought
vector per step. ``g1`` (over ``[A1; e]``) feeds every review step's input;
``g2`` (over ``[A2; e]``) guides the decoder, which attends over the thought
vectors ``A2`` and starts from the final review state.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import guiding
from .exceptions import ConfigError, DataError
from .model import (DecoderState, SoftAttentionNet, _Accumulator, attend_forward, attention_lstm_specs,
                    init_state_forward, lstm_forward, make_batch, rollout_backward, rollout_forward)
from .numerics import DTYPE, softmax
from .objective import LossBreakdown, total_loss_review


@dataclass
class ReviewConfig:
    steps: int = 8
    share_params: bool = True

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigError("review steps must be >= 1")

    def prefixes(self) -> List[str]:
        return ["rev"] * self.steps if self.share_params else [f"rev{i}" for i in range(self.steps)]


class ReviewNet(SoftAttentionNet):
    """LTG-Review-Net; ``guided=False`` gives plain Review Net (zero review inputs)."""

    variant = "review"

    def __init__(self, vocab_size, n_frequent, annot_dim, hidden=64, embed=32, attention=None,
                 guided=True, mask_annotations=False, mask_attributes=False,
                 review_steps=8, share_review=True):
        super().__init__(vocab_size, n_frequent, annot_dim, hidden, embed, attention,
                         guided, mask_annotations, mask_attributes)
        self.review_cfg = ReviewConfig(review_steps, share_review)

    def dims(self):
        out = super().dims()
        out.update(review_steps=self.review_cfg.steps, share_review=self.review_cfg.share_params)
        return out

    def param_specs(self):
        d, H, Ed, Z, att = self.annot_dim, self.hidden, self.embed, self.n_frequent, self.attention
        specs = {"E": ((self.vocab_size, Ed), False), "W_out": ((self.vocab_size, H), False),
                 "init.W_h": ((H, d), False), "init.W_c": ((H, d), False)}
        for pf in dict.fromkeys(self.review_cfg.prefixes()):
            specs.update(attention_lstm_specs(pf, Ed, H, d, att))
        specs.update(attention_lstm_specs("dec", Ed, H, H, att))
        specs.update({"g1.W": ((Z, d + Z), False), "g1.b": ((Z,), True), "g1.W_v": ((Ed, Z), False),
                      "g2.W": ((Z, H + Z), False), "g2.b": ((Z,), True), "g2.W_v": ((Ed, Z), False)})
        return specs

    def _review(self, A1, e, zero):
        """Returns A2 (B, T_r, H), final state, and everything backward needs."""
        P = self.params
        B = len(A1)
        h0, c0, m = init_state_forward(A1, P["init.W_h"], P["init.W_c"])
        if self.guided:
            v1, xr, g1cache = self._guide("g1", A1, e, self.mask_annotations, zero)
        else:
            v1, g1cache = None, None
            xr = np.zeros((B, self.embed), dtype=DTYPE)
        prefixes = self.review_cfg.prefixes()
        X = np.broadcast_to(xr, (len(prefixes),) + xr.shape)
        Hs, hT, cT, caches = rollout_forward(X, A1, h0, c0, P, prefixes)
        A2 = np.ascontiguousarray(Hs.transpose(1, 0, 2))
        return A2, hT, cT, (h0, c0, m, v1, g1cache, caches, prefixes, Hs)

    def loss(self, batch, lam: float = 10.0, grad: bool = False, zero_guidance: bool = False,
             lam2: Optional[float] = None) -> LossBreakdown:
        lam1 = lam
        lam2 = lam if lam2 is None else lam2
        P = self.params
        self._check_inputs(batch.A, batch.e)
        acc = _Accumulator(P)
        B = len(batch)
        A2, hT, cT, (h0, c0, m, v1, g1cache, caches, prefixes, Hs) = self._review(batch.A, batch.e, zero_guidance)
        gv2 = v2 = g2cache = None
        if self.guided:
            v2, gv2, g2cache = self._guide("g2", A2, batch.e, False, zero_guidance)
        nll, token_nll, back = self._decoder_loss(batch, A2, hT, cT, gv2, grad, acc)
        dis1 = dis2 = 0.0
        d1 = d2 = None
        if self.guided:
            r1, g1 = guiding.hinge_rank_loss(v1, batch.labels)
            r2, g2 = guiding.hinge_rank_loss(v2, batch.labels)
            dis1, dis2 = r1.mean(), r2.mean()
            d1, d2 = lam1 * g1 / B, lam2 * g2 / B
        if grad:
            dgv2, dA2, dhT, dcT = back
            if self.guided and not zero_guidance:
                dB2 = self._guide_backward("g2", dgv2, v2, g2cache, d2, acc)
                dA2 = dA2 + dB2[:, :, :self.hidden]
            dH = np.ascontiguousarray(dA2.transpose(1, 0, 2))
            dXr, _, dh0, dc0 = rollout_backward(dH, dhT, dcT, caches, P, prefixes, acc, self.embed)
            self._init_backward(dh0, dc0, h0, c0, m, acc)
            if self.guided and not zero_guidance:
                self._guide_backward("g1", dXr.sum(axis=0), v1, g1cache, d1, acc)
        return total_loss_review(nll, dis1, dis2, lam1, lam2, token_nll)

    def guiding_vectors(self, A, e):
        A2, _, _, extra = self._review(A, e, False)
        v2 = self._guide("g2", A2, e, False, False)[0]
        return [extra[3], v2]

    def prepare(self, A, e):
        A = np.asarray(A, dtype=DTYPE)
        e = np.asarray(e, dtype=DTYPE)
        self._check_inputs(A, e)
        A2, hT, cT, _ = self._review(A, e, False)
        gv2 = self._guide("g2", A2, e, False, False)[1] if self.guided else None
        return {"M": A2, "gv": gv2, "h": hT, "c": cT}


@dataclass
class ThoughtVectors:
    A2: List[np.ndarray]

    def __len__(self):
        return len(self.A2)


def review_rollout(A1, v1, net: ReviewNet) -> Tuple[ThoughtVectors, DecoderState]:
    """Single-record review steps; ``v1=None`` feeds zero inputs."""
    P = net.params
    A1 = np.asarray(A1, dtype=DTYPE)[None]
    h, c, _ = init_state_forward(A1, P["init.W_h"], P["init.W_c"])
    if v1 is None:
        x = np.zeros((1, net.embed), dtype=DTYPE)
    else:
        x = guiding.compose_input(np.zeros((1, net.embed)), np.asarray(v1, dtype=DTYPE)[None], P["g1.W_v"])
    thoughts = []
    for pf in net.review_cfg.prefixes():
        _, z, _ = attend_forward(A1, h, P[pf + ".W_a"], P[pf + ".b_a"], P[pf + ".W_h"], P[pf + ".w"])
        h, c, _ = lstm_forward(x, h, z, c, P[pf + ".T"], P[pf + ".b"])
        thoughts.append(h[0])
    return ThoughtVectors(thoughts), DecoderState(h[0], c[0])


def ltg_review_forward(A1, e, caption: Sequence[int], net: ReviewNet, zero_guidance: bool = False):
    """Teacher-forced single-record pass.

    Returns the output distributions for ``caption[1:]``, the decoder's
    attention weights per step, and ``(v1, v2)``.
    """
    if len(caption) < 2:
        raise DataError("caption must contain START and at least one more token")
    P = net.params
    A1 = np.asarray(A1, dtype=DTYPE)[None]
    e = np.asarray(e, dtype=DTYPE)[None]
    A2, h, c, extra = net._review(A1, e, zero_guidance)
    v1 = extra[3]
    if net.guided:
        v2, gv, _ = net._guide("g2", A2, e, False, zero_guidance)
    else:
        v2, gv = None, None
    dists, alphas = [], []
    for y in caption[:-1]:
        x = P["E"][[y]]
        if gv is not None:
            x = x + gv
        alpha, z, _ = attend_forward(A2, h, P["dec.W_a"], P["dec.b_a"], P["dec.W_h"], P["dec.w"])
        h, c, _ = lstm_forward(x, h, z, c, P["dec.T"], P["dec.b"])
        dists.append(softmax(h @ P["W_out"].T)[0])
        alphas.append(alpha[0])
    first = lambda v: None if v is None else v[0]
    return dists, alphas, (first(v1), first(v2))
