"""Greedy, beam and ensemble caption generation.

Decoders take networks plus one record's annotation set ``A`` (k, d) and
attribute vector ``e`` and return word ids without START/END.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

from .exceptions import ConfigError, DataError
from .numerics import DTYPE

START_ID, END_ID = 0, 1


@dataclass
class BeamConfig:
    k: int = 3
    max_len: int = 30
    length_norm: bool = False

    def __post_init__(self):
        if self.k < 1 or self.max_len < 1:
            raise ConfigError("beam width and max_len must be >= 1")


@dataclass
class Hypothesis:
    tokens: List[int]
    logprob: float
    states: list = field(default_factory=list)
    finished: bool = False

    @property
    def words(self) -> List[int]:
        return [t for t in self.tokens[1:] if t != END_ID]


def greedy_decode(net, A, e, max_len: int = 30) -> List[int]:
    """Argmax token fed back until END or ``max_len`` words; ties go to the lowest id."""
    ctx = net.prepare(np.asarray(A, dtype=DTYPE)[None], np.asarray(e, dtype=DTYPE)[None])
    h, c = ctx["h"], ctx["c"]
    y = np.array([START_ID])
    out = []
    for _ in range(max_len):
        logp, h, c = net.step(ctx, y, h, c)
        tok = int(np.argmax(logp[0]))
        if tok == END_ID:
            break
        out.append(tok)
        y = np.array([tok])
    return out


def _select(scores: np.ndarray, tokens_of, k: int):
    """Top-``k`` flat indices by score; ties broken by the lexicographically lower sequence."""
    flat = scores.reshape(-1)
    if flat.size > k:
        kth = np.partition(flat, flat.size - k)[flat.size - k]
        cand = np.flatnonzero(flat >= kth)
    else:
        cand = np.arange(flat.size)
    cand = [i for i in cand if np.isfinite(flat[i])]
    cand.sort(key=lambda i: (-flat[i], tokens_of(i)))
    return cand[:k]


def ensemble_decode(nets: Sequence, A, e, cfg: BeamConfig = None) -> List[Hypothesis]:
    """Beam search over the mean of the members' output distributions.

    Finished hypotheses retire to a pool immediately; the search stops once
    ``k`` have finished or nothing is live. The pool is ranked by summed log
    probability (optionally divided by length), ties by token sequence.
    """
    cfg = cfg or BeamConfig()
    if not nets:
        raise DataError("ensemble needs at least one model")
    V = nets[0].vocab_size
    if any(n.vocab_size != V for n in nets):
        raise DataError("ensemble members disagree on vocabulary size")
    A = np.asarray(A, dtype=DTYPE)[None]
    e = np.asarray(e, dtype=DTYPE)[None]
    ctxs = [n.prepare(A, e) for n in nets]
    live = [Hypothesis([START_ID], 0.0, [(c["h"][0], c["c"][0]) for c in ctxs])]
    pool: List[Hypothesis] = []
    for t in range(cfg.max_len + 1):
        if not live:
            break
        rows = np.zeros(len(live), dtype=np.int64)
        y = np.array([hyp.tokens[-1] for hyp in live])
        steps = []
        for m, (net, ctx) in enumerate(zip(nets, ctxs)):
            H = np.stack([hyp.states[m][0] for hyp in live])
            C = np.stack([hyp.states[m][1] for hyp in live])
            steps.append(net.step(ctx, y, H, C, rows))
        if len(nets) == 1:
            logp = steps[0][0]
        else:
            logp = np.log(np.mean([np.exp(s[0]) for s in steps], axis=0))
        scores = np.array([hyp.logprob for hyp in live])[:, None] + logp
        if t == cfg.max_len:
            forced = np.full_like(scores, -np.inf)
            forced[:, END_ID] = scores[:, END_ID]
            scores = forced
        chosen = _select(scores, lambda i: live[i // V].tokens + [i % V], cfg.k)
        nxt = []
        for i in chosen:
            j, w = divmod(int(i), V)
            hyp = Hypothesis(live[j].tokens + [w], float(scores[j, w]),
                             [(s[1][j], s[2][j]) for s in steps])
            if w == END_ID:
                hyp.finished = True
                hyp.states = []
                pool.append(hyp)
            else:
                nxt.append(hyp)
        live = nxt
        if len(pool) >= cfg.k:
            break

    def rank(h: Hypothesis):
        score = h.logprob / (len(h.tokens) - 1) if cfg.length_norm else h.logprob
        return (-score, h.tokens)

    return sorted(pool, key=rank)[:cfg.k]


def beam_decode(net, A, e, cfg: BeamConfig = None) -> List[Hypothesis]:
    return ensemble_decode([net], A, e, cfg)


def best_words(hyps: Sequence[Hypothesis]) -> List[int]:
    return hyps[0].words if hyps else []
