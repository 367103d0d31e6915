"""Corpus-level BLEU-1..4, ROUGE-L, plain CIDEr and distinct-word counts.

Candidates are token lists, one per image; references are lists of token
lists per image. Strings are tokenized with :func:`preprocess_caption`.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Sequence

import numpy as np

from .corpus import RESERVED, preprocess_caption
from .exceptions import ConfigError, DataError


def _tok(s):
    return preprocess_caption(s) if isinstance(s, str) else list(s)


def _normalize(candidates, references):
    if len(candidates) == 0:
        raise DataError("no candidates to evaluate")
    if len(candidates) != len(references):
        raise DataError(f"{len(candidates)} candidates but {len(references)} reference sets")
    cands = [_tok(c) for c in candidates]
    refs = [[_tok(r) for r in rs] for rs in references]
    if any(not rs for rs in refs):
        raise DataError("every image needs at least one reference")
    return cands, refs


def ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidates, references, n: int = 4) -> float:
    """Corpus BLEU-n: clipped precisions, geometric mean, brevity penalty, no smoothing."""
    if not 1 <= n <= 4:
        raise ConfigError("n must be in 1..4")
    cands, refs = _normalize(candidates, references)
    clipped = [0] * n
    totals = [0] * n
    r = c = 0
    for cand, rs in zip(cands, refs):
        c += len(cand)
        r += min((abs(len(x) - len(cand)), len(x)) for x in rs)[1]
        for m in range(1, n + 1):
            cc = ngrams(cand, m)
            best = Counter()
            for x in rs:
                best |= ngrams(x, m)
            clipped[m - 1] += sum(min(cnt, best[g]) for g, cnt in cc.items())
            totals[m - 1] += sum(cc.values())
    if c == 0 or any(t == 0 or k == 0 for k, t in zip(clipped, totals)):
        return 0.0
    log_p = sum(math.log(k / t) for k, t in zip(clipped, totals)) / n
    bp = min(1.0, math.exp(1.0 - r / c))
    return bp * math.exp(log_p)


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l_sentence(cand, refs, beta: float = 1.2) -> float:
    if not cand:
        return 0.0
    best = 0.0
    for ref in refs:
        L = lcs_length(cand, ref)
        if L == 0 or not ref:
            continue
        p, r = L / len(cand), L / len(ref)
        best = max(best, (1 + beta ** 2) * p * r / (r + beta ** 2 * p))
    return best


def rouge_l(candidates, references, beta: float = 1.2) -> float:
    cands, refs = _normalize(candidates, references)
    return float(np.mean([rouge_l_sentence(c, rs, beta) for c, rs in zip(cands, refs)]))


def cider_per_image(candidates, references, n: int = 4) -> List[float]:
    """Plain CIDEr per image.

    IDF is ``log(N / df)`` over the reference corpus, with ``df`` floored at
    1 for n-grams no reference contains. A zero-norm vector has similarity 0.
    """
    cands, refs = _normalize(candidates, references)
    N = len(cands)
    if N < 2:
        raise DataError("CIDEr needs at least two images to compute document frequencies")
    df = Counter()
    for rs in refs:
        seen = set()
        for x in rs:
            for m in range(1, n + 1):
                seen.update(ngrams(x, m))
        df.update(seen)
    log_n = math.log(N)

    def vec(tokens, m):
        counts = ngrams(tokens, m)
        return {g: cnt * (log_n - math.log(max(1, df[g]))) for g, cnt in counts.items()}

    def cos(a, b):
        na = math.sqrt(sum(x * x for x in a.values()))
        nb = math.sqrt(sum(x * x for x in b.values()))
        if na == 0 or nb == 0:
            return 0.0
        return sum(x * b.get(g, 0.0) for g, x in a.items()) / (na * nb)

    scores = []
    for cand, rs in zip(cands, refs):
        per_n = []
        for m in range(1, n + 1):
            cv = vec(cand, m)
            per_n.append(np.mean([cos(cv, vec(x, m)) for x in rs]))
        scores.append(10.0 * float(np.mean(per_n)))
    return scores


def cider(candidates, references, n: int = 4) -> float:
    return float(np.mean(cider_per_image(candidates, references, n)))


def distinct_words(captions) -> int:
    words = set()
    for cap in captions:
        words.update(t for t in _tok(cap) if t not in RESERVED)
    return len(words)


@dataclass
class EvalReport:
    bleu1: float
    bleu2: float
    bleu3: float
    bleu4: float
    rouge_l: float
    cider: float
    distinct_words: int
    per_image_cider: List[float] = field(default_factory=list, repr=False)

    def as_dict(self) -> Dict[str, float]:
        d = asdict(self)
        d.pop("per_image_cider")
        return d

    def to_text(self) -> str:
        rows = [f"{k:<15}{v:.6f}" if isinstance(v, float) else f"{k:<15}{v}" for k, v in self.as_dict().items()]
        return "\n".join(rows) + "\n"

    def to_kv(self) -> str:
        return "".join(f"{k}={v!r}\n" for k, v in self.as_dict().items())


def evaluate(candidates, references) -> EvalReport:
    cands, refs = _normalize(candidates, references)
    per_image = cider_per_image(cands, refs)
    return EvalReport(*(bleu(cands, refs, n) for n in range(1, 5)), rouge_l(cands, refs),
                      float(np.mean(per_image)), distinct_words(cands), per_image)
