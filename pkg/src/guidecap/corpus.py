"""Captions, vocabularies, synthetic image records and attribute vectors."""
from __future__ import annotations

import re
import warnings
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .exceptions import ConfigError, DataError, NumericalError, StateError
from .numerics import DTYPE, ParamStore, sigmoid

MAX_TOKENS = 30
START, END, UNK = "<start>", "<end>", "<unk>"
RESERVED = (START, END, UNK)

_NON_ALPHA = re.compile(r"[^a-z ]")


def preprocess_caption(raw: str) -> List[str]:
    """Lowercase, drop everything outside a-z and space, split, keep 30 tokens."""
    text = _NON_ALPHA.sub("", raw.lower().replace("\t", " ").replace("\n", " "))
    return text.split()[:MAX_TOKENS]


@dataclass
class ImageRecord:
    """One image: global feature ``a0``, annotation vectors ``A`` (k x d) and raw captions."""

    image_id: str
    a0: np.ndarray
    A: np.ndarray
    captions: List[str] = field(default_factory=list)

    def __post_init__(self):
        self.a0 = np.asarray(self.a0, dtype=DTYPE)
        self.A = np.asarray(self.A, dtype=DTYPE)
        if self.A.ndim != 2 or self.A.shape[0] < 1:
            raise DataError(f"{self.image_id}: need at least one annotation vector, got shape {self.A.shape}")

    def tokenized(self) -> List[List[str]]:
        return [t for t in (preprocess_caption(c) for c in self.captions) if t]


@dataclass
class DatasetSplit:
    train: List[ImageRecord]
    val: List[ImageRecord]
    test: List[ImageRecord]

    def __post_init__(self):
        seen = set()
        for part in (self.train, self.val, self.test):
            ids = {r.image_id for r in part}
            if ids & seen:
                raise DataError(f"image ids shared between splits: {sorted(ids & seen)[:5]}")
            seen |= ids


class Vocabulary:
    """Token/id bijection. Ids 0, 1, 2 are START, END, UNK; the rest by count then alphabet."""

    def __init__(self, counts: Counter, min_count: int = 5):
        if min_count < 1:
            raise ConfigError("min_count must be >= 1")
        self.min_count = min_count
        self.counts = Counter(counts)
        kept = sorted((w for w, c in self.counts.items() if c >= min_count and w not in RESERVED),
                      key=lambda w: (-self.counts[w], w))
        self.itos = list(RESERVED) + kept
        self.stoi = {w: i for i, w in enumerate(self.itos)}

    start_id, end_id, unk_id = 0, 1, 2

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    def id(self, token: str) -> int:
        return self.stoi.get(token, self.unk_id)

    def token(self, i: int) -> str:
        return self.itos[i]

    def encode(self, tokens: Sequence[str]) -> List[int]:
        return [self.start_id] + [self.id(t) for t in tokens[:MAX_TOKENS]] + [self.end_id]

    def decode(self, ids: Sequence[int]) -> List[str]:
        return [self.itos[i] for i in ids if i not in (self.start_id, self.end_id)]

    @classmethod
    def from_tokens(cls, itos: Sequence[str]) -> "Vocabulary":
        if tuple(itos[:3]) != RESERVED:
            raise DataError("vocabulary must start with the reserved tokens")
        vocab = cls(Counter(), 1)
        vocab.itos = list(itos)
        vocab.stoi = {w: i for i, w in enumerate(vocab.itos)}
        return vocab


def _count(corpus: Iterable) -> Counter:
    counts = Counter()
    for item in corpus:
        counts.update(preprocess_caption(item) if isinstance(item, str) else item)
    return counts


def build_vocabulary(corpus: Iterable, min_count: int = 5) -> Vocabulary:
    """``corpus`` holds raw caption strings or pre-tokenized lists."""
    counts = _count(corpus)
    if not counts:
        raise DataError("cannot build a vocabulary from an empty corpus")
    return Vocabulary(counts, min_count)


class FrequentWordSet:
    def __init__(self, words: Sequence[str], vocab: Optional[Vocabulary] = None, truncated: bool = False):
        self.words = list(words)
        self.index = {w: i for i, w in enumerate(self.words)}
        self.truncated = truncated
        self.ids = [vocab.id(w) for w in self.words] if vocab is not None else None
        self._id_index = {i: j for j, i in enumerate(self.ids)} if self.ids is not None else {}

    def __len__(self):
        return len(self.words)

    def indicator(self, tokens: Iterable[str]) -> np.ndarray:
        out = np.zeros(len(self.words), dtype=DTYPE)
        for t in tokens:
            j = self.index.get(t)
            if j is not None:
                out[j] = 1.0
        return out

    def indicator_ids(self, ids: Iterable[int]) -> np.ndarray:
        out = np.zeros(len(self.words), dtype=DTYPE)
        for i in ids:
            j = self._id_index.get(int(i))
            if j is not None:
                out[j] = 1.0
        return out


def frequent_words(corpus: Iterable, F: int, vocab: Optional[Vocabulary] = None) -> FrequentWordSet:
    """Top-``F`` non-reserved tokens, count descending, ties alphabetical.

    With ``vocab`` only in-vocabulary tokens are eligible.
    """
    if F < 1:
        raise ConfigError("F must be >= 1")
    counts = _count(corpus)
    eligible = [w for w in counts if w not in RESERVED and (vocab is None or w in vocab)]
    ranked = sorted(eligible, key=lambda w: (-counts[w], w))
    truncated = F > len(ranked)
    if truncated:
        warnings.warn(f"requested {F} frequent words but only {len(ranked)} are available")
    return FrequentWordSet(ranked[:F], vocab, truncated)


# --- synthetic corpus --------------------------------------------------------

NOUNS = ("dog", "cat", "bird", "horse", "tree", "car", "boat", "chair", "table", "kite",
         "plane", "train", "clock", "bench", "sheep", "cow", "truck", "bus", "ball", "cup",
         "lamp", "vase", "book", "bottle")
COLORS = ("red", "blue", "green", "white", "black", "yellow", "brown", "pink")
CONNECTORS = ("and", "with", "near")


@dataclass
class SynthConfig:
    n_concepts: int = 10
    dim: int = 16
    k: int = 6
    n_train: int = 200
    n_val: int = 50
    n_test: int = 50
    noise: float = 0.1
    n_colors: int = 4
    captions_per_record: int = 3
    max_concepts: int = 4

    def validate(self) -> None:
        for name in ("n_concepts", "dim", "k", "n_colors", "captions_per_record", "max_concepts"):
            if getattr(self, name) < 1:
                raise ConfigError(f"synth.{name} must be >= 1")
        for name in ("n_train", "n_val", "n_test"):
            if getattr(self, name) < 0:
                raise ConfigError(f"synth.{name} must be >= 0")
        if self.n_train + self.n_val + self.n_test == 0:
            raise ConfigError("synth: all split sizes are zero")
        if self.n_concepts > len(NOUNS) or self.n_colors > len(COLORS):
            raise ConfigError(f"synth supports at most {len(NOUNS)} concepts and {len(COLORS)} colors")
        if self.max_concepts > min(self.k, self.n_concepts, len(CONNECTORS) + 1):
            raise ConfigError("synth.max_concepts must not exceed k, n_concepts or 4")
        if self.noise < 0:
            raise ConfigError("synth.noise must be >= 0")


def _render(objects, connectors=CONNECTORS) -> str:
    parts = [f"a {COLORS[c]} {NOUNS[n]}" for n, c in objects]
    text = parts[0]
    for conn, part in zip(connectors, parts[1:]):
        text += f" {conn} {part}"
    return text[0].upper() + text[1:] + "."


def synth_generate(cfg: SynthConfig, seed: int = 0) -> DatasetSplit:
    """Deterministic synthetic records.

    Each object is a (noun, color) pair whose embedding is the sum of a noun
    and a color embedding. An image holds 1..max_concepts objects with
    distinct nouns, one annotation slot each, plus noise-only slots up to
    ``k``. The first caption lists objects in noun order; the others are
    random permutations.
    """
    cfg.validate()
    rng = np.random.default_rng(seed)
    noun_emb = rng.standard_normal((cfg.n_concepts, cfg.dim))
    color_emb = 0.5 * rng.standard_normal((cfg.n_colors, cfg.dim))

    def make(prefix: str, n: int) -> List[ImageRecord]:
        records = []
        for idx in range(n):
            m = int(rng.integers(1, cfg.max_concepts + 1))
            nouns = sorted(rng.choice(cfg.n_concepts, size=m, replace=False).tolist())
            colors = rng.integers(0, cfg.n_colors, size=m).tolist()
            objects = list(zip(nouns, colors))
            A = cfg.noise * rng.standard_normal((cfg.k, cfg.dim))
            slots = rng.permutation(cfg.k)[:m]
            for slot, (n_, c_) in zip(slots, objects):
                A[slot] += noun_emb[n_] + color_emb[c_]
            captions = [_render(objects)]
            for _ in range(cfg.captions_per_record - 1):
                order = rng.permutation(m)
                captions.append(_render([objects[i] for i in order]))
            records.append(ImageRecord(f"{prefix}{idx:05d}", A.mean(axis=0), A, captions))
        return records

    return DatasetSplit(make("train", cfg.n_train), make("val", cfg.n_val), make("test", cfg.n_test))


# --- attribute vectors -------------------------------------------------------

class AttributePredictor(BaseEstimator):
    """Logistic word-occurrence predictor from the mean annotation vector.

    A stand-in for a region-level MIL detector: one affine map to ``F``
    logits trained with per-word binary cross-entropy.
    """

    def __init__(self, lr=0.5, weight_decay=1e-4, epochs=200, batch_size=16, random_state=0):
        self.lr = lr
        self.weight_decay = weight_decay
        self.epochs = epochs
        self.batch_size = batch_size
        self.random_state = random_state

    def fit(self, X, Y):
        from .trainer import adagrad_step

        X = np.asarray(X, dtype=DTYPE)
        Y = np.asarray(Y, dtype=DTYPE)
        if len(X) == 0:
            raise DataError("attribute predictor needs a non-empty training set")
        store = ParamStore()
        store.add("W", np.zeros((Y.shape[1], X.shape[1])))
        store.add("b", np.zeros(Y.shape[1]), bias=True)
        rng = np.random.default_rng(self.random_state)
        for _ in range(self.epochs):
            order = rng.permutation(len(X))
            for start in range(0, len(X), self.batch_size):
                idx = order[start:start + self.batch_size]
                p = sigmoid(X[idx] @ store["W"].T + store["b"])
                d = (p - Y[idx]) / len(idx)
                store.grad("W")[...] += d.T @ X[idx]
                store.grad("b")[...] += d.sum(axis=0)
                adagrad_step(store, self.lr, self.weight_decay)
        self.params_ = store
        self.loss_ = self.bce(X, Y)
        if not np.isfinite(self.loss_):
            raise NumericalError("attribute predictor training diverged")
        return self

    def predict_proba(self, X):
        if not hasattr(self, "params_"):
            raise NotFittedError("AttributePredictor is not fitted")
        X = np.asarray(X, dtype=DTYPE)
        p = sigmoid(X @ self.params_["W"].T + self.params_["b"])
        return np.clip(p, 1e-12, 1 - 1e-12)

    def bce(self, X, Y) -> float:
        p = self.predict_proba(X)
        Y = np.asarray(Y, dtype=DTYPE)
        return float(-np.mean(Y * np.log(p) + (1 - Y) * np.log(1 - p)))


def oracle_attributes(record: ImageRecord, fws: FrequentWordSet) -> np.ndarray:
    out = np.zeros(len(fws), dtype=DTYPE)
    for tokens in record.tokenized():
        out = np.maximum(out, fws.indicator(tokens))
    return out


def train_attribute_predictor(records: Sequence[ImageRecord], fws: FrequentWordSet, **kwargs):
    """Fit the surrogate predictor; returns ``(predictor, final_training_bce)``."""
    if not records:
        raise DataError("attribute predictor needs a non-empty training split")
    X = np.stack([r.A.mean(axis=0) for r in records])
    Y = np.stack([oracle_attributes(r, fws) for r in records])
    model = AttributePredictor(**kwargs).fit(X, Y)
    return model, model.loss_


def attribute_vector(record: ImageRecord, fws: FrequentWordSet, mode: str = "oracle",
                     predictor: Optional[AttributePredictor] = None) -> np.ndarray:
    if mode == "oracle":
        return oracle_attributes(record, fws)
    if mode == "zero":
        return np.zeros(len(fws), dtype=DTYPE)
    if mode == "predicted":
        if predictor is None or not hasattr(predictor, "params_"):
            raise StateError("attribute mode 'predicted' needs a trained predictor")
        return predictor.predict_proba(record.A.mean(axis=0)[None, :])[0]
    raise ConfigError(f"unknown attribute mode {mode!r}")


# --- dataset files -------------------------------------------------------------
# One record per line:
#   <image_id> TAB [a0] [a1] ... [ak] TAB <caption> TAB <caption> ...
# where each bracketed group holds comma-separated decimals.

_GROUP = re.compile(r"\[([^\]]*)\]")


def format_record(r: ImageRecord) -> str:
    groups = "".join("[" + ",".join(repr(float(x)) for x in vec) + "]" for vec in [r.a0, *r.A])
    caps = [c.replace("\t", " ").replace("\n", " ") for c in r.captions]
    return "\t".join([r.image_id, groups, *caps])


def parse_record(line: str, lineno: int = 0) -> ImageRecord:
    parts = line.rstrip("\n").split("\t")
    if len(parts) < 2:
        raise DataError(f"line {lineno}: expected image id and feature groups")
    try:
        vecs = [np.array([float(x) for x in g.split(",")], dtype=DTYPE) for g in _GROUP.findall(parts[1])]
    except ValueError as exc:
        raise DataError(f"line {lineno}: bad number ({exc})") from None
    if len(vecs) < 2:
        raise DataError(f"line {lineno}: need a0 and at least one annotation vector")
    if len({len(v) for v in vecs[1:]}) != 1:
        raise DataError(f"line {lineno}: annotation vectors have different lengths")
    return ImageRecord(parts[0], vecs[0], np.stack(vecs[1:]), parts[2:])


def write_dataset(path, records: Sequence[ImageRecord]) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(format_record(r) + "\n")


def read_dataset(path) -> List[ImageRecord]:
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise DataError(f"cannot read dataset {path}: {exc.strerror}") from None
    return [parse_record(line, i + 1) for i, line in enumerate(lines) if line.strip()]
