"""A trained network bundled with its vocabulary, frequent words and attribute source."""
from __future__ import annotations

import json
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .corpus import (AttributePredictor, FrequentWordSet, ImageRecord, Vocabulary, attribute_vector,
                     preprocess_caption)
from .decode import BeamConfig, beam_decode, best_words, ensemble_decode, greedy_decode
from .exceptions import ConfigError, DataError, DimensionError
from .model import Batch, SoftAttentionNet, make_batch
from .numerics import DTYPE, ParamStore
from .review import ReviewNet

MAGIC = "# guidecap checkpoint v1"


def build_net(variant: str, **dims):
    if variant == "soft":
        dims.pop("review_steps", None)
        dims.pop("share_review", None)
        return SoftAttentionNet(**dims)
    if variant == "review":
        return ReviewNet(**dims)
    raise ConfigError(f"unknown variant {variant!r}")


class CaptionModel:
    def __init__(self, net, vocab: Vocabulary, fws: FrequentWordSet, attribute_mode: str = "oracle",
                 predictor: Optional[AttributePredictor] = None):
        self.net = net
        self.vocab = vocab
        self.fws = fws
        self.attribute_mode = attribute_mode
        self.predictor = predictor

    @property
    def params(self) -> ParamStore:
        return self.net.params

    def attributes(self, record: ImageRecord) -> np.ndarray:
        return attribute_vector(record, self.fws, self.attribute_mode, self.predictor)

    def encode_pairs(self, records: Sequence[ImageRecord]) -> Tuple[list, int]:
        """One ``(A, e, ids, labels)`` per non-empty caption; returns pairs and the dropped count."""
        pairs, dropped = [], 0
        for r in records:
            if r.A.shape[1] != self.net.annot_dim:
                raise DimensionError(f"{r.image_id}: annotation dim {r.A.shape[1]} != model {self.net.annot_dim}")
            e = self.attributes(r)
            for cap in r.captions:
                toks = preprocess_caption(cap)
                if not toks:
                    dropped += 1
                    continue
                ids = self.vocab.encode(toks)
                pairs.append((r.A, e, ids, self.fws.indicator_ids(ids)))
        return pairs, dropped

    @staticmethod
    def batch(pairs) -> Batch:
        A, e, ids, labels = zip(*pairs)
        return make_batch(A, e, ids, labels)

    def caption_ids(self, record: ImageRecord, beam: int = 3, max_len: int = 30, greedy: bool = False,
                    others: Optional[Sequence["CaptionModel"]] = None) -> List[int]:
        """Word ids for one record. ``others`` switches to ensemble decoding;
        an empty list gives an ensemble of one."""
        e = self.attributes(record)
        if greedy:
            return greedy_decode(self.net, record.A, e, max_len)
        cfg = BeamConfig(beam, max_len)
        if others is not None:
            for o in others:
                if o.vocab.itos != self.vocab.itos:
                    raise DataError("ensemble members were trained with different vocabularies")
            return best_words(_ensemble(self, others, record, cfg))
        return best_words(beam_decode(self.net, record.A, e, cfg))

    def caption(self, records: Sequence[ImageRecord], **kw) -> List[List[str]]:
        return [self.vocab.decode(self.caption_ids(r, **kw)) for r in records]

    # --- checkpoint text format
    #   # guidecap checkpoint v1
    #   meta <json object: variant, dims, attribute_mode>
    #   vocab <token> <token> ...
    #   fws <word> <word> ...
    #   section params
    #   tensor ... (ParamStore text)
    #   section predictor          (only with a fitted attribute predictor)
    #   tensor ...
    def to_text(self) -> str:
        meta = {"dims": self.net.dims(), "attribute_mode": self.attribute_mode}
        lines = [MAGIC, "meta " + json.dumps(meta, sort_keys=True),
                 "vocab " + " ".join(self.vocab.itos), "fws " + " ".join(self.fws.words),
                 "section params", self.params.to_text().rstrip("\n")]
        if self.predictor is not None and hasattr(self.predictor, "params_"):
            lines += ["section predictor", self.predictor.params_.to_text().rstrip("\n")]
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_text())

    @classmethod
    def from_text(cls, text: str) -> "CaptionModel":
        lines = text.splitlines()
        if not lines or lines[0] != MAGIC:
            raise DataError("not a guidecap checkpoint")
        meta = json.loads(lines[1][len("meta "):])
        vocab = Vocabulary.from_tokens(lines[2].split()[1:])
        fws = FrequentWordSet(lines[3].split()[1:], vocab)
        sections, current = {}, None
        for line in lines[4:]:
            if line.startswith("section "):
                current = line.split()[1]
                sections[current] = []
            elif current is not None:
                sections[current].append(line)
        dims = dict(meta["dims"])
        net = build_net(dims.pop("variant"), **dims)
        net.params = ParamStore.from_lines(sections["params"])
        predictor = None
        if "predictor" in sections:
            predictor = AttributePredictor()
            predictor.params_ = ParamStore.from_lines(sections["predictor"])
        return cls(net, vocab, fws, meta["attribute_mode"], predictor)

    @classmethod
    def load(cls, path) -> "CaptionModel":
        try:
            with open(path) as fh:
                return cls.from_text(fh.read())
        except OSError as exc:
            raise DataError(f"cannot read checkpoint {path}: {exc.strerror}") from None


def _ensemble(first: CaptionModel, others, record, cfg):
    members = [first, *others]
    nets = [_Bound(m.net, m.attributes(record)) for m in members]
    return ensemble_decode(nets, record.A, nets[0].e, cfg)


class _Bound:
    """Wraps a net so ``prepare`` ignores the shared ``e`` and uses its own."""

    def __init__(self, net, e):
        self.net, self.e = net, np.asarray(e, dtype=DTYPE)
        self.vocab_size = net.vocab_size

    def prepare(self, A, e):
        return self.net.prepare(A, self.e[None])

    def step(self, *args, **kw):
        return self.net.step(*args, **kw)
