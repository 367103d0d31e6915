"""scikit-learn style front end over :func:`trainer.train`."""
from __future__ import annotations

from dataclasses import fields
from typing import List, Optional, Sequence

from sklearn.base import BaseEstimator

from .corpus import DatasetSplit, ImageRecord
from .exceptions import StateError
from .metrics import cider
from .pipeline import CaptionModel
from .trainer import TrainConfig, train


class GuidedCaptioner(BaseEstimator):
    """Caption generator with a guiding network.

    ``fit`` takes a list of :class:`ImageRecord` (or a :class:`DatasetSplit`,
    whose ``val`` part is then used for early stopping). ``predict`` returns
    one space-joined caption per record; ``score`` is corpus CIDEr.
    """

    def __init__(self, variant="soft", lr=0.01, weight_decay=1e-4, lam=10.0, lam2=None, max_epochs=30,
                 patience=10, batch_size=16, random_state=0, attribute_mode="oracle", guided=True,
                 mask_annotations=False, mask_attributes=False, hidden=64, embed=32, attention=None,
                 n_frequent=50, min_count=5, review_steps=8, share_review=True, max_len=30, beam=3,
                 init_range=0.1, early_stopping=True, predictor_lr=0.5):
        self.variant = variant
        self.lr = lr
        self.weight_decay = weight_decay
        self.lam = lam
        self.lam2 = lam2
        self.max_epochs = max_epochs
        self.patience = patience
        self.batch_size = batch_size
        self.random_state = random_state
        self.attribute_mode = attribute_mode
        self.guided = guided
        self.mask_annotations = mask_annotations
        self.mask_attributes = mask_attributes
        self.hidden = hidden
        self.embed = embed
        self.attention = attention
        self.n_frequent = n_frequent
        self.min_count = min_count
        self.review_steps = review_steps
        self.share_review = share_review
        self.max_len = max_len
        self.beam = beam
        self.init_range = init_range
        self.early_stopping = early_stopping
        self.predictor_lr = predictor_lr

    def train_config(self) -> TrainConfig:
        names = {f.name for f in fields(TrainConfig)}
        kw = {k: v for k, v in self.get_params().items() if k in names}
        return TrainConfig(seed=self.random_state, **kw)

    def fit(self, X, y=None, eval_set: Optional[Sequence[ImageRecord]] = None):
        if isinstance(X, DatasetSplit):
            data = X
        else:
            data = DatasetSplit(list(X), list(eval_set or []), [])
        self.model_, self.report_ = train(data, self.train_config())
        return self

    def _fitted(self) -> CaptionModel:
        if not hasattr(self, "model_"):
            raise StateError("GuidedCaptioner is not fitted yet")
        return self.model_

    def predict_tokens(self, X: Sequence[ImageRecord]) -> List[List[str]]:
        return self._fitted().caption(list(X), beam=self.beam, max_len=self.max_len)

    def predict(self, X: Sequence[ImageRecord]) -> List[str]:
        return [" ".join(c) for c in self.predict_tokens(X)]

    def score(self, X, y=None) -> float:
        X = list(X)
        return cider(self.predict_tokens(X), [r.tokenized() for r in X])
