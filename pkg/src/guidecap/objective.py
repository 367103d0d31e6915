"""Loss assembly for both model variants."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from .exceptions import ConfigError, DataError

LOG_FLOOR = 1e-300


@dataclass
class LossBreakdown:
    nll: float
    dis1: float = 0.0
    dis2: float = 0.0
    total: float = 0.0
    token_nll: List[float] = field(default_factory=list)

    @property
    def mean_token_nll(self) -> float:
        return float(np.mean(self.token_nll)) if self.token_nll else 0.0

    def as_row(self) -> Tuple[float, float, float, float]:
        return self.nll, self.dis1, self.dis2, self.total


def nll_loss(distributions: Sequence, targets: Sequence[int]):
    """``-sum_t log p_t[target_t]``; returns the sum and the per-token list."""
    if len(distributions) != len(targets):
        raise DataError(f"{len(distributions)} distributions but {len(targets)} targets")
    per_token = [-math.log(max(float(p[y]), LOG_FLOOR)) for p, y in zip(distributions, targets)]
    return float(sum(per_token)), per_token


def total_loss_soft(nll: float, dis: float, lam: float = 10.0, token_nll=()) -> LossBreakdown:
    if lam < 0:
        raise ConfigError("lambda must be >= 0")
    return LossBreakdown(nll, dis, 0.0, nll + lam * dis, list(token_nll))


def total_loss_review(nll: float, dis1: float, dis2: float, lam1: float = 10.0,
                      lam2: float = 10.0, token_nll=()) -> LossBreakdown:
    if lam1 < 0 or lam2 < 0:
        raise ConfigError("lambda must be >= 0")
    return LossBreakdown(nll, dis1, dis2, nll + lam1 * dis1 + lam2 * dis2, list(token_nll))
