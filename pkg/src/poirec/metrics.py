"""Top-K ranking metrics: hit rate and NDCG with a single relevant item."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

DEFAULT_KS = (1, 5, 10)


def target_rank(scores: np.ndarray, target: int) -> int:
    """1-based rank of the target under descending scores, ties broken by
    ascending index (so an earlier index outranks an equal later one)."""
    s = scores[target]
    better = int((scores > s).sum())
    tied_before = int((scores[:target] == s).sum())
    return 1 + better + tied_before


def ndcg_gain(rank: int, k: int) -> float:
    return 1.0 / math.log2(rank + 1) if rank <= k else 0.0


@dataclass
class EvalReport:
    hr: dict[int, float]
    ndcg: dict[int, float]
    num_samples: int
    loss_curve: list[float] = field(default_factory=list)
    val_curve: list[float] = field(default_factory=list)
    balance_curve: list[tuple[float, float, float]] = field(default_factory=list)
    best_epoch: int = 0


def summarize_ranks(ranks, ks=DEFAULT_KS) -> EvalReport:
    ranks = list(ranks)
    if not ranks:
        raise ValueError("summarize_ranks: empty split")
    n = len(ranks)
    hr = {k: sum(1 for r in ranks if r <= k) / n for k in ks}
    ndcg = {k: sum(ndcg_gain(r, k) for r in ranks) / n for k in ks}
    return EvalReport(hr=hr, ndcg=ndcg, num_samples=n)
