"""Per-impression ranking metrics: AUC, MRR, nDCG@k.

Conventions: AUC is the rank-based Mann-Whitney statistic with ties
contributing half credit; MRR uses the highest-ranked relevant item; nDCG
uses binary gains with a log2(rank+1) discount.  Ranks sort by descending
score with ties broken by stable input order.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = ["auc", "mrr", "ndcg", "rank_order"]


def rank_order(scores) -> np.ndarray:
    """Indices of candidates from best to worst (stable under ties)."""
    s = np.asarray(scores, dtype=np.float64)
    return np.argsort(-s, kind="stable")


def auc(scores, labels) -> float:
    """Probability a random positive outranks a random negative (ties: 1/2)."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("auc needs at least one positive and one negative")
    order = np.argsort(s, kind="stable")
    sorted_s = s[order]
    ranks = np.empty(len(s))
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and sorted_s[j + 1] == sorted_s[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # average rank, 1-based
        i = j + 1
    pos_rank_sum = ranks[y == 1].sum()
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def mrr(scores, labels) -> float:
    """Reciprocal rank of the first relevant candidate."""
    y = np.asarray(labels)
    if not (y == 1).any():
        raise ValueError("mrr needs at least one positive")
    order = rank_order(scores)
    for rank, idx in enumerate(order, start=1):
        if y[idx] == 1:
            return 1.0 / rank
    raise AssertionError("unreachable")


def ndcg(scores, labels, k: int) -> float:
    """Binary-gain normalized discounted cumulative gain at cutoff k."""
    y = np.asarray(labels)
    n_pos = int((y == 1).sum())
    if n_pos == 0:
        raise ValueError("ndcg needs at least one positive")
    order = rank_order(scores)
    dcg = sum(
        1.0 / math.log2(rank + 1)
        for rank, idx in enumerate(order[:k], start=1)
        if y[idx] == 1
    )
    ideal = sum(1.0 / math.log2(rank + 1) for rank in range(1, min(k, n_pos) + 1))
    return dcg / ideal
