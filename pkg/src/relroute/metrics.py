"""Evaluation metrics (plain numpy, no gradients)."""

from __future__ import annotations

import numpy as np

__all__ = ["roc_auc", "mae", "map_at_k"]


def roc_auc(scores, labels) -> float:
    """Probability that a positive outscores a negative, ties counting 0.5.

    Computed with averaged ranks, which is the rank-statistic form of
    pairwise counting.  Requires both classes to be present.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_auc needs at least one positive and one negative")
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores), dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0  # average 1-based rank
        i = j + 1
    rank_sum = ranks[pos].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def mae(pred, target) -> float:
    pred = np.asarray(pred, dtype=np.float64).ravel()
    target = np.asarray(target, dtype=np.float64).ravel()
    if pred.shape != target.shape:
        raise ValueError("mae inputs must have equal length")
    return float(np.abs(pred - target).mean())


def map_at_k(rankings, ground_truth, k) -> float:
    """Mean average precision at rank ``k``.

    ``rankings`` holds one ranked id list per query and ``ground_truth`` the
    matching sets of relevant ids.  Average precision for a query divides by
    min(|relevant|, k); queries with no relevant ids are excluded, and it is
    an error if every query is empty.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(rankings) != len(ground_truth):
        raise ValueError("one ground-truth set per ranking required")
    totals = []
    for ranked, truth in zip(rankings, ground_truth):
        truth = set(truth)
        if not truth:
            continue
        hits = 0
        score = 0.0
        for rank, item in enumerate(ranked[:k], start=1):
            if item in truth:
                hits += 1
                score += hits / rank
        totals.append(score / min(len(truth), k))
    if not totals:
        raise ValueError("every query has an empty ground-truth set")
    return float(np.mean(totals))
