"""Ranking and classification metrics: MAP, MRR, NDCG@k, weighted F1, P/R/F1.

Relevance is binary throughout; NDCG gain is 1/log2(rank + 1) with 1-based
ranks. Ties in scores are broken by ascending label index so every ranking
is reproducible. Queries with an empty gold set are skipped and counted,
never averaged.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "rank_labels",
    "average_precision",
    "mean_average_precision",
    "reciprocal_rank",
    "mrr",
    "ndcg_at_k",
    "binary_prf",
    "support_weighted_f1",
    "PRF",
    "RankingReport",
    "ranking_report",
]


def rank_labels(scores) -> np.ndarray:
    """Label indices ordered by descending score; ties by ascending index."""
    scores = np.asarray(scores)
    return np.lexsort((np.arange(scores.size), -scores))


def average_precision(ranking, gold) -> float:
    """AP = mean over relevant hits of (hits so far / rank). Gold must be non-empty."""
    gold = set(gold)
    if not gold:
        raise ValueError("average_precision needs a non-empty gold set")
    hits = 0
    total = 0.0
    for rank, label in enumerate(ranking, start=1):
        if label in gold:
            hits += 1
            total += hits / rank
    return total / len(gold)


def mean_average_precision(rankings, golds) -> float:
    values = [average_precision(r, g) for r, g in zip(rankings, golds) if g]
    if not values:
        raise ValueError("no queries with non-empty gold")
    return float(np.mean(values))


def reciprocal_rank(ranking, gold) -> float:
    gold = set(gold)
    for rank, label in enumerate(ranking, start=1):
        if label in gold:
            return 1.0 / rank
    return 0.0


def mrr(rankings, golds) -> float:
    values = [reciprocal_rank(r, g) for r, g in zip(rankings, golds) if g]
    if not values:
        raise ValueError("no queries with non-empty gold")
    return float(np.mean(values))


def ndcg_at_k(ranking, gold, k: int) -> float:
    """Binary-relevance NDCG at cutoff k (1-based ranks, log2 discount)."""
    gold = set(gold)
    if not gold:
        raise ValueError("ndcg needs a non-empty gold set")
    dcg = 0.0
    for rank, label in enumerate(ranking[:k], start=1):
        if label in gold:
            dcg += 1.0 / np.log2(rank + 1)
    ideal = sum(1.0 / np.log2(r + 1) for r in range(1, min(len(gold), k) + 1))
    return dcg / ideal


@dataclass
class PRF:
    precision: float
    recall: float
    f1: float
    precision_defined: bool = True
    recall_defined: bool = True

    def to_json(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "precision_defined": self.precision_defined,
            "recall_defined": self.recall_defined,
        }


def binary_prf(flags, labels) -> PRF:
    """Precision/recall/F1 of boolean predictions; 0/0 reported as 0 with a flag."""
    flags = np.asarray(flags, dtype=bool).ravel()
    labels = np.asarray(labels, dtype=bool).ravel()
    if flags.shape != labels.shape:
        raise ValueError("flags and labels must have equal length")
    tp = int((flags & labels).sum())
    fp = int((flags & ~labels).sum())
    fn = int((~flags & labels).sum())
    p_def = (tp + fp) > 0
    r_def = (tp + fn) > 0
    precision = tp / (tp + fp) if p_def else 0.0
    recall = tp / (tp + fn) if r_def else 0.0
    f1 = 2 * precision * recall / (precision + recall) if (precision + recall) > 0 else 0.0
    return PRF(precision, recall, f1, p_def, r_def)


def support_weighted_f1(preds, golds, classes) -> float:
    """Per-class F1 averaged with weights proportional to gold support."""
    preds = list(preds)
    golds = list(golds)
    if len(preds) != len(golds):
        raise ValueError("preds and golds must have equal length")
    if not golds:
        raise ValueError("empty gold set")
    class_set = set(classes)
    for g in golds:
        if g not in class_set:
            raise ValueError(f"gold class {g!r} not in class list")
    total = 0.0
    weighted = 0.0
    for cls in classes:
        support = sum(1 for g in golds if g == cls)
        if support == 0:
            continue
        flags = np.array([p == cls for p in preds])
        labels = np.array([g == cls for g in golds])
        weighted += support * binary_prf(flags, labels).f1
        total += support
    return weighted / total


@dataclass
class RankingReport:
    map: float
    mrr: float
    ndcg_10: float
    ndcg_20: float
    queries: int
    skipped_empty_gold: int = 0
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        out = {
            "map": self.map,
            "mrr": self.mrr,
            "ndcg_10": self.ndcg_10,
            "ndcg_20": self.ndcg_20,
            "queries": self.queries,
            "skipped_empty_gold": self.skipped_empty_gold,
        }
        out.update(self.extra)
        return out


def ranking_report(rankings, golds) -> RankingReport:
    """Aggregate MAP/MRR/NDCG over queries, skipping empty-gold ones."""
    kept = [(r, g) for r, g in zip(rankings, golds) if g]
    skipped = len(golds) - len(kept)
    if not kept:
        raise ValueError("no queries with non-empty gold")
    rks = [r for r, _ in kept]
    gds = [g for _, g in kept]
    return RankingReport(
        map=mean_average_precision(rks, gds),
        mrr=mrr(rks, gds),
        ndcg_10=float(np.mean([ndcg_at_k(r, g, 10) for r, g in kept])),
        ndcg_20=float(np.mean([ndcg_at_k(r, g, 20) for r, g in kept])),
        queries=len(kept),
        skipped_empty_gold=skipped,
    )
