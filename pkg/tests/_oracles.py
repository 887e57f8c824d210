"""Independent brute-force oracles used to cross-check the real implementations.

Everything here is written the naive way (explicit loops over ranks, direct
formula evaluation, full scans) so the checks stay independent of the code
under test.
"""

from __future__ import annotations

import hashlib
import math

import numpy as np


def ap_oracle(ranking, gold) -> float:
    gold = set(gold)
    hits = 0
    acc = 0.0
    for pos in range(len(ranking)):
        if ranking[pos] in gold:
            hits += 1
            acc += hits / (pos + 1)
    return acc / len(gold)


def rr_oracle(ranking, gold) -> float:
    for pos in range(len(ranking)):
        if ranking[pos] in set(gold):
            return 1.0 / (pos + 1)
    return 0.0


def ndcg_oracle(ranking, gold, k) -> float:
    gold = set(gold)
    dcg = 0.0
    for pos in range(min(k, len(ranking))):
        if ranking[pos] in gold:
            dcg += 1.0 / math.log2(pos + 2)
    ideal = 0.0
    for pos in range(min(k, len(gold))):
        ideal += 1.0 / math.log2(pos + 2)
    return dcg / ideal


def weighted_f1_oracle(preds, golds, classes) -> float:
    total = len(golds)
    acc = 0.0
    for cls in classes:
        support = sum(1 for g in golds if g == cls)
        if support == 0:
            continue
        tp = sum(1 for p, g in zip(preds, golds) if p == cls and g == cls)
        fp = sum(1 for p, g in zip(preds, golds) if p == cls and g != cls)
        fn = sum(1 for p, g in zip(preds, golds) if p != cls and g == cls)
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        acc += support * f1
    return acc / total


def prf_oracle(flags, labels):
    tp = sum(1 for f, l in zip(flags, labels) if f and l)
    fp = sum(1 for f, l in zip(flags, labels) if f and not l)
    fn = sum(1 for f, l in zip(flags, labels) if not f and l)
    prec = tp / (tp + fp) if tp + fp else 0.0
    rec = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
    return prec, rec, f1


def embed_oracle(text: str, orders, buckets: int, bucket_vectors: np.ndarray) -> np.ndarray:
    """Recompute the hashed-n-gram embedding by direct enumeration."""
    grams = []
    for n in orders:
        for start in range(len(text) - n + 1):
            grams.append(text[start : start + n])
    if not grams:
        return np.zeros(bucket_vectors.shape[1], dtype=bucket_vectors.dtype)
    acc = np.zeros(bucket_vectors.shape[1], dtype=np.float64)
    for gram in grams:
        digest = hashlib.blake2b(gram.encode("utf-8"), digest_size=8).digest()
        acc += bucket_vectors[int.from_bytes(digest, "little") % buckets]
    return (acc / math.sqrt(len(grams))).astype(bucket_vectors.dtype)


def knn_oracle(vectors: np.ndarray, query: np.ndarray, k: int, metric: str):
    """Full-scan nearest neighbors; returns (index, distance) pairs."""
    out = []
    q = np.asarray(query, dtype=np.float64)
    for i in range(vectors.shape[0]):
        v = vectors[i].astype(np.float64)
        if metric == "euclidean":
            d = math.sqrt(float(((v - q) ** 2).sum()))
        else:
            d = 1.0 - float(v @ q) / (math.sqrt(float(v @ v)) * math.sqrt(float(q @ q)))
        out.append((i, d))
    out.sort(key=lambda p: (p[1], p[0]))
    return out[:k]


def numeric_grad(fn, params_tensors, eps: float = 1e-4):
    """Central finite differences of scalar fn() w.r.t. every tensor entry."""
    grads = {}
    for name, tensor in params_tensors:
        flat = tensor.data.ravel()
        g = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = fn()
            flat[i] = orig - eps
            down = fn()
            flat[i] = orig
            g[i] = (up - down) / (2 * eps)
        grads[name] = g.reshape(tensor.data.shape)
    return grads
