"""Exact nearest-neighbor retrieval and k-means over table embeddings.

Search is a full scan (no approximation): at desk scale this is fast and
doubles as its own ground truth. Cosine is the default retrieval metric;
k-means uses squared euclidean with k-means++ seeding and Lloyd iterations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .corpus import Table
from .encoder import augment_with_cls, build_grid_batch, encode
from .training import Checkpoint
from . import tensorio

__all__ = ["EmbeddingIndex", "IndexError_", "build_index", "knn", "kmeans", "save_index", "load_index"]

INDEX_MAGIC = b"TBLIDX01"
KINDS = ("cell", "row", "column", "table")


class IndexError_(Exception):
    """Index construction or query failure."""


@dataclass
class EmbeddingIndex:
    """Parallel lists of vectors and (table id, kind, i, j) keys."""

    vectors: np.ndarray  # (n, H) float32
    keys: list[tuple[str, str, int, int]]
    metric: str = "cosine"
    kind: str = "table"
    dropped_zero: int = 0

    def __post_init__(self):
        if self.metric not in ("cosine", "euclidean"):
            raise ValueError(f"unknown metric {self.metric!r}")
        if len(self.keys) != self.vectors.shape[0]:
            raise ValueError("keys and vectors must be parallel")

    def __len__(self):
        return len(self.keys)


def _table_keys(grid, kind: str):
    """Grid coordinates of every embedding of `kind` within one table."""
    if kind == "table":
        yield (0, 0)
    elif kind == "row":
        for i in range(1, grid.n_rows):
            yield (i, 0)
    elif kind == "column":
        for j in range(1, grid.n_cols):
            yield (0, j)
    else:
        for i in range(1, grid.n_rows):
            for j in range(1, grid.n_cols):
                yield (i, j)


def build_index(
    tables: list[Table],
    checkpoint: Checkpoint,
    kind: str = "table",
    metric: str = "cosine",
    include_header: bool = True,
    max_cells: int = 4800,
) -> EmbeddingIndex:
    """Encode every table and collect the requested embeddings with keys.

    Zero vectors are excluded under the cosine metric (diagnostic count).
    """
    if kind not in KINDS:
        raise ValueError(f"unknown embedding kind {kind!r}")
    params = checkpoint.params
    embedder = checkpoint.embedder()
    vectors, keys = [], []
    dropped = 0
    pending: list[Table] = []
    pending_cells = 0
    batches: list[list[Table]] = []
    for t in tables:
        size = augment_with_cls(t, include_header).n_cells
        if pending and pending_cells + size > max_cells:
            batches.append(pending)
            pending, pending_cells = [], 0
        pending.append(t)
        pending_cells += size
    if pending:
        batches.append(pending)
    with ag.no_grad():
        for batch_tables in batches:
            grids = [augment_with_cls(t, include_header) for t in batch_tables]
            batch = build_grid_batch(grids, embedder, params)
            enc = encode(batch, params)
            for b, g in enumerate(grids):
                for (i, j) in _table_keys(g, kind):
                    vec = np.asarray(enc.cells.data[b, i, j], dtype=np.float32)
                    if metric == "cosine" and not np.any(vec):
                        dropped += 1
                        continue
                    vectors.append(vec)
                    keys.append((g.table_id, kind, i, j))
    if not vectors:
        raise IndexError_("no embeddings collected")
    return EmbeddingIndex(
        vectors=np.stack(vectors),
        keys=keys,
        metric=metric,
        kind=kind,
        dropped_zero=dropped,
    )


def knn(index: EmbeddingIndex, query: np.ndarray, k: int) -> list[tuple[tuple, float]]:
    """Exact k nearest keys by the index metric; ties broken by key order."""
    if len(index) == 0:
        raise IndexError_("empty index")
    if k > len(index):
        raise IndexError_(f"k={k} exceeds index size {len(index)}")
    q = np.asarray(query, dtype=np.float64).ravel()
    vecs = index.vectors.astype(np.float64)
    if index.metric == "cosine":
        qn = np.linalg.norm(q)
        if qn == 0:
            raise IndexError_("zero query vector under cosine metric")
        sims = (vecs @ q) / (np.linalg.norm(vecs, axis=1) * qn)
        dists = 1.0 - sims
    else:
        diff = vecs - q
        dists = np.sqrt((diff * diff).sum(axis=1))
    order = np.argsort(dists, kind="stable")[:k]
    return [(index.keys[i], float(dists[i])) for i in order]


def kmeans(vectors: np.ndarray, k: int, iters: int = 50, seed: int = 0):
    """Seeded k-means++ plus Lloyd iterations until assignment fixpoint.

    Returns (assignments, centroids, inertia_history). Empty clusters are
    re-seeded from the point farthest from its assigned centroid.
    """
    vectors = np.asarray(vectors, dtype=np.float64)
    n = vectors.shape[0]
    if k > n:
        raise IndexError_(f"k={k} exceeds number of vectors {n}")
    if k < 1:
        raise IndexError_("k must be >= 1")
    rng = np.random.default_rng(seed)

    # k-means++ seeding
    centroids = np.empty((k, vectors.shape[1]), dtype=np.float64)
    first = int(rng.integers(0, n))
    centroids[0] = vectors[first]
    closest = ((vectors - centroids[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        total = closest.sum()
        if total <= 0:
            idx = int(rng.integers(0, n))
        else:
            r = rng.random() * total
            idx = int(np.searchsorted(np.cumsum(closest), r, side="right"))
            idx = min(idx, n - 1)
        centroids[c] = vectors[idx]
        closest = np.minimum(closest, ((vectors - centroids[c]) ** 2).sum(axis=1))

    x_sq = (vectors * vectors).sum(axis=1)
    assignments = np.full(n, -1, dtype=int)
    inertia_history: list[float] = []
    for _ in range(max(1, iters)):
        c_sq = (centroids * centroids).sum(axis=1)
        d2 = x_sq[:, None] + c_sq[None, :] - 2.0 * (vectors @ centroids.T)
        np.maximum(d2, 0.0, out=d2)
        new_assign = d2.argmin(axis=1)
        inertia_history.append(float(d2[np.arange(n), new_assign].sum()))
        if np.array_equal(new_assign, assignments):
            break
        assignments = new_assign
        for c in range(k):
            members = vectors[assignments == c]
            if len(members) == 0:
                # farthest point from its current centroid takes over
                per_point = d2[np.arange(n), assignments]
                centroids[c] = vectors[int(per_point.argmax())]
            else:
                centroids[c] = members.mean(axis=0)
    return assignments, centroids, inertia_history


def key_string(key: tuple) -> str:
    tid, kind, i, j = key
    return f"{tid}|{kind}|{i}|{j}"


def save_index(index: EmbeddingIndex, path) -> None:
    header = {
        "metric": index.metric,
        "kind": index.kind,
        "dropped_zero": index.dropped_zero,
        "keys": [[tid, kind, i, j] for tid, kind, i, j in index.keys],
    }
    tensorio.write_file(path, INDEX_MAGIC, header, {"vectors": index.vectors})


def load_index(path) -> EmbeddingIndex:
    try:
        header, tensors = tensorio.read_file(path, INDEX_MAGIC)
    except tensorio.FormatError as e:
        raise IndexError_(f"cannot load index {path}: {e}") from e
    return EmbeddingIndex(
        vectors=tensors["vectors"],
        keys=[(str(t), str(k), int(i), int(j)) for t, k, i, j in header["keys"]],
        metric=header["metric"],
        kind=header["kind"],
        dropped_zero=header.get("dropped_zero", 0),
    )
