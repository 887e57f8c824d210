"""Frozen per-cell text embedding and learned positional embeddings.

Cell text is encoded out-of-context by a hashed character-n-gram encoder:
each n-gram of the configured orders hashes (blake2b, stable across runs
and platforms) into one of `hash_buckets` buckets, each bucket owns a fixed
pseudo-random unit vector, and the cell embedding is the sum of its n-gram
vectors scaled by 1/sqrt(#ngrams). The encoder has no trainable state --
gradients never touch the bucket table.

Row/column positional embeddings are ordinary learned parameters; position
index 0 belongs to the CLS row/column, body cells start at index 1.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .autograd import Tensor, as_tensor

__all__ = ["EmbedderConfig", "CellEmbedder", "PositionalEmbeddings", "apply_positions"]


@dataclass(frozen=True)
class EmbedderConfig:
    hidden_dim: int = 64
    ngram_orders: tuple = (1, 2, 3, 4, 5)
    hash_buckets: int = 1 << 16
    seed: int = 1234

    def __post_init__(self):
        if self.hidden_dim < 1:
            raise ValueError("hidden_dim must be >= 1")
        if self.hash_buckets < 1:
            raise ValueError("hash_buckets must be >= 1")
        object.__setattr__(self, "ngram_orders", tuple(int(n) for n in self.ngram_orders))

    def to_json(self) -> dict:
        return {
            "hidden_dim": self.hidden_dim,
            "ngram_orders": list(self.ngram_orders),
            "hash_buckets": self.hash_buckets,
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "EmbedderConfig":
        return cls(
            hidden_dim=obj["hidden_dim"],
            ngram_orders=tuple(obj["ngram_orders"]),
            hash_buckets=obj["hash_buckets"],
            seed=obj["seed"],
        )


def _bucket_of(ngram: str, buckets: int) -> int:
    digest = hashlib.blake2b(ngram.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % buckets


class CellEmbedder:
    """Deterministic, frozen text-to-vector encoder with a per-string cache."""

    def __init__(self, cfg: EmbedderConfig, dtype=np.float32):
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(cfg.seed)
        vecs = rng.standard_normal((cfg.hash_buckets, cfg.hidden_dim))
        norms = np.linalg.norm(vecs, axis=1, keepdims=True)
        norms[norms == 0.0] = 1.0
        # Unit bucket vectors; frozen (plain array, never a parameter).
        self.bucket_vectors = (vecs / norms).astype(self.dtype)
        self._cache: dict[str, np.ndarray] = {}

    def embed(self, text: str) -> np.ndarray:
        """Embed one cell string. Empty text maps to the zero vector."""
        hit = self._cache.get(text)
        if hit is not None:
            return hit
        buckets = []
        n_chars = len(text)
        for order in self.cfg.ngram_orders:
            if order < 1 or order > n_chars:
                continue
            for start in range(n_chars - order + 1):
                buckets.append(_bucket_of(text[start : start + order], self.cfg.hash_buckets))
        if not buckets:
            vec = np.zeros(self.cfg.hidden_dim, dtype=self.dtype)
        else:
            vec = self.bucket_vectors[buckets].sum(axis=0)
            vec = (vec / np.sqrt(len(buckets))).astype(self.dtype)
        vec.setflags(write=False)
        self._cache[text] = vec
        return vec

    __call__ = embed


@dataclass
class PositionalEmbeddings:
    """Learned row/column position tables (tensors shaped rows x H, cols x H)."""

    row_table: Tensor
    col_table: Tensor

    @property
    def n_rows(self) -> int:
        return self.row_table.shape[0]

    @property
    def n_cols(self) -> int:
        return self.col_table.shape[0]


def apply_positions(grid, pos: PositionalEmbeddings) -> Tensor:
    """Add p_row[i] + p_col[j] to every grid vector, once, at the input layer.

    `grid` is (M, N, H) or batched (B, M, N, H); returns a tensor of the same
    shape. Fails if the grid outgrows the positional tables.
    """
    grid = as_tensor(grid)
    m, n = grid.shape[-3], grid.shape[-2]
    if m > pos.n_rows or n > pos.n_cols:
        raise ValueError(
            f"grid {m}x{n} exceeds positional tables {pos.n_rows}x{pos.n_cols}"
        )
    rows = pos.row_table[:m].reshape(m, 1, pos.row_table.shape[1])
    cols = pos.col_table[:n]
    return grid + rows + cols
