"""Cell corruption processes for self-supervised pretraining.

Two families: frequency-based replacement (draw substitutes from the corpus
cell distribution, common cells drawn more often) and intra-table swaps
(exchange two cells, optionally constrained to one row or one column). The
MIX strategy splits a per-table corruption budget 50/50 between them, and
half of the swap pairs are row/column-constrained.

All corruption happens on the header-stacked string grid (header cells are
eligible); labels mark exactly the cells whose content changed.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .corpus import CellVocab, Table

__all__ = [
    "CorruptionConfig",
    "CorruptionRecord",
    "corrupt",
    "corrupt_freq",
    "corrupt_swap",
    "corrupt_mix",
    "table_rng",
]

TAG_FREQ = "freq_sample"
TAG_ROW_SWAP = "intra_row_swap"
TAG_COL_SWAP = "intra_col_swap"
TAG_TABLE_SWAP = "intra_table_swap"
ALL_TAGS = (TAG_FREQ, TAG_ROW_SWAP, TAG_COL_SWAP, TAG_TABLE_SWAP)

_MAX_REDRAWS = 16


@dataclass(frozen=True)
class CorruptionConfig:
    strategy: str = "freq"  # "freq" | "mix"
    rate: float = 0.15
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in ("freq", "mix"):
            raise ValueError(f"unknown corruption strategy {self.strategy!r}")
        if not 0.0 < self.rate < 1.0:
            raise ValueError("rate must be in (0, 1)")

    def to_json(self) -> dict:
        return {"strategy": self.strategy, "rate": self.rate, "seed": self.seed}

    @classmethod
    def from_json(cls, obj: dict) -> "CorruptionConfig":
        return cls(strategy=obj["strategy"], rate=obj["rate"], seed=obj["seed"])


@dataclass
class CorruptionRecord:
    """A corrupted table, per-cell change labels, and per-cell corruption tags.

    `labels` is a bool grid over the header-stacked cells (header row first
    when present); `tags[(i, j)]` names the corruption applied wherever
    labels[i, j] is true.
    """

    table: Table
    labels: np.ndarray
    tags: dict[tuple[int, int], str]
    diagnostics: dict = field(default_factory=dict)

    def corrupted_count(self) -> int:
        return int(self.labels.sum())


def table_rng(seed: int, table_id: str, epoch: int = 0) -> np.random.Generator:
    """Per-table RNG stream so corruption is order-independent across tables."""
    digest = hashlib.blake2b(table_id.encode("utf-8"), digest_size=8).digest()
    return np.random.default_rng([seed, epoch, int.from_bytes(digest, "little")])


class _WorkGrid:
    """Mutable stacked grid with O(1) uniform sampling of untouched cells."""

    def __init__(self, t: Table):
        self.header_rows = t.header_rows()
        self.cells = [list(r) for r in t.stacked()]
        self.n_rows = len(self.cells)
        self.n_cols = len(self.cells[0])
        self.flat = [(i, j) for i in range(self.n_rows) for j in range(self.n_cols)]
        self.pos = {c: idx for idx, c in enumerate(self.flat)}
        self.row_count = [self.n_cols] * self.n_rows
        self.col_count = [self.n_rows] * self.n_cols

    def available(self) -> int:
        return len(self.flat)

    def remove(self, cell: tuple[int, int]) -> None:
        idx = self.pos.pop(cell)
        last = self.flat.pop()
        if last != cell:
            self.flat[idx] = last
            self.pos[last] = idx
        self.row_count[cell[0]] -= 1
        self.col_count[cell[1]] -= 1

    def row_cells(self, i: int) -> list[tuple[int, int]]:
        return [(i, j) for j in range(self.n_cols) if (i, j) in self.pos]

    def col_cells(self, j: int) -> list[tuple[int, int]]:
        return [(i, j) for i in range(self.n_rows) if (i, j) in self.pos]

    def get(self, cell) -> str:
        return self.cells[cell[0]][cell[1]]

    def set(self, cell, value: str) -> None:
        self.cells[cell[0]][cell[1]] = value

    def to_table(self, table_id: str, had_header: bool) -> Table:
        if had_header:
            return Table(id=table_id, header=list(self.cells[0]), rows=[list(r) for r in self.cells[1:]])
        return Table(id=table_id, header=None, rows=[list(r) for r in self.cells])


def _finish(t: Table, grid: _WorkGrid, original: list[list[str]], tags, diagnostics) -> CorruptionRecord:
    labels = np.zeros((grid.n_rows, grid.n_cols), dtype=bool)
    for (i, j) in tags:
        labels[i, j] = grid.cells[i][j] != original[i][j]
    tags = {c: tag for c, tag in tags.items() if labels[c]}
    return CorruptionRecord(
        table=grid.to_table(t.id, t.header is not None),
        labels=labels,
        tags=tags,
        diagnostics=diagnostics,
    )


def _freq_replace(grid: _WorkGrid, cell, vocab: CellVocab, rng, tags, diagnostics) -> bool:
    original = grid.get(cell)
    for _ in range(_MAX_REDRAWS):
        draw = vocab.sample(rng)
        if draw != original:
            grid.set(cell, draw)
            grid.remove(cell)
            tags[cell] = TAG_FREQ
            return True
    diagnostics["freq_exhausted"] = diagnostics.get("freq_exhausted", 0) + 1
    return False


def _swap_one(grid: _WorkGrid, constraint: str, rng, tags, diagnostics) -> bool:
    """Try to apply one swap pair under `constraint`; True on success."""
    tag = {"any": TAG_TABLE_SWAP, "same_row": TAG_ROW_SWAP, "same_col": TAG_COL_SWAP}[constraint]
    for _ in range(_MAX_REDRAWS):
        if constraint == "any":
            n = grid.available()
            if n < 2:
                break
            i1 = int(rng.integers(0, n))
            i2 = int(rng.integers(0, n - 1))
            if i2 >= i1:
                i2 += 1
            a, b = grid.flat[i1], grid.flat[i2]
        else:
            counts = grid.row_count if constraint == "same_row" else grid.col_count
            weights = np.array([c * (c - 1) // 2 for c in counts], dtype=np.float64)
            total = weights.sum()
            if total <= 0:
                break
            line = int(np.searchsorted(np.cumsum(weights), rng.random() * total, side="right"))
            members = grid.row_cells(line) if constraint == "same_row" else grid.col_cells(line)
            k1 = int(rng.integers(0, len(members)))
            k2 = int(rng.integers(0, len(members) - 1))
            if k2 >= k1:
                k2 += 1
            a, b = members[k1], members[k2]
        if grid.get(a) == grid.get(b):
            continue
        va, vb = grid.get(a), grid.get(b)
        grid.set(a, vb)
        grid.set(b, va)
        grid.remove(a)
        grid.remove(b)
        tags[a] = tag
        tags[b] = tag
        return True
    diagnostics["failed_pairs"] = diagnostics.get("failed_pairs", 0) + 1
    return False


def corrupt_freq(t: Table, vocab: CellVocab, rate: float, rng) -> CorruptionRecord:
    """Independently corrupt each cell with probability `rate` by a vocab draw.

    A draw equal to the original is retried up to 16 times, then the cell is
    left intact and unlabeled.
    """
    grid = _WorkGrid(t)
    original = [list(r) for r in grid.cells]
    tags: dict = {}
    diagnostics: dict = {}
    selected = rng.random((grid.n_rows, grid.n_cols)) < rate
    for i in range(grid.n_rows):
        for j in range(grid.n_cols):
            if selected[i, j]:
                _freq_replace(grid, (i, j), vocab, rng, tags, diagnostics)
    return _finish(t, grid, original, tags, diagnostics)


def corrupt_swap(t: Table, constraint: str, pairs: int, rng) -> CorruptionRecord:
    """Exchange `pairs` disjoint cell pairs chosen uniformly under `constraint`.

    constraint: "any", "same_row", or "same_col". Pairs with identical
    contents are resampled; an unsatisfiable constraint yields fewer (or
    zero) swaps plus a `failed_pairs` diagnostic.
    """
    if constraint not in ("any", "same_row", "same_col"):
        raise ValueError(f"unknown swap constraint {constraint!r}")
    grid = _WorkGrid(t)
    original = [list(r) for r in grid.cells]
    tags: dict = {}
    diagnostics: dict = {}
    for _ in range(pairs):
        _swap_one(grid, constraint, rng, tags, diagnostics)
    return _finish(t, grid, original, tags, diagnostics)


def corrupt_mix(t: Table, vocab: CellVocab, rate: float, rng) -> CorruptionRecord:
    """50/50 split of the corruption budget between freq draws and swaps.

    Budget = max(1, floor(rate * cells)). Half the swap pairs are constrained
    to one row or one column (picked uniformly per pair), half unconstrained;
    swaps run first and freq replacement skips already-corrupted cells.
    """
    grid = _WorkGrid(t)
    original = [list(r) for r in grid.cells]
    tags: dict = {}
    diagnostics: dict = {}
    eligible = grid.n_rows * grid.n_cols
    budget = max(1, int(rate * eligible)) if rate > 0 else 0
    freq_target = budget // 2
    pairs = (budget - freq_target) // 2
    freq_target += budget - freq_target - 2 * pairs  # leftover cell goes to freq
    constrained = (pairs + 1) // 2
    for p in range(pairs):
        if p < constrained:
            constraint = "same_row" if rng.random() < 0.5 else "same_col"
        else:
            constraint = "any"
        _swap_one(grid, constraint, rng, tags, diagnostics)
    n_freq = min(freq_target, grid.available())
    if n_freq > 0:
        chosen = rng.choice(grid.available(), size=n_freq, replace=False)
        cells = [grid.flat[int(c)] for c in chosen]
        for cell in cells:
            _freq_replace(grid, cell, vocab, rng, tags, diagnostics)
    return _finish(t, grid, original, tags, diagnostics)


def corrupt(t: Table, vocab: CellVocab, cfg: CorruptionConfig, rng) -> CorruptionRecord:
    if cfg.strategy == "freq":
        return corrupt_freq(t, vocab, cfg.rate, rng)
    return corrupt_mix(t, vocab, cfg.rate, rng)
