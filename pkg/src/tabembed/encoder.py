"""The dual-axis table encoder.

Each layer runs one transformer block along every row and an independent
block along every column of the cell grid; the two contextualizations are
averaged cell-wise and fed to the next layer. Blocks are pre-layer-norm
(residual stream is untouched when all weights are zero), multi-head
self-attention plus a GELU feed-forward.

Grid geometry: position (0,0) is the table-level CLS token, row 0 holds the
column CLS tokens, column 0 the row CLS tokens; the optional header occupies
grid row 1, body cells start at (1,1) (or (2,1) under a header).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .corpus import Table
from .embedder import CellEmbedder, apply_positions
from .encoder_config import EncoderConfig
from .params import ModelParams

__all__ = [
    "EncoderConfig",
    "TokenGrid",
    "GridBatch",
    "TableEncoding",
    "EncodeError",
    "augment_with_cls",
    "build_grid_batch",
    "pool_layer",
    "encode",
    "encode_tables",
    "extract_embedding",
]

CLS_TAB = "[CLSTAB]"
CLS_ROW = "[CLSROW]"
CLS_COL = "[CLSCOL]"
_MASK_BIAS = 1e9


class EncodeError(Exception):
    pass


@dataclass
class TokenGrid:
    """CLS-augmented string grid for one table."""

    table_id: str
    tokens: list[list[str]]
    header_rows: int
    body_rows: int
    body_cols: int

    @property
    def n_rows(self) -> int:
        return 1 + self.header_rows + self.body_rows

    @property
    def n_cols(self) -> int:
        return 1 + self.body_cols

    @property
    def n_cells(self) -> int:
        return self.n_rows * self.n_cols

    def stacked_to_grid(self, i: int, j: int) -> tuple[int, int]:
        """Map header-stacked table coordinates to grid coordinates."""
        return i + 1, j + 1


def augment_with_cls(t: Table, include_header: bool = True) -> TokenGrid:
    """Prepend the CLS row/column (corner token at (0,0)) to a table."""
    t.validate()
    body = [list(r) for r in t.rows]
    header_rows = 0
    stacked = body
    if include_header and t.header is not None:
        stacked = [list(t.header)] + body
        header_rows = 1
    n_cols = len(stacked[0])
    tokens = [[CLS_TAB] + [CLS_COL] * n_cols]
    for row in stacked:
        tokens.append([CLS_ROW] + row)
    return TokenGrid(
        table_id=t.id,
        tokens=tokens,
        header_rows=header_rows,
        body_rows=len(body),
        body_cols=n_cols,
    )


@dataclass
class GridBatch:
    """Padded input grid for a batch of tables, ready to encode."""

    grid: Tensor  # (B, M, N, H), positions applied, padding zeroed
    mask: np.ndarray  # (B, M, N) 1.0 at real positions (CLS included)
    cell_mask: np.ndarray  # (B, M, N) 1.0 at loss-eligible body+header cells
    grids: list[TokenGrid]

    @property
    def shape(self):
        return self.grid.shape


def build_grid_batch(
    grids: list[TokenGrid],
    embedder: CellEmbedder,
    params: ModelParams,
) -> GridBatch:
    """Embed tokens, place CLS vectors, add positions, and mask out padding."""
    if not grids:
        raise ValueError("empty batch")
    dtype = params.dtype
    h = params.encoder.hidden_dim
    m = max(g.n_rows for g in grids)
    n = max(g.n_cols for g in grids)
    if m > params.grid_rows or n > params.grid_cols:
        raise EncodeError(
            f"grid {m}x{n} exceeds model capacity {params.grid_rows}x{params.grid_cols}"
        )
    b = len(grids)
    base = np.zeros((b, m, n, h), dtype=dtype)
    mask = np.zeros((b, m, n), dtype=dtype)
    cell_mask = np.zeros((b, m, n), dtype=dtype)
    for bi, g in enumerate(grids):
        mask[bi, : g.n_rows, : g.n_cols] = 1.0
        cell_mask[bi, 1 : g.n_rows, 1 : g.n_cols] = 1.0
        for i, row in enumerate(g.tokens):
            if i == 0:
                continue
            for j, tok in enumerate(row):
                if j == 0:
                    continue
                base[bi, i, j] = embedder.embed(tok)

    corner = np.zeros((m, n, 1), dtype=dtype)
    corner[0, 0, 0] = 1.0
    col_ind = np.zeros((m, n, 1), dtype=dtype)
    col_ind[0, 1:, 0] = 1.0
    row_ind = np.zeros((m, n, 1), dtype=dtype)
    row_ind[1:, 0, 0] = 1.0

    x = ag.as_tensor(base)
    x = x + ag.as_tensor(corner) * params["cls_tab"]
    x = x + ag.as_tensor(col_ind) * params["cls_col"]
    x = x + ag.as_tensor(row_ind) * params["cls_row"]
    x = apply_positions(x, params.positional())
    x = x * ag.as_tensor(mask[..., None])
    return GridBatch(grid=x, mask=mask, cell_mask=cell_mask, grids=grids)


def pool_layer(r, c) -> Tensor:
    """Cell-wise arithmetic mean of the row and column contextualizations."""
    r = ag.as_tensor(r)
    c = ag.as_tensor(c)
    if r.shape != c.shape:
        raise ValueError(f"pool_layer shape mismatch: {r.shape} vs {c.shape}")
    return (r + c) * 0.5


def _attention(x: Tensor, key_mask: np.ndarray, params: ModelParams, prefix: str, heads: int) -> Tensor:
    b, s, h = x.shape
    dh = h // heads
    scale = 1.0 / np.sqrt(dh)

    def project(w, bias):
        y = ag.matmul(x, params[f"{prefix}.attn.{w}"]) + params[f"{prefix}.attn.{bias}"]
        return y.reshape(b, s, heads, dh).swapaxes(1, 2)

    q = project("wq", "bq")
    k = project("wk", "bk")
    v = project("wv", "bv")
    scores = ag.matmul(q, k.swapaxes(-1, -2)) * scale
    bias = ((key_mask - 1.0) * _MASK_BIAS)[:, None, None, :]
    attn = ag.softmax(scores + ag.as_tensor(bias.astype(key_mask.dtype)), axis=-1)
    ctx = ag.matmul(attn, v).swapaxes(1, 2).reshape(b, s, h)
    return ag.matmul(ctx, params[f"{prefix}.attn.wo"]) + params[f"{prefix}.attn.bo"]


def _dropout(x: Tensor, p: float, rng) -> Tensor:
    if p <= 0.0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return x * ag.as_tensor(keep)


def _block(x: Tensor, key_mask: np.ndarray, params: ModelParams, prefix: str, cfg: EncoderConfig, rng) -> Tensor:
    a_in = ag.layer_norm(x, params[f"{prefix}.ln1.gain"], params[f"{prefix}.ln1.bias"])
    attn = _attention(a_in, key_mask, params, prefix, cfg.heads)
    hidden = x + _dropout(attn, cfg.dropout, rng)
    f_in = ag.layer_norm(hidden, params[f"{prefix}.ln2.gain"], params[f"{prefix}.ln2.bias"])
    inner = ag.gelu(ag.matmul(f_in, params[f"{prefix}.ffn.w1"]) + params[f"{prefix}.ffn.b1"])
    ffn = ag.matmul(inner, params[f"{prefix}.ffn.w2"]) + params[f"{prefix}.ffn.b2"]
    return hidden + _dropout(ffn, cfg.dropout, rng)


@dataclass
class TableEncoding:
    """Final-layer cell grid plus the masks and per-table geometry."""

    cells: Tensor  # (B, M, N, H)
    mask: np.ndarray
    cell_mask: np.ndarray
    grids: list[TokenGrid]

    def row_embedding(self, b: int, i: int) -> np.ndarray:
        return extract_embedding(self, "row", i=i, b=b)

    def col_embedding(self, b: int, j: int) -> np.ndarray:
        return extract_embedding(self, "column", j=j, b=b)

    def table_embedding(self, b: int = 0) -> np.ndarray:
        return extract_embedding(self, "table", b=b)


def encode(batch: GridBatch, params: ModelParams, cfg: EncoderConfig | None = None, dropout_rng=None) -> TableEncoding:
    """Run the stacked row/column transformer layers over a grid batch."""
    cfg = cfg or params.encoder
    x = batch.grid
    b, m, n, h = x.shape
    row_mask = batch.mask.reshape(b * m, n)
    col_mask = batch.mask.swapaxes(1, 2).reshape(b * n, m)
    for layer in range(cfg.layers):
        rows_in = x.reshape(b * m, n, h)
        r = _block(rows_in, row_mask, params, f"layer{layer}.row", cfg, dropout_rng)
        r = r.reshape(b, m, n, h)
        cols_in = x.swapaxes(1, 2).reshape(b * n, m, h)
        c = _block(cols_in, col_mask, params, f"layer{layer}.col", cfg, dropout_rng)
        c = c.reshape(b, n, m, h).swapaxes(1, 2)
        x = pool_layer(r, c)
        if not np.isfinite(x.data).all():
            raise EncodeError(f"non-finite activations at layer {layer}")
    return TableEncoding(cells=x, mask=batch.mask, cell_mask=batch.cell_mask, grids=batch.grids)


def encode_tables(
    tables: list[Table],
    params: ModelParams,
    embedder: CellEmbedder,
    include_header: bool = True,
    dropout_rng=None,
) -> TableEncoding:
    grids = [augment_with_cls(t, include_header) for t in tables]
    batch = build_grid_batch(grids, embedder, params)
    return encode(batch, params, params.encoder, dropout_rng)


def extract_embedding(
    enc: TableEncoding,
    kind: str,
    i: int | None = None,
    j: int | None = None,
    b: int = 0,
) -> np.ndarray:
    """Pull one final-layer vector out of an encoding.

    Indices are grid coordinates: `cell` needs i >= 1 and j >= 1, `row`
    takes the CLSROW vector at (i, 0), `column` the CLSCOL vector at (0, j),
    and `table` the corner vector at (0, 0).
    """
    g = enc.grids[b]
    if kind == "table":
        return np.array(enc.cells.data[b, 0, 0])
    if kind == "row":
        if i is None or not 1 <= i < g.n_rows:
            raise IndexError(f"row index {i} out of range 1..{g.n_rows - 1}")
        return np.array(enc.cells.data[b, i, 0])
    if kind == "column":
        if j is None or not 1 <= j < g.n_cols:
            raise IndexError(f"column index {j} out of range 1..{g.n_cols - 1}")
        return np.array(enc.cells.data[b, 0, j])
    if kind == "cell":
        if i is None or j is None or not (1 <= i < g.n_rows and 1 <= j < g.n_cols):
            raise IndexError(f"cell index ({i}, {j}) out of range for grid {g.n_rows}x{g.n_cols}")
        return np.array(enc.cells.data[b, i, j])
    raise ValueError(f"unknown embedding kind {kind!r}")
