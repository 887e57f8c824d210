"""Pretraining: corruption-detection loss, cell-budget batching, Adam, checkpoints.

The per-cell corruption probability is sigmoid(w . x + b) over final-layer
cell vectors; the loss is binary cross entropy averaged over all eligible
(body + header, non-CLS, non-padding) cells in the batch.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .corpus import CellVocab, Table, TruncationLimits, build_cell_vocabulary
from .corruption import CorruptionConfig, CorruptionRecord, corrupt, table_rng
from .embedder import CellEmbedder, EmbedderConfig
from .encoder import EncoderConfig, augment_with_cls, build_grid_batch, encode
from .params import ModelParams
from . import tensorio

__all__ = [
    "TrainingError",
    "Checkpoint",
    "corruption_probability",
    "pretrain_loss",
    "make_batches",
    "Adam",
    "clip_global_norm",
    "pretrain",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_MAGIC = b"TBLEMB01"
_PROB_EPS = 1e-7


class TrainingError(Exception):
    pass


def corruption_probability(x, w, b=None):
    """sigmoid(w . x + b) for a single vector or any (..., H) stack of them."""
    x = ag.as_tensor(x)
    w = ag.as_tensor(w)
    z = (x * w).sum(axis=-1)
    if b is not None:
        z = z + ag.as_tensor(b)
    return ag.sigmoid(z)


def pretrain_loss(probs, labels, mask):
    """Mean binary cross entropy over mask-eligible cells.

    Probabilities are clamped to [1e-7, 1 - 1e-7] before the log. Raises if
    the mask selects nothing.
    """
    probs = ag.as_tensor(probs)
    dtype = probs.dtype
    labels = np.asarray(labels, dtype=dtype)
    mask = np.asarray(mask, dtype=dtype)
    if probs.shape != labels.shape or probs.shape != mask.shape:
        raise ValueError(
            f"shape mismatch: probs {probs.shape}, labels {labels.shape}, mask {mask.shape}"
        )
    n = float(mask.sum())
    if n == 0:
        raise TrainingError("no loss-eligible cells in batch")
    p = ag.clip(probs, _PROB_EPS, 1.0 - _PROB_EPS)
    y = ag.as_tensor(labels)
    bce = -(y * ag.log(p) + (1.0 - y) * ag.log(1.0 - p))
    return (bce * ag.as_tensor(mask)).sum() * (1.0 / n)


def augmented_cells(t: Table, include_header: bool = True) -> int:
    """Padded-grid cell count of one table after CLS augmentation."""
    g = augment_with_cls(t, include_header)
    return g.n_cells


def make_batches(
    tables: list[Table],
    max_cells: int = 4800,
    seed: int = 0,
    include_header: bool = True,
) -> list[list[Table]]:
    """Shuffle by seed, then greedily pack tables under a padded-cell budget.

    The cost of a batch is (#tables) * (max rows) * (max cols) over its
    members, i.e. the padded grid actually allocated. A single table larger
    than the budget is an error.
    """
    dims = []
    for t in tables:
        g = augment_with_cls(t, include_header)
        if g.n_cells > max_cells:
            raise TrainingError(
                f"table {t.id!r} needs {g.n_cells} cells, over the {max_cells}-cell budget"
            )
        dims.append((g.n_rows, g.n_cols))
    order = np.random.default_rng(seed).permutation(len(tables))
    batches: list[list[Table]] = []
    cur: list[int] = []
    cur_m = cur_n = 0
    for idx in order:
        m, n = dims[idx]
        new_m, new_n = max(cur_m, m), max(cur_n, n)
        if cur and (len(cur) + 1) * new_m * new_n > max_cells:
            batches.append([tables[i] for i in cur])
            cur, cur_m, cur_n = [], 0, 0
            new_m, new_n = m, n
        cur.append(int(idx))
        cur_m, cur_n = new_m, new_n
    if cur:
        batches.append([tables[i] for i in cur])
    return batches


class Adam:
    """Bias-corrected Adam over a list of named tensors."""

    def __init__(self, tensors: list[Tensor], lr: float = 1e-5, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.tensors = list(tensors)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.tensors]
        self.v = [np.zeros_like(p.data) for p in self.tensors]

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for i, p in enumerate(self.tensors):
            g = p.grad
            if g is None:
                continue
            if not np.isfinite(g).all():
                raise TrainingError(f"non-finite gradient for {p.name or f'tensor {i}'}")
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * (g * g)
            m_hat = self.m[i] / bias1
            v_hat = self.v[i] / bias2
            p.data = p.data - (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.data.dtype)

    def zero_grad(self) -> None:
        for p in self.tensors:
            p.grad = None


def clip_global_norm(tensors: list[Tensor], max_norm: float = 1.0) -> float:
    """Scale all gradients so their joint L2 norm is at most max_norm."""
    total = 0.0
    for p in tensors:
        if p.grad is not None:
            total += float((p.grad.astype(np.float64) ** 2).sum())
    norm = float(np.sqrt(total))
    if norm > max_norm and norm > 0:
        scale = max_norm / norm
        for p in tensors:
            if p.grad is not None:
                p.grad = p.grad * scale
    return norm


@dataclass
class Checkpoint:
    """Everything needed to rebuild a model: params plus its configs.

    `head` carries optional task-head tensors for fine-tuned models and
    `task` their metadata (task name, label space, seed-column count...).
    """

    params: ModelParams
    corruption: CorruptionConfig | None = None
    task: dict | None = None
    head: dict[str, np.ndarray] = field(default_factory=dict)

    def embedder(self) -> CellEmbedder:
        return CellEmbedder(self.params.embedder, dtype=self.params.dtype)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    header = {
        "encoder": ckpt.params.encoder.to_json(),
        "embedder": ckpt.params.embedder.to_json(),
        "limits": {
            "max_rows": ckpt.params.limits.max_rows,
            "max_cols": ckpt.params.limits.max_cols,
            "max_cell_chars": ckpt.params.limits.max_cell_chars,
        },
        "corruption": ckpt.corruption.to_json() if ckpt.corruption else None,
        "task": ckpt.task,
    }
    tensors = dict(ckpt.params.state_arrays())
    for name, arr in ckpt.head.items():
        tensors[f"head.{name}"] = arr
    tensorio.write_file(path, CHECKPOINT_MAGIC, header, tensors)


def load_checkpoint(path) -> Checkpoint:
    try:
        header, tensors = tensorio.read_file(path, CHECKPOINT_MAGIC)
    except tensorio.FormatError as e:
        raise TrainingError(f"cannot load checkpoint {path}: {e}") from e
    limits = TruncationLimits(**header["limits"])
    params = ModelParams(
        EncoderConfig.from_json(header["encoder"]),
        EmbedderConfig.from_json(header["embedder"]),
        limits,
        seed=0,
        dtype=np.float32,
    )
    head = {name[len("head."):]: arr for name, arr in tensors.items() if name.startswith("head.")}
    body = {name: arr for name, arr in tensors.items() if not name.startswith("head.")}
    try:
        params.load_state(body)
    except ValueError as e:
        raise TrainingError(f"cannot load checkpoint {path}: {e}") from e
    corruption = CorruptionConfig.from_json(header["corruption"]) if header.get("corruption") else None
    return Checkpoint(params=params, corruption=corruption, task=header.get("task"), head=head)


def batch_forward(
    records: list[CorruptionRecord],
    params: ModelParams,
    embedder: CellEmbedder,
    include_header: bool = True,
    dropout_rng=None,
):
    """Encode corrupted tables and return (loss, probability grid, label grid, mask)."""
    grids = [augment_with_cls(r.table, include_header) for r in records]
    batch = build_grid_batch(grids, embedder, params)
    enc = encode(batch, params, params.encoder, dropout_rng)
    b, m, n, _ = enc.cells.shape
    labels = np.zeros((b, m, n), dtype=params.dtype)
    for bi, rec in enumerate(records):
        g = grids[bi]
        li, lj = rec.labels.shape
        labels[bi, 1 : 1 + li, 1 : 1 + lj] = rec.labels.astype(params.dtype)
    probs = corruption_probability(enc.cells, params["clf.w"], params["clf.b"])
    loss = pretrain_loss(probs, labels, batch.cell_mask)
    return loss, probs, labels, batch.cell_mask


def pretrain(
    tables: list[Table],
    encoder_cfg: EncoderConfig,
    embedder_cfg: EmbedderConfig,
    corruption_cfg: CorruptionConfig,
    limits: TruncationLimits = TruncationLimits(),
    epochs: int = 7,
    lr: float = 1e-5,
    seed: int = 0,
    max_cells: int = 4800,
    vocab: CellVocab | None = None,
    out: str | None = None,
    log=None,
) -> Checkpoint:
    """Full pretraining loop: corrupt, encode, classify, BCE, Adam.

    Emits a checkpoint at every epoch end when `out` is given (suffix
    ".epochN", final weights at `out`). Single-threaded and deterministic
    for a fixed seed.
    """
    if vocab is None:
        vocab = build_cell_vocabulary(tables)
    params = ModelParams(encoder_cfg, embedder_cfg, limits, seed=seed)
    embedder = CellEmbedder(embedder_cfg, dtype=params.dtype)
    opt = Adam(params.tensors(), lr=lr)
    ckpt = Checkpoint(params=params, corruption=corruption_cfg)
    for epoch in range(epochs):
        batches = make_batches(tables, max_cells=max_cells, seed=seed + epoch)
        for step, batch_tables in enumerate(batches):
            records = [
                corrupt(t, vocab, corruption_cfg, table_rng(corruption_cfg.seed, t.id, epoch))
                for t in batch_tables
            ]
            loss, _, _, _ = batch_forward(records, params, embedder)
            params.zero_grad()
            loss.backward()
            clip_global_norm(params.tensors(), 1.0)
            opt.step()
            if log:
                log(f"epoch {epoch} step {step} loss {float(loss.data):.6f}")
        if out:
            save_checkpoint(ckpt, f"{out}.epoch{epoch}")
    if out:
        save_checkpoint(ckpt, out)
    return ckpt


def stderr_log(msg: str) -> None:
    print(msg, file=sys.stderr)
