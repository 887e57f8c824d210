"""Fine-tuning heads and evaluation flows.

Three downstream tasks share one pattern: encode a (possibly reduced) table,
take CLS column vectors, and put a linear head on top.

  column population  head input: n_seed concatenated CLSCOL vectors
  row population     head input: the leftmost column's CLSCOL vector
  column type        head input: the target column's CLSCOL vector (headers
                     stripped from the input table)

Fine-tuning backpropagates into every model parameter (nothing frozen except
the text embedder, which has no parameters at all). Corrupt-cell detection
needs no head: it reuses the pretrained classifier.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .corpus import CorpusError, Table, TruncationLimits, truncate_table
from .corruption import ALL_TAGS, CorruptionRecord
from .embedder import CellEmbedder
from .encoder import augment_with_cls, build_grid_batch, encode, encode_tables
from .metrics import PRF, RankingReport, binary_prf, rank_labels, ranking_report, support_weighted_f1
from .params import ModelParams
from .training import Adam, Checkpoint, TrainingError, clip_global_norm, corruption_probability

__all__ = [
    "FinetuneSpec",
    "TaskExample",
    "load_task_records",
    "make_head",
    "colpop_forward",
    "rowpop_forward",
    "coltype_forward",
    "build_label_space",
    "finetune",
    "detect_corruption",
]

TASKS = ("col_pop", "row_pop", "col_type")
_TABLE1 = {
    # batch size, learning rate, max epochs
    "col_pop": (12, 1e-5, 20),
    "row_pop": (48, 2e-5, 30),
    "col_type": (12, 2e-5, 15),
}


@dataclass
class FinetuneSpec:
    task: str
    batch_size: int
    lr: float
    max_epochs: int
    label_space: list[str] = field(default_factory=list)
    n_seed: int = 1
    neg_samples: int = 16
    multilabel_loss: str = "softmax"  # "softmax" (uniform-over-gold CE) or "bce"

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.multilabel_loss not in ("softmax", "bce"):
            raise ValueError("multilabel_loss must be 'softmax' or 'bce'")
        if len(set(self.label_space)) != len(self.label_space):
            raise ValueError("label_space contains duplicates")

    @classmethod
    def for_task(cls, task: str, **overrides) -> "FinetuneSpec":
        bs, lr, ep = _TABLE1[task]
        base = dict(task=task, batch_size=bs, lr=lr, max_epochs=ep)
        base.update(overrides)
        return cls(**base)

    @property
    def include_header(self) -> bool:
        return self.task != "col_type"


@dataclass
class TaskExample:
    table: Table
    payload: dict


def load_task_records(path: str | Path, limits: TruncationLimits = TruncationLimits()) -> list[TaskExample]:
    """Read task JSONL: corpus-format tables plus per-task fields."""
    examples = []
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as e:
        raise CorpusError(f"cannot read task file {path}: {e}") from e
    with fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            t = Table(
                id=str(obj["id"]),
                header=[str(c) for c in obj["header"]] if obj.get("header") is not None else None,
                rows=[[str(c) for c in r] for r in obj["rows"]],
            )
            t.validate()
            payload = {k: v for k, v in obj.items() if k not in ("id", "header", "rows")}
            examples.append(TaskExample(table=truncate_table(t, limits), payload=payload))
    return examples


def make_head(in_dim: int, out_dim: int, seed: int = 0, dtype=np.float32) -> dict[str, Tensor]:
    rng = np.random.default_rng(seed)
    return {
        "w": ag.parameter(rng.normal(0.0, 0.02, size=(in_dim, out_dim)).astype(dtype), "head.w"),
        "b": ag.parameter(np.zeros(out_dim, dtype=dtype), "head.b"),
    }


def _seed_columns(t: Table, n_seed: int) -> Table:
    header = t.header[:n_seed] if t.header is not None else None
    return Table(id=t.id, header=header, rows=[r[:n_seed] for r in t.rows])


def _seed_rows(t: Table, n_seed: int) -> Table:
    return Table(id=t.id, header=t.header, rows=[list(r) for r in t.rows[:n_seed]])


def colpop_forward(
    tables: list[Table],
    n_seed: int,
    params: ModelParams,
    embedder: CellEmbedder,
    head: dict[str, Tensor],
    include_header: bool = True,
) -> Tensor:
    """Scores over header labels from the first n_seed columns of each table."""
    for t in tables:
        if t.n_cols < n_seed:
            raise TrainingError(f"table {t.id!r} has {t.n_cols} columns, needs {n_seed}")
    seeds = [_seed_columns(t, n_seed) for t in tables]
    enc = encode_tables(seeds, params, embedder, include_header)
    b = len(tables)
    h = params.encoder.hidden_dim
    cls_cols = enc.cells[:, 0, 1 : 1 + n_seed, :].reshape(b, n_seed * h)
    return ag.matmul(cls_cols, head["w"]) + head["b"]


def rowpop_forward(
    tables: list[Table],
    n_seed: int,
    params: ModelParams,
    embedder: CellEmbedder,
    head: dict[str, Tensor],
    include_header: bool = True,
) -> Tensor:
    """Scores over entity labels from the first n_seed rows; uses the leftmost
    column's CLSCOL vector."""
    for t in tables:
        if t.n_rows < n_seed:
            raise TrainingError(f"table {t.id!r} has {t.n_rows} rows, needs {n_seed}")
    seeds = [_seed_rows(t, n_seed) for t in tables]
    enc = encode_tables(seeds, params, embedder, include_header)
    first_col = enc.cells[:, 0, 1, :]
    return ag.matmul(first_col, head["w"]) + head["b"]


def _coltype_logits(
    tables: list[Table],
    col_indices: list[int],
    params: ModelParams,
    embedder: CellEmbedder,
    head: dict[str, Tensor],
) -> Tensor:
    for t, j in zip(tables, col_indices):
        if not 0 <= j < t.n_cols:
            raise IndexError(f"column {j} out of range for table {t.id!r} ({t.n_cols} columns)")
    enc = encode_tables(tables, params, embedder, include_header=False)
    b = len(tables)
    rows = np.arange(b)
    cols = np.asarray(col_indices) + 1  # grid coordinates: body columns start at 1
    vec = enc.cells[rows, np.zeros(b, dtype=int), cols]
    return ag.matmul(vec, head["w"]) + head["b"]


def coltype_forward(
    tables: list[Table],
    col_indices: list[int],
    params: ModelParams,
    embedder: CellEmbedder,
    head: dict[str, Tensor],
) -> Tensor:
    """Class probabilities for each table's target column (headers stripped)."""
    return ag.softmax(_coltype_logits(tables, col_indices, params, embedder, head), axis=-1)


# -- losses ----------------------------------------------------------------

def _multilabel_loss(logits: Tensor, gold_sets: list[list[int]], mode: str) -> Tensor:
    b, n_labels = logits.shape
    if mode == "softmax":
        target = np.zeros((b, n_labels), dtype=logits.dtype)
        for i, gold in enumerate(gold_sets):
            target[i, gold] = 1.0 / len(gold)
        logp = ag.log_softmax(logits, axis=-1)
        return -(logp * ag.as_tensor(target)).sum() * (1.0 / b)
    target = np.zeros((b, n_labels), dtype=logits.dtype)
    for i, gold in enumerate(gold_sets):
        target[i, gold] = 1.0
    p = ag.clip(ag.sigmoid(logits), 1e-7, 1.0 - 1e-7)
    y = ag.as_tensor(target)
    bce = -(y * ag.log(p) + (1.0 - y) * ag.log(1.0 - p))
    return bce.sum() * (1.0 / (b * n_labels))


def _sampled_bce_loss(logits: Tensor, gold_sets: list[list[int]], neg_samples: int,
                      n_labels: int, rng) -> Tensor:
    """BCE over each example's gold labels plus uniform random negatives."""
    rows, cols, targets, weights = [], [], [], []
    b = logits.shape[0]
    for i, gold in enumerate(gold_sets):
        gold_set = set(gold)
        negs = []
        for _ in range(neg_samples):
            for _attempt in range(16):
                cand = int(rng.integers(0, n_labels))
                if cand not in gold_set:
                    negs.append(cand)
                    break
        picked = list(gold) + negs
        for k, label in enumerate(picked):
            rows.append(i)
            cols.append(label)
            targets.append(1.0 if k < len(gold) else 0.0)
            weights.append(1.0 / (len(picked) * b))
    z = logits[np.asarray(rows), np.asarray(cols)]
    p = ag.clip(ag.sigmoid(z), 1e-7, 1.0 - 1e-7)
    y = ag.as_tensor(np.asarray(targets, dtype=logits.dtype))
    w = ag.as_tensor(np.asarray(weights, dtype=logits.dtype))
    bce = -(y * ag.log(p) + (1.0 - y) * ag.log(1.0 - p))
    return (bce * w).sum()


def _class_ce_loss(logits: Tensor, gold: list[int]) -> Tensor:
    b = logits.shape[0]
    logp = ag.log_softmax(logits, axis=-1)
    picked = logp[np.arange(b), np.asarray(gold)]
    return -picked.sum() * (1.0 / b)


# -- label spaces and gold resolution ---------------------------------------

def build_label_space(task: str, examples: list[TaskExample], min_count: int = 2) -> list[str]:
    """Desk-scale label space from the training split.

    col_pop: header strings seen at least `min_count` times; row_pop: leftmost
    body cells seen at least `min_count` times; col_type: every type value.
    """
    counts: dict[str, int] = {}
    if task == "col_type":
        return sorted({str(ex.payload["type"]) for ex in examples})
    for ex in examples:
        if task == "col_pop":
            for cell in ex.table.header or []:
                counts[cell] = counts.get(cell, 0) + 1
        else:
            for row in ex.table.rows:
                counts[row[0]] = counts.get(row[0], 0) + 1
    return sorted(s for s, c in counts.items() if c >= min_count)


def _gold_indices(ex: TaskExample, task: str, index: dict[str, int]) -> list[int]:
    if task == "col_pop":
        names = ex.payload.get("gold_headers", [])
    else:
        names = ex.payload.get("gold_entities", [])
    return sorted({index[n] for n in names if n in index})


def _usable(ex: TaskExample, spec: FinetuneSpec) -> bool:
    if spec.task == "col_pop":
        return ex.table.n_cols >= spec.n_seed
    if spec.task == "row_pop":
        return ex.table.n_rows >= spec.n_seed
    return 0 <= int(ex.payload.get("col_index", -1)) < ex.table.n_cols


# -- the fine-tuning loop ----------------------------------------------------

def _forward_loss(batch: list[TaskExample], spec: FinetuneSpec, params, embedder, head,
                  index: dict[str, int], rng) -> Tensor:
    tables = [ex.table for ex in batch]
    if spec.task == "col_pop":
        logits = colpop_forward(tables, spec.n_seed, params, embedder, head)
        golds = [_gold_indices(ex, spec.task, index) for ex in batch]
        return _multilabel_loss(logits, golds, spec.multilabel_loss)
    if spec.task == "row_pop":
        logits = rowpop_forward(tables, spec.n_seed, params, embedder, head)
        golds = [_gold_indices(ex, spec.task, index) for ex in batch]
        if spec.neg_samples > 0:
            return _sampled_bce_loss(logits, golds, spec.neg_samples, len(index), rng)
        return _sampled_bce_loss(logits, golds, 0, len(index), rng)
    logits = _coltype_logits(tables, [int(ex.payload["col_index"]) for ex in batch],
                             params, embedder, head)
    golds = [index[str(ex.payload["type"])] for ex in batch]
    return _class_ce_loss(logits, golds)


def _evaluate(examples: list[TaskExample], spec: FinetuneSpec, params, embedder, head,
              index: dict[str, int]) -> dict:
    """Task metrics over a split, inference mode."""
    usable = [ex for ex in examples if _usable(ex, spec)]
    skipped_shape = len(examples) - len(usable)
    with ag.no_grad():
        if spec.task == "col_type":
            preds, golds = [], []
            classes = list(index)
            for i in range(0, len(usable), 64):
                chunk = usable[i : i + 64]
                logits = _coltype_logits([ex.table for ex in chunk],
                                         [int(ex.payload["col_index"]) for ex in chunk],
                                         params, embedder, head)
                for k, ex in enumerate(chunk):
                    preds.append(classes[int(np.argmax(logits.data[k]))])
                    golds.append(str(ex.payload["type"]))
            f1 = support_weighted_f1(preds, golds, classes)
            acc = float(np.mean([p == g for p, g in zip(preds, golds)]))
            return {"weighted_f1": f1, "accuracy": acc, "examples": len(usable),
                    "skipped": skipped_shape, "primary": f1}
        rankings, golds = [], []
        forward = colpop_forward if spec.task == "col_pop" else rowpop_forward
        for i in range(0, len(usable), 64):
            chunk = usable[i : i + 64]
            logits = forward([ex.table for ex in chunk], spec.n_seed, params, embedder, head)
            for k, ex in enumerate(chunk):
                rankings.append(rank_labels(logits.data[k]).tolist())
                golds.append(set(_gold_indices(ex, spec.task, index)))
        report = ranking_report(rankings, golds)
        out = report.to_json()
        out["skipped"] = skipped_shape
        out["primary"] = report.map
        return out


def finetune(
    spec: FinetuneSpec,
    train: list[TaskExample],
    val: list[TaskExample],
    test: list[TaskExample],
    checkpoint: Checkpoint,
    seed: int = 0,
    log=None,
) -> tuple[Checkpoint, dict]:
    """Fine-tune the full model plus a fresh linear head.

    Keeps the checkpoint that scores best on the validation split (MAP for
    population tasks, support-weighted F1 for column typing) and reports test
    metrics for it. The input checkpoint is not mutated.
    """
    params = checkpoint.params.copy()
    embedder = CellEmbedder(params.embedder, dtype=params.dtype)
    if not spec.label_space:
        spec.label_space = build_label_space(spec.task, train)
    if not spec.label_space:
        raise TrainingError("empty label space")
    index = {s: i for i, s in enumerate(spec.label_space)}
    in_dim = params.encoder.hidden_dim * (spec.n_seed if spec.task == "col_pop" else 1)
    head = make_head(in_dim, len(spec.label_space), seed=seed, dtype=params.dtype)
    trainable = params.tensors() + [head["w"], head["b"]]
    opt = Adam(trainable, lr=spec.lr)

    usable_train = [ex for ex in train if _usable(ex, spec)]
    if log:
        log(f"{spec.task}: {len(usable_train)} usable train examples, "
            f"{len(spec.label_space)} labels")

    def snapshot():
        return (
            {k: v.copy() for k, v in params.state_arrays().items()},
            {k: t.data.copy() for k, t in head.items()},
        )

    best = snapshot()
    best_score = -1.0
    history = []
    rng = np.random.default_rng(seed)
    for epoch in range(spec.max_epochs):
        order = rng.permutation(len(usable_train))
        for start in range(0, len(order), spec.batch_size):
            batch = [usable_train[i] for i in order[start : start + spec.batch_size]]
            loss = _forward_loss(batch, spec, params, embedder, head, index, rng)
            for p in trainable:
                p.grad = None
            loss.backward()
            clip_global_norm(trainable, 1.0)
            opt.step()
        val_report = _evaluate(val, spec, params, embedder, head, index)
        history.append(val_report["primary"])
        if log:
            log(f"{spec.task} epoch {epoch} val {val_report['primary']:.4f}")
        if val_report["primary"] > best_score:
            best_score = val_report["primary"]
            best = snapshot()
    params.load_state(best[0])
    for k, t in head.items():
        t.data = best[1][k]
    test_report = _evaluate(test, spec, params, embedder, head, index)
    task_meta = {
        "task": spec.task,
        "label_space": spec.label_space,
        "n_seed": spec.n_seed,
        "neg_samples": spec.neg_samples,
        "multilabel_loss": spec.multilabel_loss,
    }
    out_ckpt = Checkpoint(params=params, corruption=checkpoint.corruption, task=task_meta,
                          head={k: t.data for k, t in head.items()})
    report = {
        "task": spec.task,
        "test": test_report,
        "val_best": best_score if spec.max_epochs > 0 else None,
        "val_history": history,
        "labels": len(spec.label_space),
    }
    return out_ckpt, report


# -- corrupt-cell detection ---------------------------------------------------

def _chunk_by_cells(items: list, sizes: list[int], budget: int) -> list[list]:
    chunks, cur, cur_cells = [], [], 0
    for item, size in zip(items, sizes):
        if cur and cur_cells + size > budget:
            chunks.append(cur)
            cur, cur_cells = [], 0
        cur.append(item)
        cur_cells += size
    if cur:
        chunks.append(cur)
    return chunks


def detect_corruption(
    inputs: list[Table] | list[CorruptionRecord],
    checkpoint: Checkpoint,
    threshold: float = 0.5,
    max_cells: int = 4800,
) -> dict:
    """Per-cell corruption probabilities, flags, and (given gold) P/R/F1.

    When `inputs` are CorruptionRecords the report buckets precision/recall/
    F1 by corruption tag: each tag's scores are computed over clean cells
    plus the cells corrupted with that tag.
    """
    params = checkpoint.params
    embedder = checkpoint.embedder()
    records = [x if isinstance(x, CorruptionRecord) else None for x in inputs]
    tables = [x.table if isinstance(x, CorruptionRecord) else x for x in inputs]
    has_gold = all(r is not None for r in records) and len(records) > 0

    per_table = []
    all_probs, all_labels, all_tags = [], [], []
    sizes = [augment_with_cls(t, True).n_cells for t in tables]
    order = list(range(len(tables)))
    with ag.no_grad():
        for chunk in _chunk_by_cells(order, sizes, max_cells):
            grids = [augment_with_cls(tables[i], True) for i in chunk]
            batch = build_grid_batch(grids, embedder, params)
            enc = encode(batch, params)
            probs = corruption_probability(enc.cells, params["clf.w"], params["clf.b"]).data
            for k, i in enumerate(chunk):
                g = grids[k]
                stacked_rows = g.header_rows + g.body_rows
                cells = []
                for si in range(stacked_rows):
                    for sj in range(g.body_cols):
                        gi, gj = g.stacked_to_grid(si, sj)
                        p = float(probs[k, gi, gj])
                        flag = p >= threshold
                        cells.append([si, sj, p, bool(flag)])
                        all_probs.append(p)
                        if has_gold:
                            rec = records[i]
                            all_labels.append(bool(rec.labels[si, sj]))
                            all_tags.append(rec.tags.get((si, sj)))
                per_table.append({"id": tables[i].id, "cells": cells})
    report: dict = {"threshold": threshold, "tables": per_table}
    if has_gold:
        flags = np.array([c[3] for t in per_table for c in t["cells"]])
        labels = np.array(all_labels)
        tags = np.array([t if t is not None else "" for t in all_tags])
        report["overall"] = binary_prf(flags, labels).to_json()
        by_tag = {}
        for tag in ALL_TAGS:
            keep = (tags == tag) | ~labels
            if (tags == tag).sum() == 0:
                continue
            by_tag[tag] = binary_prf(flags[keep], labels[keep]).to_json()
        report["per_tag"] = by_tag
    return report
