"""Dry run of the heavy acceptance-suite numbers; prints every headline metric.

Usage: python3 scripts/tune_acceptance.py [n_tables] [epochs] [lr]
"""

import sys
import time

import numpy as np

from tabembed.corpus import build_cell_vocabulary
from tabembed.corruption import CorruptionConfig, corrupt_freq, corrupt_swap, table_rng
from tabembed.embedder import EmbedderConfig
from tabembed.encoder import EncoderConfig
from tabembed.metrics import mrr, rank_labels
from tabembed.synth import generate_corpus, colpop_records, coltype_records, write_records
from tabembed.tasks import FinetuneSpec, detect_corruption, finetune, load_task_records, TaskExample
from tabembed.corpus import Table
from tabembed.training import pretrain

N = int(sys.argv[1]) if len(sys.argv) > 1 else 5000
EPOCHS = int(sys.argv[2]) if len(sys.argv) > 2 else 14
LR = float(sys.argv[3]) if len(sys.argv) > 3 else 6e-3

enc = EncoderConfig(hidden_dim=64, layers=2, heads=2)
emb = EmbedderConfig(hidden_dim=64)

metas = generate_corpus(N + 500, seed=1)
train = [m.table for m in metas[:N]]
held = [m.table for m in metas[N:]]
vocab = build_cell_vocabulary(train)
print(f"corpus {N}+{len(held)} tables, vocab {len(vocab)}", flush=True)

models = {}
for strategy in ("freq", "mix"):
    losses = []
    t0 = time.time()
    ckpt = pretrain(train, enc, emb, CorruptionConfig(strategy, 0.15, 0),
                    epochs=EPOCHS, lr=LR, seed=0, vocab=vocab,
                    log=lambda m: losses.append(float(m.rsplit(' ', 1)[1])))
    k = max(1, len(losses) // 8)
    traj = [round(float(np.mean(losses[i:i+k])), 4) for i in range(0, len(losses), k)]
    print(f"{strategy}: {time.time()-t0:.0f}s, loss {traj}", flush=True)
    models[strategy] = ckpt

freq_records = [corrupt_freq(t, vocab, 0.15, table_rng(99, t.id)) for t in held]
swap_records = []
for t in held:
    cells = (t.n_rows + 1) * t.n_cols
    pairs = max(1, int(0.15 * cells / 2))
    swap_records.append(corrupt_swap(t, "same_col", pairs, table_rng(7, t.id)))

for strategy, ckpt in models.items():
    freq_rep = detect_corruption(freq_records, ckpt)["overall"]
    swap_rep = detect_corruption(swap_records, ckpt)["overall"]
    print(f"{strategy}: freq-detect F1 {freq_rep['f1']:.3f} "
          f"(P {freq_rep['precision']:.3f} R {freq_rep['recall']:.3f}) | "
          f"colswap F1 {swap_rep['f1']:.3f} "
          f"(P {swap_rep['precision']:.3f} R {swap_rep['recall']:.3f})", flush=True)

# fine-tuning probes on the FREQ model
ckpt = models["freq"]
ft_metas = metas[: min(N, 1200)]
n_tr, n_va = int(len(ft_metas) * 0.75), int(len(ft_metas) * 0.12)


def to_examples(records):
    out = []
    for obj in records:
        t = Table(id=obj["id"], header=obj["header"], rows=obj["rows"])
        payload = {k: v for k, v in obj.items() if k not in ("id", "header", "rows")}
        out.append(TaskExample(t, payload))
    return out


ct = coltype_records(ft_metas, seed=3)
t0 = time.time()
spec = FinetuneSpec.for_task("col_type", max_epochs=3, lr=1e-3)
_, rep = finetune(spec, to_examples(ct[:n_tr]), to_examples(ct[n_tr:n_tr+n_va]),
                  to_examples(ct[n_tr+n_va:]), ckpt, seed=0)
print(f"col_type: {time.time()-t0:.0f}s F1 {rep['test']['weighted_f1']:.3f} "
      f"acc {rep['test']['accuracy']:.3f} val {rep['val_history']}", flush=True)

cp = colpop_records(ft_metas, n_seed=1)
t0 = time.time()
spec = FinetuneSpec.for_task("col_pop", max_epochs=3, lr=1e-3, n_seed=1)
task_ckpt, rep = finetune(spec, to_examples(cp[:n_tr]), to_examples(cp[n_tr:n_tr+n_va]),
                          to_examples(cp[n_tr+n_va:]), ckpt, seed=0)
print(f"col_pop: {time.time()-t0:.0f}s MRR {rep['test']['mrr']:.3f} MAP {rep['test']['map']:.3f}", flush=True)

# random-ranking baseline via shuffled scores
rng = np.random.default_rng(0)
n_labels = rep["labels"]
test_examples = to_examples(cp[n_tr+n_va:])
label_index = {s: i for i, s in enumerate(spec.label_space)}
rankings, golds = [], []
for ex in test_examples:
    gold = {label_index[g] for g in ex.payload["gold_headers"] if g in label_index}
    if gold:
        rankings.append(rank_labels(rng.random(n_labels)).tolist())
        golds.append(gold)
base = mrr(rankings, golds)
print(f"random MRR baseline: {base:.4f}; 3x = {3*base:.4f}; model/baseline = {rep['test']['mrr']/base:.1f}x", flush=True)
