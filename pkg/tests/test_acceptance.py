"""End-to-end acceptance suite.

Each test prints one PASS/FAIL line (visible under `pytest -s` or in the
captured output of failures). The pretraining-based tests share two
module-scoped models (one per corruption strategy) trained on a synthetic
typed-table corpus; together they take several minutes of CPU.
"""

import itertools
import math
import time

import numpy as np
import pytest

from tabembed.corpus import Table, TruncationLimits, build_cell_vocabulary
from tabembed.corruption import (
    CorruptionConfig,
    corrupt,
    corrupt_freq,
    corrupt_mix,
    corrupt_swap,
    table_rng,
)
from tabembed.embedder import CellEmbedder, EmbedderConfig
from tabembed.encoder import EncoderConfig, encode_tables, pool_layer
from tabembed.metrics import (
    average_precision,
    binary_prf,
    mrr,
    ndcg_at_k,
    rank_labels,
    reciprocal_rank,
    support_weighted_f1,
)
from tabembed.params import ModelParams
from tabembed.synth import colpop_records, coltype_records, generate_corpus
from tabembed.tasks import FinetuneSpec, TaskExample, detect_corruption, finetune
from tabembed.training import (
    Adam,
    batch_forward,
    clip_global_norm,
    corruption_probability,
    load_checkpoint,
    pretrain,
    pretrain_loss,
)

from _oracles import (
    ap_oracle,
    knn_oracle,
    ndcg_oracle,
    prf_oracle,
    rr_oracle,
    weighted_f1_oracle,
)

# Training budget for the pretraining-efficacy tests (tuned to finish well
# under the 30-minute ceiling on a laptop-class CPU).
CORPUS_TABLES = 5000
HELDOUT_TABLES = 500
PRETRAIN_EPOCHS = 14
PRETRAIN_LR = 6e-3
DESK_ENCODER = EncoderConfig(hidden_dim=64, layers=2, heads=2)
DESK_EMBEDDER = EmbedderConfig(hidden_dim=64)


def report(name: str, ok: bool, detail: str) -> None:
    print(f"ACCEPTANCE {name}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"{name}: {detail}"


# ---------------------------------------------------------------------------
# shared fixtures


@pytest.fixture(scope="module")
def synth_world():
    metas = generate_corpus(CORPUS_TABLES + HELDOUT_TABLES, seed=1)
    train = [m.table for m in metas[:CORPUS_TABLES]]
    held = [m.table for m in metas[CORPUS_TABLES:]]
    vocab = build_cell_vocabulary(train)
    return metas, train, held, vocab


@pytest.fixture(scope="module")
def pretrained(synth_world):
    _, train, _, vocab = synth_world
    models = {}
    for strategy in ("freq", "mix"):
        start = time.time()
        models[strategy] = pretrain(
            train,
            DESK_ENCODER,
            DESK_EMBEDDER,
            CorruptionConfig(strategy, 0.15, 0),
            epochs=PRETRAIN_EPOCHS,
            lr=PRETRAIN_LR,
            seed=0,
            vocab=vocab,
        )
        elapsed = time.time() - start
        print(f"[setup] {strategy} pretraining: {elapsed / 60:.1f} min")
        assert elapsed < 30 * 60, "pretraining exceeded the 30-minute budget"
    return models


def to_examples(records):
    out = []
    for obj in records:
        t = Table(id=obj["id"], header=obj["header"], rows=obj["rows"])
        payload = {k: v for k, v in obj.items() if k not in ("id", "header", "rows")}
        out.append(TaskExample(t, payload))
    return out


# ---------------------------------------------------------------------------
# 1. gradient correctness


def test_gradient_correctness_every_parameter():
    start = time.time()
    rng = np.random.default_rng(17)
    limits = TruncationLimits(3, 3, 300)
    enc_cfg = EncoderConfig(hidden_dim=8, layers=2, heads=2)
    emb_cfg = EmbedderConfig(hidden_dim=8, hash_buckets=64, seed=3)
    params = ModelParams(enc_cfg, emb_cfg, limits, seed=5, dtype=np.float64)
    embedder = CellEmbedder(emb_cfg, dtype=np.float64)
    cells = [[f"cell {rng.integers(1000)}" for _ in range(3)] for _ in range(3)]
    vocab = build_cell_vocabulary(
        [Table("v", None, [[f"w{k}" for k in range(8)] for _ in range(2)])]
    )
    rec = corrupt_freq(Table("g", None, cells), vocab, 0.4, np.random.default_rng(2))
    assert rec.corrupted_count() > 0

    def loss_fn():
        loss, _, _, _ = batch_forward([rec], params, embedder)
        return loss

    loss = loss_fn()
    params.zero_grad()
    loss.backward()

    eps = 1e-4
    worst = 0.0
    worst_name = ""
    checked = 0
    for name, tensor in params.items():
        flat = tensor.data.ravel()
        analytic = (tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)).ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = float(loss_fn().data)
            flat[i] = orig - eps
            down = float(loss_fn().data)
            flat[i] = orig
            numeric = (up - down) / (2 * eps)
            rel = abs(numeric - analytic[i]) / max(abs(numeric), abs(analytic[i]), 1e-6)
            checked += 1
            if rel > worst:
                worst, worst_name = rel, f"{name}[{i}]"
    elapsed = time.time() - start
    report(
        "gradient-correctness",
        worst < 1e-4 and elapsed < 60,
        f"{checked} entries, max rel err {worst:.2e} at {worst_name}, {elapsed:.0f}s",
    )


# ---------------------------------------------------------------------------
# 2. pooling and probability unit suites


def test_pooling_unit_suite():
    checks = [
        np.array_equal(pool_layer(np.array([1.0, 2.0]), np.array([3.0, 4.0])).data, [2.0, 3.0]),
        np.array_equal(pool_layer(np.array([1.0, 0.0]), np.array([0.0, 1.0])).data, [0.5, 0.5]),
    ]
    r = np.random.default_rng(0).normal(size=(3, 4))
    checks.append(np.array_equal(pool_layer(r, r).data, r))
    report("layer-pooling", all(checks), f"{len(checks)} exact checks")


def test_probability_unit_suite():
    p1 = float(corruption_probability(np.array([1.0, -1.0]), np.zeros(2), 0.0).data)
    p2 = float(corruption_probability(np.array([math.log(3.0)]), np.array([1.0]), 0.0).data)
    x = np.array([0.3, -0.2, 0.9])
    w = np.array([0.5, 1.5, -0.25])
    p3 = float(corruption_probability(x, w, 0.1).data)
    expected3 = 1.0 / (1.0 + math.exp(-(float(x @ w) + 0.1)))
    ok = (
        p1 == pytest.approx(0.5)
        and p2 == pytest.approx(0.75)
        and p3 == pytest.approx(expected3, abs=1e-12)
    )
    report("corruption-probability", ok, f"sigma checks {p1:.3f}/{p2:.3f}")


# ---------------------------------------------------------------------------
# 3 + 4. masking soundness and permutation equivariance


def _f64_model(seed=4):
    limits = TruncationLimits(6, 6, 300)
    enc_cfg = EncoderConfig(hidden_dim=16, layers=2, heads=2)
    emb_cfg = EmbedderConfig(hidden_dim=16, hash_buckets=256, seed=2)
    params = ModelParams(enc_cfg, emb_cfg, limits, seed=seed, dtype=np.float64)
    return params, CellEmbedder(emb_cfg, dtype=np.float64)


def test_masking_soundness():
    params, embedder = _f64_model()
    small = Table("small", ["h1", "h2"], [["a", "b"], ["c", "d"]])
    big = Table("big", None, [[f"{i}{j}" for j in range(5)] for i in range(5)])
    alone = encode_tables([small], params, embedder).cells.data
    padded = encode_tables([small, big], params, embedder).cells.data
    diff = float(np.abs(padded[0, :4, :3] - alone[0]).max())
    report("masking-soundness", diff < 1e-6, f"max abs diff {diff:.2e}")


def test_permutation_equivariance():
    params, embedder = _f64_model()
    params["pos_row"].data = np.zeros_like(params["pos_row"].data)
    params["pos_col"].data = np.zeros_like(params["pos_col"].data)
    rows = [[f"{i}{j}" for j in range(3)] for i in range(3)]
    col_swapped = [[r[1], r[0], r[2]] for r in rows]
    row_swapped = [rows[2], rows[1], rows[0]]
    base = encode_tables([Table("a", None, rows)], params, embedder).cells.data
    by_col = encode_tables([Table("b", None, col_swapped)], params, embedder).cells.data
    by_row = encode_tables([Table("c", None, row_swapped)], params, embedder).cells.data
    col_diff = float(np.abs(by_col[:, :, [0, 2, 1, 3], :] - base).max())
    row_diff = float(np.abs(by_row[:, [0, 3, 2, 1], :, :] - base).max())
    ok = col_diff < 1e-6 and row_diff < 1e-6
    report("permutation-equivariance", ok, f"col {col_diff:.2e}, row {row_diff:.2e}")


# ---------------------------------------------------------------------------
# 5. metric oracle equivalence


def test_metric_oracle_equivalence():
    rng = np.random.default_rng(123)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(2, 12))
        ranking = rng.permutation(n).tolist()
        gold = set(rng.choice(n, size=int(rng.integers(1, n)), replace=False).tolist())
        k = int(rng.integers(1, 25))
        worst = max(
            worst,
            abs(average_precision(ranking, gold) - ap_oracle(ranking, gold)),
            abs(reciprocal_rank(ranking, gold) - rr_oracle(ranking, gold)),
            abs(ndcg_at_k(ranking, gold, k) - ndcg_oracle(ranking, gold, k)),
        )
        classes = ["a", "b", "c"]
        preds = [classes[int(i)] for i in rng.integers(0, 3, size=n)]
        golds = [classes[int(i)] for i in rng.integers(0, 3, size=n)]
        worst = max(
            worst,
            abs(support_weighted_f1(preds, golds, classes) - weighted_f1_oracle(preds, golds, classes)),
        )
        flags = rng.random(n) < 0.5
        labels = rng.random(n) < 0.5
        mine = binary_prf(flags, labels)
        p, r, f = prf_oracle(flags.tolist(), labels.tolist())
        worst = max(worst, abs(mine.precision - p), abs(mine.recall - r), abs(mine.f1 - f))
    report("metric-oracles", worst < 1e-12, f"1000 instances, max abs diff {worst:.1e}")


# ---------------------------------------------------------------------------
# 6. corruption statistics


def test_corruption_statistics():
    vocab = build_cell_vocabulary(
        [Table("v", None, [[f"w{k}" for k in range(40)] for _ in range(4)])]
    )
    t = Table("t", [f"h{j}" for j in range(20)],
              [[f"c{i}-{j}" for j in range(20)] for i in range(30)])
    cells = 31 * 20

    corrupted = 0
    for trial in range(10_000):
        rec = corrupt_freq(t, vocab, 0.15, np.random.default_rng(trial))
        corrupted += rec.corrupted_count()
    rate = corrupted / (10_000 * cells)
    rate_ok = abs(rate - 0.15) < 0.01

    sound = True
    tag_counts = {"freq": 0, "swap": 0}
    for trial in range(10_000):
        rec = corrupt_mix(t, vocab, 0.15, np.random.default_rng(trial))
        if trial < 200:  # full label-soundness audit on a sample
            original = t.stacked()
            now = rec.table.stacked()
            for i in range(31):
                for j in range(20):
                    if rec.labels[i, j] != (original[i][j] != now[i][j]):
                        sound = False
        for tag in rec.tags.values():
            tag_counts["freq" if tag == "freq_sample" else "swap"] += 1
    split = tag_counts["freq"] / max(tag_counts["swap"], 1)
    split_ok = abs(split - 1.0) < 0.05

    report(
        "corruption-statistics",
        rate_ok and sound and split_ok,
        f"freq rate {rate:.4f}, mix freq/swap ratio {split:.3f}, labels sound {sound}",
    )


# ---------------------------------------------------------------------------
# 7. training sanity: overfit one fixed batch


def test_training_sanity_single_batch():
    start = time.time()
    rng = np.random.default_rng(3)
    pool = [f"word{k}" for k in range(60)]
    tables = [
        Table(f"t{i}", None,
              [[pool[int(rng.integers(60))] for _ in range(5)] for _ in range(6)])
        for i in range(12)
    ]
    vocab = build_cell_vocabulary(tables)
    params = ModelParams(DESK_ENCODER, DESK_EMBEDDER, TruncationLimits(), seed=0)
    embedder = CellEmbedder(DESK_EMBEDDER)
    records = [corrupt_freq(t, vocab, 0.3, table_rng(5, t.id)) for t in tables]
    opt = Adam(params.tensors(), lr=1e-3)
    first = last = None
    for step in range(200):
        loss, _, _, _ = batch_forward(records, params, embedder)
        if first is None:
            first = float(loss.data)
        last = float(loss.data)
        params.zero_grad()
        loss.backward()
        clip_global_norm(params.tensors(), 1.0)
        opt.step()
    elapsed = time.time() - start
    ok = abs(first - math.log(2)) < 0.1 and last < 0.5 * math.log(2) and elapsed < 300
    report(
        "training-sanity",
        ok,
        f"loss {first:.4f} -> {last:.4f} in 200 steps, {elapsed:.0f}s",
    )


# ---------------------------------------------------------------------------
# 8 + 9. desk-scale pretraining efficacy and the MIX swap-detection margin


def test_freq_pretraining_detects_heldout_corruption(synth_world, pretrained):
    _, _, held, vocab = synth_world
    records = [corrupt_freq(t, vocab, 0.15, table_rng(99, t.id)) for t in held]
    overall = detect_corruption(records, pretrained["freq"])["overall"]
    report(
        "freq-pretraining-efficacy",
        overall["f1"] >= 0.90,
        f"held-out FREQ-cell detection F1 {overall['f1']:.3f} "
        f"(P {overall['precision']:.3f} R {overall['recall']:.3f})",
    )


def test_mix_beats_freq_on_intra_column_swaps(synth_world, pretrained):
    _, _, held, _ = synth_world
    records = []
    for t in held:
        cells = (t.n_rows + 1) * t.n_cols
        pairs = max(1, int(0.15 * cells / 2))
        records.append(corrupt_swap(t, "same_col", pairs, table_rng(7, t.id)))
    f1 = {
        strategy: detect_corruption(records, ckpt)["overall"]["f1"]
        for strategy, ckpt in pretrained.items()
    }
    margin = f1["mix"] - f1["freq"]
    report(
        "mix-swap-advantage",
        margin >= 0.10,
        f"intra-column-swap F1: mix {f1['mix']:.3f} vs freq {f1['freq']:.3f} "
        f"(margin {margin:+.3f})",
    )


# ---------------------------------------------------------------------------
# 10. desk fine-tuning


def test_finetune_column_type(synth_world, pretrained):
    metas, _, _, _ = synth_world
    subset = metas[:1200]
    records = coltype_records(subset, seed=3)
    n_tr, n_va = 900, 144
    spec = FinetuneSpec.for_task("col_type", max_epochs=3, lr=1e-3)
    _, rep = finetune(
        spec,
        to_examples(records[:n_tr]),
        to_examples(records[n_tr : n_tr + n_va]),
        to_examples(records[n_tr + n_va :]),
        pretrained["freq"],
        seed=0,
    )
    f1 = rep["test"]["weighted_f1"]
    report("finetune-column-type", f1 >= 0.90, f"support-weighted F1 {f1:.3f}")


def test_finetune_column_population_beats_random(synth_world, pretrained):
    metas, _, _, _ = synth_world
    subset = metas[:1200]
    records = colpop_records(subset, n_seed=1)
    n_tr, n_va = 900, 144
    spec = FinetuneSpec.for_task("col_pop", max_epochs=3, lr=1e-3, n_seed=1)
    _, rep = finetune(
        spec,
        to_examples(records[:n_tr]),
        to_examples(records[n_tr : n_tr + n_va]),
        to_examples(records[n_tr + n_va :]),
        pretrained["freq"],
        seed=0,
    )
    model_mrr = rep["test"]["mrr"]
    # random baseline: shuffled scores through the same metric pipeline
    rng = np.random.default_rng(0)
    label_index = {s: i for i, s in enumerate(spec.label_space)}
    rankings, golds = [], []
    for ex in to_examples(records[n_tr + n_va :]):
        gold = {label_index[g] for g in ex.payload["gold_headers"] if g in label_index}
        if gold:
            rankings.append(rank_labels(rng.random(len(spec.label_space))).tolist())
            golds.append(gold)
    baseline = mrr(rankings, golds)
    report(
        "finetune-column-population",
        model_mrr >= 3 * baseline,
        f"MRR {model_mrr:.3f} vs random {baseline:.3f} ({model_mrr / baseline:.1f}x)",
    )


# ---------------------------------------------------------------------------
# 11. reproducibility


def test_pretrain_reproducibility_and_roundtrip(tmp_path):
    from tabembed.cli import run

    metas = generate_corpus(10, seed=5, id_prefix="rep")
    corpus = tmp_path / "corpus.jsonl"
    from tabembed.corpus import write_corpus

    write_corpus([m.table for m in metas], corpus)
    outputs = []
    for name in ("a", "b"):
        out = tmp_path / f"{name}.ckpt"
        code = run([
            "pretrain", "--corpus", str(corpus), "--out", str(out),
            "--epochs", "2", "--lr", "1e-3", "--seed", "13",
            "--hidden-dim", "16", "--layers", "1", "--heads", "2",
            "--hash-buckets", "256", "--threads", "1",
        ])
        assert code == 0
        outputs.append(out.read_bytes())
    identical = outputs[0] == outputs[1]

    loaded = load_checkpoint(tmp_path / "a.ckpt")
    second = tmp_path / "roundtrip.ckpt"
    from tabembed.training import save_checkpoint

    save_checkpoint(loaded, second)
    roundtrip = (tmp_path / "a.ckpt").read_bytes() == second.read_bytes()
    report(
        "reproducibility",
        identical and roundtrip,
        f"byte-identical runs {identical}, round-trip bit-exact {roundtrip}",
    )


# ---------------------------------------------------------------------------
# 12. retrieval and clustering guarantees


def test_knn_exact_and_kmeans_monotone():
    from tabembed.neighbors import EmbeddingIndex, kmeans, knn

    rng = np.random.default_rng(9)
    vectors = rng.normal(size=(800, 16)).astype(np.float32)
    keys = [(f"v{i}", "table", 0, 0) for i in range(len(vectors))]
    exact = True
    for metric in ("cosine", "euclidean"):
        index = EmbeddingIndex(vectors=vectors, keys=keys, metric=metric)
        for q in range(20):
            query = rng.normal(size=16)
            mine = [int(h[0][0][1:]) for h in knn(index, query, 8)]
            oracle = [i for i, _ in knn_oracle(vectors, query, 8, metric)]
            exact = exact and mine == oracle
    monotone = True
    for seed in range(3):
        pts = np.random.default_rng(seed).normal(size=(300, 8))
        _, _, inertia = kmeans(pts, 16, iters=40, seed=seed)
        monotone = monotone and all(b <= a + 1e-9 for a, b in zip(inertia, inertia[1:]))
    report(
        "knn-kmeans",
        exact and monotone,
        f"knn exact {exact}, kmeans inertia monotone {monotone}",
    )
