"""One executable for the whole pipeline.

Subcommands: pretrain, finetune-colpop, finetune-rowpop, finetune-coltype,
detect, embed, knn, cluster, eval. Logs go to stderr, results to stdout or
--out. Exit codes: 0 success, 1 usage error, 2 data/model error.

Every subcommand accepts --config FILE with plain `key=value` lines (keys
are the long flag names without dashes, e.g. `max-cells=4800`); explicit
command-line flags win over the file, the file wins over built-in defaults.
Unknown keys are rejected. The fully-resolved configuration is echoed to
stderr so runs are reproducible from their logs alone.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import CorpusError, LoadStats, Table, TruncationLimits, load_corpus, write_corpus
from .corruption import CorruptionConfig, CorruptionRecord, corrupt, table_rng
from .embedder import EmbedderConfig
from .encoder import EncodeError, EncoderConfig
from .metrics import ranking_report, support_weighted_f1
from .neighbors import (
    IndexError_,
    build_index,
    key_string,
    kmeans,
    knn,
    load_index,
    save_index,
)
from .tasks import FinetuneSpec, finetune, detect_corruption, load_task_records
from .tensorio import FormatError
from .training import TrainingError, load_checkpoint, pretrain, save_checkpoint, stderr_log
from .corpus import build_cell_vocabulary

__all__ = ["run", "main"]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


@dataclass(frozen=True)
class Opt:
    name: str  # long flag without leading dashes
    type: type = str
    default: object = None
    help: str = ""
    required: bool = False
    choices: tuple = ()


def _opt(name, type=str, default=None, help="", required=False, choices=()):
    return Opt(name=name, type=type, default=default, help=help,
               required=required, choices=choices)


_MODEL_OPTS = [
    _opt("hidden-dim", int, 64, "hidden dimensionality H"),
    _opt("layers", int, 2, "transformer layers"),
    _opt("heads", int, 2, "attention heads"),
    _opt("ffn-dim", int, 0, "feed-forward width (0 = 4H)"),
    _opt("dropout", float, 0.0, "dropout probability"),
    _opt("max-rows", int, 30, "row truncation limit"),
    _opt("max-cols", int, 20, "column truncation limit"),
    _opt("max-cell-chars", int, 300, "cell text truncation limit"),
    _opt("hash-buckets", int, 1 << 16, "embedder hash buckets"),
    _opt("embed-seed", int, 1234, "embedder bucket seed"),
]

_COMMON = [_opt("threads", int, 1, "worker cap; 1 is the deterministic mode")]

SUBCOMMANDS: dict[str, list[Opt]] = {
    "pretrain": _MODEL_OPTS + _COMMON + [
        _opt("corpus", str, required=True, help="training corpus JSONL"),
        _opt("epochs", int, 7),
        _opt("lr", float, 1e-5),
        _opt("seed", int, 0),
        _opt("strategy", str, "freq", choices=("freq", "mix")),
        _opt("rate", float, 0.15, "corruption rate"),
        _opt("max-cells", int, 4800, "batch cell budget"),
        _opt("out", str, required=True, help="checkpoint path"),
    ],
    "detect": _COMMON + [
        _opt("corpus", str, required=True),
        _opt("ckpt", str, required=True),
        _opt("threshold", float, 0.5),
        _opt("corrupt", str, "none", choices=("none", "freq", "mix"),
             help="corrupt the corpus first and score against the gold labels"),
        _opt("rate", float, 0.15),
        _opt("seed", int, 0),
        _opt("emit-corrupted", str, help="also write the corrupted corpus with labels"),
        _opt("out", str),
    ],
    "embed": _COMMON + [
        _opt("corpus", str, required=True),
        _opt("ckpt", str, required=True),
        _opt("kind", str, "table", choices=("cell", "row", "column", "table")),
        _opt("metric", str, "cosine", choices=("cosine", "euclidean")),
        _opt("out", str, required=True, help="index file path"),
    ],
    "knn": _COMMON + [
        _opt("index", str, required=True),
        _opt("ckpt", str, required=True),
        _opt("query-table", str, required=True, help="JSONL file; the first table is the query"),
        _opt("query-kind", str, "table",
             help="table | row:I | column:J | cell:I:J (grid coordinates)"),
        _opt("k", int, 2),
        _opt("out", str),
    ],
    "cluster": _COMMON + [
        _opt("index", str, required=True),
        _opt("k", int, 1024),
        _opt("iters", int, 50),
        _opt("seed", int, 0),
        _opt("out", str),
    ],
    "eval": [
        _opt("pred", str, required=True, help="JSONL: {id, ranking} or {id, class}"),
        _opt("gold", str, required=True, help="JSONL: {id, gold} or {id, class}"),
        _opt("out", str),
    ],
}

for task, flag in (("colpop", "col_pop"), ("rowpop", "row_pop"), ("coltype", "col_type")):
    SUBCOMMANDS[f"finetune-{task}"] = _COMMON + [
        _opt("train", str, required=True),
        _opt("val", str, required=True),
        _opt("test", str, required=True),
        _opt("ckpt", str, required=True, help="pretrained checkpoint"),
        _opt("n-seed", int, 1 if task == "colpop" else 2),
        _opt("neg-samples", int, 16),
        _opt("batch-size", int),
        _opt("lr", float),
        _opt("epochs", int),
        _opt("seed", int, 0),
        _opt("ckpt-out", str, help="where to write the fine-tuned checkpoint"),
        _opt("out", str),
    ]


def _build_parser() -> _Parser:
    parser = _Parser(prog="tabembed", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="subcommand")
    for name, opts in SUBCOMMANDS.items():
        p = sub.add_parser(name, add_help=True)
        p.add_argument("--config", default=None, help="key=value config file")
        for o in opts:
            kwargs = {"default": None, "help": o.help, "dest": o.name}
            if o.choices:
                kwargs["choices"] = list(o.choices)
            if o.type is not str:
                kwargs["type"] = o.type
            p.add_argument(f"--{o.name}", **kwargs)
    return parser


def _resolve(sub: str, args: argparse.Namespace) -> dict:
    opts = {o.name: o for o in SUBCOMMANDS[sub]}
    file_values: dict[str, str] = {}
    if args.config:
        try:
            lines = Path(args.config).read_text(encoding="utf-8").splitlines()
        except OSError as e:
            raise CorpusError(f"cannot read config {args.config}: {e}") from e
        for lineno, line in enumerate(lines, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise UsageError(f"{args.config}:{lineno}: expected key=value")
            key, value = line.split("=", 1)
            key = key.strip()
            if key not in opts:
                raise UsageError(f"{args.config}:{lineno}: unknown key {key!r}")
            file_values[key] = value.strip()
    resolved = {}
    for name, o in opts.items():
        value = getattr(args, name)
        if value is None and name in file_values:
            raw = file_values[name]
            try:
                value = o.type(raw)
            except ValueError as e:
                raise UsageError(f"config key {name}: bad value {raw!r}: {e}") from e
            if o.choices and value not in o.choices:
                raise UsageError(f"config key {name}: {value!r} not in {o.choices}")
        if value is None:
            value = o.default
        if value is None and o.required:
            raise UsageError(f"missing required --{name}")
        resolved[name] = value
    return resolved


def _emit(payload: dict, out: str | None) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True)
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
        stderr_log(f"wrote {out}")
    else:
        print(text)


def _limits(cfg: dict) -> TruncationLimits:
    return TruncationLimits(cfg["max-rows"], cfg["max-cols"], cfg["max-cell-chars"])


def _read_corpus(path: str, limits: TruncationLimits = TruncationLimits()) -> list[Table]:
    stats = LoadStats()
    tables = list(load_corpus(path, limits, stats))
    if stats.skipped:
        stderr_log(f"skipped {stats.skipped} malformed lines in {path}")
    return tables


# -- subcommand handlers -----------------------------------------------------

def _cmd_pretrain(cfg: dict) -> int:
    limits = _limits(cfg)
    tables = _read_corpus(cfg["corpus"], limits)
    if not tables:
        raise CorpusError(f"no usable tables in {cfg['corpus']}")
    encoder_cfg = EncoderConfig(cfg["hidden-dim"], cfg["layers"], cfg["heads"],
                                cfg["ffn-dim"], cfg["dropout"])
    embedder_cfg = EmbedderConfig(hidden_dim=cfg["hidden-dim"],
                                  hash_buckets=cfg["hash-buckets"], seed=cfg["embed-seed"])
    corruption_cfg = CorruptionConfig(cfg["strategy"], cfg["rate"], cfg["seed"])
    pretrain(
        tables,
        encoder_cfg,
        embedder_cfg,
        corruption_cfg,
        limits=limits,
        epochs=cfg["epochs"],
        lr=cfg["lr"],
        seed=cfg["seed"],
        max_cells=cfg["max-cells"],
        out=cfg["out"],
        log=stderr_log,
    )
    stderr_log(f"wrote checkpoint {cfg['out']}")
    return 0


def _cmd_finetune(task: str, cfg: dict) -> int:
    ckpt = load_checkpoint(cfg["ckpt"])
    limits = ckpt.params.limits
    train = load_task_records(cfg["train"], limits)
    val = load_task_records(cfg["val"], limits)
    test = load_task_records(cfg["test"], limits)
    overrides = {"n_seed": cfg["n-seed"], "neg_samples": cfg["neg-samples"]}
    if cfg["batch-size"] is not None:
        overrides["batch_size"] = cfg["batch-size"]
    if cfg["lr"] is not None:
        overrides["lr"] = cfg["lr"]
    if cfg["epochs"] is not None:
        overrides["max_epochs"] = cfg["epochs"]
    spec = FinetuneSpec.for_task(task, **overrides)
    task_ckpt, report = finetune(spec, train, val, test, ckpt, seed=cfg["seed"], log=stderr_log)
    if cfg["ckpt-out"]:
        save_checkpoint(task_ckpt, cfg["ckpt-out"])
        stderr_log(f"wrote fine-tuned checkpoint {cfg['ckpt-out']}")
    _emit(report, cfg["out"])
    return 0


def _read_labeled_corpus(path: str, limits: TruncationLimits) -> list[CorruptionRecord] | None:
    """Load a corpus whose lines carry a `labels` field ([[i, j, tag], ...])."""
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            if "labels" not in obj:
                return None
            t = Table(id=str(obj["id"]),
                      header=[str(c) for c in obj["header"]] if obj.get("header") is not None else None,
                      rows=[[str(c) for c in r] for r in obj["rows"]])
            t.validate()
            stacked_rows = t.n_rows + t.header_rows()
            labels = np.zeros((stacked_rows, t.n_cols), dtype=bool)
            tags = {}
            for i, j, tag in obj["labels"]:
                labels[int(i), int(j)] = True
                tags[(int(i), int(j))] = str(tag)
            records.append(CorruptionRecord(table=t, labels=labels, tags=tags))
    return records


def _cmd_detect(cfg: dict) -> int:
    ckpt = load_checkpoint(cfg["ckpt"])
    limits = ckpt.params.limits
    records = _read_labeled_corpus(cfg["corpus"], limits)
    if records is None:
        tables = _read_corpus(cfg["corpus"], limits)
        if cfg["corrupt"] != "none":
            vocab = build_cell_vocabulary(tables)
            ccfg = CorruptionConfig(cfg["corrupt"], cfg["rate"], cfg["seed"])
            records = [corrupt(t, vocab, ccfg, table_rng(cfg["seed"], t.id)) for t in tables]
            inputs = records
        else:
            inputs = tables
    else:
        inputs = records
    if cfg["emit-corrupted"] and records:
        extra = {
            r.table.id: {"labels": [[i, j, tag] for (i, j), tag in sorted(r.tags.items())]}
            for r in records
        }
        write_corpus([r.table for r in records], cfg["emit-corrupted"], extra)
        stderr_log(f"wrote corrupted corpus {cfg['emit-corrupted']}")
    report = detect_corruption(inputs, ckpt, threshold=cfg["threshold"])
    _emit(report, cfg["out"])
    return 0


def _cmd_embed(cfg: dict) -> int:
    ckpt = load_checkpoint(cfg["ckpt"])
    tables = _read_corpus(cfg["corpus"], ckpt.params.limits)
    index = build_index(tables, ckpt, kind=cfg["kind"], metric=cfg["metric"])
    save_index(index, cfg["out"])
    stderr_log(f"indexed {len(index)} {cfg['kind']} embeddings "
               f"({index.dropped_zero} zero vectors dropped)")
    return 0


def _parse_query_kind(spec: str) -> tuple[str, int | None, int | None]:
    parts = spec.split(":")
    kind = parts[0]
    if kind == "table" and len(parts) == 1:
        return "table", None, None
    if kind == "row" and len(parts) == 2:
        return "row", int(parts[1]), None
    if kind == "column" and len(parts) == 2:
        return "column", None, int(parts[1])
    if kind == "cell" and len(parts) == 3:
        return "cell", int(parts[1]), int(parts[2])
    raise UsageError(f"bad --query-kind {spec!r}; use table | row:I | column:J | cell:I:J")


def _cmd_knn(cfg: dict) -> int:
    from .encoder import encode_tables, extract_embedding

    index = load_index(cfg["index"])
    ckpt = load_checkpoint(cfg["ckpt"])
    tables = _read_corpus(cfg["query-table"], ckpt.params.limits)
    if not tables:
        raise CorpusError(f"no usable table in {cfg['query-table']}")
    kind, i, j = _parse_query_kind(cfg["query-kind"])
    enc = encode_tables(tables[:1], ckpt.params, ckpt.embedder())
    query = extract_embedding(enc, kind, i=i, j=j)
    hits = knn(index, query, cfg["k"])
    _emit(
        {
            "query": {"table": tables[0].id, "kind": cfg["query-kind"]},
            "metric": index.metric,
            "neighbors": [{"key": key_string(k), "distance": d} for k, d in hits],
        },
        cfg["out"],
    )
    return 0


def _cmd_cluster(cfg: dict) -> int:
    index = load_index(cfg["index"])
    assignments, _, inertia = kmeans(index.vectors, cfg["k"], cfg["iters"], cfg["seed"])
    stderr_log(f"kmeans: {len(inertia)} iterations, final inertia {inertia[-1]:.4f}")
    _emit(
        {key_string(k): int(c) for k, c in zip(index.keys, assignments)},
        cfg["out"],
    )
    return 0


def _load_jsonl(path: str) -> list[dict]:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise CorpusError(f"cannot read {path}: {e}") from e
    return [json.loads(s) for s in lines if s.strip()]


def _cmd_eval(cfg: dict) -> int:
    preds = _load_jsonl(cfg["pred"])
    golds = {obj["id"]: obj for obj in _load_jsonl(cfg["gold"])}
    if not preds:
        raise CorpusError(f"no predictions in {cfg['pred']}")
    if "ranking" in preds[0]:
        rankings, gold_sets = [], []
        for obj in preds:
            gold = golds.get(obj["id"], {})
            rankings.append(obj["ranking"])
            gold_sets.append(set(gold.get("gold", [])))
        report = ranking_report(rankings, gold_sets).to_json()
    elif "class" in preds[0]:
        pairs = [(obj["class"], golds[obj["id"]]["class"]) for obj in preds if obj["id"] in golds]
        if not pairs:
            raise CorpusError("no prediction ids found in the gold file")
        p, g = zip(*pairs)
        classes = sorted(set(g))
        report = {
            "weighted_f1": support_weighted_f1(list(p), list(g), classes),
            "accuracy": float(np.mean([a == b for a, b in pairs])),
            "queries": len(pairs),
        }
    else:
        raise CorpusError("predictions must carry a 'ranking' or 'class' field")
    _emit(report, cfg["out"])
    return 0


_HANDLERS = {
    "pretrain": _cmd_pretrain,
    "detect": _cmd_detect,
    "embed": _cmd_embed,
    "knn": _cmd_knn,
    "cluster": _cmd_cluster,
    "eval": _cmd_eval,
    "finetune-colpop": lambda cfg: _cmd_finetune("col_pop", cfg),
    "finetune-rowpop": lambda cfg: _cmd_finetune("row_pop", cfg),
    "finetune-coltype": lambda cfg: _cmd_finetune("col_type", cfg),
}


def run(argv: list[str]) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.subcommand:
            raise UsageError("a subcommand is required")
        cfg = _resolve(args.subcommand, args)
        stderr_log(f"config[{args.subcommand}]: "
                   + json.dumps(cfg, sort_keys=True, default=str))
        return _HANDLERS[args.subcommand](cfg)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except SystemExit as e:  # argparse --help
        return int(e.code or 0)
    except (CorpusError, TrainingError, EncodeError, IndexError_, FormatError,
            FileNotFoundError, json.JSONDecodeError, KeyError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run(sys.argv[1:]))
