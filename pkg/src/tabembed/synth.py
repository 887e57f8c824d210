"""Synthetic typed-table corpus for desk-scale experiments.

Tables are drawn from a handful of fixed schemas whose columns come from
five generators: dates, integers, prices, person names, country names.
Every column is internally coherent (one surname per name column, one
month window per date column, one region per country column, one numeric
band per price/quantity column), so a frequency-sampled replacement is
almost always detectably out of place. Rank and date columns are sorted
and row-aligned, which makes intra-column swaps detectable in principle.

Also generates the downstream task files (column population, row
population, column type) in the corpus-plus-task-fields JSONL schema.
"""

from __future__ import annotations

import argparse
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import Table

__all__ = [
    "TableMeta",
    "generate_corpus",
    "colpop_records",
    "rowpop_records",
    "coltype_records",
    "write_records",
]

FIRST_NAMES = [
    "anna", "boris", "carla", "dmitri", "elena", "farid", "greta", "hugo",
    "ines", "jonas", "karim", "laila", "marco", "nadia", "oscar", "priya",
    "quentin", "rosa", "stefan", "tara", "umar", "vera", "walid", "xenia",
    "yusuf", "zoe", "alvaro", "bianca", "cedric", "dalia", "emil", "freya",
    "gustav", "helga", "igor", "jasmin", "kenji", "lucia", "milan", "noor",
]

LAST_NAMES = [
    "adler", "barros", "cervantes", "dubois", "eriksen", "fontaine", "garcia",
    "hansen", "ibrahim", "jansen", "kovacs", "lindgren", "moreau", "novak",
    "okafor", "petrov", "quiroga", "rossi", "schmidt", "tanaka", "ueda",
    "vasquez", "weber", "xu", "yamada", "zhang", "almeida", "bergman",
    "castillo", "dimitrov", "endo", "ferrari", "gruber", "haddad", "ivanov",
    "johansson", "kimura", "laurent", "meyer", "nakamura",
]

COUNTRY_GROUPS = [
    ["france", "germany", "spain", "italy", "portugal", "austria", "belgium",
     "netherlands", "sweden", "norway"],
    ["japan", "china", "india", "vietnam", "thailand", "mongolia", "nepal",
     "indonesia", "malaysia", "cambodia"],
    ["brazil", "argentina", "chile", "peru", "colombia", "uruguay", "bolivia",
     "paraguay", "ecuador", "venezuela"],
    ["nigeria", "kenya", "ghana", "morocco", "egypt", "senegal", "ethiopia",
     "tanzania", "algeria", "tunisia"],
    ["canada", "mexico", "cuba", "jamaica", "panama", "guatemala", "honduras",
     "nicaragua", "belize", "haiti"],
    ["australia", "fiji", "samoa", "tonga", "vanuatu", "palau", "kiribati",
     "tuvalu", "nauru", "micronesia"],
]

# (type, header variants) per slot; first slot is the row-population entity
# column for schemas that start with names or countries.
SCHEMAS = {
    "roster": [("name", ["name", "player", "athlete"]),
               ("rank", ["rank", "standing", "place"]),
               ("country", ["country", "nation"])],
    "sales": [("date", ["date", "day"]),
              ("price", ["price", "cost", "total"]),
              ("qty", ["qty", "units", "sold"])],
    "events": [("date", ["when", "scheduled"]),
               ("name", ["host", "organizer"]),
               ("country", ["location", "venue"])],
    "people": [("name", ["person", "employee"]),
               ("country", ["birthplace", "homeland"]),
               ("qty", ["score", "points"])],
    "markets": [("country", ["market", "region"]),
                ("price", ["open", "close"]),
                ("rank", ["tier", "grade"])],
    "log": [("date", ["logged", "recorded"]),
            ("qty", ["count", "hits"]),
            ("price", ["amount", "fee"])],
    "travel": [("country", ["origin", "destination"]),
               ("date", ["departure", "arrival"]),
               ("name", ["traveler", "passenger"])],
    "ledger": [("rank", ["entry", "line"]),
               ("price", ["debit", "credit"]),
               ("qty", ["balance", "volume"]),
               ("date", ["posted", "cleared"])],
}

SORTED_TYPES = ("rank", "date")
COLUMN_TYPES = ("date", "integer", "price", "name", "country")


@dataclass
class TableMeta:
    table: Table
    schema: str
    col_types: list[str]  # one of COLUMN_TYPES per column


def _type_of(slot_type: str) -> str:
    return {"rank": "integer", "qty": "integer"}.get(slot_type, slot_type)


def _gen_column(slot_type: str, n_rows: int, rng) -> list[str]:
    if slot_type == "rank":
        return [str(r + 1) for r in range(n_rows)]
    if slot_type == "date":
        year = 2015 + int(rng.integers(0, 10))
        month = 1 + int(rng.integers(0, 12))
        return [f"{year:04d}-{month:02d}-{r + 1:02d}" for r in range(n_rows)]
    if slot_type == "qty":
        band = int(rng.integers(0, 6))
        lo = 100 + band * 150
        vals = rng.choice(np.arange(lo, lo + 90), size=n_rows, replace=False)
        return [str(int(v)) for v in vals]
    if slot_type == "price":
        band = int(rng.integers(0, 6))
        lo = 20 + band * 40
        dollars = rng.choice(np.arange(lo, lo + 30), size=n_rows, replace=False)
        return [f"${int(d)}.{int(rng.integers(0, 100)):02d}" for d in dollars]
    if slot_type == "name":
        surname = LAST_NAMES[int(rng.integers(0, len(LAST_NAMES)))]
        firsts = rng.choice(len(FIRST_NAMES), size=n_rows, replace=False)
        return [f"{FIRST_NAMES[int(i)]} {surname}" for i in firsts]
    if slot_type == "country":
        group = COUNTRY_GROUPS[int(rng.integers(0, len(COUNTRY_GROUPS)))]
        picks = rng.choice(len(group), size=n_rows, replace=False)
        return [group[int(i)] for i in picks]
    raise ValueError(f"unknown slot type {slot_type!r}")


def generate_table(table_id: str, rng, min_rows: int = 5, max_rows: int = 9) -> TableMeta:
    schema_names = sorted(SCHEMAS)
    schema = schema_names[int(rng.integers(0, len(schema_names)))]
    slots = SCHEMAS[schema]
    n_rows = int(rng.integers(min_rows, max_rows + 1))
    header, columns, col_types = [], [], []
    for slot_type, variants in slots:
        header.append(variants[int(rng.integers(0, len(variants)))])
        columns.append(_gen_column(slot_type, n_rows, rng))
        col_types.append(_type_of(slot_type))
    rows = [[col[r] for col in columns] for r in range(n_rows)]
    return TableMeta(
        table=Table(id=table_id, header=header, rows=rows),
        schema=schema,
        col_types=col_types,
    )


def generate_corpus(n_tables: int, seed: int = 0, id_prefix: str = "synth") -> list[TableMeta]:
    rng = np.random.default_rng(seed)
    return [generate_table(f"{id_prefix}-{i:06d}", rng) for i in range(n_tables)]


# -- task datasets -----------------------------------------------------------

def colpop_records(metas: list[TableMeta], n_seed: int = 1) -> list[dict]:
    records = []
    for m in metas:
        t = m.table
        if t.n_cols <= n_seed:
            continue
        obj = t.to_json()
        obj["seed_cols"] = n_seed
        obj["gold_headers"] = list(t.header[n_seed:])
        records.append(obj)
    return records


def rowpop_records(metas: list[TableMeta], n_seed: int = 2) -> list[dict]:
    records = []
    for m in metas:
        t = m.table
        if m.col_types[0] not in ("name", "country") or t.n_rows <= n_seed:
            continue
        obj = t.to_json()
        obj["seed_rows"] = n_seed
        obj["gold_entities"] = [row[0] for row in t.rows[n_seed:]]
        records.append(obj)
    return records


def coltype_records(metas: list[TableMeta], seed: int = 0) -> list[dict]:
    rng = np.random.default_rng(seed)
    records = []
    for m in metas:
        j = int(rng.integers(0, m.table.n_cols))
        obj = m.table.to_json()
        obj["col_index"] = j
        obj["type"] = m.col_types[j]
        records.append(obj)
    return records


def write_records(records: list[dict], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for obj in records:
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description="generate a synthetic typed-table corpus")
    ap.add_argument("--out", required=True, help="output directory")
    ap.add_argument("--n", type=int, default=5000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--n-seed-cols", type=int, default=1)
    ap.add_argument("--n-seed-rows", type=int, default=2)
    args = ap.parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    n_train = int(args.n * 0.8)
    n_val = int(args.n * 0.1)
    metas = generate_corpus(args.n, seed=args.seed)
    splits = {
        "train": metas[:n_train],
        "val": metas[n_train : n_train + n_val],
        "test": metas[n_train + n_val :],
    }
    for split, part in splits.items():
        write_records([m.table.to_json() for m in part], out / f"{split}.jsonl")
        write_records(colpop_records(part, args.n_seed_cols), out / f"colpop_{split}.jsonl")
        write_records(rowpop_records(part, args.n_seed_rows), out / f"rowpop_{split}.jsonl")
        coltype_seed = args.seed + {"train": 1, "val": 2, "test": 3}[split]
        write_records(coltype_records(part, coltype_seed), out / f"coltype_{split}.jsonl")
    print(f"wrote corpus and task files for {args.n} tables under {out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
