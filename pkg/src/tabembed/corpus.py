"""Table corpus loading, validation, truncation, and the cell vocabulary.

A corpus file is UTF-8 JSON lines, one table per line:

    {"id": str, "header": [str] | null, "rows": [[str]]}

Malformed lines (bad JSON, ragged rows, empty grids) are skipped and
counted, never fatal; an unreadable file is fatal.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

__all__ = [
    "Table",
    "TruncationLimits",
    "CellVocab",
    "CorpusError",
    "LoadStats",
    "load_corpus",
    "read_tables",
    "write_corpus",
    "truncate_table",
    "build_cell_vocabulary",
]


class CorpusError(Exception):
    """Raised for unusable corpus files or empty corpora."""


@dataclass(frozen=True)
class TruncationLimits:
    max_rows: int = 30
    max_cols: int = 20
    max_cell_chars: int = 300


@dataclass
class Table:
    """A rectangular grid of cell strings with an optional header row.

    `rows` is the body: M rows of exactly N strings each. The header, when
    present, also has N entries and sits above the body.
    """

    id: str
    header: list[str] | None
    rows: list[list[str]]

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    @property
    def n_cols(self) -> int:
        return len(self.rows[0]) if self.rows else 0

    def validate(self) -> None:
        if not self.rows:
            raise CorpusError(f"table {self.id!r}: no rows")
        n = len(self.rows[0])
        if n < 1:
            raise CorpusError(f"table {self.id!r}: zero columns")
        for i, row in enumerate(self.rows):
            if len(row) != n:
                raise CorpusError(
                    f"table {self.id!r}: row {i} has {len(row)} cells, expected {n}"
                )
        if self.header is not None and len(self.header) != n:
            raise CorpusError(
                f"table {self.id!r}: header has {len(self.header)} cells, expected {n}"
            )

    def stacked(self) -> list[list[str]]:
        """Header (when present) stacked above the body, as one grid."""
        if self.header is not None:
            return [list(self.header)] + [list(r) for r in self.rows]
        return [list(r) for r in self.rows]

    def header_rows(self) -> int:
        return 0 if self.header is None else 1

    def to_json(self) -> dict:
        return {"id": self.id, "header": self.header, "rows": self.rows}


def truncate_table(t: Table, limits: TruncationLimits = TruncationLimits()) -> Table:
    """Keep the first max_rows rows / max_cols columns and clip cell text.

    Idempotent; always returns a new table. Cell truncation is by Python
    string slicing, so it never splits a code point.
    """
    cols = limits.max_cols
    chars = limits.max_cell_chars
    header = None
    if t.header is not None:
        header = [c[:chars] for c in t.header[:cols]]
    rows = [[c[:chars] for c in row[:cols]] for row in t.rows[: limits.max_rows]]
    return Table(id=t.id, header=header, rows=rows)


@dataclass
class LoadStats:
    yielded: int = 0
    skipped: int = 0
    reasons: dict = field(default_factory=dict)

    def note_skip(self, reason: str) -> None:
        self.skipped += 1
        self.reasons[reason] = self.reasons.get(reason, 0) + 1


def _parse_line(line: str, lineno: int) -> Table:
    obj = json.loads(line)
    if not isinstance(obj, dict):
        raise CorpusError(f"line {lineno}: not a JSON object")
    tid = obj.get("id")
    rows = obj.get("rows")
    header = obj.get("header")
    if not isinstance(tid, str):
        raise CorpusError(f"line {lineno}: missing string 'id'")
    if not isinstance(rows, list) or not all(isinstance(r, list) for r in rows):
        raise CorpusError(f"line {lineno}: 'rows' must be a list of lists")
    rows = [[str(c) for c in r] for r in rows]
    if header is not None:
        if not isinstance(header, list):
            raise CorpusError(f"line {lineno}: 'header' must be a list or null")
        header = [str(c) for c in header]
    t = Table(id=tid, header=header, rows=rows)
    t.validate()
    return t


def load_corpus(
    path: str | Path,
    limits: TruncationLimits = TruncationLimits(),
    stats: LoadStats | None = None,
) -> Iterator[Table]:
    """Stream validated, truncated tables from a JSONL file in file order.

    Malformed lines are skipped and recorded in `stats`. Two passes over the
    same file yield identical sequences.
    """
    path = Path(path)
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as e:
        raise CorpusError(f"cannot read corpus {path}: {e}") from e
    with fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                t = _parse_line(line, lineno)
            except (json.JSONDecodeError, CorpusError) as e:
                if stats is not None:
                    stats.note_skip(str(e))
                continue
            if stats is not None:
                stats.yielded += 1
            yield truncate_table(t, limits)


def read_tables(path: str | Path, limits: TruncationLimits = TruncationLimits()) -> list[Table]:
    return list(load_corpus(path, limits))


def write_corpus(tables: Iterable[Table], path: str | Path, extra: dict | None = None) -> None:
    """Write tables as corpus JSONL. `extra` maps table id -> additional fields."""
    with open(path, "w", encoding="utf-8") as fh:
        for t in tables:
            obj = t.to_json()
            if extra and t.id in extra:
                obj.update(extra[t.id])
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


class CellVocab:
    """Cell-string frequency table; sampling weight is proportional to count."""

    def __init__(self, entries: dict[str, int]):
        if not entries:
            raise CorpusError("empty cell vocabulary")
        self.entries = dict(entries)
        self.total = sum(entries.values())
        # Fixed iteration order so sampling is reproducible.
        self._strings = sorted(entries)
        counts = [entries[s] for s in self._strings]
        self._cumulative = []
        acc = 0
        for c in counts:
            acc += c
            self._cumulative.append(acc)

    def __len__(self) -> int:
        return len(self.entries)

    def probability(self, s: str) -> float:
        return self.entries.get(s, 0) / self.total

    def sample(self, rng) -> str:
        """Draw a cell string with probability proportional to its count."""
        import bisect

        r = rng.integers(0, self.total)
        i = bisect.bisect_right(self._cumulative, r)
        return self._strings[i]


def build_cell_vocabulary(corpus: Iterable[Table], max_entries: int = 1_000_000) -> CellVocab:
    """Count every cell occurrence (headers included) across the corpus.

    If distinct strings exceed `max_entries`, the most frequent are kept,
    ties broken lexicographically (smaller string wins).
    """
    counts: dict[str, int] = {}
    seen_any = False
    for t in corpus:
        seen_any = True
        for row in t.stacked():
            for cell in row:
                counts[cell] = counts.get(cell, 0) + 1
    if not seen_any:
        raise CorpusError("cannot build a vocabulary from an empty corpus")
    if len(counts) > max_entries:
        keep = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:max_entries]
        counts = dict(keep)
    return CellVocab(counts)
