"""Corpus primitives: tables, queries, relevance judgments, and tokenization.

Tables are flattened to a single text with ``;`` between title / header /
rows and ``|`` between cells, so that character offsets into the flattened
text are unambiguous. Tokenization is word-level (punctuation marks are
their own tokens) which keeps entity surfaces contiguous in token space.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Iterator

PAD, UNK, CLS, SEP = "[PAD]", "[UNK]", "[CLS]", "[SEP]"
PAD_ID, UNK_ID, CLS_ID, SEP_ID = 0, 1, 2, 3
RESERVED_TOKENS = (PAD, UNK, CLS, SEP)

_WORD_RE = re.compile(r"\w+|[^\w\s]")


class CorpusError(ValueError):
    """Raised for malformed corpus files or invalid records."""


@dataclass(frozen=True)
class Table:
    """A structured table: title, header, and row-major cells."""

    id: str
    title: str
    header: tuple[str, ...]
    rows: tuple[tuple[str, ...], ...]

    def __post_init__(self) -> None:
        if not self.id:
            raise CorpusError("table id must be non-empty")
        if self.rows and not self.header:
            raise CorpusError(f"table {self.id!r}: rows present but header empty")
        for i, row in enumerate(self.rows):
            if len(row) != len(self.header):
                raise CorpusError(
                    f"table {self.id!r}: row/header mismatch at row {i} "
                    f"({len(row)} cells vs {len(self.header)} columns)"
                )

    @classmethod
    def make(cls, id: str, title: str, header: Iterable[str], rows: Iterable[Iterable[str]]) -> "Table":
        return cls(id, title, tuple(header), tuple(tuple(r) for r in rows))


@dataclass(frozen=True)
class Query:
    id: str
    text: str

    def __post_init__(self) -> None:
        if not self.id:
            raise CorpusError("query id must be non-empty")
        if not self.text:
            raise CorpusError(f"query {self.id!r}: text must be non-empty")


class Qrels:
    """Relevance judgments: (query_id, table_id) -> non-negative grade."""

    def __init__(self, entries: Iterable[tuple[str, str, int]]):
        self._by_query: dict[str, dict[str, int]] = {}
        for qid, tid, rel in entries:
            if rel < 0:
                raise CorpusError(f"qrels ({qid}, {tid}): relevance must be >= 0, got {rel}")
            row = self._by_query.setdefault(qid, {})
            if tid in row:
                raise CorpusError(f"duplicate qrels entry ({qid}, {tid})")
            row[tid] = rel

    def __len__(self) -> int:
        return sum(len(v) for v in self._by_query.values())

    def __iter__(self) -> Iterator[tuple[str, str, int]]:
        for qid in self._by_query:
            for tid, rel in self._by_query[qid].items():
                yield qid, tid, rel

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Qrels) and self._by_query == other._by_query

    def judged(self, query_id: str) -> dict[str, int]:
        """All judged tables for a query (may include grade 0)."""
        return dict(self._by_query.get(query_id, {}))

    def relevant(self, query_id: str) -> dict[str, int]:
        """Tables with positive relevance for a query."""
        return {t: r for t, r in self._by_query.get(query_id, {}).items() if r > 0}

    def query_ids(self) -> list[str]:
        return list(self._by_query)


class Vocabulary:
    """Token-to-index map with reserved ids 0..3 for [PAD]/[UNK]/[CLS]/[SEP]."""

    def __init__(self, tokens: Iterable[str] = ()):
        self._id_to_token: list[str] = list(RESERVED_TOKENS)
        self._token_to_id: dict[str, int] = {t: i for i, t in enumerate(self._id_to_token)}
        for tok in tokens:
            self.add(tok)

    def add(self, token: str) -> int:
        if token in self._token_to_id:
            raise CorpusError(f"duplicate vocabulary token {token!r}")
        idx = len(self._id_to_token)
        self._id_to_token.append(token)
        self._token_to_id[token] = idx
        return idx

    def id_of(self, token: str) -> int:
        return self._token_to_id.get(token, UNK_ID)

    def token_of(self, idx: int) -> str:
        return self._id_to_token[idx]

    def __contains__(self, token: str) -> bool:
        return token in self._token_to_id

    def __len__(self) -> int:
        return len(self._id_to_token)

    def tokens(self) -> list[str]:
        """Non-reserved tokens in insertion order."""
        return self._id_to_token[len(RESERVED_TOKENS):]

    def to_json(self) -> str:
        return json.dumps({"tokens": self.tokens()})

    @classmethod
    def from_json(cls, blob: str) -> "Vocabulary":
        return cls(json.loads(blob)["tokens"])


@dataclass(frozen=True)
class TokenSequence:
    """Token ids plus character offsets into the source text.

    Position 0 is always [CLS] and the final position [SEP]; special tokens
    carry empty (start == end) offsets.
    """

    token_ids: tuple[int, ...]
    offsets: tuple[tuple[int, int], ...]
    source: str

    def __len__(self) -> int:
        return len(self.token_ids)

    def content_positions(self) -> range:
        """Positions of non-special tokens (everything between CLS and SEP)."""
        return range(1, len(self.token_ids) - 1)


def word_spans(text: str) -> list[tuple[int, int]]:
    """Character spans of word-level tokens (punctuation splits)."""
    return [m.span() for m in _WORD_RE.finditer(text)]


def word_tokens(text: str) -> list[str]:
    """Lowercased word-level tokens of a text."""
    return [text[s:e].lower() for s, e in word_spans(text)]


def serialize_table(table: Table) -> str:
    """Flatten a table to text: ``title ; h1 | h2 ; r1c1 | r1c2 ; ...``."""
    parts = [table.title.strip()]
    if table.header:
        parts.append(" | ".join(h.strip() for h in table.header))
    for row in table.rows:
        parts.append(" | ".join(c.strip() for c in row))
    return " ; ".join(parts)


def tokenize(text: str, vocab: Vocabulary, max_len: int | None = None) -> TokenSequence:
    """Tokenize into vocabulary ids with [CLS]/[SEP] wrapping.

    Truncation keeps the head of the sequence and the trailing [SEP], so for
    serialized tables later rows fall off first while title and header stay.
    """
    spans = word_spans(text)
    ids = [CLS_ID]
    offsets: list[tuple[int, int]] = [(0, 0)]
    for s, e in spans:
        ids.append(vocab.id_of(text[s:e].lower()))
        offsets.append((s, e))
    ids.append(SEP_ID)
    offsets.append((len(text), len(text)))
    if max_len is not None and len(ids) > max_len:
        ids = ids[: max_len - 1] + [SEP_ID]
        offsets = offsets[: max_len - 1] + [(len(text), len(text))]
    return TokenSequence(tuple(ids), tuple(offsets), text)


def build_vocab(texts: Iterable[str], min_freq: int = 1) -> Vocabulary:
    """Build a vocabulary of tokens with frequency >= min_freq.

    Insertion order is descending frequency with lexicographic tie-break,
    so ids are deterministic for a fixed corpus.
    """
    if min_freq < 1:
        raise CorpusError(f"min_freq must be >= 1, got {min_freq}")
    counts: Counter[str] = Counter()
    for text in texts:
        counts.update(word_tokens(text))
    kept = sorted(
        (tok for tok, c in counts.items() if c >= min_freq),
        key=lambda t: (-counts[t], t),
    )
    return Vocabulary(kept)


def _read_jsonl(path: str, what: str) -> Iterator[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{what} line {lineno}: malformed JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise CorpusError(f"{what} line {lineno}: expected an object")
            yield lineno, obj


def _require_keys(obj: dict, keys: tuple[str, ...], what: str, lineno: int) -> None:
    missing = [k for k in keys if k not in obj]
    if missing:
        raise CorpusError(f"{what} line {lineno}: missing key(s) {missing}")


def load_tables(path: str) -> list[Table]:
    tables: list[Table] = []
    seen: set[str] = set()
    for lineno, obj in _read_jsonl(path, "tables"):
        _require_keys(obj, ("id", "title", "header", "rows"), "tables", lineno)
        try:
            table = Table.make(str(obj["id"]), str(obj["title"]), obj["header"], obj["rows"])
        except CorpusError as exc:
            raise CorpusError(f"tables line {lineno}: {exc}") from exc
        if table.id in seen:
            raise CorpusError(f"tables line {lineno}: duplicate table id {table.id!r}")
        seen.add(table.id)
        tables.append(table)
    return tables


def load_queries(path: str) -> list[Query]:
    queries: list[Query] = []
    seen: set[str] = set()
    for lineno, obj in _read_jsonl(path, "queries"):
        _require_keys(obj, ("id", "text"), "queries", lineno)
        try:
            query = Query(str(obj["id"]), str(obj["text"]))
        except CorpusError as exc:
            raise CorpusError(f"queries line {lineno}: {exc}") from exc
        if query.id in seen:
            raise CorpusError(f"queries line {lineno}: duplicate query id {query.id!r}")
        seen.add(query.id)
        queries.append(query)
    return queries


def load_qrels(path: str) -> list[tuple[str, str, int]]:
    entries: list[tuple[str, str, int]] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 3:
                raise CorpusError(f"qrels line {lineno}: expected 'query_id table_id relevance'")
            try:
                rel = int(parts[2])
            except ValueError as exc:
                raise CorpusError(f"qrels line {lineno}: relevance must be an integer") from exc
            entries.append((parts[0], parts[1], rel))
    return entries


def load_corpus(tables_path: str, queries_path: str, qrels_path: str) -> tuple[list[Table], list[Query], Qrels]:
    """Load and cross-validate a corpus; dangling qrels ids are rejected."""
    tables = load_tables(tables_path)
    queries = load_queries(queries_path)
    entries = load_qrels(qrels_path)
    table_ids = {t.id for t in tables}
    query_ids = {q.id for q in queries}
    for qid, tid, _ in entries:
        if qid not in query_ids:
            raise CorpusError(f"qrels: unknown query id {qid!r}")
        if tid not in table_ids:
            raise CorpusError(f"qrels: unknown table id {tid!r}")
    return tables, queries, Qrels(entries)


def write_corpus(
    tables: Iterable[Table],
    queries: Iterable[Query],
    qrels: Qrels,
    tables_path: str,
    queries_path: str,
    qrels_path: str,
) -> None:
    with open(tables_path, "w", encoding="utf-8") as fh:
        for t in tables:
            fh.write(json.dumps({
                "id": t.id, "title": t.title,
                "header": list(t.header), "rows": [list(r) for r in t.rows],
            }) + "\n")
    with open(queries_path, "w", encoding="utf-8") as fh:
        for q in queries:
            fh.write(json.dumps({"id": q.id, "text": q.text}) + "\n")
    with open(qrels_path, "w", encoding="utf-8") as fh:
        for qid, tid, rel in qrels:
            fh.write(f"{qid} {tid} {rel}\n")
