"""Typed entity spans over queries and serialized tables.

Spans come either from the built-in rule/gazetteer recognizer or from a
sidecar annotation file, and are aligned from character offsets to token
positions so downstream pooling can address hidden-state rows directly.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .corpus import CorpusError, TokenSequence

DEFAULT_TYPE_NAMES = (
    "PERSON", "ORG", "GPE", "LOC", "DATE",
    "TIME", "CARDINAL", "ORDINAL", "MONEY", "PERCENT",
)


class AnnotationError(ValueError):
    """Raised for invalid spans or malformed annotation files."""


class EntityTypeSet:
    """Ordered inventory of entity type names with stable indices."""

    def __init__(self, names: Sequence[str] = DEFAULT_TYPE_NAMES):
        if not names:
            raise AnnotationError("entity type set must be non-empty")
        if len(set(names)) != len(names):
            raise AnnotationError("entity type names must be unique")
        self.names = tuple(names)
        self._index = {n: i for i, n in enumerate(self.names)}

    def __len__(self) -> int:
        return len(self.names)

    def __getitem__(self, idx: int) -> str:
        return self.names[idx]

    def index(self, name: str) -> int:
        if name not in self._index:
            raise AnnotationError(f"unknown entity type {name!r}")
        return self._index[name]

    def __contains__(self, name: str) -> bool:
        return name in self._index


@dataclass(frozen=True)
class EntitySpan:
    """A typed entity occurrence located in both character and token space.

    ``token_start``/``token_end`` are inclusive indices into the aligned
    token sequence.
    """

    char_start: int
    char_end: int
    token_start: int
    token_end: int
    type_index: int

    def __post_init__(self) -> None:
        if not self.char_start < self.char_end:
            raise AnnotationError(f"empty char span ({self.char_start}, {self.char_end})")
        if self.token_start > self.token_end:
            raise AnnotationError("token_start must be <= token_end")

    def token_positions(self) -> range:
        return range(self.token_start, self.token_end + 1)


class EntityAnnotation:
    """All entity spans of one text, also partitioned by type index."""

    def __init__(self, spans: Iterable[EntitySpan], type_count: int):
        self.spans = tuple(spans)
        self.type_count = type_count
        grouped: list[list[EntitySpan]] = [[] for _ in range(type_count)]
        for span in self.spans:
            if span.type_index >= type_count:
                raise AnnotationError(
                    f"type index {span.type_index} out of range for {type_count} types"
                )
            grouped[span.type_index].append(span)
        self.grouped: tuple[tuple[EntitySpan, ...], ...] = tuple(tuple(g) for g in grouped)

    def __len__(self) -> int:
        return len(self.spans)

    def present_types(self) -> list[int]:
        return [k for k, g in enumerate(self.grouped) if g]

    def surfaces(self, source: str) -> list[str]:
        return [source[s.char_start:s.char_end] for s in self.spans]


def group_by_type(spans: Iterable[EntitySpan], type_count: int) -> EntityAnnotation:
    """Partition aligned spans by type, preserving source order inside groups."""
    return EntityAnnotation(spans, type_count)


_MONTHS = (
    "january|february|march|april|may|june|july"
    "|august|september|october|november|december"
)
_ORDINAL_WORDS = (
    "first|second|third|fourth|fifth|sixth|seventh|eighth|ninth|tenth"
    "|eleventh|twelfth"
)

# Rule cascade in priority order; on equal-length overlapping matches the
# earlier rule wins.
_RULES: tuple[tuple[str, re.Pattern[str]], ...] = (
    ("DATE", re.compile(r"\b[12]\d{3}\b")),
    ("DATE", re.compile(
        rf"\b(?:{_MONTHS})\b(?:\s+\d{{1,2}}(?:st|nd|rd|th)?)?(?:,?\s+[12]\d{{3}})?",
        re.IGNORECASE,
    )),
    ("TIME", re.compile(r"\b\d{1,2}:\d{2}(?::\d{2})?(?:\s?[ap]m)?\b", re.IGNORECASE)),
    ("PERCENT", re.compile(r"\b\d+(?:\.\d+)?\s?%")),
    ("MONEY", re.compile(r"[$€£¥]\s?\d[\d,]*(?:\.\d+)?")),
    ("ORDINAL", re.compile(rf"\b(?:\d+(?:st|nd|rd|th)|{_ORDINAL_WORDS})\b", re.IGNORECASE)),
    ("CARDINAL", re.compile(r"\b\d+(?:\.\d+)?\b")),
)

_WORD_START_RE = re.compile(r"\w+")


class RuleRecognizer:
    """Deterministic rule cascade plus longest-match gazetteer lookup.

    The gazetteer maps lowercased phrases to type names (for example
    ``{"oregon": "GPE"}``); lookups are case-insensitive over word
    boundaries. Overlaps are resolved longest-match first, then leftmost,
    then by rule priority.
    """

    def __init__(self, type_set: EntityTypeSet | None = None,
                 gazetteer: Mapping[str, str] | None = None):
        self.type_set = type_set or EntityTypeSet()
        self.gazetteer: dict[str, str] = {}
        self._max_gaz_words = 0
        for phrase, tname in (gazetteer or {}).items():
            if tname not in self.type_set:
                raise AnnotationError(f"gazetteer type {tname!r} not in type set")
            key = " ".join(phrase.lower().split())
            self.gazetteer[key] = tname
            self._max_gaz_words = max(self._max_gaz_words, len(key.split()))

    def recognize(self, text: str) -> list[tuple[int, int, int]]:
        """Non-overlapping (char_start, char_end, type_index) triples."""
        candidates: list[tuple[int, int, int, int]] = []
        for priority, (tname, pattern) in enumerate(_RULES):
            if tname not in self.type_set:
                continue
            tidx = self.type_set.index(tname)
            for m in pattern.finditer(text):
                if pattern is _RULES[0][1] and not 1000 <= int(m.group()) <= 2999:
                    continue
                candidates.append((m.start(), m.end(), tidx, priority))
        candidates.extend(self._gazetteer_matches(text, priority_base=len(_RULES)))

        candidates.sort(key=lambda c: (-(c[1] - c[0]), c[0], c[3]))
        accepted: list[tuple[int, int, int]] = []
        for cs, ce, tidx, _ in candidates:
            if all(ce <= s or cs >= e for s, e, _ in accepted):
                accepted.append((cs, ce, tidx))
        accepted.sort()
        return accepted

    def _gazetteer_matches(self, text: str, priority_base: int) -> list[tuple[int, int, int, int]]:
        if not self.gazetteer:
            return []
        words = [(m.start(), m.end(), m.group().lower()) for m in _WORD_START_RE.finditer(text)]
        out: list[tuple[int, int, int, int]] = []
        for i in range(len(words)):
            for n in range(min(self._max_gaz_words, len(words) - i), 0, -1):
                phrase = " ".join(w[2] for w in words[i:i + n])
                tname = self.gazetteer.get(phrase)
                if tname is not None:
                    out.append((words[i][0], words[i + n - 1][1],
                                self.type_set.index(tname), priority_base))
                    break
        return out


def align(spans_char: Iterable[tuple[int, int, int]], seq: TokenSequence) -> list[EntitySpan]:
    """Map character spans to inclusive token index ranges.

    A token belongs to a span iff its (non-empty) offset range intersects
    the character span. Spans covering no surviving token, e.g. fully
    truncated ones, are dropped; a span whose token range collides with an
    earlier accepted span is dropped too, keeping the leftmost.
    """
    aligned: list[EntitySpan] = []
    taken: set[int] = set()
    for cs, ce, tidx in sorted(spans_char):
        positions = [
            i for i, (os, oe) in enumerate(seq.offsets)
            if os < oe and os < ce and oe > cs
        ]
        if not positions:
            continue
        if any(p in taken for p in positions):
            continue
        taken.update(positions)
        aligned.append(EntitySpan(cs, ce, min(positions), max(positions), tidx))
    return aligned


def annotate(text: str, seq: TokenSequence, recognizer: RuleRecognizer) -> EntityAnnotation:
    """Recognize, align, and group in one step."""
    spans = align(recognizer.recognize(text), seq)
    return group_by_type(spans, len(recognizer.type_set))


def type_ids_for(seq: TokenSequence, ann: EntityAnnotation | None) -> list[int]:
    """Per-position type ids aligned to the sequence; -1 marks untyped."""
    ids = [-1] * len(seq)
    if ann is not None:
        for span in ann.spans:
            for pos in span.token_positions():
                ids[pos] = span.type_index
    return ids


def load_annotation_file(path: str, type_set: EntityTypeSet) -> dict[tuple[str, str], list[tuple[int, int, int]]]:
    """Load a sidecar annotation file.

    One JSON object per line with keys ``owner_id``, ``kind`` (query|table)
    and ``spans``: arrays of [char_start, char_end, type_name].
    """
    out: dict[tuple[str, str], list[tuple[int, int, int]]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"annotations line {lineno}: malformed JSON ({exc.msg})") from exc
            for key in ("owner_id", "kind", "spans"):
                if key not in obj:
                    raise CorpusError(f"annotations line {lineno}: missing key {key!r}")
            kind = obj["kind"]
            if kind not in ("query", "table"):
                raise CorpusError(f"annotations line {lineno}: kind must be query|table, got {kind!r}")
            spans: list[tuple[int, int, int]] = []
            for raw in obj["spans"]:
                if len(raw) != 3:
                    raise CorpusError(f"annotations line {lineno}: span must be [start, end, type]")
                cs, ce, tname = raw
                if tname not in type_set:
                    raise CorpusError(f"annotations line {lineno}: unknown type_name {tname!r}")
                spans.append((int(cs), int(ce), type_set.index(tname)))
            out[(kind, str(obj["owner_id"]))] = spans
    return out
