"""Exact dense search, inverted-index sparse search, and a BM25 baseline.

Corpora here are desk-scale, so dense search is an exact scan and sparse
search accumulates document scores term-at-a-time over posting lists; both
break score ties by ascending table id. BM25 doubles as the candidate
source for the match-rate study.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .heads import SparseRepresentation

RankedList = list[tuple[str, float]]


class IndexError_(ValueError):
    pass


def ranked(pairs: Iterable[tuple[str, float]], k: int | None = None) -> RankedList:
    """Sort (id, score) pairs by descending score, ascending id."""
    out = sorted(pairs, key=lambda p: (-p[1], p[0]))
    return out if k is None else out[:k]


@dataclass(frozen=True)
class DenseIndex:
    ids: tuple[str, ...]
    matrix: np.ndarray

    def __post_init__(self) -> None:
        if len(self.ids) != self.matrix.shape[0]:
            raise IndexError_("id list and matrix row count differ")


def build_dense_index(ids: Sequence[str], vectors: np.ndarray) -> DenseIndex:
    return DenseIndex(tuple(ids), np.asarray(vectors, dtype=np.float64))


def search_dense(index: DenseIndex, q_vec: np.ndarray, k: int, kind: str = "dot") -> RankedList:
    """Exact top-k over all rows; an empty index yields an empty list."""
    if k < 1:
        raise IndexError_("k must be >= 1")
    if len(index.ids) == 0:
        return []
    matrix, q = index.matrix, np.asarray(q_vec, dtype=np.float64)
    if kind == "cosine":
        norms = np.linalg.norm(matrix, axis=1)
        norms[norms == 0.0] = 1.0
        qn = np.linalg.norm(q)
        scores = (matrix @ q) / (norms * (qn if qn > 0 else 1.0))
    else:
        scores = matrix @ q
    return ranked(zip(index.ids, scores.tolist()), k)


class InvertedIndex:
    """Per-term posting lists of (doc ordinal, weight), weights > 0."""

    def __init__(self, ids: Sequence[str], postings: dict[int, list[tuple[int, float]]],
                 vocab_size: int):
        self.ids = tuple(ids)
        self.postings = postings
        self.vocab_size = vocab_size

    @classmethod
    def build(cls, ids: Sequence[str], reps: Sequence[SparseRepresentation],
              vocab_size: int) -> "InvertedIndex":
        if len(ids) != len(reps):
            raise IndexError_("id list and representation count differ")
        postings: dict[int, list[tuple[int, float]]] = {}
        for ordinal, rep in enumerate(reps):
            for term, weight in zip(rep.indices, rep.weights):
                postings.setdefault(term, []).append((ordinal, weight))
        return cls(ids, postings, vocab_size)

    def save(self, path: str) -> None:
        blob = {
            "vocab_size": self.vocab_size,
            "ids": list(self.ids),
            "postings": {str(t): plist for t, plist in self.postings.items()},
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(blob, fh)

    @classmethod
    def load(cls, path: str) -> "InvertedIndex":
        with open(path, encoding="utf-8") as fh:
            blob = json.load(fh)
        postings = {
            int(t): [(int(o), float(w)) for o, w in plist]
            for t, plist in blob["postings"].items()
        }
        return cls(blob["ids"], postings, blob["vocab_size"])


def search_sparse(index: InvertedIndex, q_rep: SparseRepresentation, k: int) -> RankedList:
    """Term-at-a-time dot-product scoring; zero-score documents are excluded."""
    if k < 1:
        raise IndexError_("k must be >= 1")
    acc: dict[int, float] = {}
    for term, q_weight in zip(q_rep.indices, q_rep.weights):
        for ordinal, d_weight in index.postings.get(term, ()):
            acc[ordinal] = acc.get(ordinal, 0.0) + q_weight * d_weight
    return ranked(
        ((index.ids[o], s) for o, s in acc.items() if s != 0.0), k)


class Bm25Index:
    """Bag-of-words index with document lengths and term frequencies."""

    def __init__(self, ids: Sequence[str], token_lists: Sequence[Sequence[str]]):
        if len(ids) != len(token_lists):
            raise IndexError_("id list and document count differ")
        self.ids = tuple(ids)
        self.doc_lens = np.array([len(toks) for toks in token_lists], dtype=np.float64)
        self.avg_len = float(self.doc_lens.mean()) if len(self.ids) else 0.0
        self.tfs: dict[str, list[tuple[int, int]]] = {}
        for ordinal, toks in enumerate(token_lists):
            for term, tf in Counter(toks).items():
                self.tfs.setdefault(term, []).append((ordinal, tf))

    def idf(self, term: str) -> float:
        df = len(self.tfs.get(term, ()))
        n = len(self.ids)
        return math.log((n - df + 0.5) / (df + 0.5) + 1.0)

    def search(self, query_tokens: Sequence[str], k: int,
               k1: float = 1.2, b: float = 0.75) -> RankedList:
        if k < 1:
            raise IndexError_("k must be >= 1")
        acc: dict[int, float] = {}
        for term, qtf in Counter(query_tokens).items():
            plist = self.tfs.get(term)
            if not plist:
                continue
            idf = self.idf(term)
            for ordinal, tf in plist:
                denom = tf + k1 * (1.0 - b + b * self.doc_lens[ordinal] / self.avg_len)
                acc[ordinal] = acc.get(ordinal, 0.0) + qtf * idf * tf * (k1 + 1.0) / denom
        return ranked(((self.ids[o], s) for o, s in acc.items()), k)


def write_run(path: str, run: dict[str, RankedList], tag: str = "tabent") -> None:
    """TREC-style run file: ``query_id Q0 table_id rank score tag``."""
    with open(path, "w", encoding="utf-8") as fh:
        for qid in run:
            for rank, (tid, score) in enumerate(run[qid], start=1):
                fh.write(f"{qid} Q0 {tid} {rank} {score:.9g} {tag}\n")


def read_run(path: str) -> dict[str, RankedList]:
    run: dict[str, RankedList] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 6:
                raise IndexError_(f"run line {lineno}: expected 6 whitespace-separated fields")
            qid, _, tid, _, score, _ = parts
            run.setdefault(qid, []).append((tid, float(score)))
    return {qid: ranked(entries) for qid, entries in run.items()}
