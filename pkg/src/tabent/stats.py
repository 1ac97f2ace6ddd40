"""Entity statistics: coverage, match-rate analysis, type distribution.

Match rates compare query entities against candidate texts at two
granularities. Entity level is a per-entity indicator of the full surface
appearing (case-insensitive, whitespace-normalized substring); token level
is the fraction of the entity's word tokens found anywhere in the
candidate's token multiset. The relevant-versus-irrelevant study samples
irrelevant candidates from BM25's top results.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .corpus import Qrels, Query, word_tokens
from .entities import EntityAnnotation
from .index import Bm25Index


class StatsError(ValueError):
    pass


@dataclass(frozen=True)
class CoverageReport:
    avg_tokens: float
    avg_entities: float
    entity_coverage: float

    def record_lines(self, prefix: str = "") -> list[str]:
        return [
            f"{prefix}avg_tokens={self.avg_tokens:.6f}",
            f"{prefix}avg_entities={self.avg_entities:.6f}",
            f"{prefix}entity_coverage={self.entity_coverage:.6f}",
        ]


@dataclass(frozen=True)
class MatchRateReport:
    entity_rel: float
    entity_irrel: float
    token_rel: float
    token_irrel: float
    n_queries: int
    n_skipped: int

    @property
    def entity_delta(self) -> float:
        return self.entity_rel - self.entity_irrel

    @property
    def token_delta(self) -> float:
        return self.token_rel - self.token_irrel

    def record_lines(self) -> list[str]:
        return [
            f"entity_rel={self.entity_rel:.6f}",
            f"entity_irrel={self.entity_irrel:.6f}",
            f"entity_delta={self.entity_delta:.6f}",
            f"token_rel={self.token_rel:.6f}",
            f"token_irrel={self.token_irrel:.6f}",
            f"token_delta={self.token_delta:.6f}",
            f"n_queries={self.n_queries}",
            f"n_skipped={self.n_skipped}",
        ]


def coverage_stats(texts: Sequence[str], annotations: Sequence[EntityAnnotation]) -> CoverageReport:
    """Mean token count, mean span count, and fraction of annotated texts."""
    if not texts:
        raise StatsError("empty collection")
    if len(texts) != len(annotations):
        raise StatsError("one annotation per text required")
    token_counts = [len(word_tokens(t)) for t in texts]
    span_counts = [len(a) for a in annotations]
    return CoverageReport(
        avg_tokens=float(np.mean(token_counts)),
        avg_entities=float(np.mean(span_counts)),
        entity_coverage=float(np.mean([c > 0 for c in span_counts])),
    )


def _normalize(text: str) -> str:
    return " ".join(text.lower().split())


def entity_match_rate(query_ann: EntityAnnotation, query_text: str,
                      candidate_text: str) -> float | None:
    """Fraction of query entities whose surface appears in the candidate.

    Returns None when the query has no entities, so callers can exclude it
    from aggregation.
    """
    if len(query_ann) == 0:
        return None
    haystack = _normalize(candidate_text)
    hits = [
        1.0 if _normalize(surface) in haystack else 0.0
        for surface in query_ann.surfaces(query_text)
    ]
    return float(np.mean(hits))


def token_match_rate(query_ann: EntityAnnotation, query_text: str,
                     candidate_tokens: Sequence[str]) -> float | None:
    """Mean over query entities of the fraction of their tokens present."""
    if len(query_ann) == 0:
        return None
    available = set(candidate_tokens)
    per_entity = []
    for surface in query_ann.surfaces(query_text):
        toks = word_tokens(surface)
        if not toks:
            continue
        per_entity.append(float(np.mean([t in available for t in toks])))
    if not per_entity:
        return None
    return float(np.mean(per_entity))


def type_distribution(annotations: Sequence[EntityAnnotation], type_count: int) -> np.ndarray:
    """Per-type fraction of all spans; sums to 1."""
    counts = np.zeros(type_count)
    for ann in annotations:
        for span in ann.spans:
            counts[span.type_index] += 1
    total = counts.sum()
    if total == 0:
        raise StatsError("no entity spans in the collection")
    return counts / total


def match_rate_study(
    queries: Sequence[Query],
    query_anns: dict[str, EntityAnnotation],
    table_texts: dict[str, str],
    table_tokens: dict[str, list[str]],
    qrels: Qrels,
    bm25: Bm25Index,
    sample_size: int = 300,
    seed: int = 0,
    n_irrelevant: int = 3,
    candidate_depth: int = 20,
    pool_pairs: bool = False,
) -> MatchRateReport:
    """Relevant-versus-irrelevant match rates over a seeded query sample.

    For every sampled query the relevant pool is its judged tables and the
    irrelevant pool is ``n_irrelevant`` tables drawn from BM25's top
    ``candidate_depth`` results after removing relevant ones; queries with
    too few eligible candidates are skipped and counted. By default rates
    average per query and then over queries; ``pool_pairs`` averages over
    all (query, table) pairs instead.
    """
    rng = np.random.default_rng(seed)
    eligible = [
        q for q in queries
        if len(query_anns.get(q.id, ())) and qrels.relevant(q.id)
    ]
    if len(eligible) > sample_size:
        picks = rng.choice(len(eligible), size=sample_size, replace=False)
        sample = [eligible[i] for i in sorted(picks)]
    else:
        sample = eligible
    if not sample:
        raise StatsError("no eligible queries (need entities and judgments)")

    agg = {"er": [], "ei": [], "tr": [], "ti": []}
    skipped = 0
    used = 0
    for query in sample:
        ann = query_anns[query.id]
        relevant_ids = sorted(qrels.relevant(query.id))
        hits = bm25.search(word_tokens(query.text), candidate_depth)
        candidates = [tid for tid, _ in hits if tid not in set(relevant_ids)]
        if len(candidates) < n_irrelevant:
            skipped += 1
            continue
        chosen = [candidates[i] for i in sorted(
            rng.choice(len(candidates), size=n_irrelevant, replace=False))]

        def rates(ids: list[str]) -> tuple[list[float], list[float]]:
            ent = [entity_match_rate(ann, query.text, table_texts[t]) for t in ids]
            tok = [token_match_rate(ann, query.text, table_tokens[t]) for t in ids]
            return [v for v in ent if v is not None], [v for v in tok if v is not None]

        ent_rel, tok_rel = rates(relevant_ids)
        ent_irr, tok_irr = rates(chosen)
        if pool_pairs:
            agg["er"].extend(ent_rel)
            agg["ei"].extend(ent_irr)
            agg["tr"].extend(tok_rel)
            agg["ti"].extend(tok_irr)
        else:
            agg["er"].append(float(np.mean(ent_rel)))
            agg["ei"].append(float(np.mean(ent_irr)))
            agg["tr"].append(float(np.mean(tok_rel)))
            agg["ti"].append(float(np.mean(tok_irr)))
        used += 1

    if used == 0:
        raise StatsError("every sampled query was skipped")
    return MatchRateReport(
        entity_rel=float(np.mean(agg["er"])),
        entity_irrel=float(np.mean(agg["ei"])),
        token_rel=float(np.mean(agg["tr"])),
        token_irrel=float(np.mean(agg["ti"])),
        n_queries=used,
        n_skipped=skipped,
    )
