"""Retrieval metrics over ranked runs: Recall@k, NDCG@k, significance.

A run maps query ids to ranked (table_id, score) lists. Queries without
any positive judgment are excluded from metric means; gains are the raw
relevance grades.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as scipy_stats

from .corpus import Qrels

Run = dict[str, list[tuple[str, float]]]

DEFAULT_RECALL_CUTOFFS = (1, 10, 50)
DEFAULT_NDCG_CUTOFFS = (3, 5)


class EvaluationError(ValueError):
    pass


@dataclass
class MetricReport:
    means: dict[str, float]
    per_query: dict[str, dict[str, float]] = field(default_factory=dict)

    def record_lines(self) -> list[str]:
        return [f"{name}={value:.6f}" for name, value in self.means.items()]


def _query_recall(ranking: list[tuple[str, float]], relevant: dict[str, int], k: int) -> float:
    top = {tid for tid, _ in ranking[:k]}
    return len(top & set(relevant)) / len(relevant)


def _query_ndcg(ranking: list[tuple[str, float]], relevant: dict[str, int], k: int) -> float:
    dcg = sum(
        relevant.get(tid, 0) / math.log2(i + 1)
        for i, (tid, _) in enumerate(ranking[:k], start=1)
    )
    ideal = sorted(relevant.values(), reverse=True)[:k]
    idcg = sum(g / math.log2(i + 1) for i, g in enumerate(ideal, start=1))
    return dcg / idcg


def recall_at_k(run: Run, qrels: Qrels, k: int) -> float:
    """Mean over judged queries of |relevant in top-k| / |relevant|."""
    if k < 1:
        raise EvaluationError("k must be >= 1")
    values = [
        _query_recall(run.get(qid, []), rel, k)
        for qid in qrels.query_ids()
        if (rel := qrels.relevant(qid))
    ]
    if not values:
        raise EvaluationError("no queries with positive judgments")
    return float(np.mean(values))


def ndcg_at_k(run: Run, qrels: Qrels, k: int) -> float:
    """Mean NDCG@k with relevance-grade gains and log2(rank+1) discounts."""
    if k < 1:
        raise EvaluationError("k must be >= 1")
    values = [
        _query_ndcg(run.get(qid, []), rel, k)
        for qid in qrels.query_ids()
        if (rel := qrels.relevant(qid))
    ]
    if not values:
        raise EvaluationError("no queries with positive judgments")
    return float(np.mean(values))


def evaluate_run(run: Run, qrels: Qrels,
                 recall_cutoffs: tuple[int, ...] = DEFAULT_RECALL_CUTOFFS,
                 ndcg_cutoffs: tuple[int, ...] = DEFAULT_NDCG_CUTOFFS) -> MetricReport:
    """Compute the standard metric battery with a per-query breakdown."""
    means: dict[str, float] = {}
    per_query: dict[str, dict[str, float]] = {}
    judged = [(qid, rel) for qid in qrels.query_ids() if (rel := qrels.relevant(qid))]
    for k in ndcg_cutoffs:
        name = f"ndcg@{k}"
        per_query[name] = {qid: _query_ndcg(run.get(qid, []), rel, k) for qid, rel in judged}
        means[name] = float(np.mean(list(per_query[name].values()))) if judged else 0.0
    for k in recall_cutoffs:
        name = f"recall@{k}"
        per_query[name] = {qid: _query_recall(run.get(qid, []), rel, k) for qid, rel in judged}
        means[name] = float(np.mean(list(per_query[name].values()))) if judged else 0.0
    return MetricReport(means, per_query)


def paired_t_test(per_query_a: np.ndarray, per_query_b: np.ndarray) -> float:
    """Two-sided paired t-test p-value on per-query metric differences.

    Zero-variance differences short-circuit: p = 1.0 when the samples are
    identical, 0.0 when they differ by a constant.
    """
    a = np.asarray(per_query_a, dtype=np.float64)
    b = np.asarray(per_query_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise EvaluationError("paired samples must be 1-d and equal length")
    if len(a) < 2:
        raise EvaluationError("need at least 2 pairs")
    diff = a - b
    sd = diff.std(ddof=1)
    if sd == 0.0:
        return 1.0 if diff.mean() == 0.0 else 0.0
    t = diff.mean() / (sd / math.sqrt(len(diff)))
    return float(2.0 * scipy_stats.t.sf(abs(t), df=len(diff) - 1))
