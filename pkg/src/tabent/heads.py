"""Dense and sparse retrieval heads over encoder hidden states.

The dense representation is the [CLS] row; the sparse head projects hidden
states into vocabulary space and pools ReLU'd logits over the sequence.
Entity representations are per-type means of the rows covered by that
type's spans, and interaction scores sum similarities between whole-item
representations and the other side's typed entity representations.
Interaction terms exist only at training time; inference uses the plain
dense or sparse score.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .entities import EntityAnnotation


class HeadError(ValueError):
    pass


@dataclass(frozen=True)
class InteractionWeights:
    """Training-time mixing weights for entity interaction scores."""

    lambda_q_e: float = 0.1
    lambda_t_e: float = 0.3
    lambda_sps_e: float = 0.2
    lambda_flops: float = 0.0

    def __post_init__(self) -> None:
        if self.lambda_flops < 0:
            raise HeadError("lambda_flops must be >= 0")


@dataclass(frozen=True)
class TypePooled:
    """Per-type pooled rows (K x dim) with a presence mask.

    Rows of absent types are exactly zero, so sums and dot products over all
    K types silently skip them.
    """

    rows: np.ndarray
    mask: np.ndarray

    def present_sum(self) -> np.ndarray:
        return self.rows.sum(axis=0)


def dense_rep(hidden: np.ndarray) -> np.ndarray:
    """Whole-item dense representation: the [CLS] row."""
    if hidden.shape[0] == 0:
        raise HeadError("empty hidden states")
    return hidden[0]


def sim(a: np.ndarray, b: np.ndarray, kind: str = "dot") -> float:
    """Similarity between two equal-dimension vectors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise HeadError(f"dimension mismatch: {a.shape} vs {b.shape}")
    if kind == "dot":
        return float(a @ b)
    if kind == "cosine":
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        if na == 0.0 or nb == 0.0:
            return 0.0
        return float(a @ b / (na * nb))
    raise HeadError(f"unknown similarity kind {kind!r}")


def _member_positions(ann: EntityAnnotation, k: int) -> list[int]:
    positions: list[int] = []
    for span in ann.grouped[k]:
        positions.extend(span.token_positions())
    return positions


def pool_entity(rows: np.ndarray, ann: EntityAnnotation) -> TypePooled:
    """Mean the rows covered by each type's spans; absent types stay zero.

    Works for both hidden states (K x h) and sparse logits (K x |V|); types
    with several spans average over all member token rows.
    """
    K = ann.type_count
    pooled = np.zeros((K, rows.shape[1]))
    mask = np.zeros(K, dtype=bool)
    for k in range(K):
        positions = _member_positions(ann, k)
        if positions:
            pooled[k] = rows[positions].mean(axis=0)
            mask[k] = True
    return TypePooled(pooled, mask)


def pool_entity_backward(d_pooled: np.ndarray, ann: EntityAnnotation, out_rows: np.ndarray) -> None:
    """Scatter pooled-row gradients back to member token rows (in place)."""
    for k in range(ann.type_count):
        positions = _member_positions(ann, k)
        if positions:
            out_rows[positions] += d_pooled[k] / len(positions)


def interaction_scores_dense(q_ds: np.ndarray, t_ds: np.ndarray,
                             q_pooled: TypePooled, t_pooled: TypePooled,
                             kind: str = "dot") -> tuple[float, float]:
    """Asymmetric entity interactions.

    score_q_e matches the query representation against every present table
    entity type; score_t_e matches the table representation against every
    present query entity type.
    """
    score_q_e = sum(
        sim(q_ds, t_pooled.rows[k], kind) for k in np.flatnonzero(t_pooled.mask)
    )
    score_t_e = sum(
        sim(t_ds, q_pooled.rows[k], kind) for k in np.flatnonzero(q_pooled.mask)
    )
    return float(score_q_e), float(score_t_e)


def train_score_dense(q_ds: np.ndarray, t_ds: np.ndarray,
                      q_pooled: TypePooled, t_pooled: TypePooled,
                      weights: InteractionWeights, kind: str = "dot") -> float:
    base = sim(q_ds, t_ds, kind)
    score_q_e, score_t_e = interaction_scores_dense(q_ds, t_ds, q_pooled, t_pooled, kind)
    return base + weights.lambda_q_e * score_q_e + weights.lambda_t_e * score_t_e


def sparse_logits(hidden: np.ndarray, proj_w: np.ndarray, proj_b: np.ndarray) -> np.ndarray:
    """Vocabulary-space logits: S = H W^T + b, one row per token."""
    if hidden.shape[1] != proj_w.shape[1]:
        raise HeadError(f"shape mismatch: hidden {hidden.shape} vs projection {proj_w.shape}")
    return hidden @ proj_w.T + proj_b


def init_sparse_head(vocab_size: int, hidden_dim: int,
                     rng: np.random.Generator) -> dict[str, np.ndarray]:
    return {
        "sparse.proj_w": rng.normal(0.0, 0.02, size=(vocab_size, hidden_dim)),
        "sparse.proj_b": np.zeros(vocab_size),
    }


def sparse_rep_vector(logits: np.ndarray, pooling: str = "max",
                      content: np.ndarray | None = None) -> np.ndarray:
    """Pooled non-negative vocabulary vector: Pooling(ReLU(S)).

    ``content`` optionally restricts pooling to a subset of rows, used to
    exclude padding positions.
    """
    rows = logits if content is None else logits[content]
    if rows.shape[0] == 0:
        raise HeadError("no rows to pool")
    relu = np.maximum(rows, 0.0)
    if pooling == "max":
        return relu.max(axis=0)
    if pooling == "mean":
        return relu.mean(axis=0)
    raise HeadError(f"unknown pooling {pooling!r}")


def sparse_rep_backward(d_vec: np.ndarray, logits: np.ndarray, pooling: str = "max",
                        content: np.ndarray | None = None) -> np.ndarray:
    """Gradient of the pooled vector wrt the raw logits."""
    d_logits = np.zeros_like(logits)
    idx = np.arange(logits.shape[0]) if content is None else np.asarray(content)
    rows = logits[idx]
    relu = np.maximum(rows, 0.0)
    if pooling == "max":
        arg = relu.argmax(axis=0)
        cols = np.arange(logits.shape[1])
        d_rows = np.zeros_like(rows)
        d_rows[arg, cols] = d_vec
        d_rows *= rows > 0
    elif pooling == "mean":
        d_rows = np.repeat(d_vec[None, :] / rows.shape[0], rows.shape[0], axis=0)
        d_rows = d_rows * (rows > 0)
    else:
        raise HeadError(f"unknown pooling {pooling!r}")
    d_logits[idx] = d_rows
    return d_logits


def entity_score_sparse(q_pooled: TypePooled, t_pooled: TypePooled, kind: str = "dot") -> float:
    """Sum of same-type similarities over types present on both sides."""
    both = np.flatnonzero(q_pooled.mask & t_pooled.mask)
    return float(sum(sim(q_pooled.rows[k], t_pooled.rows[k], kind) for k in both))


def train_score_sparse(q_vec: np.ndarray, t_vec: np.ndarray,
                       q_pooled: TypePooled, t_pooled: TypePooled,
                       weights: InteractionWeights, kind: str = "dot") -> float:
    return sim(q_vec, t_vec, kind) + weights.lambda_sps_e * entity_score_sparse(
        q_pooled, t_pooled, kind)


def flops_reg(batch: np.ndarray) -> float:
    """FLOPS penalty: sum over vocabulary terms of squared batch-mean weight."""
    if batch.ndim != 2 or batch.shape[0] < 1:
        raise HeadError("flops_reg expects a non-empty (batch, vocab) matrix")
    col_mean = batch.mean(axis=0)
    return float((col_mean ** 2).sum())


def flops_reg_backward(batch: np.ndarray) -> np.ndarray:
    col_mean = batch.mean(axis=0)
    return np.broadcast_to(2.0 * col_mean / batch.shape[0], batch.shape).copy()


def inference_score(q_rep: np.ndarray, t_rep: np.ndarray, mode: str, kind: str = "dot") -> float:
    """Inference relevance score. Interaction terms are never applied here."""
    if mode not in ("dense", "sparse"):
        raise HeadError(f"unknown mode {mode!r}")
    return sim(q_rep, t_rep, kind)


@dataclass(frozen=True)
class SparseRepresentation:
    """Strictly-positive weights at ascending vocabulary indices."""

    indices: tuple[int, ...]
    weights: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.indices) != len(self.weights):
            raise HeadError("indices and weights must have equal length")
        if any(w <= 0 for w in self.weights):
            raise HeadError("sparse weights must be strictly positive")
        if any(a >= b for a, b in zip(self.indices, self.indices[1:])):
            raise HeadError("sparse indices must be strictly ascending")

    @classmethod
    def from_dense(cls, vec: np.ndarray) -> "SparseRepresentation":
        nz = np.flatnonzero(vec > 0)
        return cls(tuple(int(i) for i in nz), tuple(float(vec[i]) for i in nz))

    def to_dense(self, size: int) -> np.ndarray:
        out = np.zeros(size)
        out[list(self.indices)] = self.weights
        return out

    def dot(self, other: "SparseRepresentation") -> float:
        """Merge-join dot product over shared indices."""
        total, i, j = 0.0, 0, 0
        while i < len(self.indices) and j < len(other.indices):
            a, b = self.indices[i], other.indices[j]
            if a == b:
                total += self.weights[i] * other.weights[j]
                i += 1
                j += 1
            elif a < b:
                i += 1
            else:
                j += 1
        return total

    def density(self, vocab_size: int) -> float:
        return len(self.indices) / vocab_size

    def serialize(self) -> str:
        return " ".join(f"({i}:{w:.9g})" for i, w in zip(self.indices, self.weights))

    @classmethod
    def parse(cls, text: str) -> "SparseRepresentation":
        indices: list[int] = []
        weights: list[float] = []
        for chunk in text.split():
            if not (chunk.startswith("(") and chunk.endswith(")") and ":" in chunk):
                raise HeadError(f"malformed sparse term {chunk!r}")
            i, w = chunk[1:-1].split(":", 1)
            indices.append(int(i))
            weights.append(float(w))
        return cls(tuple(indices), tuple(weights))
