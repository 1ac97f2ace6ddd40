"""Retrieval model assembly: encoder(s), heads, and item preparation.

A RetrievalModel owns one flat named-parameter map covering the encoder
(one copy when query/table encoders are tied, two prefixed copies when
not) plus the sparse projection head. ItemPreparer turns raw queries and
tables into token ids, aligned entity annotations, and per-position type
ids, either through the rule recognizer or a sidecar annotation file.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import encoder as enc
from . import heads
from .corpus import Query, Table, TokenSequence, Vocabulary, serialize_table, tokenize
from .entities import (
    EntityAnnotation,
    EntityTypeSet,
    RuleRecognizer,
    align,
    group_by_type,
    type_ids_for,
)


@dataclass(frozen=True)
class HeadConfig:
    """Similarity and pooling switches shared by both retriever heads."""

    sim: str = "dot"
    sparse_pooling: str = "max"
    entity_pool_relu: bool = False

    def __post_init__(self) -> None:
        if self.sim not in ("dot", "cosine"):
            raise heads.HeadError(f"sim must be dot|cosine, got {self.sim!r}")
        if self.sparse_pooling not in ("max", "mean"):
            raise heads.HeadError(f"sparse_pooling must be max|mean, got {self.sparse_pooling!r}")


@dataclass(frozen=True)
class PreparedItem:
    """A query or table ready for the encoder."""

    id: str
    seq: TokenSequence
    ann: EntityAnnotation
    token_ids: np.ndarray
    type_ids: np.ndarray


class ItemPreparer:
    """Tokenizes and annotates queries and serialized tables."""

    def __init__(self, vocab: Vocabulary, type_set: EntityTypeSet, max_len: int,
                 recognizer: RuleRecognizer | None = None,
                 sidecar: dict[tuple[str, str], list[tuple[int, int, int]]] | None = None):
        self.vocab = vocab
        self.type_set = type_set
        self.max_len = max_len
        self.recognizer = recognizer or RuleRecognizer(type_set)
        self.sidecar = sidecar

    def _prepare(self, kind: str, owner_id: str, text: str) -> PreparedItem:
        seq = tokenize(text, self.vocab, self.max_len)
        if self.sidecar is not None:
            char_spans = self.sidecar.get((kind, owner_id), [])
        else:
            char_spans = self.recognizer.recognize(text)
        ann = group_by_type(align(char_spans, seq), len(self.type_set))
        return PreparedItem(
            id=owner_id,
            seq=seq,
            ann=ann,
            token_ids=np.array(seq.token_ids, dtype=np.intp),
            type_ids=np.array(type_ids_for(seq, ann), dtype=np.intp),
        )

    def prepare_query(self, query: Query) -> PreparedItem:
        return self._prepare("query", query.id, query.text)

    def prepare_table(self, table: Table) -> PreparedItem:
        return self._prepare("table", table.id, serialize_table(table))


class RetrievalModel:
    """Encoder plus heads behind a single named parameter map."""

    def __init__(self, enc_cfg: enc.EncoderConfig, head_cfg: HeadConfig | None = None,
                 tie_encoders: bool = True, rng: np.random.Generator | None = None):
        self.enc_cfg = enc_cfg
        self.head_cfg = head_cfg or HeadConfig()
        self.tie_encoders = tie_encoders
        rng = rng if rng is not None else np.random.default_rng(enc_cfg.seed)
        self.params: dict[str, np.ndarray] = {}
        if tie_encoders:
            self.params.update(enc.init_params(enc_cfg, rng))
        else:
            self.params.update(enc.init_params(enc_cfg, rng, prefix="enc_q."))
            self.params.update(enc.init_params(enc_cfg, rng, prefix="enc_t."))
        self.params.update(heads.init_sparse_head(enc_cfg.vocab_size, enc_cfg.hidden_dim, rng))

    def prefix(self, side: str) -> str:
        if side not in ("q", "t"):
            raise ValueError(f"side must be q|t, got {side!r}")
        return "" if self.tie_encoders else f"enc_{side}."

    def encode(self, item: PreparedItem, side: str = "q",
               use_type_embedding: bool = True) -> tuple[np.ndarray, dict]:
        type_ids = item.type_ids if use_type_embedding else None
        return enc.forward(self.params, self.enc_cfg, item.token_ids, type_ids,
                           prefix=self.prefix(side))

    def dense_vector(self, item: PreparedItem, side: str = "q",
                     use_type_embedding: bool = True) -> np.ndarray:
        hidden, _ = self.encode(item, side, use_type_embedding)
        return heads.dense_rep(hidden)

    def sparse_logit_rows(self, hidden: np.ndarray) -> np.ndarray:
        return heads.sparse_logits(hidden, self.params["sparse.proj_w"],
                                   self.params["sparse.proj_b"])

    def sparse_vector(self, item: PreparedItem, side: str = "q",
                      use_type_embedding: bool = True) -> np.ndarray:
        hidden, _ = self.encode(item, side, use_type_embedding)
        logits = self.sparse_logit_rows(hidden)
        return heads.sparse_rep_vector(logits, self.head_cfg.sparse_pooling)

    def entity_pooled(self, rows: np.ndarray, ann: EntityAnnotation,
                      apply_relu: bool = False) -> heads.TypePooled:
        src = np.maximum(rows, 0.0) if apply_relu else rows
        return heads.pool_entity(src, ann)

    # -- persistence ------------------------------------------------------

    def config_blob(self) -> dict:
        return {
            "encoder": asdict(self.enc_cfg),
            "head": asdict(self.head_cfg),
            "tie_encoders": self.tie_encoders,
        }

    def save(self, path: str, extra: dict | None = None) -> None:
        enc.save_checkpoint(path, self.config_blob(), self.params, extra)

    @classmethod
    def load(cls, path: str) -> tuple["RetrievalModel", dict]:
        blob, loaded, extra = enc.load_checkpoint(path)
        model = cls(
            enc.EncoderConfig(**blob["encoder"]),
            HeadConfig(**blob["head"]),
            tie_encoders=blob["tie_encoders"],
        )
        if set(loaded) != set(model.params):
            missing = set(model.params) ^ set(loaded)
            raise enc.EncoderError(f"checkpoint parameter set mismatch: {sorted(missing)}")
        for name, arr in loaded.items():
            if arr.shape != model.params[name].shape:
                raise enc.EncoderError(
                    f"checkpoint shape mismatch for {name!r}: "
                    f"{arr.shape} vs {model.params[name].shape}"
                )
            model.params[name] = arr
        return model, extra
