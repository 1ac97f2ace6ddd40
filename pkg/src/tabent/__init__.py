"""Entity-enhanced table retrieval at desk scale."""

__version__ = "0.1.0"

from .corpus import (
    Qrels,
    Query,
    Table,
    TokenSequence,
    Vocabulary,
    build_vocab,
    load_corpus,
    serialize_table,
    tokenize,
)
from .encoder import EncoderConfig, GradientTape, grad_check
from .entities import EntityAnnotation, EntitySpan, EntityTypeSet, RuleRecognizer
from .heads import InteractionWeights, SparseRepresentation
from .model import HeadConfig, ItemPreparer, RetrievalModel
from .trainer import TrainConfig, info_nce, train

__all__ = [
    "Qrels", "Query", "Table", "TokenSequence", "Vocabulary",
    "build_vocab", "load_corpus", "serialize_table", "tokenize",
    "EncoderConfig", "GradientTape", "grad_check",
    "EntityAnnotation", "EntitySpan", "EntityTypeSet", "RuleRecognizer",
    "InteractionWeights", "SparseRepresentation",
    "HeadConfig", "ItemPreparer", "RetrievalModel",
    "TrainConfig", "info_nce", "train",
]
