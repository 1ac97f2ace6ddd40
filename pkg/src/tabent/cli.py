"""Command-line pipeline: stats, train, index, search, eval, ablate, sweep.

Configuration comes from a JSON file with sections ``paths``, ``encoder``,
``head``, ``train``, ``weights``, and optional ``types``; unknown keys are
rejected. Any scalar key can be overridden through environment variables
named TABENT_<SECTION>_<KEY> (values parsed as JSON when possible). Exit
codes: 0 success, 1 internal error, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict

import numpy as np

from . import evaluation, index as idx, stats, synth, trainer
from .corpus import (
    CorpusError,
    Qrels,
    Vocabulary,
    build_vocab,
    load_corpus,
    load_qrels,
    load_queries,
    load_tables,
    serialize_table,
    tokenize,
    word_tokens,
)
from .encoder import EncoderConfig, EncoderError
from .entities import (
    AnnotationError,
    EntityTypeSet,
    RuleRecognizer,
    align,
    annotate,
    group_by_type,
    load_annotation_file,
)
from .heads import HeadError, InteractionWeights, SparseRepresentation
from .model import HeadConfig, ItemPreparer, RetrievalModel
from .trainer import TrainConfig, TrainerError

ENV_PREFIX = "TABENT_"

_CONFIG_SECTIONS = ("paths", "encoder", "head", "train", "weights", "types")
_PATH_KEYS = ("tables", "queries", "qrels", "annotations", "gazetteer",
              "eval_queries", "eval_qrels")


class ConfigError(ValueError):
    pass


def _apply_env_overrides(config: dict) -> None:
    for name, raw in os.environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        rest = name[len(ENV_PREFIX):].lower()
        section, _, key = rest.partition("_")
        if section not in _CONFIG_SECTIONS or not key:
            continue
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        config.setdefault(section, {})[key] = value


def load_config(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            config = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    unknown = set(config) - set(_CONFIG_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config section(s): {sorted(unknown)}")
    _apply_env_overrides(config)
    paths = config.get("paths", {})
    bad = set(paths) - set(_PATH_KEYS)
    if bad:
        raise ConfigError(f"unknown paths key(s): {sorted(bad)}")
    for key in ("tables", "queries", "qrels"):
        if key not in paths:
            raise ConfigError(f"paths.{key} is required")
    for key, value in paths.items():
        if value is not None and not os.path.exists(value):
            raise ConfigError(f"paths.{key}: no such file {value!r}")
    return config


def _build_dataclass(cls, blob: dict, what: str):
    valid = {f for f in cls.__dataclass_fields__}
    unknown = set(blob) - valid
    if unknown:
        raise ConfigError(f"unknown {what} key(s): {sorted(unknown)}")
    try:
        return cls(**blob)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {what} config: {exc}") from exc


def _train_config(config: dict) -> TrainConfig:
    blob = dict(config.get("train", {}))
    weights = _build_dataclass(InteractionWeights, config.get("weights", {}), "weights")
    blob["weights"] = weights
    return _build_dataclass(TrainConfig, blob, "train")


def _load_gazetteer(path: str | None) -> dict[str, str]:
    if path is None:
        return {}
    with open(path, encoding="utf-8") as fh:
        blob = json.load(fh)
    if not isinstance(blob, dict):
        raise ConfigError("gazetteer must be a JSON object of phrase -> type")
    return {str(k): str(v) for k, v in blob.items()}


def _make_preparer(vocab: Vocabulary, type_set: EntityTypeSet, max_len: int,
                   annotations_path: str | None, gazetteer_path: str | None) -> ItemPreparer:
    sidecar = None
    if annotations_path is not None:
        sidecar = load_annotation_file(annotations_path, type_set)
    recognizer = RuleRecognizer(type_set, _load_gazetteer(gazetteer_path))
    return ItemPreparer(vocab, type_set, max_len, recognizer, sidecar)


def _emit(lines: list[str]) -> None:
    for line in lines:
        print(line)


def _emit_table(headers: list[str], rows: list[list[str]]) -> None:
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h)
              for i, h in enumerate(headers)]
    print("  ".join(h.ljust(w) for h, w in zip(headers, widths)))
    for row in rows:
        print("  ".join(c.ljust(w) for c, w in zip(row, widths)))


# -- commands ---------------------------------------------------------------


def cmd_stats(args: argparse.Namespace) -> int:
    tables, queries, qrels = load_corpus(args.tables, args.queries, args.qrels)
    type_set = EntityTypeSet()
    recognizer = RuleRecognizer(type_set, _load_gazetteer(args.gazetteer))
    sidecar = load_annotation_file(args.annotations, type_set) if args.annotations else None
    vocab = build_vocab(
        [serialize_table(t) for t in tables] + [q.text for q in queries])

    def annotation_for(kind: str, owner_id: str, text: str):
        seq = tokenize(text, vocab)
        if sidecar is not None:
            return group_by_type(align(sidecar.get((kind, owner_id), []), seq), len(type_set))
        return annotate(text, seq, recognizer)

    table_texts = {t.id: serialize_table(t) for t in tables}
    query_anns = {q.id: annotation_for("query", q.id, q.text) for q in queries}
    table_anns = {t.id: annotation_for("table", t.id, table_texts[t.id]) for t in tables}

    q_cov = stats.coverage_stats([q.text for q in queries],
                                 [query_anns[q.id] for q in queries])
    t_cov = stats.coverage_stats(list(table_texts.values()),
                                 [table_anns[t.id] for t in tables])
    _emit(q_cov.record_lines("query."))
    _emit(t_cov.record_lines("table."))

    all_anns = list(query_anns.values()) + list(table_anns.values())
    try:
        dist = stats.type_distribution(all_anns, len(type_set))
        rows = [[type_set[k], f"{dist[k]:.4f}"] for k in range(len(type_set))]
        print()
        _emit_table(["type", "fraction"], rows)
        _emit([f"type_distribution.{type_set[k]}={dist[k]:.6f}" for k in range(len(type_set))])
    except stats.StatsError:
        print("type_distribution=empty")

    table_tokens = {tid: word_tokens(text) for tid, text in table_texts.items()}
    bm25 = idx.Bm25Index(list(table_tokens), list(table_tokens.values()))
    try:
        report = stats.match_rate_study(
            queries, query_anns, table_texts, table_tokens, qrels, bm25,
            sample_size=args.sample_size, seed=args.seed, pool_pairs=args.pool_pairs)
        print()
        _emit(report.record_lines())
    except stats.StatsError as exc:
        print(f"match_rate_study=skipped ({exc})")
    return 0


def _assemble_training(config: dict):
    paths = config["paths"]
    tables, queries, qrels = load_corpus(paths["tables"], paths["queries"], paths["qrels"])
    type_names = config.get("types")
    type_set = EntityTypeSet(type_names) if type_names else EntityTypeSet()
    enc_blob = dict(config.get("encoder", {}))
    head_cfg = _build_dataclass(HeadConfig, config.get("head", {}), "head")
    train_cfg = _train_config(config)
    vocab = build_vocab(
        [serialize_table(t) for t in tables] + [q.text for q in queries])
    enc_blob.setdefault("vocab_size", len(vocab))
    enc_blob.setdefault("type_count", len(type_set))
    enc_cfg = _build_dataclass(EncoderConfig, enc_blob, "encoder")
    preparer = _make_preparer(vocab, type_set, enc_cfg.max_len,
                              paths.get("annotations"), paths.get("gazetteer"))
    return tables, queries, qrels, vocab, type_set, enc_cfg, head_cfg, train_cfg, preparer


def cmd_train(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    (tables, queries, qrels, vocab, type_set, enc_cfg, head_cfg,
     train_cfg, preparer) = _assemble_training(config)
    pairs, skipped = trainer.build_training_pairs(queries, tables, qrels, preparer)
    if skipped:
        print(f"warning: skipped {skipped} queries without a positive table",
              file=sys.stderr)
    model = RetrievalModel(enc_cfg, head_cfg)
    result = trainer.train(model, pairs, train_cfg, skipped)
    extra = {
        "vocab": vocab.tokens(),
        "types": list(type_set.names),
        "train": {**asdict(train_cfg), "weights": asdict(train_cfg.weights)},
        "epochs_done": train_cfg.epochs,
        "seed": train_cfg.seed,
        "skipped_queries": skipped,
    }
    model.save(args.checkpoint, extra)
    if args.trace:
        with open(args.trace, "w", encoding="utf-8") as fh:
            for epoch, loss in enumerate(result.loss_trace):
                fh.write(f"epoch={epoch} mean_loss={loss:.9g}\n")
    for epoch, loss in enumerate(result.loss_trace):
        print(f"epoch={epoch} mean_loss={loss:.9g}")
    print(f"checkpoint={args.checkpoint}")
    return 0


def _load_model(checkpoint: str, annotations: str | None, gazetteer: str | None):
    model, extra = RetrievalModel.load(checkpoint)
    vocab = Vocabulary(extra["vocab"])
    type_set = EntityTypeSet(extra["types"])
    preparer = _make_preparer(vocab, type_set, model.enc_cfg.max_len,
                              annotations, gazetteer)
    return model, extra, preparer


def cmd_index(args: argparse.Namespace) -> int:
    model, _, preparer = _load_model(args.checkpoint, args.annotations, args.gazetteer)
    tables = load_tables(args.tables)
    prepared = [preparer.prepare_table(t) for t in tables]
    use_types = not args.no_type_embedding
    if args.mode == "dense":
        vectors = np.stack([model.dense_vector(p, "t", use_types) for p in prepared])
        np.savez(args.index, ids=np.array([p.id for p in prepared]), matrix=vectors,
                 mode=np.array("dense"))
    else:
        reps = [SparseRepresentation.from_dense(model.sparse_vector(p, "t", use_types))
                for p in prepared]
        inverted = idx.InvertedIndex.build([p.id for p in prepared], reps,
                                           model.enc_cfg.vocab_size)
        inverted.save(args.index)
    print(f"indexed={len(prepared)} mode={args.mode} index={args.index}")
    return 0


def cmd_search(args: argparse.Namespace) -> int:
    model, _, preparer = _load_model(args.checkpoint, args.annotations, args.gazetteer)
    queries = load_queries(args.queries)
    use_types = not args.no_type_embedding
    run: dict[str, list[tuple[str, float]]] = {}
    if args.mode == "dense":
        with np.load(args.index) as data:
            dense = idx.build_dense_index([str(i) for i in data["ids"]], data["matrix"])
        for q in queries:
            vec = model.dense_vector(preparer.prepare_query(q), "q", use_types)
            run[q.id] = idx.search_dense(dense, vec, args.k, model.head_cfg.sim)
    else:
        inverted = idx.InvertedIndex.load(args.index)
        for q in queries:
            rep = SparseRepresentation.from_dense(
                model.sparse_vector(preparer.prepare_query(q), "q", use_types))
            run[q.id] = idx.search_sparse(inverted, rep, args.k)
    idx.write_run(args.run, run, tag=f"tabent-{args.mode}")
    print(f"queries={len(queries)} k={args.k} run={args.run}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    run = idx.read_run(args.run)
    qrels = Qrels(load_qrels(args.qrels))
    report = evaluation.evaluate_run(run, qrels)
    _emit(report.record_lines())
    print()
    _emit_table(["metric", "mean"],
                [[name, f"{value:.4f}"] for name, value in report.means.items()])
    return 0


def _experiment_from_config(config: dict):
    (tables, queries, qrels, vocab, type_set, enc_cfg, head_cfg,
     train_cfg, preparer) = _assemble_training(config)
    paths = config["paths"]
    if paths.get("eval_queries") and paths.get("eval_qrels"):
        eval_queries = load_queries(paths["eval_queries"])
        eval_qrels = Qrels(load_qrels(paths["eval_qrels"]))
    else:
        eval_queries, eval_qrels = queries, qrels
    data = trainer.prepare_experiment(preparer, tables, queries, qrels,
                                      eval_queries, eval_qrels)
    return data, enc_cfg, head_cfg, train_cfg


def cmd_ablate(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    data, enc_cfg, head_cfg, train_cfg = _experiment_from_config(config)
    seeds = [int(s) for s in args.seeds.split(",")]
    rows = trainer.ablate(data, enc_cfg, train_cfg, seeds, head_cfg)
    metric_names = list(rows[0].metrics)
    _emit_table(["variant"] + metric_names,
                [[r.label] + [f"{r.metrics[m]:.4f}" for m in metric_names] for r in rows])
    for r in rows:
        for m in metric_names:
            print(f"ablate.{r.label}.{m}={r.metrics[m]:.6f}")
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    data, enc_cfg, head_cfg, train_cfg = _experiment_from_config(config)
    seeds = [int(s) for s in args.seeds.split(",")]
    grid = [float(v) for v in args.grid.split(",")]
    curve = trainer.sweep_lambda(data, enc_cfg, train_cfg, args.weight, grid, seeds, head_cfg)
    for value, recall in curve:
        print(f"sweep.{args.weight}.{value:g}={recall:.6f}")
    return 0


def cmd_gen_corpus(args: argparse.Namespace) -> int:
    from .corpus import write_corpus

    corpus = synth.generate(synth.SynthConfig(seed=args.seed))
    os.makedirs(args.out, exist_ok=True)
    write_corpus(corpus.tables, corpus.train_queries, corpus.train_qrels,
                 os.path.join(args.out, "tables.jsonl"),
                 os.path.join(args.out, "train_queries.jsonl"),
                 os.path.join(args.out, "train_qrels.txt"))
    with open(os.path.join(args.out, "eval_queries.jsonl"), "w", encoding="utf-8") as fh:
        for q in corpus.eval_queries:
            fh.write(json.dumps({"id": q.id, "text": q.text}) + "\n")
    with open(os.path.join(args.out, "eval_qrels.txt"), "w", encoding="utf-8") as fh:
        for qid, tid, rel in corpus.eval_qrels:
            fh.write(f"{qid} {tid} {rel}\n")
    with open(os.path.join(args.out, "gazetteer.json"), "w", encoding="utf-8") as fh:
        json.dump(corpus.gazetteer, fh, indent=0)
    print(f"corpus={args.out} tables={len(corpus.tables)} "
          f"train_queries={len(corpus.train_queries)} eval_queries={len(corpus.eval_queries)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tabent",
        description="Entity-enhanced table retrieval pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stats", help="entity coverage, type distribution, match rates")
    p.add_argument("--tables", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--annotations")
    p.add_argument("--gazetteer")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sample-size", type=int, default=300)
    p.add_argument("--pool-pairs", action="store_true")
    p.set_defaults(fn=cmd_stats)

    p = sub.add_parser("train", help="contrastive training run")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--trace")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("index", help="encode tables into a search index")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--tables", required=True)
    p.add_argument("--annotations")
    p.add_argument("--gazetteer")
    p.add_argument("--mode", choices=("dense", "sparse"), default="dense")
    p.add_argument("--index", required=True)
    p.add_argument("--no-type-embedding", action="store_true")
    p.set_defaults(fn=cmd_index)

    p = sub.add_parser("search", help="top-k retrieval into a TREC-style run file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--annotations")
    p.add_argument("--gazetteer")
    p.add_argument("--mode", choices=("dense", "sparse"), default="dense")
    p.add_argument("--k", type=int, default=50)
    p.add_argument("--run", required=True)
    p.add_argument("--no-type-embedding", action="store_true")
    p.set_defaults(fn=cmd_search)

    p = sub.add_parser("eval", help="score a run file against qrels")
    p.add_argument("--run", required=True)
    p.add_argument("--qrels", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="component and inference-pattern ablation")
    p.add_argument("--config", required=True)
    p.add_argument("--seeds", default="0,1,2")
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("sweep", help="entity-weight sweep curve")
    p.add_argument("--config", required=True)
    p.add_argument("--weight", required=True,
                   choices=("lambda_q_e", "lambda_t_e", "lambda_sps_e"))
    p.add_argument("--grid", required=True)
    p.add_argument("--seeds", default="0")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("gen-corpus", help="write a synthetic benchmark corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(fn=cmd_gen_corpus)

    return parser


_USAGE_ERRORS = (ConfigError, CorpusError, AnnotationError, TrainerError,
                 HeadError, EncoderError, FileNotFoundError)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except _USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
