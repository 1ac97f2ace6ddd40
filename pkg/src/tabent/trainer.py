"""Contrastive training with in-batch negatives, plus ablations and sweeps.

Each batch pairs B queries with their positive tables; the other queries'
positives serve as negatives, giving a B x B score matrix whose softmax
cross-entropy along rows is the loss. The training score mixes the plain
retriever score with entity interaction terms; sparse mode additionally
pays a FLOPS penalty on the pooled batch representations. Everything is
float64 and bitwise deterministic for a fixed seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import encoder as enc
from . import heads
from .corpus import Query, Qrels, Table
from .heads import InteractionWeights, TypePooled
from .model import ItemPreparer, PreparedItem, RetrievalModel


class TrainerError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 8
    epochs: int = 10
    learning_rate: float = 1e-3
    seed: int = 0
    mode: str = "dense"
    weights: InteractionWeights = field(default_factory=InteractionWeights)
    use_type_embedding_query: bool = True
    use_type_embedding_table: bool = True
    use_score_q_e: bool = True
    use_score_t_e: bool = True
    use_score_sps_e: bool = True
    flops_warmup_steps: int = 0

    def __post_init__(self) -> None:
        if self.batch_size < 2:
            raise TrainerError("batch_size must be >= 2 (in-batch negatives need a negative)")
        if self.learning_rate <= 0:
            raise TrainerError("learning_rate must be positive")
        if self.mode not in ("dense", "sparse"):
            raise TrainerError(f"mode must be dense|sparse, got {self.mode!r}")
        if self.epochs < 0 or self.flops_warmup_steps < 0:
            raise TrainerError("epochs and flops_warmup_steps must be >= 0")

    def effective_weights(self) -> InteractionWeights:
        """Interaction weights with disabled components zeroed out."""
        w = self.weights
        return InteractionWeights(
            lambda_q_e=w.lambda_q_e if self.use_score_q_e else 0.0,
            lambda_t_e=w.lambda_t_e if self.use_score_t_e else 0.0,
            lambda_sps_e=w.lambda_sps_e if self.use_score_sps_e else 0.0,
            lambda_flops=w.lambda_flops,
        )


def info_nce(scores: np.ndarray) -> float:
    """Mean over rows of -log softmax(row)[diagonal], max-shifted."""
    loss, _ = info_nce_with_grad(scores)
    return loss


def info_nce_with_grad(scores: np.ndarray) -> tuple[float, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise TrainerError(f"scores must be a square matrix, got shape {s.shape}")
    if s.shape[0] < 2:
        raise TrainerError("batch must contain at least 2 items")
    if not np.all(np.isfinite(s)):
        raise TrainerError("non-finite scores")
    b = s.shape[0]
    shifted = s - s.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(log_z - np.diag(shifted)))
    probs = np.exp(shifted - log_z[:, None])
    grad = (probs - np.eye(b)) / b
    return loss, grad


class AdamState:
    """First/second moment buffers for the Adam optimizer."""

    def __init__(self, params: dict[str, np.ndarray]):
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0


def optimizer_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
                   state: AdamState, lr: float,
                   betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8) -> None:
    """One Adam update, in place."""
    b1, b2 = betas
    state.t += 1
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise TrainerError(f"gradient shape mismatch for {name!r}: {g.shape} vs {p.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


@dataclass
class _EncodedSide:
    items: list[PreparedItem]
    hiddens: list[np.ndarray]
    tapes: list[dict]


def _encode_side(model: RetrievalModel, items: list[PreparedItem], side: str,
                 use_type_emb: bool) -> _EncodedSide:
    hiddens, tapes = [], []
    for item in items:
        h, tape = model.encode(item, side, use_type_embedding=use_type_emb)
        hiddens.append(h)
        tapes.append(tape)
    return _EncodedSide(items, hiddens, tapes)


def _flops_weight(cfg: TrainConfig, step: int) -> float:
    lam = cfg.weights.lambda_flops
    if cfg.flops_warmup_steps > 0 and step < cfg.flops_warmup_steps:
        return lam * ((step + 1) / cfg.flops_warmup_steps) ** 2
    return lam


def batch_loss_and_grads(model: RetrievalModel, batch: list[tuple[PreparedItem, PreparedItem]],
                         cfg: TrainConfig, step: int = 0) -> tuple[float, enc.GradientTape]:
    """Forward and backward for one batch; returns (loss, gradient tape)."""
    if model.head_cfg.sim != "dot":
        raise TrainerError("training supports the inner-product similarity only")
    grads = enc.GradientTape(model.params)
    q_side = _encode_side(model, [q for q, _ in batch], "q", cfg.use_type_embedding_query)
    t_side = _encode_side(model, [t for _, t in batch], "t", cfg.use_type_embedding_table)
    if cfg.mode == "dense":
        loss = _dense_batch(model, q_side, t_side, cfg, grads)
    else:
        loss = _sparse_batch(model, q_side, t_side, cfg, grads, step)
    return loss, grads


def _dense_batch(model, q_side, t_side, cfg, grads) -> float:
    w = cfg.effective_weights()
    b = len(q_side.items)
    qd = np.stack([h[0] for h in q_side.hiddens])
    td = np.stack([h[0] for h in t_side.hiddens])
    scores = qd @ td.T
    need_q_pool = w.lambda_t_e != 0.0
    need_t_pool = w.lambda_q_e != 0.0
    q_pools = [heads.pool_entity(h, it.ann) for h, it in zip(q_side.hiddens, q_side.items)] \
        if need_q_pool else None
    t_pools = [heads.pool_entity(h, it.ann) for h, it in zip(t_side.hiddens, t_side.items)] \
        if need_t_pool else None
    if need_t_pool:
        t_sums = np.stack([p.present_sum() for p in t_pools])
        scores = scores + w.lambda_q_e * (qd @ t_sums.T)
    if need_q_pool:
        q_sums = np.stack([p.present_sum() for p in q_pools])
        scores = scores + w.lambda_t_e * (q_sums @ td.T)

    loss, ds = info_nce_with_grad(scores)

    dqd = ds @ td
    dtd = ds.T @ qd
    if need_t_pool:
        dqd += w.lambda_q_e * (ds @ t_sums)
        dt_sums = w.lambda_q_e * (ds.T @ qd)
    if need_q_pool:
        dtd += w.lambda_t_e * (ds.T @ q_sums)
        dq_sums = w.lambda_t_e * (ds @ td)

    for i in range(b):
        dh = np.zeros_like(q_side.hiddens[i])
        dh[0] += dqd[i]
        if need_q_pool:
            heads.pool_entity_backward(
                np.tile(dq_sums[i], (q_side.items[i].ann.type_count, 1)),
                q_side.items[i].ann, dh)
        enc.backward(model.params, model.enc_cfg, q_side.tapes[i], dh, grads)
    for j in range(b):
        dh = np.zeros_like(t_side.hiddens[j])
        dh[0] += dtd[j]
        if need_t_pool:
            heads.pool_entity_backward(
                np.tile(dt_sums[j], (t_side.items[j].ann.type_count, 1)),
                t_side.items[j].ann, dh)
        enc.backward(model.params, model.enc_cfg, t_side.tapes[j], dh, grads)
    return loss


def _sparse_batch(model, q_side, t_side, cfg, grads, step) -> float:
    w = cfg.effective_weights()
    b = len(q_side.items)
    pooling = model.head_cfg.sparse_pooling
    relu_pool = model.head_cfg.entity_pool_relu
    proj_w = model.params["sparse.proj_w"]

    q_logits = [model.sparse_logit_rows(h) for h in q_side.hiddens]
    t_logits = [model.sparse_logit_rows(h) for h in t_side.hiddens]
    qv = np.stack([heads.sparse_rep_vector(s, pooling) for s in q_logits])
    tv = np.stack([heads.sparse_rep_vector(s, pooling) for s in t_logits])
    scores = qv @ tv.T

    need_pool = w.lambda_sps_e != 0.0
    if need_pool:
        q_pools = [model.entity_pooled(s, it.ann, relu_pool)
                   for s, it in zip(q_logits, q_side.items)]
        t_pools = [model.entity_pooled(s, it.ann, relu_pool)
                   for s, it in zip(t_logits, t_side.items)]
        qe = np.stack([p.rows for p in q_pools])
        te = np.stack([p.rows for p in t_pools])
        scores = scores + w.lambda_sps_e * np.einsum("ikv,jkv->ij", qe, te)

    loss, ds = info_nce_with_grad(scores)
    dqv = ds @ tv
    dtv = ds.T @ qv

    lam_f = _flops_weight(cfg, step)
    if lam_f > 0.0:
        loss += lam_f * (heads.flops_reg(qv) + heads.flops_reg(tv))
        dqv += lam_f * heads.flops_reg_backward(qv)
        dtv += lam_f * heads.flops_reg_backward(tv)

    if need_pool:
        dqe = w.lambda_sps_e * np.einsum("ij,jkv->ikv", ds, te)
        dte = w.lambda_sps_e * np.einsum("ij,ikv->jkv", ds, qe)

    for side, logits_list, dvecs, dents in (
        (q_side, q_logits, dqv, dqe if need_pool else None),
        (t_side, t_logits, dtv, dte if need_pool else None),
    ):
        for i, (item, logits) in enumerate(zip(side.items, logits_list)):
            d_logits = heads.sparse_rep_backward(dvecs[i], logits, pooling)
            if dents is not None:
                d_src = np.zeros_like(logits)
                heads.pool_entity_backward(dents[i], item.ann, d_src)
                if relu_pool:
                    d_src *= logits > 0
                d_logits += d_src
            grads.add("sparse.proj_w", d_logits.T @ side.hiddens[i])
            grads.add("sparse.proj_b", d_logits.sum(axis=0))
            dh = d_logits @ proj_w
            enc.backward(model.params, model.enc_cfg, side.tapes[i], dh, grads)
    return loss


def build_training_pairs(queries: list[Query], tables: list[Table], qrels: Qrels,
                         preparer: ItemPreparer) -> tuple[list[tuple[PreparedItem, PreparedItem]], int]:
    """Pair each query with its positive table; returns (pairs, skipped count).

    Queries without a positive are skipped; a query with several positives
    keeps the lexicographically first table id.
    """
    table_by_id = {t.id: t for t in tables}
    prepared_tables: dict[str, PreparedItem] = {}
    pairs: list[tuple[PreparedItem, PreparedItem]] = []
    skipped = 0
    for query in queries:
        positives = sorted(qrels.relevant(query.id))
        if not positives:
            skipped += 1
            continue
        tid = positives[0]
        if tid not in prepared_tables:
            prepared_tables[tid] = preparer.prepare_table(table_by_id[tid])
        pairs.append((preparer.prepare_query(query), prepared_tables[tid]))
    return pairs, skipped


@dataclass
class TrainResult:
    loss_trace: list[float]
    skipped_queries: int
    steps: int


def train(model: RetrievalModel, pairs: list[tuple[PreparedItem, PreparedItem]],
          cfg: TrainConfig, skipped_queries: int = 0) -> TrainResult:
    """Seeded-shuffle epochs of Adam on the InfoNCE objective."""
    if not pairs:
        raise TrainerError("no training pairs")
    rng = np.random.default_rng(cfg.seed)
    state = AdamState(model.params)
    trace: list[float] = []
    step = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(len(pairs))
        losses: list[float] = []
        for start in range(0, len(order), cfg.batch_size):
            chunk = order[start:start + cfg.batch_size]
            if len(chunk) < 2:
                continue
            batch = [pairs[i] for i in chunk]
            loss, grads = batch_loss_and_grads(model, batch, cfg, step)
            optimizer_step(model.params, grads.buffers, state, cfg.learning_rate)
            losses.append(loss)
            step += 1
        trace.append(float(np.mean(losses)) if losses else float("nan"))
    return TrainResult(trace, skipped_queries, step)


# -- experiment harness ----------------------------------------------------


@dataclass
class ExperimentData:
    """Everything needed to train and then evaluate on held-out queries."""

    preparer: ItemPreparer
    tables: list[Table]
    train_pairs: list[tuple[PreparedItem, PreparedItem]]
    eval_queries: list[PreparedItem]
    eval_qrels: Qrels
    skipped_queries: int = 0


def prepare_experiment(preparer: ItemPreparer, tables: list[Table],
                       train_queries: list[Query], train_qrels: Qrels,
                       eval_queries: list[Query], eval_qrels: Qrels) -> ExperimentData:
    pairs, skipped = build_training_pairs(train_queries, tables, train_qrels, preparer)
    return ExperimentData(
        preparer=preparer,
        tables=tables,
        train_pairs=pairs,
        eval_queries=[preparer.prepare_query(q) for q in eval_queries],
        eval_qrels=eval_qrels,
        skipped_queries=skipped,
    )


def run_retrieval(model: RetrievalModel, data: ExperimentData, mode: str, k: int = 50,
                  use_type_embedding_query: bool = True,
                  use_type_embedding_table: bool = True) -> dict[str, list[tuple[str, float]]]:
    """Index the tables and rank top-k candidates for every eval query."""
    from . import index as idx

    prepared = [data.preparer.prepare_table(t) for t in data.tables]
    kind = model.head_cfg.sim
    run: dict[str, list[tuple[str, float]]] = {}
    if mode == "dense":
        vectors = np.stack([
            model.dense_vector(p, "t", use_type_embedding_table) for p in prepared
        ])
        dense_index = idx.build_dense_index([p.id for p in prepared], vectors)
        for q in data.eval_queries:
            qv = model.dense_vector(q, "q", use_type_embedding_query)
            run[q.id] = idx.search_dense(dense_index, qv, k, kind)
    else:
        reps = [heads.SparseRepresentation.from_dense(
            model.sparse_vector(p, "t", use_type_embedding_table)) for p in prepared]
        inverted = idx.InvertedIndex.build([p.id for p in prepared], reps,
                                           model.enc_cfg.vocab_size)
        for q in data.eval_queries:
            q_rep = heads.SparseRepresentation.from_dense(
                model.sparse_vector(q, "q", use_type_embedding_query))
            run[q.id] = idx.search_sparse(inverted, q_rep, k)
    return run


def train_and_evaluate(data: ExperimentData, enc_cfg: enc.EncoderConfig,
                       cfg: TrainConfig, head_cfg=None,
                       use_type_embedding_query_infer: bool | None = None,
                       use_type_embedding_table_infer: bool | None = None):
    """Train a fresh model and score it on the eval split."""
    from .evaluation import evaluate_run
    from .model import HeadConfig

    model = RetrievalModel(replace(enc_cfg, seed=cfg.seed), head_cfg or HeadConfig())
    result = train(model, data.train_pairs, cfg, data.skipped_queries)
    uq = cfg.use_type_embedding_query if use_type_embedding_query_infer is None \
        else use_type_embedding_query_infer
    ut = cfg.use_type_embedding_table if use_type_embedding_table_infer is None \
        else use_type_embedding_table_infer
    run = run_retrieval(model, data, cfg.mode, 50, uq, ut)
    report = evaluate_run(run, data.eval_qrels)
    return model, result, report


def _variant_configs(base: TrainConfig) -> list[tuple[str, TrainConfig]]:
    if base.mode == "dense":
        return [
            ("full", base),
            ("w/o score_q_e", replace(base, use_score_q_e=False)),
            ("w/o score_t_e", replace(base, use_score_t_e=False)),
            ("w/o type embeddings", replace(base, use_type_embedding_query=False,
                                            use_type_embedding_table=False)),
            ("vanilla", replace(base, use_score_q_e=False, use_score_t_e=False,
                                use_type_embedding_query=False,
                                use_type_embedding_table=False)),
        ]
    return [
        ("full", base),
        ("w/o score_sps_e", replace(base, use_score_sps_e=False)),
        ("w/o type embeddings", replace(base, use_type_embedding_query=False,
                                        use_type_embedding_table=False)),
        ("vanilla", replace(base, use_score_sps_e=False,
                            use_type_embedding_query=False,
                            use_type_embedding_table=False)),
    ]


@dataclass
class AblationRow:
    label: str
    metrics: dict[str, float]
    per_seed: dict[str, list[float]]


def ablate(data: ExperimentData, enc_cfg: enc.EncoderConfig, base: TrainConfig,
           seeds: list[int], head_cfg=None) -> list[AblationRow]:
    """Component ablation plus inference-pattern rows for the full model.

    Training variants retrain from scratch with one component removed;
    inference rows reuse the full model but drop type embeddings at encode
    time (queries only, then queries and tables).
    """
    rows: list[AblationRow] = []
    full_models: list[RetrievalModel] = []
    for label, cfg in _variant_configs(base):
        per_seed: dict[str, list[float]] = {}
        for seed in seeds:
            model, _, report = train_and_evaluate(
                data, enc_cfg, replace(cfg, seed=seed), head_cfg)
            if label == "full":
                full_models.append(model)
            for name, value in report.means.items():
                per_seed.setdefault(name, []).append(value)
        rows.append(AblationRow(label, {k: float(np.mean(v)) for k, v in per_seed.items()},
                                per_seed))

    from .evaluation import evaluate_run

    for label, uq, ut in (
        ("full, infer w/o query type emb", False, True),
        ("full, infer w/o type emb (q&t)", False, False),
    ):
        per_seed = {}
        for model in full_models:
            run = run_retrieval(model, data, base.mode, 50, uq, ut)
            report = evaluate_run(run, data.eval_qrels)
            for name, value in report.means.items():
                per_seed.setdefault(name, []).append(value)
        rows.append(AblationRow(label, {k: float(np.mean(v)) for k, v in per_seed.items()},
                                per_seed))
    return rows


_SWEEPABLE = {
    "lambda_q_e": ("dense", "use_score_q_e"),
    "lambda_t_e": ("dense", "use_score_t_e"),
    "lambda_sps_e": ("sparse", "use_score_sps_e"),
}


def sweep_lambda(data: ExperimentData, enc_cfg: enc.EncoderConfig, base: TrainConfig,
                 lambda_name: str, grid: list[float], seeds: list[int],
                 head_cfg=None, metric: str = "recall@1") -> list[tuple[float, float]]:
    """Recall curve for one interaction weight, others held at zero.

    Each grid point trains the vanilla retriever plus the single swept
    interaction term, so the zero point reproduces the vanilla run.
    """
    if lambda_name not in _SWEEPABLE:
        raise TrainerError(f"unknown sweep weight {lambda_name!r}")
    mode, flag = _SWEEPABLE[lambda_name]
    curve: list[tuple[float, float]] = []
    for value in grid:
        weights = InteractionWeights(
            lambda_q_e=value if lambda_name == "lambda_q_e" else 0.0,
            lambda_t_e=value if lambda_name == "lambda_t_e" else 0.0,
            lambda_sps_e=value if lambda_name == "lambda_sps_e" else 0.0,
            lambda_flops=base.weights.lambda_flops,
        )
        cfg = replace(
            base, mode=mode, weights=weights,
            use_type_embedding_query=False, use_type_embedding_table=False,
            use_score_q_e=(lambda_name == "lambda_q_e"),
            use_score_t_e=(lambda_name == "lambda_t_e"),
            use_score_sps_e=(lambda_name == "lambda_sps_e"),
        )
        values = []
        for seed in seeds:
            _, _, report = train_and_evaluate(data, enc_cfg, replace(cfg, seed=seed), head_cfg)
            values.append(report.means[metric])
        curve.append((value, float(np.mean(values))))
    return curve
