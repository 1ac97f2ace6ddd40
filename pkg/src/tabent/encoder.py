"""A small trainable transformer encoder with exact analytic gradients.

Everything runs in float64 on a single sequence at a time. The input
embedding mixes a per-position entity-type embedding into the token and
position embeddings through a sigmoid gate; untyped positions carry an
exactly-zero type vector, so their embedding is untouched. Each encoder
layer is multi-head self-attention and a position-wise feed-forward block,
both with residual connection followed by layer normalization.

Forward passes record a tape of intermediates; ``backward`` replays it to
produce parameter gradients that are checked against central finite
differences in the test suite.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable

import numpy as np

CHECKPOINT_VERSION = 1
_LN_EPS = 1e-12


class EncoderError(ValueError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    hidden_dim: int = 64
    num_layers: int = 2
    num_heads: int = 4
    max_len: int = 256
    type_count: int = 10
    seed: int = 0
    ffn_dim: int | None = None

    def __post_init__(self) -> None:
        for name in ("vocab_size", "hidden_dim", "num_heads", "max_len", "type_count"):
            if getattr(self, name) <= 0:
                raise EncoderError(f"{name} must be positive")
        if self.num_layers < 0:
            raise EncoderError("num_layers must be >= 0")
        if self.hidden_dim % self.num_heads != 0:
            raise EncoderError("hidden_dim must be divisible by num_heads")

    @property
    def ffn(self) -> int:
        return self.ffn_dim if self.ffn_dim is not None else 4 * self.hidden_dim


def init_params(cfg: EncoderConfig, rng: np.random.Generator | None = None,
                prefix: str = "") -> dict[str, np.ndarray]:
    """Initialize encoder parameters as a named float64 tensor map.

    Embedding tables are N(0, 0.02^2); the gate projection starts at zero so
    the gate opens at 0.5 and training begins from a neutral mix.
    """
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    h, ff = cfg.hidden_dim, cfg.ffn
    p: dict[str, np.ndarray] = {}

    def normal(*shape: int) -> np.ndarray:
        return rng.normal(0.0, 0.02, size=shape)

    p[prefix + "tok_emb"] = normal(cfg.vocab_size, h)
    p[prefix + "pos_emb"] = normal(cfg.max_len, h)
    p[prefix + "type_emb"] = normal(cfg.type_count, h)
    p[prefix + "gate_w"] = np.zeros((2 * h, h))
    p[prefix + "gate_b"] = np.zeros(h)
    for i in range(cfg.num_layers):
        lp = f"{prefix}layers.{i}."
        for name in ("wq", "wk", "wv", "wo"):
            p[lp + f"attn.{name}"] = normal(h, h)
        # no key bias: softmax scores are invariant to a constant key shift,
        # so its gradient would be identically zero
        for name in ("bq", "bv", "bo"):
            p[lp + f"attn.{name}"] = np.zeros(h)
        p[lp + "ln1.g"] = np.ones(h)
        p[lp + "ln1.b"] = np.zeros(h)
        p[lp + "ffn.w1"] = normal(h, ff)
        p[lp + "ffn.b1"] = np.zeros(ff)
        p[lp + "ffn.w2"] = normal(ff, h)
        p[lp + "ffn.b2"] = np.zeros(h)
        p[lp + "ln2.g"] = np.ones(h)
        p[lp + "ln2.b"] = np.zeros(h)
    return p


class GradientTape:
    """Per-parameter gradient buffers, shape-matched and zeroed on creation."""

    def __init__(self, params: dict[str, np.ndarray]):
        self.buffers: dict[str, np.ndarray] = {k: np.zeros_like(v) for k, v in params.items()}

    def add(self, name: str, grad: np.ndarray) -> None:
        self.buffers[name] += grad

    def zero_(self) -> None:
        for buf in self.buffers.values():
            buf[...] = 0.0

    def __getitem__(self, name: str) -> np.ndarray:
        return self.buffers[name]

    def __contains__(self, name: str) -> bool:
        return name in self.buffers


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softmax_rows(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _layer_norm(x: np.ndarray, g: np.ndarray, b: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = (x - mu) * inv_std
    return g * xhat + b, (xhat, inv_std, g)


def _layer_norm_backward(dy: np.ndarray, cache) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    xhat, inv_std, g = cache
    dg = (dy * xhat).sum(axis=0)
    db = dy.sum(axis=0)
    dxhat = dy * g
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = inv_std * (dxhat - m1 - xhat * m2)
    return dx, dg, db


def embed_input(params: dict[str, np.ndarray], cfg: EncoderConfig,
                token_ids: np.ndarray, type_ids: np.ndarray | None = None,
                prefix: str = "") -> tuple[np.ndarray, np.ndarray]:
    """Gated entity-type embedding of one sequence.

    Returns (E_all, Gate). ``type_ids`` holds a type index per position with
    -1 for untyped positions, which receive the zero type vector so the
    gated term vanishes exactly there.
    """
    out, gate, _ = _embed_forward(params, cfg, token_ids, type_ids, prefix)
    return out, gate


def _embed_forward(params, cfg, token_ids, type_ids, prefix):
    token_ids = np.asarray(token_ids, dtype=np.intp)
    L = len(token_ids)
    if L > cfg.max_len:
        raise EncoderError(f"sequence length {L} exceeds max_len {cfg.max_len}")
    if token_ids.size and token_ids.max() >= cfg.vocab_size:
        raise EncoderError("token id out of vocabulary range")
    if type_ids is None:
        type_ids = np.full(L, -1, dtype=np.intp)
    else:
        type_ids = np.asarray(type_ids, dtype=np.intp)
        if type_ids.size and type_ids.max() >= cfg.type_count:
            raise EncoderError(
                f"type id {int(type_ids.max())} out of range for {cfg.type_count} types"
            )
    h = cfg.hidden_dim
    e_in = params[prefix + "tok_emb"][token_ids] + params[prefix + "pos_emb"][:L]
    e_en = np.zeros((L, h))
    typed = type_ids >= 0
    if typed.any():
        e_en[typed] = params[prefix + "type_emb"][type_ids[typed]]
    z = np.concatenate([e_in, e_en], axis=1) @ params[prefix + "gate_w"] + params[prefix + "gate_b"]
    gate = _sigmoid(z)
    e_all = e_in + gate * e_en
    cache = {"token_ids": token_ids, "type_ids": type_ids, "typed": typed,
             "e_in": e_in, "e_en": e_en, "gate": gate}
    return e_all, gate, cache


def forward(params: dict[str, np.ndarray], cfg: EncoderConfig,
            token_ids: np.ndarray, type_ids: np.ndarray | None = None,
            pad_mask: np.ndarray | None = None, prefix: str = "") -> tuple[np.ndarray, dict]:
    """Full encoder pass; returns hidden states (L, h) and the tape."""
    e_all, _, emb_cache = _embed_forward(params, cfg, token_ids, type_ids, prefix)
    hidden, layer_caches = _encode_from(params, cfg, e_all, pad_mask, prefix)
    tape = {"emb": emb_cache, "layers": layer_caches, "pad_mask": pad_mask, "prefix": prefix}
    return hidden, tape


def encode(params: dict[str, np.ndarray], cfg: EncoderConfig, embedded: np.ndarray,
           pad_mask: np.ndarray | None = None, prefix: str = "") -> np.ndarray:
    """Encoder stack alone, starting from already-embedded inputs."""
    if embedded.shape[0] > cfg.max_len:
        raise EncoderError(f"sequence length {embedded.shape[0]} exceeds max_len {cfg.max_len}")
    hidden, _ = _encode_from(params, cfg, embedded, pad_mask, prefix)
    return hidden


def _encode_from(params, cfg, x, pad_mask, prefix):
    h, nh = cfg.hidden_dim, cfg.num_heads
    dk = h // nh
    scale = 1.0 / np.sqrt(dk)
    caches = []
    for i in range(cfg.num_layers):
        lp = f"{prefix}layers.{i}."
        L = x.shape[0]
        q = x @ params[lp + "attn.wq"] + params[lp + "attn.bq"]
        k = x @ params[lp + "attn.wk"]
        v = x @ params[lp + "attn.wv"] + params[lp + "attn.bv"]
        qh = q.reshape(L, nh, dk).transpose(1, 0, 2)
        kh = k.reshape(L, nh, dk).transpose(1, 0, 2)
        vh = v.reshape(L, nh, dk).transpose(1, 0, 2)
        scores = (qh @ kh.transpose(0, 2, 1)) * scale
        if pad_mask is not None:
            scores = scores - np.where(pad_mask, 1e30, 0.0)[None, None, :]
        probs = _softmax_rows(scores)
        ctx = probs @ vh
        concat = ctx.transpose(1, 0, 2).reshape(L, h)
        attn_out = concat @ params[lp + "attn.wo"] + params[lp + "attn.bo"]
        r1 = x + attn_out
        x1, ln1_cache = _layer_norm(r1, params[lp + "ln1.g"], params[lp + "ln1.b"])
        f1 = x1 @ params[lp + "ffn.w1"] + params[lp + "ffn.b1"]
        a1 = np.maximum(f1, 0.0)
        f2 = a1 @ params[lp + "ffn.w2"] + params[lp + "ffn.b2"]
        r2 = x1 + f2
        x2, ln2_cache = _layer_norm(r2, params[lp + "ln2.g"], params[lp + "ln2.b"])
        caches.append({
            "x": x, "qh": qh, "kh": kh, "vh": vh, "probs": probs, "concat": concat,
            "ln1": ln1_cache, "x1": x1, "f1": f1, "a1": a1, "ln2": ln2_cache,
        })
        x = x2
    return x, caches


def backward(params: dict[str, np.ndarray], cfg: EncoderConfig, tape: dict,
             d_hidden: np.ndarray, grads: GradientTape) -> None:
    """Accumulate exact gradients for one recorded forward pass.

    ``d_hidden`` is the loss gradient on the encoder output rows.
    """
    if not tape or "emb" not in tape:
        raise EncoderError("backward called without a recorded forward pass")
    prefix = tape["prefix"]
    h, nh = cfg.hidden_dim, cfg.num_heads
    dk = h // nh
    scale = 1.0 / np.sqrt(dk)
    dx = np.array(d_hidden, dtype=np.float64)
    for i in reversed(range(cfg.num_layers)):
        lp = f"{prefix}layers.{i}."
        c = tape["layers"][i]
        L = c["x"].shape[0]

        dr2, dg2, db2 = _layer_norm_backward(dx, c["ln2"])
        grads.add(lp + "ln2.g", dg2)
        grads.add(lp + "ln2.b", db2)
        dx1 = dr2.copy()
        df2 = dr2
        grads.add(lp + "ffn.w2", c["a1"].T @ df2)
        grads.add(lp + "ffn.b2", df2.sum(axis=0))
        da1 = df2 @ params[lp + "ffn.w2"].T
        df1 = da1 * (c["f1"] > 0)
        grads.add(lp + "ffn.w1", c["x1"].T @ df1)
        grads.add(lp + "ffn.b1", df1.sum(axis=0))
        dx1 += df1 @ params[lp + "ffn.w1"].T

        dr1, dg1, db1 = _layer_norm_backward(dx1, c["ln1"])
        grads.add(lp + "ln1.g", dg1)
        grads.add(lp + "ln1.b", db1)
        dx = dr1.copy()
        dattn = dr1
        grads.add(lp + "attn.wo", c["concat"].T @ dattn)
        grads.add(lp + "attn.bo", dattn.sum(axis=0))
        dconcat = dattn @ params[lp + "attn.wo"].T
        dctx = dconcat.reshape(L, nh, dk).transpose(1, 0, 2)
        dprobs = dctx @ c["vh"].transpose(0, 2, 1)
        dvh = c["probs"].transpose(0, 2, 1) @ dctx
        dscores = c["probs"] * (dprobs - (dprobs * c["probs"]).sum(axis=-1, keepdims=True))
        dqh = (dscores @ c["kh"]) * scale
        dkh = (dscores.transpose(0, 2, 1) @ c["qh"]) * scale
        dq = dqh.transpose(1, 0, 2).reshape(L, h)
        dk_ = dkh.transpose(1, 0, 2).reshape(L, h)
        dv = dvh.transpose(1, 0, 2).reshape(L, h)
        grads.add(lp + "attn.wq", c["x"].T @ dq)
        grads.add(lp + "attn.bq", dq.sum(axis=0))
        grads.add(lp + "attn.wk", c["x"].T @ dk_)
        grads.add(lp + "attn.wv", c["x"].T @ dv)
        grads.add(lp + "attn.bv", dv.sum(axis=0))
        dx += dq @ params[lp + "attn.wq"].T
        dx += dk_ @ params[lp + "attn.wk"].T
        dx += dv @ params[lp + "attn.wv"].T

    _embed_backward(params, cfg, tape["emb"], dx, grads, prefix)


def _embed_backward(params, cfg, cache, d_e_all, grads, prefix):
    h = cfg.hidden_dim
    e_in, e_en, gate = cache["e_in"], cache["e_en"], cache["gate"]
    L = e_in.shape[0]
    d_e_in = d_e_all.copy()
    dgate = d_e_all * e_en
    dz = dgate * gate * (1.0 - gate)
    wg = params[prefix + "gate_w"]
    d_e_in += dz @ wg[:h].T
    d_e_en = d_e_all * gate + dz @ wg[h:].T
    grads.add(prefix + "gate_w", np.concatenate([e_in, e_en], axis=1).T @ dz)
    grads.add(prefix + "gate_b", dz.sum(axis=0))
    np.add.at(grads[prefix + "tok_emb"], cache["token_ids"], d_e_in)
    grads[prefix + "pos_emb"][:L] += d_e_in
    typed = cache["typed"]
    if typed.any():
        np.add.at(grads[prefix + "type_emb"], cache["type_ids"][typed], d_e_en[typed])


def grad_check(scalar_fn: Callable[[dict[str, np.ndarray]], tuple[float, dict[str, np.ndarray]]],
               params: dict[str, np.ndarray], eps: float = 1e-5,
               num_coords: int = 200, seed: int = 0) -> float:
    """Compare analytic gradients against central finite differences.

    ``scalar_fn(params)`` must return (loss, gradient map). A random sample
    of at least ``num_coords`` coordinates across all tensors is perturbed
    by +-eps; returns the maximum relative error
    |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
    """
    loss, grads = scalar_fn(params)
    if not np.isfinite(loss):
        raise EncoderError("scalar_fn returned a non-finite value")
    names = sorted(params)
    sizes = np.array([params[n].size for n in names])
    total = int(sizes.sum())
    rng = np.random.default_rng(seed)
    picks = rng.choice(total, size=min(num_coords, total), replace=False)
    bounds = np.cumsum(sizes)
    max_err = 0.0
    for flat_idx in picks:
        which = int(np.searchsorted(bounds, flat_idx, side="right"))
        name = names[which]
        local = int(flat_idx - (bounds[which - 1] if which else 0))
        arr = params[name]
        orig = arr.flat[local]
        arr.flat[local] = orig + eps
        up, _ = scalar_fn(params)
        arr.flat[local] = orig - eps
        down, _ = scalar_fn(params)
        arr.flat[local] = orig
        numeric = (up - down) / (2.0 * eps)
        if not np.isfinite(numeric):
            raise EncoderError("finite-difference probe produced a non-finite value")
        analytic = grads[name].flat[local] if name in grads else 0.0
        err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
        max_err = max(max_err, err)
    return max_err


def save_checkpoint(path: str, config_blob: dict, params: dict[str, np.ndarray],
                    extra: dict | None = None) -> None:
    """Write a versioned container with config JSON and named tensors."""
    meta = {"version": CHECKPOINT_VERSION, "config": config_blob, "extra": extra or {}}
    arrays = {f"param/{k}": v for k, v in params.items()}
    np.savez(path, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)


def load_checkpoint(path: str) -> tuple[dict, dict[str, np.ndarray], dict]:
    """Read a checkpoint; returns (config blob, params, extra metadata)."""
    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise EncoderError(f"unsupported checkpoint version {meta.get('version')!r}")
        params = {
            k[len("param/"):]: np.array(data[k], dtype=np.float64)
            for k in data.files if k.startswith("param/")
        }
    return meta["config"], params, meta.get("extra", {})
