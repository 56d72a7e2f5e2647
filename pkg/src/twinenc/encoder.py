"""Twin encoder internals: embedding layer, transformer stack, pooling.

Everything is plain numpy with explicit backward passes. Training runs in
float64 (the finite-difference tests depend on it); inference also works in
float32 by passing a parameter dict cast with :func:`cast_params`.

Parameters live in a flat ``dict[str, np.ndarray]`` keyed by dotted names
under an encoder prefix (``encoder`` when the two encoders share weights,
``query_encoder`` / ``keyword_encoder`` otherwise). Gradients accumulate
into a dict with the same keys, so a shared encoder automatically sums the
contributions of both sides.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .config import ModelConfig
from .text import TokenSequence

# plain Python floats: they must not promote float32 activations to float64
_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
_LN_EPS = 1e-12


def gelu(x: np.ndarray) -> np.ndarray:
    """Exact Gaussian-error nonlinearity x * Phi(x)."""
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    phi = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
    return 0.5 * (1.0 + erf(x * _INV_SQRT2)) + x * phi


def sigmoid(x) -> np.ndarray:
    """Numerically stable logistic function."""
    x = np.asarray(x)
    if x.dtype.kind != "f":
        x = x.astype(np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def truncated_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    """Normal(0, std) samples rejected outside +/- 2 std."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2.0 * std
    while np.any(bad):
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2.0 * std
    return out


def masked_softmax(scores: np.ndarray, key_mask: np.ndarray) -> np.ndarray:
    """Softmax over the last axis with masked entries given exactly 0 weight.

    ``key_mask`` broadcasts against the last axis; every row must have at
    least one unmasked entry.
    """
    neg = np.where(key_mask, scores, -np.inf)
    m = neg.max(axis=-1, keepdims=True)
    e = np.exp(neg - m)
    return e / e.sum(axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------

def encoder_prefixes(config: ModelConfig) -> tuple[str, str]:
    """(query_prefix, keyword_prefix); identical when encoders are shared."""
    if config.shared_encoders:
        return "encoder", "encoder"
    return "query_encoder", "keyword_encoder"


def init_encoder_params(
    config: ModelConfig, rng: np.random.Generator, prefix: str
) -> dict[str, np.ndarray]:
    """Fresh encoder parameters under ``prefix``.

    Truncated-normal (std 0.02) for embeddings and projections, zeros for
    biases, ones for layer-norm gains. The pooling scorer starts at zero so
    weighted-average pooling begins as exact mean pooling. The token table
    has one extra row beyond the trigram buckets, reserved for the
    classification token.
    """
    h, f = config.hidden_size, config.ffn_size
    p: dict[str, np.ndarray] = {}
    p[f"{prefix}.tok_emb"] = truncated_normal(rng, (config.vocab_buckets + 1, h))
    p[f"{prefix}.pos_emb"] = truncated_normal(rng, (config.max_len, h))
    for layer in range(config.n_layers):
        lp = f"{prefix}.layers.{layer}"
        for name in ("wq", "wk", "wv", "wo"):
            p[f"{lp}.attn.{name}"] = truncated_normal(rng, (h, h))
        for name in ("bq", "bk", "bv", "bo"):
            p[f"{lp}.attn.{name}"] = np.zeros(h)
        p[f"{lp}.ln1.g"] = np.ones(h)
        p[f"{lp}.ln1.b"] = np.zeros(h)
        p[f"{lp}.ffn.w1"] = truncated_normal(rng, (h, f))
        p[f"{lp}.ffn.b1"] = np.zeros(f)
        p[f"{lp}.ffn.w2"] = truncated_normal(rng, (f, h))
        p[f"{lp}.ffn.b2"] = np.zeros(h)
        p[f"{lp}.ln2.g"] = np.ones(h)
        p[f"{lp}.ln2.b"] = np.zeros(h)
    p[f"{prefix}.pool.w"] = np.zeros(h)
    p[f"{prefix}.pool.b"] = np.zeros(())
    return p


def cast_params(params: dict[str, np.ndarray], dtype) -> dict[str, np.ndarray]:
    return {k: np.asarray(v, dtype=dtype) for k, v in params.items()}


def accumulate(grads: dict[str, np.ndarray], name: str, g: np.ndarray) -> None:
    if name in grads:
        grads[name] = grads[name] + g
    else:
        grads[name] = g


# ---------------------------------------------------------------------------
# Batch packing
# ---------------------------------------------------------------------------

@dataclass
class PackedBatch:
    """Flattened trigram indices for a batch of equal-length sequences.

    ``bucket_ids[i]`` is a trigram bucket belonging to flat slot
    ``slot_ids[i]`` (= example * seq_len + position). Slot order is
    non-decreasing, which lets the embedding sum use segment reduction.
    """

    bucket_ids: np.ndarray
    slot_ids: np.ndarray
    mask: np.ndarray  # (B, T) bool
    n_examples: int
    seq_len: int


def pack_sequences(seqs: list[TokenSequence]) -> PackedBatch:
    if not seqs:
        raise ValueError("cannot pack an empty batch")
    seq_len = seqs[0].length
    buckets: list[int] = []
    slots: list[int] = []
    mask = np.zeros((len(seqs), seq_len), dtype=bool)
    for b, seq in enumerate(seqs):
        if seq.length != seq_len:
            raise ValueError("all sequences in a batch must have equal length")
        mask[b] = seq.mask
        base = b * seq_len
        for t, token in enumerate(seq.tokens):
            for bucket in token:
                buckets.append(bucket)
                slots.append(base + t)
    if not mask.any(axis=1).all():
        raise ValueError("every sequence must contain at least one unmasked token")
    return PackedBatch(
        bucket_ids=np.asarray(buckets, dtype=np.int64),
        slot_ids=np.asarray(slots, dtype=np.int64),
        mask=mask,
        n_examples=len(seqs),
        seq_len=seq_len,
    )


# ---------------------------------------------------------------------------
# Embedding layer
# ---------------------------------------------------------------------------

def embed_forward(params: dict, prefix: str, batch: PackedBatch):
    """Input embeddings: per-token trigram-bucket sum plus position embedding."""
    tok_emb = params[f"{prefix}.tok_emb"]
    pos_emb = params[f"{prefix}.pos_emb"]
    b, t = batch.n_examples, batch.seq_len
    h = tok_emb.shape[1]
    if t > pos_emb.shape[0]:
        raise ValueError(
            f"sequence length {t} exceeds position table size {pos_emb.shape[0]}"
        )
    flat = np.zeros((b * t, h), dtype=tok_emb.dtype)
    if batch.bucket_ids.size:
        gathered = tok_emb[batch.bucket_ids]
        # slot_ids are sorted, so segment sums cover the occupied slots
        starts = np.flatnonzero(np.r_[True, np.diff(batch.slot_ids) != 0])
        sums = np.add.reduceat(gathered, starts, axis=0)
        flat[batch.slot_ids[starts]] = sums
    x = flat.reshape(b, t, h) + pos_emb[None, :t, :]
    return x


def embed_backward(params: dict, prefix: str, batch: PackedBatch, dx: np.ndarray, grads: dict) -> None:
    tok_emb = params[f"{prefix}.tok_emb"]
    b, t = batch.n_examples, batch.seq_len
    accumulate(grads, f"{prefix}.pos_emb", dx.sum(axis=0))
    d_tok = np.zeros_like(tok_emb)
    if batch.bucket_ids.size:
        flat = dx.reshape(b * t, -1)
        np.add.at(d_tok, batch.bucket_ids, flat[batch.slot_ids])
    accumulate(grads, f"{prefix}.tok_emb", d_tok)


# ---------------------------------------------------------------------------
# Transformer layer
# ---------------------------------------------------------------------------

def _linear_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    return x @ w + b


def _linear_backward(x: np.ndarray, w: np.ndarray, dy: np.ndarray, grads: dict, wname: str, bname: str):
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    accumulate(grads, wname, x2.T @ dy2)
    accumulate(grads, bname, dy2.sum(axis=0))
    return dy @ w.T


def _layernorm_forward(x: np.ndarray, g: np.ndarray, b: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = xc * inv_std
    return g * xhat + b, (xhat, inv_std)


def _layernorm_backward(dy: np.ndarray, cache, g: np.ndarray, grads: dict, gname: str, bname: str):
    xhat, inv_std = cache
    accumulate(grads, gname, (dy * xhat).sum(axis=tuple(range(dy.ndim - 1))))
    accumulate(grads, bname, dy.sum(axis=tuple(range(dy.ndim - 1))))
    dxhat = dy * g
    mean1 = dxhat.mean(axis=-1, keepdims=True)
    mean2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    return inv_std * (dxhat - mean1 - xhat * mean2)


def _split_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    b, t, h = x.shape
    return x.reshape(b, t, n_heads, h // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    b, a, t, d = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, a * d)


def _dropout_mask(rng: np.random.Generator, shape, rate: float, dtype) -> np.ndarray:
    keep = (rng.random(shape) >= rate).astype(dtype)
    return keep / (1.0 - rate)


def layer_forward(
    x: np.ndarray,
    mask: np.ndarray,
    params: dict,
    lp: str,
    config: ModelConfig,
    train: bool = False,
    rng: np.random.Generator | None = None,
):
    """One post-norm transformer block: self-attention then feed-forward.

    ``mask`` (B, T) excludes padding slots from attention as keys, so masked
    content can never reach unmasked outputs. Raises on non-finite input.
    """
    if not np.isfinite(x).all():
        raise ValueError("non-finite values in transformer layer input")
    rate = config.dropout if train else 0.0
    if rate > 0.0 and rng is None:
        raise ValueError("dropout requires an rng in training mode")
    a = config.n_heads
    scale = 1.0 / math.sqrt(config.head_dim)

    q = _linear_forward(x, params[f"{lp}.attn.wq"], params[f"{lp}.attn.bq"])
    k = _linear_forward(x, params[f"{lp}.attn.wk"], params[f"{lp}.attn.bk"])
    v = _linear_forward(x, params[f"{lp}.attn.wv"], params[f"{lp}.attn.bv"])
    qh, kh, vh = _split_heads(q, a), _split_heads(k, a), _split_heads(v, a)

    scores = (qh @ kh.transpose(0, 1, 3, 2)) * scale
    probs = masked_softmax(scores, mask[:, None, None, :])
    if rate > 0.0:
        attn_keep = _dropout_mask(rng, probs.shape, rate, x.dtype)
        probs_d = probs * attn_keep
    else:
        attn_keep = None
        probs_d = probs

    ctx = _merge_heads(probs_d @ vh)
    attn_out = _linear_forward(ctx, params[f"{lp}.attn.wo"], params[f"{lp}.attn.bo"])
    if rate > 0.0:
        out_keep = _dropout_mask(rng, attn_out.shape, rate, x.dtype)
        attn_out = attn_out * out_keep
    else:
        out_keep = None

    x1, ln1_cache = _layernorm_forward(x + attn_out, params[f"{lp}.ln1.g"], params[f"{lp}.ln1.b"])

    f1 = _linear_forward(x1, params[f"{lp}.ffn.w1"], params[f"{lp}.ffn.b1"])
    g = gelu(f1)
    f2 = _linear_forward(g, params[f"{lp}.ffn.w2"], params[f"{lp}.ffn.b2"])
    if rate > 0.0:
        ffn_keep = _dropout_mask(rng, f2.shape, rate, x.dtype)
        f2 = f2 * ffn_keep
    else:
        ffn_keep = None

    x2, ln2_cache = _layernorm_forward(x1 + f2, params[f"{lp}.ln2.g"], params[f"{lp}.ln2.b"])

    cache = {
        "x": x, "qh": qh, "kh": kh, "vh": vh,
        "probs": probs, "probs_d": probs_d, "attn_keep": attn_keep,
        "ctx": ctx, "out_keep": out_keep,
        "x1": x1, "ln1": ln1_cache, "f1": f1, "g": g, "ffn_keep": ffn_keep,
        "ln2": ln2_cache, "scale": scale,
    }
    return x2, cache


def layer_backward(dx2: np.ndarray, cache: dict, params: dict, lp: str, config: ModelConfig, grads: dict) -> np.ndarray:
    a = config.n_heads
    x, x1 = cache["x"], cache["x1"]

    d_sum2 = _layernorm_backward(dx2, cache["ln2"], params[f"{lp}.ln2.g"], grads, f"{lp}.ln2.g", f"{lp}.ln2.b")
    dx1 = d_sum2.copy()
    df2 = d_sum2
    if cache["ffn_keep"] is not None:
        df2 = df2 * cache["ffn_keep"]
    dg = _linear_backward(cache["g"], params[f"{lp}.ffn.w2"], df2, grads, f"{lp}.ffn.w2", f"{lp}.ffn.b2")
    df1 = dg * gelu_grad(cache["f1"])
    dx1 += _linear_backward(x1, params[f"{lp}.ffn.w1"], df1, grads, f"{lp}.ffn.w1", f"{lp}.ffn.b1")

    d_sum1 = _layernorm_backward(dx1, cache["ln1"], params[f"{lp}.ln1.g"], grads, f"{lp}.ln1.g", f"{lp}.ln1.b")
    dx = d_sum1.copy()
    d_attn_out = d_sum1
    if cache["out_keep"] is not None:
        d_attn_out = d_attn_out * cache["out_keep"]
    d_ctx = _linear_backward(cache["ctx"], params[f"{lp}.attn.wo"], d_attn_out, grads, f"{lp}.attn.wo", f"{lp}.attn.bo")

    d_ctx_h = _split_heads(d_ctx, a)
    probs_d, probs = cache["probs_d"], cache["probs"]
    d_vh = probs_d.transpose(0, 1, 3, 2) @ d_ctx_h
    d_probs_d = d_ctx_h @ cache["vh"].transpose(0, 1, 3, 2)
    if cache["attn_keep"] is not None:
        d_probs = d_probs_d * cache["attn_keep"]
    else:
        d_probs = d_probs_d
    # softmax backward; masked entries have probs == 0 so receive no gradient
    d_scores = probs * (d_probs - (d_probs * probs).sum(axis=-1, keepdims=True))
    d_scores *= cache["scale"]

    d_qh = d_scores @ cache["kh"]
    d_kh = d_scores.transpose(0, 1, 3, 2) @ cache["qh"]

    dq, dk, dv = _merge_heads(d_qh), _merge_heads(d_kh), _merge_heads(d_vh)
    dx += _linear_backward(x, params[f"{lp}.attn.wq"], dq, grads, f"{lp}.attn.wq", f"{lp}.attn.bq")
    dx += _linear_backward(x, params[f"{lp}.attn.wk"], dk, grads, f"{lp}.attn.wk", f"{lp}.attn.bk")
    dx += _linear_backward(x, params[f"{lp}.attn.wv"], dv, grads, f"{lp}.attn.wv", f"{lp}.attn.bv")
    return dx


# ---------------------------------------------------------------------------
# Pooling
# ---------------------------------------------------------------------------

def pool_forward(hidden: np.ndarray, mask: np.ndarray, params: dict, prefix: str, mode: str):
    """Collapse final hidden vectors into one sentence embedding per example.

    weighted_average: softmax over a learned per-token score, restricted to
    unmasked slots (weights sum to 1 there). cls_token: the slot-0 hidden
    vector; the sequence must have been prefixed with the reserved token.
    """
    if not mask.any(axis=1).all():
        raise ValueError("pooling requires at least one unmasked position per example")
    if mode == "cls_token":
        if not mask[:, 0].all():
            raise ValueError("cls_token pooling requires the reserved token at slot 0")
        return hidden[:, 0, :], {"mode": mode}
    if mode != "weighted_average":
        raise ValueError(f"unknown pooling mode: {mode!r}")
    w = params[f"{prefix}.pool.w"]
    b = params[f"{prefix}.pool.b"]
    scores = hidden @ w + b  # (B, T)
    alpha = masked_softmax(scores, mask)
    emb = (alpha[..., None] * hidden).sum(axis=1)
    return emb, {"mode": mode, "hidden": hidden, "alpha": alpha}


def pool_backward(d_emb: np.ndarray, cache: dict, params: dict, prefix: str, grads: dict, seq_shape) -> np.ndarray:
    if cache["mode"] == "cls_token":
        d_hidden = np.zeros(seq_shape, dtype=d_emb.dtype)
        d_hidden[:, 0, :] = d_emb
        return d_hidden
    hidden, alpha = cache["hidden"], cache["alpha"]
    w = params[f"{prefix}.pool.w"]
    g = np.einsum("bth,bh->bt", hidden, d_emb)
    d_scores = alpha * (g - (alpha * g).sum(axis=1, keepdims=True))
    d_hidden = alpha[..., None] * d_emb[:, None, :] + d_scores[..., None] * w[None, None, :]
    accumulate(grads, f"{prefix}.pool.w", np.einsum("bt,bth->h", d_scores, hidden))
    accumulate(grads, f"{prefix}.pool.b", d_scores.sum())
    return d_hidden


# ---------------------------------------------------------------------------
# Full encoder
# ---------------------------------------------------------------------------

def encoder_forward(
    params: dict,
    prefix: str,
    batch: PackedBatch,
    config: ModelConfig,
    train: bool = False,
    rng: np.random.Generator | None = None,
):
    """Embed, run the transformer stack, pool. Returns (embeddings, cache)."""
    x = embed_forward(params, prefix, batch)
    layer_caches = []
    for layer in range(config.n_layers):
        x, cache = layer_forward(x, batch.mask, params, f"{prefix}.layers.{layer}", config, train, rng)
        layer_caches.append(cache)
    emb, pool_cache = pool_forward(x, batch.mask, params, prefix, config.pooling)
    return emb, {"layers": layer_caches, "pool": pool_cache, "final_shape": x.shape}


def encoder_backward(
    d_emb: np.ndarray,
    cache: dict,
    params: dict,
    prefix: str,
    batch: PackedBatch,
    config: ModelConfig,
    grads: dict,
) -> None:
    dx = pool_backward(d_emb, cache["pool"], params, prefix, grads, cache["final_shape"])
    for layer in reversed(range(config.n_layers)):
        dx = layer_backward(dx, cache["layers"][layer], params, f"{prefix}.layers.{layer}", config, grads)
    embed_backward(params, prefix, batch, dx, grads)


def encoder_param_names(config: ModelConfig, prefix: str) -> list[str]:
    """Deterministic name list for one encoder's parameters."""
    names = [f"{prefix}.tok_emb", f"{prefix}.pos_emb"]
    for layer in range(config.n_layers):
        lp = f"{prefix}.layers.{layer}"
        names += [f"{lp}.attn.{n}" for n in ("wq", "wk", "wv", "wo", "bq", "bk", "bv", "bo")]
        names += [f"{lp}.ln1.g", f"{lp}.ln1.b"]
        names += [f"{lp}.ffn.w1", f"{lp}.ffn.b1", f"{lp}.ffn.w2", f"{lp}.ffn.b2"]
        names += [f"{lp}.ln2.g", f"{lp}.ln2.b"]
    names += [f"{prefix}.pool.w", f"{prefix}.pool.b"]
    return names
