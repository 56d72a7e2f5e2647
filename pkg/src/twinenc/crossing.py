"""Crossing heads: combine query and keyword embeddings into a score.

Two heads are provided. The cosine head calibrates cosine similarity with a
learned logistic layer and is the one compatible with nearest-neighbor
retrieval (unit-normalized embeddings turn cosine ranking into Euclidean
ranking). The residual head combines the two embeddings elementwise by max,
passes the result through a residual block, and applies a logistic output
layer; it is more expressive but must see both raw embeddings at score time.

Forward functions return logits; backward functions take d(loss)/d(logit)
and hand back gradients for both embeddings while accumulating head
parameter gradients.
"""

from __future__ import annotations

import numpy as np

from .encoder import accumulate, gelu, gelu_grad, sigmoid, truncated_normal

_NORM_EPS = 0.0  # zero-norm inputs are rejected, not smoothed


def init_head_params(hidden_size: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Parameters for both heads; one model checkpoint carries both.

    The cosine calibration scale starts at 4 so the logit a*cos + b spans
    roughly the same range as softened teacher targets from the outset;
    it stays learnable.
    """
    h = hidden_size
    return {
        "cosine_head.scale": np.asarray(4.0),
        "cosine_head.bias": np.asarray(0.0),
        "residual_head.w1": truncated_normal(rng, (h, h)),
        "residual_head.b1": np.zeros(h),
        "residual_head.w2": truncated_normal(rng, (h, h)),
        "residual_head.b2": np.zeros(h),
        "residual_head.w_out": truncated_normal(rng, (h,)),
        "residual_head.b_out": np.asarray(0.0),
    }


def head_param_names() -> list[str]:
    return [
        "cosine_head.scale", "cosine_head.bias",
        "residual_head.w1", "residual_head.b1",
        "residual_head.w2", "residual_head.b2",
        "residual_head.w_out", "residual_head.b_out",
    ]


def cosine(q: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Cosine similarity over the last axis; rejects zero-norm vectors."""
    q = np.asarray(q)
    k = np.asarray(k)
    nq = np.linalg.norm(q, axis=-1)
    nk = np.linalg.norm(k, axis=-1)
    if np.any(nq == 0) or np.any(nk == 0):
        raise ValueError("cosine similarity is undefined for zero-norm vectors")
    return (q * k).sum(axis=-1) / (nq * nk)


def cosine_head_forward(q: np.ndarray, k: np.ndarray, params: dict):
    """Calibrated cosine logit a*cos(q,k) + b. Returns (logits, cache)."""
    nq = np.linalg.norm(q, axis=-1)
    nk = np.linalg.norm(k, axis=-1)
    if np.any(nq == 0) or np.any(nk == 0):
        raise ValueError("cosine similarity is undefined for zero-norm vectors")
    c = (q * k).sum(axis=-1) / (nq * nk)
    logits = params["cosine_head.scale"] * c + params["cosine_head.bias"]
    return logits, {"q": q, "k": k, "nq": nq, "nk": nk, "c": c}


def cosine_head_backward(d_logits: np.ndarray, cache: dict, params: dict, grads: dict):
    q, k, nq, nk, c = cache["q"], cache["k"], cache["nq"], cache["nk"], cache["c"]
    a = params["cosine_head.scale"]
    accumulate(grads, "cosine_head.scale", np.asarray((d_logits * c).sum()))
    accumulate(grads, "cosine_head.bias", np.asarray(d_logits.sum()))
    dc = (d_logits * a)[..., None]
    inv = 1.0 / (nq * nk)
    dq = dc * (k * inv[..., None] - (c / (nq * nq))[..., None] * q)
    dk = dc * (q * inv[..., None] - (c / (nk * nk))[..., None] * k)
    return dq, dk


def cosine_head_prob(q: np.ndarray, k: np.ndarray, params: dict) -> np.ndarray:
    logits, _ = cosine_head_forward(q, k, params)
    return sigmoid(logits)


def max_combine(q: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Elementwise maximum of two equal-shape embeddings."""
    q = np.asarray(q)
    k = np.asarray(k)
    if q.shape != k.shape:
        raise ValueError(f"shape mismatch in max combine: {q.shape} vs {k.shape}")
    return np.maximum(q, k)


def residual_head_forward(q: np.ndarray, k: np.ndarray, params: dict):
    """Residual head logit. Returns (logits, cache).

    x = max(q, k); y = W2 gelu(W1 x + b1) + b2 + x; logit = w_out . y + b_out.
    The embeddings are consumed raw (no normalization), so the max retains
    magnitude information.
    """
    x = max_combine(q, k)
    f1 = x @ params["residual_head.w1"] + params["residual_head.b1"]
    g = gelu(f1)
    r = g @ params["residual_head.w2"] + params["residual_head.b2"]
    y = r + x
    logits = y @ params["residual_head.w_out"] + params["residual_head.b_out"]
    return logits, {"q": q, "k": k, "x": x, "f1": f1, "g": g, "y": y}


def residual_head_backward(d_logits: np.ndarray, cache: dict, params: dict, grads: dict):
    q, k, x, f1, g, y = cache["q"], cache["k"], cache["x"], cache["f1"], cache["g"], cache["y"]
    dy = d_logits[..., None] * params["residual_head.w_out"]
    accumulate(grads, "residual_head.w_out", d_logits @ y if y.ndim > 1 else d_logits * y)
    accumulate(grads, "residual_head.b_out", np.asarray(d_logits.sum()))
    dr = dy
    dx = dy.copy()
    g2 = g.reshape(-1, g.shape[-1])
    dr2 = dr.reshape(-1, dr.shape[-1])
    accumulate(grads, "residual_head.w2", g2.T @ dr2)
    accumulate(grads, "residual_head.b2", dr2.sum(axis=0))
    dg = dr @ params["residual_head.w2"].T
    df1 = dg * gelu_grad(f1)
    x2 = x.reshape(-1, x.shape[-1])
    df1_2 = df1.reshape(-1, df1.shape[-1])
    accumulate(grads, "residual_head.w1", x2.T @ df1_2)
    accumulate(grads, "residual_head.b1", df1_2.sum(axis=0))
    dx += df1 @ params["residual_head.w1"].T
    # max gradient routes to the larger input; exact ties go to the query side
    q_wins = q >= k
    dq = np.where(q_wins, dx, 0.0)
    dk = np.where(q_wins, 0.0, dx)
    return dq, dk


def residual_head_prob(q: np.ndarray, k: np.ndarray, params: dict) -> np.ndarray:
    logits, _ = residual_head_forward(q, k, params)
    return sigmoid(logits)


def cosine_to_euclidean_check(q: np.ndarray, k: np.ndarray) -> float:
    """Squared Euclidean distance between two unit vectors.

    For unit-norm inputs this equals 2 - 2*cos(q, k); callers use that
    identity to swap cosine ranking for distance ranking in the index.
    Rejects inputs whose norm deviates from 1 by more than 1e-6.
    """
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    for name, v in (("q", q), ("k", k)):
        norm = np.linalg.norm(v)
        if abs(norm - 1.0) > 1e-6:
            raise ValueError(f"{name} is not unit-norm (|{name}| = {norm!r})")
    d = q - k
    return float(d @ d)
