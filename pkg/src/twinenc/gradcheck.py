"""Finite-difference verification of the analytic gradients.

The analytic side is the hand-written backward pass; the numeric side is a
central difference of the full encode + crossing + loss pipeline. Both run
in float64 with dropout disabled, so agreement to ~1e-8 relative is normal
and anything past 1e-4 indicates a backprop bug.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import crossing
from .encoder import pack_sequences, sigmoid
from .model import TwinModel
from .training import ce_loss

_REL_FLOOR = 1e-6


@dataclass
class GradCheckResult:
    name: str
    flat_index: int
    analytic: float
    numeric: float
    rel_error: float


def pipeline_loss_and_grads(model: TwinModel, queries: list[str], keywords: list[str],
                            targets: np.ndarray, head: str):
    """Mean binary CE through encoders and the chosen head, plus gradients."""
    qb = pack_sequences(model.tokenize_many(queries))
    kb = pack_sequences(model.tokenize_many(keywords))
    q_emb, q_cache = model.encode_query_batch(qb, count=False)
    k_emb, k_cache = model.encode_keyword_batch(kb, count=False)
    if head == "cosine":
        logits, hcache = crossing.cosine_head_forward(q_emb, k_emb, model.params)
    elif head == "residual":
        logits, hcache = crossing.residual_head_forward(q_emb, k_emb, model.params)
    else:
        raise ValueError(f"unknown head: {head!r}")
    probs = sigmoid(logits)
    n = len(targets)
    loss = ce_loss(targets, probs) / n

    grads: dict[str, np.ndarray] = {}
    d_logits = (probs - targets) / n
    if head == "cosine":
        dq, dk = crossing.cosine_head_backward(d_logits, hcache, model.params, grads)
    else:
        dq, dk = crossing.residual_head_backward(d_logits, hcache, model.params, grads)
    model.backward_query(dq, q_cache, qb, grads)
    model.backward_keyword(dk, k_cache, kb, grads)
    return loss, grads


def pipeline_loss(model: TwinModel, queries, keywords, targets, head: str) -> float:
    loss, _ = pipeline_loss_and_grads(model, queries, keywords, targets, head)
    return loss


def finite_difference_check(
    model: TwinModel,
    queries: list[str],
    keywords: list[str],
    targets: np.ndarray,
    head: str,
    n_params: int = 20,
    step: float = 1e-5,
    seed: int = 0,
) -> list[GradCheckResult]:
    """Compare analytic gradients against central differences.

    Samples ``n_params`` random scalar parameters among those the loss
    actually reaches (the inactive head is excluded). The relative error
    uses a small floor so near-zero gradients compare on absolute terms.
    """
    rng = np.random.default_rng(seed)
    _, grads = pipeline_loss_and_grads(model, queries, keywords, targets, head)
    names = sorted(grads)
    results: list[GradCheckResult] = []
    for _ in range(n_params):
        name = names[int(rng.integers(len(names)))]
        arr = model.params[name]
        flat = int(rng.integers(arr.size)) if arr.size > 1 else 0
        orig = float(arr.flat[flat])

        def _loss_with(value: float) -> float:
            arr.flat[flat] = value
            try:
                return pipeline_loss(model, queries, keywords, targets, head)
            finally:
                arr.flat[flat] = orig

        numeric = (_loss_with(orig + step) - _loss_with(orig - step)) / (2.0 * step)
        analytic = float(np.asarray(grads[name]).flat[flat])
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), _REL_FLOOR)
        results.append(GradCheckResult(name, flat, analytic, numeric, rel))
    return results
