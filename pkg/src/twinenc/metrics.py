"""Ranking metrics: exact ROC-AUC and graded nDCG.

ROC-AUC is computed from rank statistics (ties count half), which matches
the pairwise-enumeration definition exactly. nDCG uses a log2(rank + 1)
discount and a configurable gain on the four-level label scale; rankings
whose ideal DCG is zero carry no signal and are reported as NaN so that
averages can exclude them.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.stats import rankdata

GAIN_SCHEMES = ("linear", "exponential")

_LABEL_GAINS = {"bad": 0.0, "fair": 1.0, "good": 2.0, "excellent": 3.0}


def roc_auc(scores, labels) -> float:
    """Probability that a random positive outranks a random negative.

    Exact rank-statistic computation; tied scores contribute 0.5 per pair.
    Requires both classes to be present.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be equal-length 1-d sequences")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC-AUC needs at least one positive and one negative")
    ranks = rankdata(scores)  # average ranks on ties
    pos_rank_sum = float(ranks[labels == 1].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def label_gain(label, scheme: str = "linear") -> float:
    """Gain of a relevance label: graded strings, 0/1, or numeric grades."""
    if scheme not in GAIN_SCHEMES:
        raise ValueError(f"gain scheme must be one of {GAIN_SCHEMES}")
    if isinstance(label, str):
        if label not in _LABEL_GAINS:
            raise ValueError(f"unknown relevance label: {label!r}")
        g = _LABEL_GAINS[label]
    else:
        g = float(label)
        if g < 0:
            raise ValueError("numeric gains must be >= 0")
    if scheme == "exponential":
        return 2.0**g - 1.0
    return g


def dcg_at(gains, position: int) -> float:
    if position < 1:
        raise ValueError(f"position must be >= 1, got {position}")
    total = 0.0
    for i, g in enumerate(gains[:position]):
        total += g / math.log2(i + 2)
    return total


def ndcg_at(ranked_labels, position: int, gain: str = "linear") -> float:
    """nDCG of one ranked label list at a cutoff position.

    ``ranked_labels`` is the label sequence in ranked order (best first as
    scored). Returns NaN when the ideal DCG is zero (an all-bad ranking),
    which callers exclude from averages.
    """
    if position < 1:
        raise ValueError(f"position must be >= 1, got {position}")
    if len(ranked_labels) == 0:
        raise ValueError("ranking must be non-empty")
    gains = [label_gain(lab, gain) for lab in ranked_labels]
    ideal = sorted(gains, reverse=True)
    idcg = dcg_at(ideal, position)
    if idcg == 0.0:
        return float("nan")
    return dcg_at(gains, position) / idcg


def mean_ndcg(rankings, position: int, gain: str = "linear") -> float:
    """Average nDCG over queries, excluding zero-IDCG rankings."""
    values = [ndcg_at(r, position, gain) for r in rankings]
    kept = [v for v in values if not math.isnan(v)]
    if not kept:
        raise ValueError("every ranking had zero ideal DCG")
    return float(np.mean(kept))
