"""Synthetic teacher oracle and corpus generator.

The real teacher is a large relevance model whose logits arrive via TSV
files; nothing here depends on it. For self-contained runs, this module
provides a deterministic lexical-overlap teacher plus a generator that
fabricates sponsored-search-flavored query/keyword pairs with graded
relevance labels, so the whole pipeline runs with zero external data.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from .text import normalize

LABELS = ("bad", "fair", "good", "excellent")

# Generic commercial modifiers shared across all topics. They create small
# lexical overlaps between unrelated pairs, so an overlap-only teacher
# credits them; the editorial labels do not, which is exactly the signal
# actual-label fine-tuning exists to add.
MODIFIERS = ("buy", "cheap", "best", "online")

DEFAULT_MARGIN_SCALE = 8.0
DEFAULT_NOISE_STD = 0.5
DEFAULT_MIDPOINT = 0.2


def token_jaccard(a: str, b: str) -> float:
    """Jaccard overlap of the normalized token sets of two strings."""
    sa = set(normalize(a).split())
    sb = set(normalize(b).split())
    if not sa and not sb:
        return 1.0
    if not sa or not sb:
        return 0.0
    return len(sa & sb) / len(sa | sb)


def _pair_rng(seed: int, query: str, keyword: str) -> np.random.Generator:
    digest = hashlib.blake2b(
        f"{query}\x1f{keyword}".encode("utf-8"),
        key=struct.pack("<q", seed),
        digest_size=8,
    ).digest()
    return np.random.default_rng(int.from_bytes(digest, "little"))


def synthetic_teacher(
    query: str,
    keyword: str,
    seed: int = 0,
    margin_scale: float = DEFAULT_MARGIN_SCALE,
    noise_std: float = DEFAULT_NOISE_STD,
    midpoint: float = DEFAULT_MIDPOINT,
) -> tuple[float, float]:
    """Deterministic lexical-overlap scoring oracle.

    Produces a (z_bad, z_nonbad) logit pair whose margin grows monotonically
    and piecewise-linearly with the token-set Jaccard overlap J, crossing
    zero at ``midpoint`` (short relevant texts rarely share more than a
    quarter of their tokens, so a trained relevance model's decision
    boundary sits well below J = 0.5):

        margin = scale * (J - mid) / (1 - mid)   for J >= mid
        margin = scale * (J - mid) / mid         for J <  mid

    so J = 1 always yields the maximal positive margin (+scale) and J = 0
    the maximal negative one (-scale). A per-pair seeded Gaussian noise term
    scaled by 4*J*(1-J) is added; it vanishes at both extremes. A pure
    function of (query, keyword, seed).
    """
    if not 0.0 < midpoint < 1.0:
        raise ValueError("midpoint must be in (0, 1)")
    j = token_jaccard(query, keyword)
    if j >= midpoint:
        base = margin_scale * (j - midpoint) / (1.0 - midpoint)
    else:
        base = margin_scale * (j - midpoint) / midpoint
    noise = 0.0
    if 0.0 < j < 1.0 and noise_std > 0.0:
        rng = _pair_rng(seed, query, keyword)
        noise = noise_std * 4.0 * j * (1.0 - j) * rng.standard_normal()
    margin = base + noise
    return (-margin / 2.0, margin / 2.0)


# ---------------------------------------------------------------------------
# Corpus generation
# ---------------------------------------------------------------------------

@dataclass
class SyntheticPair:
    query: str
    keyword: str
    teacher_logits: tuple[float, float]
    label: str  # one of LABELS

    @property
    def binary_label(self) -> int:
        return 0 if self.label == "bad" else 1


def _random_word(rng: np.random.Generator) -> str:
    length = int(rng.integers(3, 9))
    letters = rng.integers(0, 26, size=length)
    return "".join(chr(ord("a") + int(c)) for c in letters)


def _topic_vocabulary(rng: np.random.Generator, n_topics: int, words_per_topic: int) -> list[list[str]]:
    seen: set[str] = set(MODIFIERS)
    topics = []
    for _ in range(n_topics):
        words = []
        while len(words) < words_per_topic:
            w = _random_word(rng)
            if w not in seen:
                seen.add(w)
                words.append(w)
        topics.append(words)
    return topics


def generate_pairs(
    n_pairs: int,
    seed: int = 0,
    n_queries: int | None = None,
    n_topics: int = 20,
    words_per_topic: int = 30,
    teacher_seed: int | None = None,
    margin_scale: float = DEFAULT_MARGIN_SCALE,
    noise_std: float = DEFAULT_NOISE_STD,
) -> list[SyntheticPair]:
    """Generate labeled query/keyword pairs with teacher logits attached.

    Each query holds 2-3 words from one topic (sometimes plus a generic
    modifier). Keywords are built per grade: ``excellent`` keywords contain
    every query topic word, ``good`` keywords share several, ``fair``
    keywords share exactly one, and ``bad`` keywords share none and come
    from a different topic. Modifier words are shared across topics, so
    lexical overlap alone cannot fully separate bad from fair; the editorial
    grade can.
    """
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    rng = np.random.default_rng(seed)
    teacher_seed = seed if teacher_seed is None else teacher_seed
    topics = _topic_vocabulary(rng, n_topics, words_per_topic)
    n_queries = n_queries or max(1, n_pairs // 10)

    queries: list[tuple[str, int, list[str]]] = []
    for _ in range(n_queries):
        t = int(rng.integers(n_topics))
        words = list(rng.choice(topics[t], size=int(rng.integers(2, 4)), replace=False))
        if rng.random() < 0.6:
            words.append(str(rng.choice(MODIFIERS)))
        queries.append((" ".join(words), t, words))

    pairs: list[SyntheticPair] = []
    grades = np.asarray(["excellent", "good", "fair", "bad"])
    grade_probs = np.asarray([0.2, 0.2, 0.2, 0.4])
    for i in range(n_pairs):
        query, topic, qwords = queries[i % n_queries]
        topic_words = [w for w in qwords if w not in MODIFIERS]
        others = [w for w in topics[topic] if w not in topic_words]
        grade = str(rng.choice(grades, p=grade_probs))
        if grade == "excellent":
            kw = list(topic_words)
            kw += list(rng.choice(others, size=int(rng.integers(0, 2)), replace=False))
            if rng.random() < 0.5:
                kw.append(str(rng.choice(MODIFIERS)))
        elif grade == "good":
            n_shared = max(1, len(topic_words) - 1)
            kw = list(rng.choice(topic_words, size=n_shared, replace=False))
            kw += list(rng.choice(others, size=int(rng.integers(1, 3)), replace=False))
            if rng.random() < 0.5:
                kw.append(str(rng.choice(MODIFIERS)))
        elif grade == "fair":
            # exactly one shared topic word, padded with other same-topic
            # words and often a generic modifier
            kw = [str(rng.choice(topic_words))]
            kw += list(rng.choice(others, size=int(rng.integers(1, 3)), replace=False))
            if rng.random() < 0.6:
                kw.append(str(rng.choice(MODIFIERS)))
        else:
            other_topic = int(rng.integers(n_topics - 1))
            if other_topic >= topic:
                other_topic += 1
            kw = list(rng.choice(topics[other_topic], size=int(rng.integers(1, 3)), replace=False))
            if rng.random() < 0.8:
                kw.append(str(rng.choice(MODIFIERS)))
        rng.shuffle(kw)
        keyword = " ".join(dict.fromkeys(kw))  # drop accidental duplicates, keep order
        logits = synthetic_teacher(
            query, keyword, seed=teacher_seed,
            margin_scale=margin_scale, noise_std=noise_std,
        )
        pairs.append(SyntheticPair(query=query, keyword=keyword, teacher_logits=logits, label=grade))
    return pairs


def split_pairs(
    pairs: list[SyntheticPair], n_queries: int, holdout_fraction: float = 0.2
) -> tuple[list[SyntheticPair], list[SyntheticPair]]:
    """Split by query slot so held-out queries never appear in training.

    ``generate_pairs`` assigns pair j to query slot j % n_queries; the last
    ``holdout_fraction`` of slots become the held-out set.
    """
    if not 0.0 < holdout_fraction < 1.0:
        raise ValueError("holdout_fraction must be in (0, 1)")
    n_test_queries = max(1, int(round(n_queries * holdout_fraction)))
    test_slots = set(range(n_queries - n_test_queries, n_queries))
    train = [p for j, p in enumerate(pairs) if j % n_queries not in test_slots]
    test = [p for j, p in enumerate(pairs) if j % n_queries in test_slots]
    return train, test
