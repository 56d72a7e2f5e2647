"""Text frontend: normalization, character trigrams, and hashed token sequences.

A word is represented as the multiset of character trigrams of ``#word#``
(boundary-padded, 3-char sliding window), each trigram hashed into a fixed
number of buckets. No learned vocabulary file is needed; collisions are
accepted and absorbed by the encoder.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field

NORMALIZATION_VERSION = "v1"

_BOUNDARY = "#"
_TRIGRAM_WIDTH = 3


def normalize(text: str) -> str:
    """Normalize raw text: lowercase, strip punctuation, collapse whitespace.

    Rule v1: every non-alphanumeric character becomes a space, runs of
    whitespace collapse to a single space, and the result is stripped.
    Digits and non-ASCII letters are kept. Deterministic; empty input
    (or punctuation-only input) yields the empty string.
    """
    lowered = text.lower()
    cleaned = "".join(ch if ch.isalnum() else " " for ch in lowered)
    return " ".join(cleaned.split())


def word_trigrams(word: str) -> list[str]:
    """All contiguous 3-grams of ``#word#``, in window order.

    The result is a multiset (duplicates preserved); its size always equals
    ``len(word)`` because of the boundary padding.
    """
    if not word or any(ch.isspace() for ch in word):
        raise ValueError(f"invalid token for trigram extraction: {word!r}")
    padded = _BOUNDARY + word + _BOUNDARY
    return [padded[i : i + _TRIGRAM_WIDTH] for i in range(len(padded) - _TRIGRAM_WIDTH + 1)]


@dataclass
class TrigramVocab:
    """Hashed trigram vocabulary.

    Trigrams map deterministically into ``[0, bucket_count)`` via a keyed
    blake2b digest, so bucket assignments are stable across runs, processes,
    and platforms for a given (bucket_count, hash_seed) pair. One extra
    embedding row beyond ``bucket_count`` is reserved for the classification
    token used by cls-token pooling; see ``cls_bucket``.
    """

    bucket_count: int = 4096
    hash_seed: int = 0
    normalization: str = NORMALIZATION_VERSION

    _word_cache: dict[str, tuple[int, ...]] = field(
        default_factory=dict, repr=False, compare=False
    )

    def __post_init__(self) -> None:
        if self.bucket_count < 1:
            raise ValueError(f"bucket_count must be >= 1, got {self.bucket_count}")
        if self.normalization != NORMALIZATION_VERSION:
            raise ValueError(f"unsupported normalization tag: {self.normalization!r}")
        self._key = struct.pack("<q", self.hash_seed)

    @property
    def cls_bucket(self) -> int:
        """Reserved embedding-row index for the classification token."""
        return self.bucket_count

    @property
    def embedding_rows(self) -> int:
        """Rows the token embedding table must have (buckets + reserved cls)."""
        return self.bucket_count + 1

    def bucket(self, trigram: str) -> int:
        digest = hashlib.blake2b(trigram.encode("utf-8"), key=self._key, digest_size=8)
        return int.from_bytes(digest.digest(), "little") % self.bucket_count

    def word_buckets(self, word: str) -> tuple[int, ...]:
        """Hashed trigram multiset for one word, memoized."""
        cached = self._word_cache.get(word)
        if cached is None:
            cached = tuple(self.bucket(t) for t in word_trigrams(word))
            self._word_cache[word] = cached
        return cached

    def to_json(self) -> str:
        return json.dumps(
            {
                "bucket_count": self.bucket_count,
                "hash_seed": self.hash_seed,
                "normalization": self.normalization,
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> TrigramVocab:
        raw = json.loads(text)
        return cls(
            bucket_count=int(raw["bucket_count"]),
            hash_seed=int(raw["hash_seed"]),
            normalization=str(raw["normalization"]),
        )


@dataclass(frozen=True)
class TokenSequence:
    """One encoded sentence: per-word trigram bucket multisets, padded.

    ``tokens[i]`` is the bucket multiset of word i (empty tuple for padding
    slots), ``mask[i]`` is True exactly for non-padding slots, and
    ``original_length`` records the pre-truncation word count.
    """

    tokens: tuple[tuple[int, ...], ...]
    positions: tuple[int, ...]
    mask: tuple[bool, ...]
    original_length: int

    def __post_init__(self) -> None:
        n = len(self.tokens)
        if len(self.positions) != n or len(self.mask) != n:
            raise ValueError("tokens, positions and mask must have equal length")

    @property
    def length(self) -> int:
        return len(self.tokens)

    @property
    def real_length(self) -> int:
        return sum(self.mask)


def encode_text(
    text: str,
    vocab: TrigramVocab,
    max_len: int,
    prepend_bucket: int | None = None,
) -> TokenSequence:
    """Encode text into a fixed-length :class:`TokenSequence`.

    Words beyond ``max_len`` are truncated; shorter inputs are padded with
    masked slots. When ``prepend_bucket`` is given (cls-token pooling), that
    reserved bucket occupies slot 0 and text capacity shrinks by one.

    Raises ``ValueError`` if the text normalizes to empty; the caller decides
    the fallback.
    """
    if max_len < 1:
        raise ValueError(f"max_len must be >= 1, got {max_len}")
    norm = normalize(text)
    if not norm:
        raise ValueError(f"text normalizes to empty: {text!r}")
    words = norm.split()
    original_length = len(words)

    capacity = max_len - (1 if prepend_bucket is not None else 0)
    if capacity < 1:
        raise ValueError("max_len too small to hold any text after the reserved slot")
    words = words[:capacity]

    token_lists: list[tuple[int, ...]] = []
    if prepend_bucket is not None:
        token_lists.append((prepend_bucket,))
    for word in words:
        token_lists.append(vocab.word_buckets(word))

    n_real = len(token_lists)
    tokens = tuple(token_lists) + ((),) * (max_len - n_real)
    mask = (True,) * n_real + (False,) * (max_len - n_real)
    positions = tuple(range(max_len))
    return TokenSequence(
        tokens=tokens, positions=positions, mask=mask, original_length=original_length
    )
