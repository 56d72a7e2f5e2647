"""The twin model: two (possibly shared) encoders plus both crossing heads.

Checkpoints always carry both head parameter sets; ``config.crossing``
selects which one drives training and default scoring. Operation counters
track per-sequence encoder passes and per-pair crossing evaluations so the
benchmark can verify its caching contracts exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import crossing
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ModelConfig
from .encoder import (
    PackedBatch,
    cast_params,
    encoder_backward,
    encoder_forward,
    encoder_param_names,
    encoder_prefixes,
    init_encoder_params,
    pack_sequences,
)
from .text import TokenSequence, TrigramVocab, encode_text


@dataclass
class OpCounters:
    """Per-sequence / per-pair operation counts, reset between measurements."""

    query_encoder_passes: int = 0
    keyword_encoder_passes: int = 0
    cross_encoder_passes: int = 0
    crossing_evals: int = 0

    def reset(self) -> None:
        self.query_encoder_passes = 0
        self.keyword_encoder_passes = 0
        self.cross_encoder_passes = 0
        self.crossing_evals = 0

    def as_dict(self) -> dict[str, int]:
        return {
            "query_encoder_passes": self.query_encoder_passes,
            "keyword_encoder_passes": self.keyword_encoder_passes,
            "cross_encoder_passes": self.cross_encoder_passes,
            "crossing_evals": self.crossing_evals,
        }


@dataclass
class TwinModel:
    config: ModelConfig
    vocab: TrigramVocab
    params: dict[str, np.ndarray]
    counters: OpCounters = field(default_factory=OpCounters)

    @classmethod
    def initialize(cls, config: ModelConfig, vocab: TrigramVocab | None = None, seed: int = 0) -> TwinModel:
        """Randomly initialized model; deterministic for a given seed."""
        if vocab is None:
            vocab = TrigramVocab(bucket_count=config.vocab_buckets)
        if vocab.bucket_count != config.vocab_buckets:
            raise ValueError(
                f"vocab bucket_count {vocab.bucket_count} != config.vocab_buckets {config.vocab_buckets}"
            )
        rng = np.random.default_rng(seed)
        qp, kp = encoder_prefixes(config)
        params = init_encoder_params(config, rng, qp)
        if kp != qp:
            params.update(init_encoder_params(config, rng, kp))
        params.update(crossing.init_head_params(config.hidden_size, rng))
        return cls(config=config, vocab=vocab, params=params)

    # -- prefixes ----------------------------------------------------------

    @property
    def query_prefix(self) -> str:
        return encoder_prefixes(self.config)[0]

    @property
    def keyword_prefix(self) -> str:
        return encoder_prefixes(self.config)[1]

    def param_names(self) -> list[str]:
        names = encoder_param_names(self.config, self.query_prefix)
        if self.keyword_prefix != self.query_prefix:
            names += encoder_param_names(self.config, self.keyword_prefix)
        names += crossing.head_param_names()
        return names

    def param_count(self) -> int:
        return sum(self.params[n].size for n in self.param_names())

    # -- tokenization ------------------------------------------------------

    def tokenize(self, text: str, max_len: int | None = None) -> TokenSequence:
        """Encode text, prefixing the reserved token in cls-pooling mode."""
        max_len = self.config.max_len if max_len is None else max_len
        cls_bucket = self.vocab.cls_bucket if self.config.pooling == "cls_token" else None
        return encode_text(text, self.vocab, max_len, prepend_bucket=cls_bucket)

    def tokenize_many(self, texts: list[str]) -> list[TokenSequence]:
        return [self.tokenize(t) for t in texts]

    # -- encoding ----------------------------------------------------------

    def _encode(self, batch: PackedBatch, prefix: str, params: dict | None,
                train: bool, rng) -> tuple[np.ndarray, dict]:
        return encoder_forward(params or self.params, prefix, batch, self.config, train, rng)

    def encode_query_batch(self, batch: PackedBatch, params: dict | None = None,
                           train: bool = False, rng=None, count: bool = True):
        emb, cache = self._encode(batch, self.query_prefix, params, train, rng)
        if count:
            self.counters.query_encoder_passes += batch.n_examples
        return emb, cache

    def encode_keyword_batch(self, batch: PackedBatch, params: dict | None = None,
                             train: bool = False, rng=None, count: bool = True):
        emb, cache = self._encode(batch, self.keyword_prefix, params, train, rng)
        if count:
            self.counters.keyword_encoder_passes += batch.n_examples
        return emb, cache

    def encode_queries(self, texts: list[str], params: dict | None = None) -> np.ndarray:
        emb, _ = self.encode_query_batch(pack_sequences(self.tokenize_many(texts)), params)
        return emb

    def encode_keywords(self, texts: list[str], params: dict | None = None) -> np.ndarray:
        emb, _ = self.encode_keyword_batch(pack_sequences(self.tokenize_many(texts)), params)
        return emb

    def backward_query(self, d_emb, cache, batch: PackedBatch, grads: dict) -> None:
        encoder_backward(d_emb, cache, self.params, self.query_prefix, batch, self.config, grads)

    def backward_keyword(self, d_emb, cache, batch: PackedBatch, grads: dict) -> None:
        encoder_backward(d_emb, cache, self.params, self.keyword_prefix, batch, self.config, grads)

    # -- scoring -----------------------------------------------------------

    def score_embeddings(self, q_emb: np.ndarray, k_emb: np.ndarray,
                         head: str | None = None, params: dict | None = None,
                         count: bool = True) -> np.ndarray:
        """Calibrated relevance probability for paired embedding rows."""
        head = head or self.config.crossing
        params = params or self.params
        if head == "cosine":
            probs = crossing.cosine_head_prob(q_emb, k_emb, params)
        elif head == "residual":
            probs = crossing.residual_head_prob(q_emb, k_emb, params)
        else:
            raise ValueError(f"unknown crossing head: {head!r}")
        if count:
            self.counters.crossing_evals += int(np.asarray(probs).size)
        return probs

    def score_pairs(self, queries: list[str], keywords: list[str], head: str | None = None) -> np.ndarray:
        if len(queries) != len(keywords):
            raise ValueError("queries and keywords must pair up one to one")
        q_emb = self.encode_queries(queries)
        k_emb = self.encode_keywords(keywords)
        return self.score_embeddings(q_emb, k_emb, head=head)

    # -- persistence -------------------------------------------------------

    def checkpoint_header(self) -> dict:
        return {
            "kind": "twinenc-model",
            "model": self.config.to_dict(),
            "vocab": {
                "bucket_count": self.vocab.bucket_count,
                "hash_seed": self.vocab.hash_seed,
                "normalization": self.vocab.normalization,
            },
        }

    def save(self, path: str | Path) -> None:
        save_checkpoint(path, self.params, self.checkpoint_header())

    @classmethod
    def load(cls, path: str | Path) -> TwinModel:
        params, header = load_checkpoint(path)
        if header.get("kind") != "twinenc-model":
            raise ValueError(f"not a model checkpoint: {path}")
        config = ModelConfig.from_dict(header["model"])
        vocab = TrigramVocab(**header["vocab"])
        return cls(config=config, vocab=vocab, params=params)

    def cast(self, dtype) -> TwinModel:
        """Copy of this model with parameters cast to ``dtype`` (inference only)."""
        clone = TwinModel(
            config=self.config, vocab=self.vocab,
            params=cast_params(self.params, dtype), counters=self.counters,
        )
        return clone
