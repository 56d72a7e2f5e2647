"""Architecture and training hyperparameter containers."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

POOLING_MODES = ("weighted_average", "cls_token")
CROSSING_MODES = ("cosine", "residual")


@dataclass
class ModelConfig:
    """Twin-encoder architecture hyperparameters.

    Defaults are the small desk-scale preset (2 layers, hidden 64, 2 heads)
    used throughout the tests; :meth:`large` gives the production-scale
    preset (6 layers, hidden 512, 8 heads, 50K trigram buckets). The
    feed-forward inner size defaults to the hidden size.
    """

    n_layers: int = 2
    hidden_size: int = 64
    n_heads: int = 2
    ffn_size: int | None = None
    vocab_buckets: int = 4096
    max_len: int = 16
    pooling: str = "weighted_average"
    crossing: str = "residual"
    shared_encoders: bool = True
    dropout: float = 0.1

    def __post_init__(self) -> None:
        if self.ffn_size is None:
            self.ffn_size = self.hidden_size
        if self.n_layers < 1:
            raise ValueError("n_layers must be >= 1")
        if self.hidden_size < 1 or self.n_heads < 1:
            raise ValueError("hidden_size and n_heads must be >= 1")
        if self.hidden_size % self.n_heads != 0:
            raise ValueError(
                f"hidden_size {self.hidden_size} not divisible by n_heads {self.n_heads}"
            )
        if self.vocab_buckets < 1:
            raise ValueError("vocab_buckets must be >= 1")
        if self.max_len < 1:
            raise ValueError("max_len must be >= 1")
        if self.pooling not in POOLING_MODES:
            raise ValueError(f"pooling must be one of {POOLING_MODES}, got {self.pooling!r}")
        if self.crossing not in CROSSING_MODES:
            raise ValueError(f"crossing must be one of {CROSSING_MODES}, got {self.crossing!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    @property
    def head_dim(self) -> int:
        return self.hidden_size // self.n_heads

    @classmethod
    def desk(cls, **overrides) -> ModelConfig:
        """Small preset for local experiments and tests."""
        return cls(**overrides)

    @classmethod
    def large(cls, **overrides) -> ModelConfig:
        """Production-scale preset: L=6, H=512, A=8, 50K trigram buckets."""
        base = dict(n_layers=6, hidden_size=512, n_heads=8, vocab_buckets=50_000)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> ModelConfig:
        return cls(**raw)


@dataclass
class DistillationConfig:
    """Student-training hyperparameters.

    ``temperature`` softens the teacher logits; the optimizer is Adam with
    decoupled L2 weight decay. ``batch_size`` defaults to 64 for desk-scale
    runs (2048 is the production-scale setting and remains selectable).
    """

    temperature: float = 2.0
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.01
    adam_epsilon: float = 1e-8
    epochs: int = 10
    batch_size: int = 64
    finetune_learning_rate: float = 2e-5
    finetune_epochs: int = 2

    def __post_init__(self) -> None:
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if self.learning_rate < 0 or self.finetune_learning_rate < 0:
            raise ValueError("learning rates must be >= 0")
        if not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1:
            raise ValueError("beta1/beta2 must be in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.epochs < 0 or self.finetune_epochs < 0:
            raise ValueError("epoch counts must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> DistillationConfig:
        return cls(**raw)
