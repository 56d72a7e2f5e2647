"""Distillation training, actual-label fine-tuning, and the optimizer loop.

The student never sees the teacher's weights: training data is a stream of
(query, keyword, teacher logits, optional editorial label) records. Soft
targets are the temperature-softened teacher probabilities; fine-tuning
reuses the same cross-entropy loss with hard binary targets.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import crossing
from .config import DistillationConfig
from .encoder import pack_sequences, sigmoid
from .model import TwinModel

LABEL_TO_BINARY = {"bad": 0, "fair": 1, "good": 1, "excellent": 1}
_CE_EPS = 1e-12


class TrainingDivergedError(RuntimeError):
    """Raised when the loss goes non-finite; carries epoch/step context."""


@dataclass
class PairRecord:
    """One training example: a query/keyword pair with teacher and/or label."""

    query: str
    keyword: str
    teacher_logits: tuple[float, float] | None = None
    editorial_label: str | None = None
    binary_label: int | None = None

    def __post_init__(self) -> None:
        if self.teacher_logits is None and self.editorial_label is None and self.binary_label is None:
            raise ValueError("a pair record needs teacher logits or a label")
        if self.editorial_label is not None and self.editorial_label not in LABEL_TO_BINARY:
            raise ValueError(f"unknown editorial label: {self.editorial_label!r}")

    def binary(self) -> int:
        """Hard label: bad maps to 0, every other grade to 1."""
        if self.binary_label is not None:
            return int(self.binary_label)
        if self.editorial_label is not None:
            return LABEL_TO_BINARY[self.editorial_label]
        raise ValueError("record has no editorial or binary label")


def soft_label(z: tuple[float, float], temperature: float) -> tuple[float, float]:
    """Temperature-softened probability pair from a teacher logit pair.

    y_i = exp(z_i / T) / sum_j exp(z_j / T), stabilized by max subtraction.
    T = 1 recovers the plain softmax; larger T flattens the distribution.
    """
    if temperature <= 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    z = np.asarray(z, dtype=np.float64) / temperature
    z = z - z.max()
    e = np.exp(z)
    p = e / e.sum()
    return (float(p[0]), float(p[1]))


def ce_loss(targets, predictions) -> float:
    """Binary cross-entropy summed over the batch.

    Accepts soft targets in [0, 1]; predictions are clamped away from the
    endpoints by 1e-12 before the logs.
    """
    y = np.asarray(targets, dtype=np.float64)
    p = np.asarray(predictions, dtype=np.float64)
    if y.shape != p.shape:
        raise ValueError(f"targets and predictions differ in shape: {y.shape} vs {p.shape}")
    p = np.clip(p, _CE_EPS, 1.0 - _CE_EPS)
    return float(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)).sum())


class AdamW:
    """Adam with decoupled L2 weight decay.

    State is created lazily per parameter, and a step touches only the
    parameters that received a gradient: parameters with no gradient this
    step stay bit-identical (weight decay included). Decay applies to
    matrices only, not to bias/gain vectors or scalars.
    """

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self._t: dict[str, int] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        for name, g in grads.items():
            p = params[name]
            if name not in self._m:
                self._m[name] = np.zeros_like(p)
                self._v[name] = np.zeros_like(p)
                self._t[name] = 0
            self._t[name] += 1
            t = self._t[name]
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            m_hat = m / (1.0 - self.beta1**t)
            v_hat = v / (1.0 - self.beta2**t)
            update = m_hat / (np.sqrt(v_hat) + self.eps)
            if self.weight_decay > 0.0 and p.ndim >= 2:
                update = update + self.weight_decay * p
            params[name] = p - self.lr * update


@dataclass
class TrainingHistory:
    epoch_losses: list[float] = field(default_factory=list)
    steps: int = 0
    wall_seconds: float = 0.0

    def as_dict(self) -> dict:
        return {
            "epoch_losses": self.epoch_losses,
            "steps": self.steps,
            "wall_seconds": self.wall_seconds,
        }


def _pair_batch_step(model: TwinModel, q_seqs, k_seqs, targets, optimizer, train_rng):
    """One forward/backward/update over a batch of pairs. Returns mean loss."""
    qb = pack_sequences(q_seqs)
    kb = pack_sequences(k_seqs)
    train = model.config.dropout > 0.0
    q_emb, q_cache = model.encode_query_batch(qb, train=train, rng=train_rng, count=False)
    k_emb, k_cache = model.encode_keyword_batch(kb, train=train, rng=train_rng, count=False)

    head = model.config.crossing
    if head == "cosine":
        logits, hcache = crossing.cosine_head_forward(q_emb, k_emb, model.params)
    else:
        logits, hcache = crossing.residual_head_forward(q_emb, k_emb, model.params)
    probs = sigmoid(logits)
    n = len(targets)
    loss = ce_loss(targets, probs) / n

    grads: dict[str, np.ndarray] = {}
    d_logits = (probs - targets) / n  # fused sigmoid + mean binary CE
    if head == "cosine":
        dq, dk = crossing.cosine_head_backward(d_logits, hcache, model.params, grads)
    else:
        dq, dk = crossing.residual_head_backward(d_logits, hcache, model.params, grads)
    model.backward_query(dq, q_cache, qb, grads)
    model.backward_keyword(dk, k_cache, kb, grads)
    optimizer.step(model.params, grads)
    return loss


def _run_epochs(model: TwinModel, records: list[PairRecord], targets: np.ndarray,
                lr: float, epochs: int, config: DistillationConfig, seed: int,
                log=None) -> TrainingHistory:
    start = time.perf_counter()
    history = TrainingHistory()
    if epochs == 0:
        return history
    optimizer = AdamW(lr=lr, beta1=config.beta1, beta2=config.beta2,
                      eps=config.adam_epsilon, weight_decay=config.weight_decay)
    shuffle_rng = np.random.default_rng([seed, 0xDA7A])
    dropout_rng = np.random.default_rng([seed, 0xD120])

    q_seqs = [model.tokenize(r.query) for r in records]
    k_seqs = [model.tokenize(r.keyword) for r in records]

    n = len(records)
    bs = config.batch_size
    for epoch in range(epochs):
        order = shuffle_rng.permutation(n)
        losses = []
        for lo in range(0, n, bs):
            idx = order[lo : lo + bs]
            loss = _pair_batch_step(
                model,
                [q_seqs[i] for i in idx],
                [k_seqs[i] for i in idx],
                targets[idx],
                optimizer,
                dropout_rng,
            )
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, step {history.steps}: {loss}"
                )
            losses.append(loss * len(idx))
            history.steps += 1
        epoch_loss = float(np.sum(losses) / n)
        history.epoch_losses.append(epoch_loss)
        if log is not None:
            log(f"epoch {epoch + 1}/{epochs}  mean loss {epoch_loss:.6f}")
    history.wall_seconds = time.perf_counter() - start
    return history


def distill_train(records: list[PairRecord], config: DistillationConfig,
                  model: TwinModel, seed: int = 0, log=None) -> TrainingHistory:
    """Train the student against temperature-softened teacher targets.

    Every record must carry teacher logits. The per-epoch loss recorded in
    the history is the mean per-pair cross-entropy. Deterministic given the
    seed and record order.
    """
    if not records:
        raise ValueError("distillation requires a non-empty record stream")
    missing = [i for i, r in enumerate(records) if r.teacher_logits is None]
    if missing:
        raise ValueError(f"record {missing[0]} has no teacher logits")
    targets = np.asarray(
        [soft_label(r.teacher_logits, config.temperature)[1] for r in records]
    )
    return _run_epochs(model, records, targets, config.learning_rate,
                       config.epochs, config, seed, log)


def finetune(records: list[PairRecord], config: DistillationConfig,
             model: TwinModel, seed: int = 0, log=None) -> TrainingHistory:
    """Post-distillation round on hard binary labels at a reduced rate."""
    if not records:
        raise ValueError("fine-tuning requires a non-empty record stream")
    targets = np.asarray([float(r.binary()) for r in records])
    return _run_epochs(model, records, targets, config.finetune_learning_rate,
                       config.finetune_epochs, config, seed + 1, log)


# ---------------------------------------------------------------------------
# TSV pair files
# ---------------------------------------------------------------------------

PAIR_TSV_COLUMNS = ("query", "keyword", "z_bad", "z_nonbad", "label")


def load_pair_tsv(path: str | Path) -> list[PairRecord]:
    """Read pair records from a headered TSV file.

    Columns: query, keyword, z_bad, z_nonbad, label. The logit columns may
    be empty when only labels are available, and vice versa; the label
    column holds one of bad/fair/good/excellent or 0/1. Lines starting with
    ``#`` are ignored. Malformed rows abort with their line number.
    """
    records: list[PairRecord] = []
    with open(path, "r", encoding="utf-8") as f:
        header = None
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            if header is None:
                header = tuple(line.split("\t"))
                if tuple(header[:2]) != ("query", "keyword"):
                    raise ValueError(
                        f"{path}:{lineno}: expected header starting with "
                        f"'query\\tkeyword', got {line!r}"
                    )
                continue
            parts = line.split("\t")
            if len(parts) < 4 or len(parts) > len(PAIR_TSV_COLUMNS):
                raise ValueError(
                    f"{path}:{lineno}: expected 4 or 5 tab-separated fields, got {len(parts)}"
                )
            query, keyword, z_bad, z_nonbad = parts[:4]
            label = parts[4].strip() if len(parts) > 4 else ""
            try:
                logits = (float(z_bad), float(z_nonbad)) if z_bad and z_nonbad else None
                editorial = None
                binary = None
                if label:
                    if label in LABEL_TO_BINARY:
                        editorial = label
                    elif label in ("0", "1"):
                        binary = int(label)
                    else:
                        raise ValueError(f"bad label {label!r}")
                records.append(
                    PairRecord(query=query, keyword=keyword, teacher_logits=logits,
                               editorial_label=editorial, binary_label=binary)
                )
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: malformed row: {exc}") from exc
    if header is None:
        raise ValueError(f"{path}: empty file (header row required)")
    return records


def save_pair_tsv(path: str | Path, records: list[PairRecord],
                  manifest: dict | None = None) -> None:
    lines = []
    if manifest:
        import json

        lines.append("# manifest: " + json.dumps(manifest, sort_keys=True))
    lines.append("\t".join(PAIR_TSV_COLUMNS))
    for r in records:
        z_bad = repr(r.teacher_logits[0]) if r.teacher_logits else ""
        z_nonbad = repr(r.teacher_logits[1]) if r.teacher_logits else ""
        label = r.editorial_label or ("" if r.binary_label is None else str(r.binary_label))
        lines.append("\t".join((r.query, r.keyword, z_bad, z_nonbad, label)))
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
