"""Serving-latency benchmark for the decoupling speedup.

Three scenarios are timed per query: the twin modes score a query against
its keyword set through a crossing head (with keyword embeddings either
cached or encoded at request time), while the cross-encoder mode runs a
full encoder pass over every concatenated (query, keyword) pair. Timing
assertions elsewhere are trend/ratio claims only; the hard guarantees here
are the operation counters, which are exact. Tokenization happens before
the timed region and is reported separately.

With the keyword cache on, per-query cost is one query encoding plus a
per-keyword crossing term, so a least-squares line over an n_keywords grid
estimates the encoder cost (intercept) and crossing cost (slope); for the
cross encoder the slope is the full per-pair encoder cost.
"""

from __future__ import annotations

import gc
import time
from dataclasses import dataclass

import numpy as np

from . import crossing
from .config import ModelConfig
from .encoder import (
    encoder_forward,
    init_encoder_params,
    pack_sequences,
    sigmoid,
    truncated_normal,
)
from .model import TwinModel
from .synthetic import generate_pairs

MODEL_MODES = ("twin_cosine", "twin_residual", "cross_encoder")


@dataclass
class LatencyScenario:
    model_mode: str
    qel: int = 1  # query encoding loops per query
    keyword_cache: bool = True
    n_queries: int = 100
    n_keywords_per_query: int = 100
    repetitions: int = 3

    def __post_init__(self) -> None:
        if self.model_mode not in MODEL_MODES:
            raise ValueError(f"model_mode must be one of {MODEL_MODES}")
        if self.qel < 1:
            raise ValueError("qel must be >= 1")
        if self.n_queries < 1 or self.n_keywords_per_query < 1:
            raise ValueError("n_queries and n_keywords_per_query must be >= 1")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")


@dataclass
class TimingReport:
    scenario: LatencyScenario
    mean_ms: float
    median_ms: float
    p95_ms: float
    total_s: float
    tokenize_ms: float
    counters: dict[str, int]
    n_samples: int

    def as_dict(self) -> dict:
        d = {
            "model_mode": self.scenario.model_mode,
            "qel": self.scenario.qel,
            "keyword_cache": self.scenario.keyword_cache,
            "n_queries": self.scenario.n_queries,
            "n_keywords_per_query": self.scenario.n_keywords_per_query,
            "repetitions": self.scenario.repetitions,
            "mean_ms": self.mean_ms,
            "median_ms": self.median_ms,
            "p95_ms": self.p95_ms,
            "total_s": self.total_s,
            "tokenize_ms": self.tokenize_ms,
            "n_samples": self.n_samples,
        }
        d.update(self.counters)
        return d


@dataclass
class ComplexityFit:
    """Per-query time modeled as alpha + beta * n_keywords."""

    alpha_ms: float
    beta_ms: float
    rms_residual_ms: float


def make_cross_encoder(config: ModelConfig, seed: int = 0):
    """Random cross-encoder of the same width/depth for timing comparisons.

    It consumes concatenated query+keyword sequences, so its position table
    covers twice the twin max_len; a logistic layer on the pooled vector
    stands in for the classification output.
    """
    cross_config = ModelConfig(
        n_layers=config.n_layers, hidden_size=config.hidden_size,
        n_heads=config.n_heads, ffn_size=config.ffn_size,
        vocab_buckets=config.vocab_buckets, max_len=2 * config.max_len,
        pooling=config.pooling, crossing=config.crossing,
        shared_encoders=True, dropout=0.0,
    )
    rng = np.random.default_rng(seed)
    params = init_encoder_params(cross_config, rng, "encoder")
    params["out.w"] = truncated_normal(rng, (config.hidden_size,))
    params["out.b"] = np.zeros(())
    return cross_config, params


def _bench_texts(scenario: LatencyScenario, seed: int):
    """Deterministic synthetic query/keyword texts for the benchmark."""
    n_q, n_k = scenario.n_queries, scenario.n_keywords_per_query
    pairs = generate_pairs(n_pairs=n_q * n_k, seed=seed, n_queries=n_q)
    # generate_pairs assigns pair j to query slot j % n_q
    queries = [pairs[qi].query for qi in range(n_q)]
    keyword_sets = [[pairs[j].keyword for j in range(qi, n_q * n_k, n_q)] for qi in range(n_q)]
    return queries, keyword_sets


def bench(
    scenario: LatencyScenario,
    model: TwinModel,
    warmup: int = 2,
    seed: int = 0,
    dtype=np.float32,
    texts: tuple[list[str], list[list[str]]] | None = None,
) -> TimingReport:
    """Run one latency scenario and return per-query timing plus counters.

    ``texts`` optionally fixes the (queries, keyword_sets) workload, which
    keeps the query-encoding intercept identical across grid points when
    fitting the per-keyword slope.
    """
    if texts is None:
        queries, keyword_sets = _bench_texts(scenario, seed)
    else:
        queries = texts[0][: scenario.n_queries]
        keyword_sets = [kws[: scenario.n_keywords_per_query] for kws in texts[1][: scenario.n_queries]]
        if len(queries) < scenario.n_queries or any(
            len(kws) < scenario.n_keywords_per_query for kws in keyword_sets
        ):
            raise ValueError("provided texts are smaller than the scenario demands")
    run_model = model.cast(dtype) if dtype is not None else model
    counters = run_model.counters

    cross_config = cross_params = None
    if scenario.model_mode == "cross_encoder":
        cross_config, cross_params = make_cross_encoder(model.config, seed)
        if dtype is not None:
            cross_params = {k: np.asarray(v, dtype=dtype) for k, v in cross_params.items()}

    t0 = time.perf_counter()
    if scenario.model_mode == "cross_encoder":
        cross_batches = []
        for q, kws in zip(queries, keyword_sets):
            seqs = [
                run_model.tokenize(f"{q} {kw}", max_len=cross_config.max_len)
                for kw in kws
            ]
            cross_batches.append(pack_sequences(seqs))
        q_batches = None
        kw_batches = None
    else:
        q_batches = [pack_sequences([run_model.tokenize(q)]) for q in queries]
        kw_batches = [pack_sequences(run_model.tokenize_many(kws)) for kws in keyword_sets]
        cross_batches = None
    tokenize_ms = (time.perf_counter() - t0) * 1e3

    head = "cosine" if scenario.model_mode == "twin_cosine" else "residual"

    cached_kw_embs = None
    if scenario.model_mode != "cross_encoder" and scenario.keyword_cache:
        # offline phase: precompute keyword embeddings outside the timed region
        cached_kw_embs = [
            run_model.encode_keyword_batch(kb, count=False)[0] for kb in kw_batches
        ]

    def _run_query(qi: int) -> None:
        if scenario.model_mode == "cross_encoder":
            emb, _ = encoder_forward(cross_params, "encoder", cross_batches[qi], cross_config)
            counters.cross_encoder_passes += cross_batches[qi].n_examples
            sigmoid(emb @ cross_params["out.w"] + cross_params["out.b"])
            return
        for _ in range(scenario.qel):
            q_emb, _ = run_model.encode_query_batch(q_batches[qi])
        if cached_kw_embs is not None:
            k_embs = cached_kw_embs[qi]
        else:
            k_embs, _ = run_model.encode_keyword_batch(kw_batches[qi])
        q_rows = np.broadcast_to(q_emb[0], k_embs.shape)
        run_model.score_embeddings(q_rows, k_embs, head=head)

    for qi in range(min(warmup, len(queries))):
        _run_query(qi)
    counters.reset()

    times_ms: list[float] = []
    gc_was_enabled = gc.isenabled()
    gc.collect()
    gc.disable()
    try:
        total_t0 = time.perf_counter()
        for _ in range(scenario.repetitions):
            for qi in range(len(queries)):
                t = time.perf_counter()
                _run_query(qi)
                times_ms.append((time.perf_counter() - t) * 1e3)
        total_s = time.perf_counter() - total_t0
    finally:
        if gc_was_enabled:
            gc.enable()

    arr = np.asarray(times_ms)
    return TimingReport(
        scenario=scenario,
        mean_ms=float(arr.mean()),
        median_ms=float(np.median(arr)),
        p95_ms=float(np.percentile(arr, 95)),
        total_s=total_s,
        tokenize_ms=tokenize_ms,
        counters=counters.as_dict(),
        n_samples=len(times_ms),
    )


def complexity_fit(grid: list[tuple[int, float]]) -> ComplexityFit:
    """Least-squares fit of per-query time vs keyword count.

    ``grid`` holds (n_keywords, mean_time_ms) points; at least three
    distinct keyword counts are required.
    """
    if len(grid) < 3:
        raise ValueError("complexity fit needs at least 3 grid points")
    nk = np.asarray([g[0] for g in grid], dtype=np.float64)
    t = np.asarray([g[1] for g in grid], dtype=np.float64)
    if np.unique(nk).size < 2:
        raise ValueError("grid is degenerate: all keyword counts identical")
    beta, alpha = np.polyfit(nk, t, 1)
    resid = t - (alpha + beta * nk)
    return ComplexityFit(
        alpha_ms=float(alpha),
        beta_ms=float(beta),
        rms_residual_ms=float(np.sqrt((resid**2).mean())),
    )


def bench_grid(
    model: TwinModel,
    mode: str,
    nk_grid: list[int],
    n_queries: int = 50,
    repetitions: int = 3,
    qel: int = 1,
    keyword_cache: bool = True,
    warmup: int = 2,
    seed: int = 0,
    dtype=np.float32,
) -> tuple[list[TimingReport], ComplexityFit]:
    """Benchmark one mode across an n_keywords grid and fit the line.

    The same query and keyword texts serve every grid point (sliced to the
    point's keyword count), and the fit runs over per-point medians, so the
    slope reflects per-keyword cost rather than workload differences.
    """
    widest = LatencyScenario(
        model_mode=mode, qel=qel, keyword_cache=keyword_cache,
        n_queries=n_queries, n_keywords_per_query=max(nk_grid), repetitions=repetitions,
    )
    texts = _bench_texts(widest, seed)
    reports = []
    for nk in nk_grid:
        scenario = LatencyScenario(
            model_mode=mode, qel=qel, keyword_cache=keyword_cache,
            n_queries=n_queries, n_keywords_per_query=nk, repetitions=repetitions,
        )
        reports.append(bench(scenario, model, warmup=warmup, seed=seed, dtype=dtype, texts=texts))
    fit = complexity_fit([(r.scenario.n_keywords_per_query, r.median_ms) for r in reports])
    return reports, fit
