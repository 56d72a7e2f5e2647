#!/usr/bin/env python3
"""Serving-latency comparison across scoring modes.

Times the cached twin modes against the cross encoder over a keyword-count
grid, fits per-query time = alpha + beta * n_keywords for each mode, and
prints the table plus the decoupling speedup at 100 keywords per query.
Timings are machine-specific; the interesting outputs are the counter
contracts, the slope ordering, and the speedup ratio.
"""

import argparse

import numpy as np

from twinenc import ModelConfig, TwinModel
from twinenc.bench import LatencyScenario, bench, bench_grid


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--checkpoint", default=None, help="model to time (default: random desk model)")
    ap.add_argument("--n-queries", type=int, default=40)
    ap.add_argument("--reps", type=int, default=4)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    if args.checkpoint:
        model = TwinModel.load(args.checkpoint)
    else:
        model = TwinModel.initialize(ModelConfig(dropout=0.0), seed=args.seed)

    print(f"model: L={model.config.n_layers} H={model.config.hidden_size} "
          f"A={model.config.n_heads} max_len={model.config.max_len}\n")

    print(f"{'mode':>14} {'n_kw':>6} {'mean ms':>10} {'median ms':>10} {'p95 ms':>10}"
          f" {'q_enc':>7} {'k_enc':>7} {'cross':>7}")
    fits = {}
    for mode, grid, nq, reps in (
        ("twin_cosine", [100, 300, 600], args.n_queries, args.reps),
        ("twin_residual", [100, 300, 600], args.n_queries, args.reps),
        ("cross_encoder", [25, 50, 100], max(10, args.n_queries // 3), max(1, args.reps // 2)),
    ):
        reports, fit = bench_grid(model, mode, grid, n_queries=nq, repetitions=reps, seed=args.seed)
        fits[mode] = fit
        for r in reports:
            c = r.counters
            print(f"{mode:>14} {r.scenario.n_keywords_per_query:>6d} {r.mean_ms:>10.3f}"
                  f" {r.median_ms:>10.3f} {r.p95_ms:>10.3f}"
                  f" {c['query_encoder_passes']:>7d} {c['keyword_encoder_passes']:>7d}"
                  f" {c['cross_encoder_passes']:>7d}")

    print("\nper-query time ~= alpha + beta * n_keywords")
    for mode, fit in fits.items():
        print(f"{mode:>14}: alpha {fit.alpha_ms:9.4f} ms   beta {fit.beta_ms:.6f} ms/kw"
              f"   (rms residual {fit.rms_residual_ms:.4f} ms)")

    cached = bench(LatencyScenario(model_mode="twin_cosine", n_queries=30,
                                   n_keywords_per_query=100, repetitions=3),
                   model, warmup=3, seed=args.seed + 1)
    cross = bench(LatencyScenario(model_mode="cross_encoder", n_queries=10,
                                  n_keywords_per_query=100, repetitions=1),
                  model, warmup=2, seed=args.seed + 1)
    print(f"\nat 100 keywords/query: cached twin_cosine {cached.median_ms:.3f} ms vs "
          f"cross encoder {cross.median_ms:.3f} ms  ->  {cross.median_ms / cached.median_ms:.0f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
