#!/usr/bin/env python3
"""End-to-end walkthrough on synthetic data.

Generates a labeled corpus, distills a student, fine-tunes it, encodes and
indexes the keyword corpus, runs a few searches, and reports held-out
ROC-AUC and nDCG. Everything lands in a work directory (default ./pipeline_run).
"""

import argparse
import sys
from pathlib import Path

from twinenc.cli import main as cli


def run(workdir: Path, seed: int, pairs: int, epochs: int) -> int:
    workdir.mkdir(parents=True, exist_ok=True)
    data = workdir / "data"
    ckpt = workdir / "model.ckpt"
    ckpt_ft = workdir / "model_ft.ckpt"
    emb = workdir / "embeddings.bin"
    index = workdir / "index.bin"
    scored = workdir / "scored.tsv"
    hits = workdir / "hits.tsv"

    steps = [
        ["gen-synthetic", "--out-dir", str(data), "--pairs", str(pairs),
         "--queries", str(max(10, pairs // 10)), "--seed", str(seed)],
        ["distill", "--data", str(data / "train.tsv"), "--out", str(ckpt),
         "--seed", str(seed), "--lr", "3e-4", "--epochs", str(epochs)],
        ["finetune", "--data", str(data / "train.tsv"), "--checkpoint", str(ckpt),
         "--out", str(ckpt_ft), "--seed", str(seed)],
        ["encode-corpus", "--checkpoint", str(ckpt_ft), "--corpus", str(data / "corpus.tsv"),
         "--out", str(emb)],
        ["build-index", "--embeddings", str(emb), "--out", str(index)],
        ["search", "--checkpoint", str(ckpt_ft), "--index", str(index),
         "--queries", str(data / "queries.txt"), "--top-n", "5", "--out", str(hits)],
        ["score", "--checkpoint", str(ckpt_ft), "--pairs", str(data / "test.tsv"),
         "--out", str(scored)],
        ["eval-auc", "--scored", str(scored)],
        ["eval-ndcg", "--scored", str(scored), "--positions", "1,2,3,4,5"],
    ]
    for step in steps:
        print(f"\n== twinenc {' '.join(step)}", file=sys.stderr)
        rc = cli(step)
        if rc != 0:
            return rc
    print(f"\nartifacts in {workdir}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--workdir", type=Path, default=Path("pipeline_run"))
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--pairs", type=int, default=5000)
    ap.add_argument("--epochs", type=int, default=20)
    args = ap.parse_args()
    sys.exit(run(args.workdir, args.seed, args.pairs, args.epochs))
