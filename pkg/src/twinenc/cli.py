"""Command-line surface: train, fine-tune, encode, index, search, evaluate.

Subcommands: distill, finetune, encode-corpus, build-index, search, score,
eval-auc, eval-ndcg, bench, gen-synthetic. Every command is deterministic
given its seed and inputs. Settings resolve in three layers: built-in
defaults, then command-line flags, then the JSON config file (the file has
the last word); the resolved configuration is echoed to stderr and recorded
in each output's manifest.

Pair data is TSV everywhere; checkpoints and indices are binary. File
outputs get a ``<path>.manifest.json`` sidecar, and TSV streams carry a
leading ``# manifest: ...`` comment with the config hash, checkpoint hash,
and format version.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from . import index as index_mod
from .checkpoint import FORMAT_VERSION, config_hash, file_sha256
from .config import CROSSING_MODES, DistillationConfig, ModelConfig, POOLING_MODES
from .metrics import mean_ndcg, roc_auc
from .model import TwinModel
from .synthetic import generate_pairs, split_pairs
from .text import TrigramVocab, normalize
from .training import (
    LABEL_TO_BINARY,
    PairRecord,
    distill_train,
    finetune,
    load_pair_tsv,
    save_pair_tsv,
)


class CliError(Exception):
    """User-facing command failure; message printed to stderr, exit 1."""


def _require_file(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise CliError(f"input file not found: {path}")
    return p


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    p = _require_file(path)
    try:
        raw = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CliError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise CliError(f"config file {path} must hold a JSON object")
    return raw


_MODEL_FLAG_FIELDS = (
    ("layers", "n_layers"),
    ("hidden_size", "hidden_size"),
    ("heads", "n_heads"),
    ("ffn_size", "ffn_size"),
    ("vocab_buckets", "vocab_buckets"),
    ("max_len", "max_len"),
    ("pooling", "pooling"),
    ("crossing", "crossing"),
    ("shared_encoders", "shared_encoders"),
    ("dropout", "dropout"),
)

_DISTILL_FLAG_FIELDS = (
    ("temperature", "temperature"),
    ("lr", "learning_rate"),
    ("beta1", "beta1"),
    ("beta2", "beta2"),
    ("weight_decay", "weight_decay"),
    ("epochs", "epochs"),
    ("batch_size", "batch_size"),
    ("finetune_lr", "finetune_learning_rate"),
    ("finetune_epochs", "finetune_epochs"),
)


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model")
    g.add_argument("--preset", choices=("desk", "large"), default=None,
                   help="architecture preset (default desk: L=2 H=64 A=2)")
    g.add_argument("--layers", type=int, default=None)
    g.add_argument("--hidden-size", type=int, default=None)
    g.add_argument("--heads", type=int, default=None)
    g.add_argument("--ffn-size", type=int, default=None)
    g.add_argument("--vocab-buckets", type=int, default=None)
    g.add_argument("--max-len", type=int, default=None)
    g.add_argument("--pooling", choices=POOLING_MODES, default=None)
    g.add_argument("--crossing", choices=CROSSING_MODES, default=None)
    g.add_argument("--shared-encoders", action=argparse.BooleanOptionalAction, default=None)
    g.add_argument("--dropout", type=float, default=None)
    g.add_argument("--vocab-hash-seed", type=int, default=None)


def _add_distill_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("training")
    g.add_argument("--temperature", type=float, default=None)
    g.add_argument("--lr", type=float, default=None)
    g.add_argument("--beta1", type=float, default=None)
    g.add_argument("--beta2", type=float, default=None)
    g.add_argument("--weight-decay", type=float, default=None)
    g.add_argument("--epochs", type=int, default=None)
    g.add_argument("--batch-size", type=int, default=None)
    g.add_argument("--finetune-lr", type=float, default=None)
    g.add_argument("--finetune-epochs", type=int, default=None)


def _add_common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, help="JSON config file; overrides flags")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--quiet", action="store_true", help="suppress the config echo")


def _resolve(args, file_cfg: dict) -> dict:
    """Merge defaults <- flags <- config file into one resolved dict."""
    model_kwargs = {}
    if getattr(args, "preset", None) == "large" or file_cfg.get("preset") == "large":
        model_kwargs = dict(n_layers=6, hidden_size=512, n_heads=8, vocab_buckets=50_000)
    for flag, field_name in _MODEL_FLAG_FIELDS:
        v = getattr(args, flag, None)
        if v is not None:
            model_kwargs[field_name] = v
    for field_name, v in file_cfg.get("model", {}).items():
        model_kwargs[field_name] = v

    distill_kwargs = {}
    for flag, field_name in _DISTILL_FLAG_FIELDS:
        v = getattr(args, flag, None)
        if v is not None:
            distill_kwargs[field_name] = v
    for field_name, v in file_cfg.get("distill", {}).items():
        distill_kwargs[field_name] = v

    seed = 0
    if getattr(args, "seed", None) is not None:
        seed = args.seed
    if "seed" in file_cfg:
        seed = file_cfg["seed"]

    vocab_hash_seed = 0
    if getattr(args, "vocab_hash_seed", None) is not None:
        vocab_hash_seed = args.vocab_hash_seed
    if "vocab_hash_seed" in file_cfg:
        vocab_hash_seed = file_cfg["vocab_hash_seed"]

    try:
        model = ModelConfig(**model_kwargs)
        distill = DistillationConfig(**distill_kwargs)
    except (TypeError, ValueError) as exc:
        raise CliError(f"invalid configuration: {exc}") from exc
    return {
        "model": model.to_dict(),
        "distill": distill.to_dict(),
        "seed": seed,
        "vocab_hash_seed": vocab_hash_seed,
    }


def _echo(args, resolved: dict) -> None:
    if not getattr(args, "quiet", False):
        print(f"resolved config: {json.dumps(resolved, sort_keys=True)}", file=sys.stderr)


def _build_model(resolved: dict) -> TwinModel:
    config = ModelConfig.from_dict(resolved["model"])
    vocab = TrigramVocab(bucket_count=config.vocab_buckets,
                         hash_seed=resolved["vocab_hash_seed"])
    return TwinModel.initialize(config, vocab, seed=resolved["seed"])


def _manifest(command: str, resolved: dict, **extra) -> dict:
    payload = {
        "command": command,
        "format_version": FORMAT_VERSION,
        "config": resolved,
        "config_sha256": config_hash(resolved),
    }
    payload.update(extra)
    return payload


def _write_manifest(out_path: str | Path, payload: dict) -> None:
    Path(str(out_path) + ".manifest.json").write_text(
        json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def _manifest_comment(payload: dict) -> str:
    slim = {k: v for k, v in payload.items() if k != "config"}
    return "# manifest: " + json.dumps(slim, sort_keys=True)


def _open_out(path: str | None):
    if path is None or path == "-":
        return sys.stdout, False
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    return open(path, "w", encoding="utf-8"), True


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_gen_synthetic(args) -> int:
    file_cfg = _load_config_file(args.config)
    seed = args.seed if args.seed is not None else file_cfg.get("seed", 0)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    pairs = generate_pairs(
        n_pairs=args.pairs, seed=seed, n_queries=args.queries, n_topics=args.topics
    )
    train, test = split_pairs(pairs, n_queries=args.queries, holdout_fraction=args.holdout)

    def to_record(p) -> PairRecord:
        return PairRecord(query=p.query, keyword=p.keyword,
                          teacher_logits=p.teacher_logits, editorial_label=p.label)

    resolved = {"pairs": args.pairs, "queries": args.queries, "topics": args.topics,
                "holdout": args.holdout, "seed": seed}
    manifest = _manifest("gen-synthetic", resolved)
    save_pair_tsv(out_dir / "train.tsv", [to_record(p) for p in train], manifest=manifest)
    save_pair_tsv(out_dir / "test.tsv", [to_record(p) for p in test], manifest=manifest)

    keywords = list(dict.fromkeys(p.keyword for p in pairs))
    width = max(6, len(str(len(keywords))))
    corpus_lines = [_manifest_comment(manifest), "id\tkeyword"]
    corpus_lines += [f"k{i:0{width}d}\t{kw}" for i, kw in enumerate(keywords)]
    (out_dir / "corpus.tsv").write_text("\n".join(corpus_lines) + "\n", encoding="utf-8")

    queries = list(dict.fromkeys(p.query for p in test))
    (out_dir / "queries.txt").write_text("\n".join(queries) + "\n", encoding="utf-8")

    _write_manifest(out_dir / "corpus.tsv", manifest)
    print(
        f"wrote {len(train)} train / {len(test)} test pairs, "
        f"{len(keywords)} corpus keywords, {len(queries)} queries to {out_dir}",
        file=sys.stderr,
    )
    return 0


def cmd_distill(args) -> int:
    file_cfg = _load_config_file(args.config)
    resolved = _resolve(args, file_cfg)
    _echo(args, resolved)
    records = load_pair_tsv(_require_file(args.data))
    model = _build_model(resolved)
    dconfig = DistillationConfig.from_dict(resolved["distill"])
    t0 = time.perf_counter()
    history = distill_train(records, dconfig, model, seed=resolved["seed"],
                            log=None if args.quiet else lambda m: print(m, file=sys.stderr))
    model.save(args.out)
    _write_manifest(args.out, _manifest(
        "distill", resolved,
        checkpoint_sha256=file_sha256(args.out),
        data=str(args.data), records=len(records),
        seed=resolved["seed"], epoch_losses=history.epoch_losses,
        steps=history.steps, wall_seconds=time.perf_counter() - t0,
    ))
    print(f"wrote checkpoint {args.out}", file=sys.stderr)
    return 0


def cmd_finetune(args) -> int:
    file_cfg = _load_config_file(args.config)
    records = load_pair_tsv(_require_file(args.data))
    model = TwinModel.load(_require_file(args.checkpoint))
    resolved = _resolve(args, file_cfg)
    resolved["model"] = model.config.to_dict()  # architecture comes from the checkpoint
    _echo(args, resolved)
    dconfig = DistillationConfig.from_dict(resolved["distill"])
    t0 = time.perf_counter()
    history = finetune(records, dconfig, model, seed=resolved["seed"],
                       log=None if args.quiet else lambda m: print(m, file=sys.stderr))
    model.save(args.out)
    _write_manifest(args.out, _manifest(
        "finetune", resolved,
        checkpoint_sha256=file_sha256(args.out),
        source_checkpoint=str(args.checkpoint),
        finetune_learning_rate=dconfig.finetune_learning_rate,
        data=str(args.data), records=len(records),
        seed=resolved["seed"], epoch_losses=history.epoch_losses,
        steps=history.steps, wall_seconds=time.perf_counter() - t0,
    ))
    print(f"wrote checkpoint {args.out}", file=sys.stderr)
    return 0


def _read_corpus(path: Path) -> tuple[list[str], list[str]]:
    """Corpus TSV: ``id<TAB>keyword`` rows (header optional) or bare lines."""
    ids: list[str] = []
    texts: list[str] = []
    auto = 0
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            if "\t" in line:
                kid, text = line.split("\t", 1)
                if kid == "id" and text == "keyword":
                    continue
                ids.append(kid)
                texts.append(text)
            else:
                ids.append(f"k{auto:06d}")
                texts.append(line)
                auto += 1
    if not texts:
        raise CliError(f"corpus file {path} contains no keywords")
    return ids, texts


def cmd_encode_corpus(args) -> int:
    model = TwinModel.load(_require_file(args.checkpoint))
    ids, texts = _read_corpus(_require_file(args.corpus))
    store = index_mod.encode_corpus(texts, model, ids=ids,
                                    batch_size=args.batch_size, normalize=not args.raw)
    store.save(args.out)
    resolved = {"model": model.config.to_dict(), "raw": bool(args.raw)}
    _write_manifest(args.out, _manifest(
        "encode-corpus", resolved,
        checkpoint_sha256=file_sha256(args.checkpoint),
        index_sha256=file_sha256(args.out),
        corpus=str(args.corpus), keywords=len(store),
    ))
    print(f"encoded {len(store)} keywords into {args.out}", file=sys.stderr)
    return 0


def cmd_build_index(args) -> int:
    store = index_mod.EmbeddingIndex.load(_require_file(args.embeddings))
    if store.metric != index_mod.METRIC_UNIT:
        raise CliError("build-index requires a unit-normalized embedding store (not --raw)")
    index_mod.build_graph(store, degree_bound=args.degree, build_beam=args.build_beam)
    store.save(args.out)
    resolved = {"degree_bound": args.degree, "build_beam": args.build_beam}
    _write_manifest(args.out, _manifest(
        "build-index", resolved,
        index_sha256=file_sha256(args.out),
        embeddings=str(args.embeddings), keywords=len(store),
    ))
    print(f"built graph index over {len(store)} keywords into {args.out}", file=sys.stderr)
    return 0


def cmd_search(args) -> int:
    model = TwinModel.load(_require_file(args.checkpoint))
    index = index_mod.EmbeddingIndex.load(_require_file(args.index))
    if args.mode == "approx" and index.graph is None:
        raise CliError(f"index {args.index} has no graph; use --mode exact or build-index")
    if args.queries == "-":
        lines = sys.stdin.read().splitlines()
    else:
        lines = _require_file(args.queries).read_text(encoding="utf-8").splitlines()
    queries = [ln.strip() for ln in lines if ln.strip() and not ln.startswith("#")]

    out, closable = _open_out(args.out)
    manifest = _manifest("search", {"top_n": args.top_n, "mode": args.mode, "beam": args.beam},
                         checkpoint_sha256=file_sha256(args.checkpoint),
                         index_sha256=file_sha256(args.index))
    try:
        print(_manifest_comment(manifest), file=out)
        print("query\trank\tkeyword_id\tcosine_score", file=out)
        for query in queries:
            if not normalize(query):
                print(f"skipping unencodable query: {query!r}", file=sys.stderr)
                continue
            q_emb = model.encode_queries([query])[0]
            q_unit = q_emb / np.linalg.norm(q_emb)
            if args.mode == "exact":
                results = index_mod.knn_exact(q_unit, index, args.top_n)
            else:
                results = index_mod.knn_approx(q_unit, index, args.top_n, search_beam=args.beam)
            for r in results:
                print(f"{query}\t{r.rank}\t{r.keyword_id}\t{r.cosine_score:.6f}", file=out)
    finally:
        if closable:
            out.close()
    if closable:
        _write_manifest(args.out, manifest)
    return 0


def _read_tsv_table(path: Path) -> tuple[list[str], list[list[str]]]:
    header: list[str] | None = None
    rows: list[list[str]] = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if header is None:
                header = parts
                continue
            if len(parts) != len(header):
                raise CliError(f"{path}:{lineno}: expected {len(header)} fields, got {len(parts)}")
            rows.append(parts)
    if header is None:
        raise CliError(f"{path}: empty file (header row required)")
    return header, rows


def _col(header: list[str], name: str, path) -> int:
    if name not in header:
        raise CliError(f"{path}: no column named {name!r} (header: {header})")
    return header.index(name)


def cmd_score(args) -> int:
    model = TwinModel.load(_require_file(args.checkpoint))
    path = _require_file(args.pairs)
    header, rows = _read_tsv_table(path)
    qi = _col(header, "query", path)
    ki = _col(header, "keyword", path)
    head = args.head or model.config.crossing

    out, closable = _open_out(args.out)
    manifest = _manifest("score", {"head": head},
                         checkpoint_sha256=file_sha256(args.checkpoint))
    try:
        print(_manifest_comment(manifest), file=out)
        print("\t".join(header + ["prob"]), file=out)
        batch = 256
        for lo in range(0, len(rows), batch):
            chunk = rows[lo : lo + batch]
            probs = model.score_pairs([r[qi] for r in chunk], [r[ki] for r in chunk], head=head)
            for row, p in zip(chunk, probs):
                print("\t".join(row + [f"{float(p):.10f}"]), file=out)
    finally:
        if closable:
            out.close()
    if closable:
        _write_manifest(args.out, manifest)
    return 0


def _binary_labels(raw: list[str], path) -> list[int]:
    out = []
    for v in raw:
        if v in LABEL_TO_BINARY:
            out.append(LABEL_TO_BINARY[v])
        elif v in ("0", "1"):
            out.append(int(v))
        else:
            raise CliError(f"{path}: label {v!r} is not bad/fair/good/excellent or 0/1")
    return out


def cmd_eval_auc(args) -> int:
    path = _require_file(args.scored)
    header, rows = _read_tsv_table(path)
    si = _col(header, args.score_col, path)
    li = _col(header, args.label_col, path)
    scores = [float(r[si]) for r in rows]
    labels = _binary_labels([r[li] for r in rows], path)
    try:
        auc = roc_auc(scores, labels)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    print(f"roc_auc\t{auc:.6f}")
    if args.out:
        manifest = _manifest("eval-auc", {"score_col": args.score_col, "label_col": args.label_col})
        Path(args.out).write_text(
            _manifest_comment(manifest) + f"\nmetric\tvalue\nroc_auc\t{auc:.10f}\n",
            encoding="utf-8",
        )
        _write_manifest(args.out, manifest)
    return 0


def cmd_eval_ndcg(args) -> int:
    path = _require_file(args.scored)
    header, rows = _read_tsv_table(path)
    qi = _col(header, args.query_col, path)
    li = _col(header, args.label_col, path)
    si = _col(header, args.score_col, path)
    by_query: dict[str, list[tuple[float, str]]] = {}
    for r in rows:
        by_query.setdefault(r[qi], []).append((float(r[si]), r[li]))
    rankings = []
    for items in by_query.values():
        items.sort(key=lambda t: -t[0])
        rankings.append([lab for _, lab in items])
    positions = [int(p) for p in args.positions.split(",")]
    lines = ["position\tndcg"]
    for p in positions:
        try:
            value = mean_ndcg(rankings, p, gain=args.gain)
        except ValueError as exc:
            raise CliError(str(exc)) from exc
        lines.append(f"{p}\t{value:.6f}")
        print(f"ndcg@{p}\t{value:.6f}")
    if args.out:
        manifest = _manifest("eval-ndcg", {"gain": args.gain, "positions": positions})
        Path(args.out).write_text(
            _manifest_comment(manifest) + "\n" + "\n".join(lines) + "\n", encoding="utf-8"
        )
        _write_manifest(args.out, manifest)
    return 0


def cmd_bench(args) -> int:
    file_cfg = _load_config_file(args.config)
    resolved = _resolve(args, file_cfg)
    _echo(args, resolved)
    if args.checkpoint:
        model = TwinModel.load(_require_file(args.checkpoint))
    else:
        model = _build_model(resolved)
    dtype = np.float32 if args.dtype == "f32" else np.float64
    nk_grid = [int(v) for v in args.nk_grid.split(",")]
    modes = [m.strip() for m in args.modes.split(",")]

    rows = []
    fits = {}
    for mode in modes:
        if mode not in bench_mod.MODEL_MODES:
            raise CliError(f"unknown bench mode {mode!r}; choose from {bench_mod.MODEL_MODES}")
        reports, fit = bench_mod.bench_grid(
            model, mode, nk_grid, n_queries=args.n_queries, repetitions=args.reps,
            qel=args.qel, keyword_cache=not args.no_cache, warmup=args.warmup,
            seed=resolved["seed"], dtype=dtype,
        )
        fits[mode] = fit
        for r in reports:
            rows.append(r.as_dict())
            print(
                f"{mode:>14}  nk={r.scenario.n_keywords_per_query:<5d} "
                f"mean={r.mean_ms:8.3f}ms  median={r.median_ms:8.3f}ms  "
                f"p95={r.p95_ms:8.3f}ms  q_enc={r.counters['query_encoder_passes']} "
                f"k_enc={r.counters['keyword_encoder_passes']} "
                f"cross={r.counters['cross_encoder_passes']}"
            )
    for mode, fit in fits.items():
        print(
            f"{mode:>14}  per-query time ~= {fit.alpha_ms:.4f}ms + "
            f"{fit.beta_ms:.6f}ms * n_keywords  (rms residual {fit.rms_residual_ms:.4f}ms)"
        )
    if args.out:
        manifest = _manifest("bench", resolved, dtype=args.dtype)
        keys = sorted({k for row in rows for k in row})
        lines = [_manifest_comment(manifest), "\t".join(keys)]
        for row in rows:
            lines.append("\t".join(str(row.get(k, "")) for k in keys))
        for mode, fit in fits.items():
            lines.append(f"# fit\t{mode}\talpha_ms={fit.alpha_ms!r}\tbeta_ms={fit.beta_ms!r}")
        Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
        _write_manifest(args.out, manifest)
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="twinenc",
        description="Twin-encoder retrieval: distillation training, indexing, search, benchmarks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", help="generate a synthetic labeled corpus")
    _add_common_flags(p)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--pairs", type=int, default=5000)
    p.add_argument("--queries", type=int, default=500)
    p.add_argument("--topics", type=int, default=20)
    p.add_argument("--holdout", type=float, default=0.2)
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("distill", help="train a student model from teacher logits")
    _add_common_flags(p)
    _add_model_flags(p)
    _add_distill_flags(p)
    p.add_argument("--data", required=True, help="pair TSV with teacher logits")
    p.add_argument("--out", required=True, help="output checkpoint path")
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("finetune", help="fine-tune a distilled model on hard labels")
    _add_common_flags(p)
    _add_distill_flags(p)
    p.add_argument("--data", required=True, help="pair TSV with labels")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("encode-corpus", help="encode keywords into an embedding store")
    _add_common_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True, help="TSV id<TAB>keyword, or one keyword per line")
    p.add_argument("--out", required=True)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--raw", action="store_true",
                   help="store raw float64 embeddings (residual-head serving cache)")
    p.set_defaults(func=cmd_encode_corpus)

    p = sub.add_parser("build-index", help="attach a proximity graph to an embedding store")
    _add_common_flags(p)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--degree", type=int, default=16)
    p.add_argument("--build-beam", type=int, default=64)
    p.set_defaults(func=cmd_build_index)

    p = sub.add_parser("search", help="retrieve nearest keywords for queries")
    _add_common_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--queries", required=True, help="query file, or - for stdin")
    p.add_argument("--top-n", type=int, default=5)
    p.add_argument("--beam", type=int, default=64)
    p.add_argument("--mode", choices=("approx", "exact"), default="approx")
    p.add_argument("--out", default=None, help="output TSV (default stdout)")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("score", help="score explicit (query, keyword) pairs")
    _add_common_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--pairs", required=True, help="TSV with query and keyword columns")
    p.add_argument("--head", choices=CROSSING_MODES, default=None,
                   help="crossing head (default: the checkpoint's)")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval-auc", help="ROC-AUC of a scored TSV")
    _add_common_flags(p)
    p.add_argument("--scored", required=True)
    p.add_argument("--score-col", default="prob")
    p.add_argument("--label-col", default="label")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval_auc)

    p = sub.add_parser("eval-ndcg", help="graded nDCG of a scored TSV, per position")
    _add_common_flags(p)
    p.add_argument("--scored", required=True)
    p.add_argument("--query-col", default="query")
    p.add_argument("--label-col", default="label")
    p.add_argument("--score-col", default="prob")
    p.add_argument("--positions", default="1,2,3,4,5")
    p.add_argument("--gain", choices=("linear", "exponential"), default="linear")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval_ndcg)

    p = sub.add_parser("bench", help="latency scenarios and complexity fits")
    _add_common_flags(p)
    _add_model_flags(p)
    p.add_argument("--checkpoint", default=None,
                   help="model to time (default: randomly initialized from flags)")
    p.add_argument("--modes", default="twin_cosine,twin_residual,cross_encoder")
    p.add_argument("--nk-grid", default="25,50,100")
    p.add_argument("--n-queries", type=int, default=50)
    p.add_argument("--reps", type=int, default=3)
    p.add_argument("--qel", type=int, default=1)
    p.add_argument("--no-cache", action="store_true", help="encode keywords at query time")
    p.add_argument("--warmup", type=int, default=2)
    p.add_argument("--dtype", choices=("f32", "f64"), default="f32")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
