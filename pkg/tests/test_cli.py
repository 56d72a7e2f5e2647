"""End-to-end command-line tests over a small synthetic workspace."""

import json

import numpy as np
import pytest

from twinenc.cli import main
from twinenc.encoder import sigmoid
from twinenc.model import TwinModel

FAST_MODEL = ["--layers", "1", "--hidden-size", "16", "--heads", "2",
              "--vocab-buckets", "256", "--max-len", "8", "--dropout", "0.0"]
FAST_TRAIN = ["--epochs", "2", "--batch-size", "32", "--lr", "1e-3"]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """gen-synthetic -> distill -> encode-corpus -> build-index, once."""
    ws = tmp_path_factory.mktemp("ws")
    assert main(["gen-synthetic", "--out-dir", str(ws / "data"), "--pairs", "400",
                 "--queries", "40", "--seed", "7", "--quiet"]) == 0
    assert main(["distill", "--data", str(ws / "data" / "train.tsv"),
                 "--out", str(ws / "model.ckpt"), "--seed", "7", "--quiet",
                 *FAST_MODEL, *FAST_TRAIN]) == 0
    assert main(["encode-corpus", "--checkpoint", str(ws / "model.ckpt"),
                 "--corpus", str(ws / "data" / "corpus.tsv"),
                 "--out", str(ws / "embeddings.bin"), "--quiet"]) == 0
    assert main(["build-index", "--embeddings", str(ws / "embeddings.bin"),
                 "--out", str(ws / "index.bin"), "--degree", "8",
                 "--build-beam", "16", "--quiet"]) == 0
    return ws


class TestGenSynthetic:
    def test_outputs_exist(self, workspace):
        data = workspace / "data"
        for name in ("train.tsv", "test.tsv", "corpus.tsv", "queries.txt"):
            assert (data / name).is_file(), name

    def test_train_tsv_has_header_and_manifest(self, workspace):
        lines = (workspace / "data" / "train.tsv").read_text().splitlines()
        assert lines[0].startswith("# manifest:")
        assert lines[1] == "query\tkeyword\tz_bad\tz_nonbad\tlabel"


class TestDistill:
    def test_missing_data_file_fails_with_path(self, tmp_path, capsys):
        rc = main(["distill", "--data", str(tmp_path / "nope.tsv"),
                   "--out", str(tmp_path / "m.ckpt"), "--quiet"])
        captured = capsys.readouterr()
        assert rc != 0
        assert "nope.tsv" in captured.err

    def test_manifest_written(self, workspace):
        manifest = json.loads((workspace / "model.ckpt.manifest.json").read_text())
        assert manifest["command"] == "distill"
        assert manifest["seed"] == 7
        assert len(manifest["epoch_losses"]) == 2
        assert manifest["config"]["model"]["hidden_size"] == 16
        assert "checkpoint_sha256" in manifest

    def test_rerun_bit_identical_checkpoint(self, workspace, tmp_path):
        out = tmp_path / "again.ckpt"
        assert main(["distill", "--data", str(workspace / "data" / "train.tsv"),
                     "--out", str(out), "--seed", "7", "--quiet",
                     *FAST_MODEL, *FAST_TRAIN]) == 0
        assert out.read_bytes() == (workspace / "model.ckpt").read_bytes()

    def test_config_file_overrides_flags(self, workspace, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"distill": {"epochs": 1}}))
        out = tmp_path / "cfgrun.ckpt"
        assert main(["distill", "--data", str(workspace / "data" / "train.tsv"),
                     "--out", str(out), "--seed", "7", "--quiet", "--config", str(cfg),
                     *FAST_MODEL, *FAST_TRAIN]) == 0
        manifest = json.loads((tmp_path / "cfgrun.ckpt.manifest.json").read_text())
        assert manifest["config"]["distill"]["epochs"] == 1  # file beat the flag


class TestFinetune:
    def test_runs_and_echoes_lr(self, workspace, tmp_path):
        out = tmp_path / "ft.ckpt"
        assert main(["finetune", "--data", str(workspace / "data" / "train.tsv"),
                     "--checkpoint", str(workspace / "model.ckpt"),
                     "--out", str(out), "--seed", "7", "--quiet",
                     "--finetune-lr", "5e-4", "--finetune-epochs", "1"]) == 0
        manifest = json.loads((tmp_path / "ft.ckpt.manifest.json").read_text())
        assert manifest["finetune_learning_rate"] == 5e-4


class TestSearch:
    def test_row_counts_and_format(self, workspace, tmp_path, capsys):
        out = tmp_path / "hits.tsv"
        assert main(["search", "--checkpoint", str(workspace / "model.ckpt"),
                     "--index", str(workspace / "index.bin"),
                     "--queries", str(workspace / "data" / "queries.txt"),
                     "--top-n", "5", "--out", str(out), "--quiet"]) == 0
        lines = [l for l in out.read_text().splitlines() if l and not l.startswith("#")]
        header, rows = lines[0], lines[1:]
        assert header == "query\trank\tkeyword_id\tcosine_score"
        n_queries = len((workspace / "data" / "queries.txt").read_text().split("\n")) - 1
        assert len(rows) == 5 * n_queries
        ranks = [int(r.split("\t")[1]) for r in rows[:5]]
        assert ranks == [1, 2, 3, 4, 5]

    def test_exact_mode(self, workspace, capsys):
        assert main(["search", "--checkpoint", str(workspace / "model.ckpt"),
                     "--index", str(workspace / "index.bin"),
                     "--queries", str(workspace / "data" / "queries.txt"),
                     "--mode", "exact", "--top-n", "3", "--quiet"]) == 0
        out = capsys.readouterr().out
        assert "cosine_score" in out

    def test_missing_index(self, workspace, tmp_path, capsys):
        rc = main(["search", "--checkpoint", str(workspace / "model.ckpt"),
                   "--index", str(tmp_path / "missing.bin"),
                   "--queries", str(workspace / "data" / "queries.txt"), "--quiet"])
        assert rc != 0
        assert "missing.bin" in capsys.readouterr().err


class TestScore:
    def test_identical_text_cosine_prob(self, workspace, tmp_path, capsys):
        pairs = tmp_path / "pairs.tsv"
        pairs.write_text("query\tkeyword\nred shoes\tred shoes\n")
        assert main(["score", "--checkpoint", str(workspace / "model.ckpt"),
                     "--pairs", str(pairs), "--head", "cosine", "--quiet"]) == 0
        out_lines = [l for l in capsys.readouterr().out.splitlines() if not l.startswith("#")]
        prob = float(out_lines[1].split("\t")[-1])
        model = TwinModel.load(workspace / "model.ckpt")
        a = float(model.params["cosine_head.scale"])
        b = float(model.params["cosine_head.bias"])
        assert prob == pytest.approx(float(sigmoid(np.asarray(a + b))), abs=1e-6)

    def test_scored_file_roundtrip_to_eval(self, workspace, tmp_path, capsys):
        scored = tmp_path / "scored.tsv"
        assert main(["score", "--checkpoint", str(workspace / "model.ckpt"),
                     "--pairs", str(workspace / "data" / "test.tsv"),
                     "--out", str(scored), "--quiet"]) == 0
        assert main(["eval-auc", "--scored", str(scored), "--quiet"]) == 0
        out = capsys.readouterr().out
        assert out.startswith("roc_auc\t")
        auc = float(out.split("\t")[1])
        assert 0.0 <= auc <= 1.0


class TestEvalNdcg:
    def test_positions_output(self, workspace, tmp_path, capsys):
        scored = tmp_path / "scored.tsv"
        assert main(["score", "--checkpoint", str(workspace / "model.ckpt"),
                     "--pairs", str(workspace / "data" / "test.tsv"),
                     "--out", str(scored), "--quiet"]) == 0
        out_file = tmp_path / "ndcg.tsv"
        assert main(["eval-ndcg", "--scored", str(scored), "--positions", "1,3,5",
                     "--out", str(out_file), "--quiet"]) == 0
        printed = capsys.readouterr().out
        assert "ndcg@1" in printed and "ndcg@5" in printed
        rows = [l for l in out_file.read_text().splitlines() if not l.startswith("#")]
        assert rows[0] == "position\tndcg"
        assert len(rows) == 4


class TestBench:
    def test_bench_runs_and_reports(self, tmp_path, capsys):
        out = tmp_path / "bench.tsv"
        assert main(["bench", "--modes", "twin_cosine", "--nk-grid", "5,10,20",
                     "--n-queries", "4", "--reps", "1", "--warmup", "1",
                     "--out", str(out), "--seed", "0", "--quiet", *FAST_MODEL]) == 0
        printed = capsys.readouterr().out
        assert "per-query time" in printed
        assert out.is_file()


class TestRawStore:
    def test_raw_encode(self, workspace, tmp_path):
        out = tmp_path / "raw.bin"
        assert main(["encode-corpus", "--checkpoint", str(workspace / "model.ckpt"),
                     "--corpus", str(workspace / "data" / "corpus.tsv"),
                     "--out", str(out), "--raw", "--quiet"]) == 0
        from twinenc.index import METRIC_RAW, EmbeddingIndex
        store = EmbeddingIndex.load(out)
        assert store.metric == METRIC_RAW

    def test_build_index_rejects_raw(self, workspace, tmp_path, capsys):
        raw = tmp_path / "raw.bin"
        main(["encode-corpus", "--checkpoint", str(workspace / "model.ckpt"),
              "--corpus", str(workspace / "data" / "corpus.tsv"),
              "--out", str(raw), "--raw", "--quiet"])
        rc = main(["build-index", "--embeddings", str(raw),
                   "--out", str(tmp_path / "idx.bin"), "--quiet"])
        assert rc != 0
        assert "unit-normalized" in capsys.readouterr().err
