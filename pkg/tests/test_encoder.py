import numpy as np
import pytest

from twinenc import ModelConfig, TwinModel
from twinenc.encoder import (
    embed_forward,
    encoder_forward,
    layer_forward,
    masked_softmax,
    pack_sequences,
    pool_forward,
)
from twinenc.text import TokenSequence, TrigramVocab, encode_text


def _batch(model, texts):
    return pack_sequences(model.tokenize_many(texts))


class TestEmbedInput:
    def test_zero_tables_zero_output(self, tiny_model):
        params = {k: np.zeros_like(v) for k, v in tiny_model.params.items()}
        batch = _batch(tiny_model, ["red shoes"])
        x = embed_forward(params, tiny_model.query_prefix, batch)
        assert np.all(x == 0.0)

    def test_zero_positions_leave_trigram_sum(self, tiny_model):
        params = dict(tiny_model.params)
        prefix = tiny_model.query_prefix
        params[f"{prefix}.pos_emb"] = np.zeros_like(params[f"{prefix}.pos_emb"])
        batch = _batch(tiny_model, ["cat"])
        x = embed_forward(params, prefix, batch)
        tok_emb = params[f"{prefix}.tok_emb"]
        expected = sum(tok_emb[b] for b in tiny_model.tokenize("cat").tokens[0])
        np.testing.assert_allclose(x[0, 0], expected)
        # padding slots carry only (zeroed) position embeddings here
        np.testing.assert_allclose(x[0, 1:], 0.0)

    def test_word_order_changes_embedding(self, tiny_model):
        a = tiny_model.encode_queries(["red shoes"])
        b = tiny_model.encode_queries(["shoes red"])
        assert not np.allclose(a, b)

    def test_position_index_beyond_table_rejected(self, tiny_model):
        vocab = tiny_model.vocab
        seq = encode_text("a b c d e f g h", vocab, max_len=tiny_model.config.max_len + 2)
        batch = pack_sequences([seq])
        with pytest.raises(ValueError, match="position table"):
            embed_forward(tiny_model.params, tiny_model.query_prefix, batch)


class TestMaskedSoftmax:
    def test_masked_entries_exactly_zero(self, rng):
        scores = rng.standard_normal((2, 5))
        mask = np.array([[True, True, False, True, False], [True, False, False, False, False]])
        p = masked_softmax(scores, mask)
        assert np.all(p[~mask] == 0.0)
        np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-12)

    def test_single_unmasked_gets_weight_one(self, rng):
        scores = rng.standard_normal((1, 4))
        mask = np.array([[False, False, True, False]])
        p = masked_softmax(scores, mask)
        assert p[0, 2] == 1.0


class TestTransformerLayer:
    def test_single_token_self_attention(self, tiny_model, rng):
        cfg = tiny_model.config
        batch = _batch(tiny_model, ["cat"])
        x = rng.standard_normal((1, cfg.max_len, cfg.hidden_size))
        _, cache = layer_forward(
            x, batch.mask, tiny_model.params, f"{tiny_model.query_prefix}.layers.0", cfg
        )
        # the only unmasked token attends to itself with weight exactly 1
        np.testing.assert_allclose(cache["probs"][0, :, 0, 0], 1.0, atol=0)

    def test_nan_input_rejected(self, tiny_model):
        cfg = tiny_model.config
        batch = _batch(tiny_model, ["cat"])
        x = np.full((1, cfg.max_len, cfg.hidden_size), np.nan)
        with pytest.raises(ValueError, match="non-finite"):
            layer_forward(x, batch.mask, tiny_model.params, f"{tiny_model.query_prefix}.layers.0", cfg)

    def test_masked_slot_perturbation_leaves_unmasked_outputs(self, tiny_model, rng):
        cfg = tiny_model.config
        batch = _batch(tiny_model, ["red shoes"])
        x = rng.standard_normal((1, cfg.max_len, cfg.hidden_size))
        y1, _ = layer_forward(x, batch.mask, tiny_model.params, f"{tiny_model.query_prefix}.layers.0", cfg)
        x2 = x.copy()
        x2[0, ~batch.mask[0]] += rng.standard_normal((int((~batch.mask[0]).sum()), cfg.hidden_size))
        y2, _ = layer_forward(x2, batch.mask, tiny_model.params, f"{tiny_model.query_prefix}.layers.0", cfg)
        np.testing.assert_array_equal(y1[0, batch.mask[0]], y2[0, batch.mask[0]])


class TestPooling:
    def test_zero_scorer_is_mean(self, tiny_model, rng):
        cfg = tiny_model.config
        prefix = tiny_model.query_prefix
        params = dict(tiny_model.params)
        params[f"{prefix}.pool.w"] = np.zeros(cfg.hidden_size)
        params[f"{prefix}.pool.b"] = np.zeros(())
        hidden = rng.standard_normal((2, 4, cfg.hidden_size))
        mask = np.array([[True, True, True, False], [True, False, False, False]])
        emb, _ = pool_forward(hidden, mask, params, prefix, "weighted_average")
        np.testing.assert_allclose(emb[0], hidden[0, :3].mean(axis=0), atol=1e-12)
        np.testing.assert_allclose(emb[1], hidden[1, 0], atol=1e-12)

    def test_weights_sum_to_one(self, tiny_model, rng):
        cfg = tiny_model.config
        prefix = tiny_model.query_prefix
        params = dict(tiny_model.params)
        params[f"{prefix}.pool.w"] = rng.standard_normal(cfg.hidden_size)
        hidden = rng.standard_normal((1, 4, cfg.hidden_size))
        mask = np.array([[True, True, True, False]])
        _, cache = pool_forward(hidden, mask, params, prefix, "weighted_average")
        assert abs(cache["alpha"][0].sum() - 1.0) <= 1e-9
        assert cache["alpha"][0, 3] == 0.0

    def test_all_masked_rejected(self, tiny_model, rng):
        hidden = rng.standard_normal((1, 3, tiny_model.config.hidden_size))
        mask = np.zeros((1, 3), dtype=bool)
        with pytest.raises(ValueError):
            pool_forward(hidden, mask, tiny_model.params, tiny_model.query_prefix, "weighted_average")

    def test_cls_mode_returns_slot_zero(self, rng):
        cfg = ModelConfig(n_layers=1, hidden_size=16, n_heads=2, vocab_buckets=64,
                          max_len=6, pooling="cls_token", dropout=0.0)
        model = TwinModel.initialize(cfg, seed=0)
        hidden = rng.standard_normal((2, 6, 16))
        mask = np.ones((2, 6), dtype=bool)
        emb, _ = pool_forward(hidden, mask, model.params, model.query_prefix, "cls_token")
        np.testing.assert_array_equal(emb, hidden[:, 0, :])


class TestEncode:
    def test_deterministic(self, tiny_model):
        a = tiny_model.encode_queries(["red shoes online"])
        b = tiny_model.encode_queries(["red shoes online"])
        np.testing.assert_array_equal(a, b)

    def test_shared_encoders_agree(self, tiny_model):
        q = tiny_model.encode_queries(["running shoes"])
        k = tiny_model.encode_keywords(["running shoes"])
        np.testing.assert_array_equal(q, k)

    def test_unshared_encoders_differ(self):
        cfg = ModelConfig(n_layers=1, hidden_size=16, n_heads=2, vocab_buckets=64,
                          max_len=6, shared_encoders=False, dropout=0.0)
        model = TwinModel.initialize(cfg, seed=0)
        q = model.encode_queries(["running shoes"])
        k = model.encode_keywords(["running shoes"])
        assert not np.allclose(q, k)

    def test_desk_preset_shape_and_finiteness(self, desk_model):
        emb = desk_model.encode_queries(["any text at all"])
        assert emb.shape == (1, 64)
        assert np.isfinite(emb).all()

    def test_padding_invariance_exact(self, tiny_model):
        # same real tokens, garbage trigram content in masked slots
        seq = tiny_model.tokenize("red shoes")
        garbage = tuple(
            tok if m else (1, 2, 3)
            for tok, m in zip(seq.tokens, seq.mask)
        )
        tampered = TokenSequence(tokens=garbage, positions=seq.positions,
                                 mask=seq.mask, original_length=seq.original_length)
        clean, _ = tiny_model.encode_query_batch(pack_sequences([seq]), count=False)
        dirty, _ = tiny_model.encode_query_batch(pack_sequences([tampered]), count=False)
        np.testing.assert_array_equal(clean, dirty)

    def test_cls_model_roundtrip(self):
        cfg = ModelConfig(n_layers=1, hidden_size=16, n_heads=2, vocab_buckets=64,
                          max_len=6, pooling="cls_token", dropout=0.0)
        model = TwinModel.initialize(cfg, seed=0)
        emb = model.encode_queries(["red shoes"])
        assert emb.shape == (1, 16)
        assert np.isfinite(emb).all()

    def test_float32_inference_close_to_float64(self, tiny_model):
        m32 = tiny_model.cast(np.float32)
        a = tiny_model.encode_queries(["cheap flights to paris"])
        b = m32.encode_queries(["cheap flights to paris"])
        assert b.dtype == np.float32
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-4)


class TestParameterSharing:
    def test_param_count_difference_is_one_encoder(self):
        base = dict(n_layers=2, hidden_size=32, n_heads=2, vocab_buckets=128, max_len=8, dropout=0.0)
        shared = TwinModel.initialize(ModelConfig(shared_encoders=True, **base), seed=0)
        split = TwinModel.initialize(ModelConfig(shared_encoders=False, **base), seed=0)
        one_encoder = sum(
            v.size for k, v in shared.params.items() if k.startswith("encoder.")
        )
        assert split.param_count() - shared.param_count() == one_encoder

    def test_encoder_forward_uses_same_arrays_when_shared(self, tiny_model):
        assert tiny_model.query_prefix == tiny_model.keyword_prefix
