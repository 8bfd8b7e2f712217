import numpy as np
import pytest

from dualcoder import nn_core as nn
from dualcoder.errors import ShapeError, StateError
from dualcoder.models import (
    VARIANTS,
    Batch,
    Model,
    ModelConfig,
    are_forward,
    init_params_shapes,
    mdre_forward,
    mdrea_forward,
    predict,
    tre_forward,
)
from dualcoder.text_pipeline import TokenSequence
from helpers import finite_difference_check, random_batch, with_padding

VOCAB = 7


def tiny(variant, **kw):
    base = dict(variant=variant, audio_hidden=8, text_hidden=8, fusion_dim=8, embed_dim=6, vocab_size=VOCAB, seed=11)
    base.update(kw)
    return ModelConfig(**base)


def zero_all(model, keep=()):
    for name, value in model.params.items():
        if not any(name.startswith(k) for k in keep):
            value[...] = 0.0


class TestConfig:
    def test_variant_case_and_round_trip(self):
        cfg = ModelConfig(variant="mdrea", vocab_size=5)
        assert cfg.variant == "MDREA"
        assert ModelConfig.from_dict(cfg.to_dict()) == cfg

    def test_invalid(self):
        with pytest.raises(ValueError):
            ModelConfig(variant="XYZ")
        with pytest.raises(ValueError):
            ModelConfig(variant="ARE", audio_hidden=0)

    @pytest.mark.parametrize("variant", VARIANTS)
    def test_params_match_shapes(self, variant):
        model = Model(tiny(variant))
        assert {k: v.shape for k, v in model.params.items()} == init_params_shapes(model.config)

    def test_params_seeded(self):
        a, b = Model(tiny("MDREA")), Model(tiny("MDREA"))
        assert all(a.params[k].tobytes() == b.params[k].tobytes() for k in a.params)

    def test_wrong_params_rejected(self):
        params = Model(tiny("MDRE")).params
        del params["text_fc.M"]
        with pytest.raises(ShapeError):
            Model(tiny("MDRE"), params=params)


class TestForward:
    rng = np.random.default_rng(0)

    def test_are_zero_params_gives_bias(self):
        model = Model(tiny("ARE"))
        zero_all(model, keep=("classifier",))
        model.params["classifier.b"][:] = [0.1, -0.2, 0.3, 0.4]
        logits = are_forward(self.rng.normal(size=(5, 39)), np.zeros(35), model)
        assert logits.tolist() == [0.1, -0.2, 0.3, 0.4]

    @pytest.mark.parametrize("variant", VARIANTS)
    def test_shape_and_determinism(self, variant):
        model = Model(tiny(variant))
        batch = random_batch(np.random.default_rng(1), batch=3)
        a = model.forward(batch)
        assert a.shape == (3, 4)
        assert a.tobytes() == model.forward(batch).tobytes()

    def test_tre_padding(self):
        model = Model(tiny("TRE"))
        ids = np.zeros(10, dtype=np.int64)
        ids[:3] = [2, 5, 3]
        short = TokenSequence(ids[:4].copy(), 3)
        long = TokenSequence(ids, 3)
        assert tre_forward(short, model).tobytes() == tre_forward(long, model).tobytes()

    def test_mdre_zero_fusion_gives_bias(self):
        model = Model(tiny("MDRE"))
        for name in ("audio_fc.M", "audio_fc.b", "text_fc.M", "text_fc.b"):
            model.params[name][...] = 0.0
        tokens = TokenSequence(np.array([3, 4, 0, 0]), 2)
        logits = mdre_forward(self.rng.normal(size=(5, 39)), self.rng.normal(size=35), tokens, model)
        np.testing.assert_array_equal(logits, model.params["classifier.b"])
        assert model.params["classifier.M"].shape[0] == 2 * model.config.fusion_dim

    def test_mdre_text_independence(self):
        model = Model(tiny("MDRE"))
        model.params["text_fc.M"][...] = 0.0
        mfcc, prosody = self.rng.normal(size=(5, 39)), self.rng.normal(size=35)
        outs = {
            mdre_forward(mfcc, prosody, TokenSequence(np.array(ids), n), model).tobytes()
            for ids, n in (([1, 2, 3, 0], 3), ([6, 6, 0, 0], 2), ([5, 4, 3, 2], 4))
        }
        assert len(outs) == 1

    def test_mdrea_one_token_collapse(self):
        model = Model(tiny("MDREA"))
        model.params["audio_fc.M"][...] = 0.0
        model.params["audio_fc.b"][...] = 0.0
        tokens = TokenSequence(np.array([4, 0, 0, 0]), 1)
        h1 = nn.gru_step(np.zeros(8), model.params["embedding"][4], nn.GruParams.from_dict(model.params, "text_gru0"))
        th = model.config.text_hidden
        expected = h1 @ model.params["classifier.M"][:th] + model.params["classifier.b"]
        for seed in range(3):
            rng = np.random.default_rng(seed)
            logits, weights = mdrea_forward(rng.normal(size=(5, 39)), rng.normal(size=35), tokens, model)
            assert weights.tolist() == [1.0, 0.0, 0.0, 0.0]
            np.testing.assert_allclose(logits, expected, rtol=0, atol=1e-14)

    def test_mdrea_weights_sum_to_one(self):
        model = Model(tiny("MDREA"))
        _, weights = mdrea_forward(self.rng.normal(size=(5, 39)), self.rng.normal(size=35),
                                   TokenSequence(np.array([1, 2, 3, 0, 0]), 3), model)
        assert abs(weights[:3].sum() - 1.0) < 1e-12
        assert np.all(weights[3:] == 0.0)

    def test_wrong_variant_entry_point(self):
        with pytest.raises(ValueError):
            are_forward(np.zeros((5, 39)), np.zeros(35), Model(tiny("TRE")))

    def test_empty_text_rejected(self):
        batch = random_batch(np.random.default_rng(2))
        batch.text_len = np.array([0, 2])
        with pytest.raises(ValueError):
            Model(tiny("TRE")).forward(batch)


@pytest.mark.parametrize("variant", VARIANTS)
def test_padding_invariance(variant):
    model = Model(tiny(variant, text_layers=2 if variant == "MDREA" else 1))
    rng = np.random.default_rng(VARIANTS.index(variant))
    for _ in range(100):
        batch = random_batch(rng, batch=int(rng.integers(1, 4)))
        padded = with_padding(batch, int(rng.integers(1, 6)), int(rng.integers(1, 6)), rng)
        assert model.forward(batch).tobytes() == model.forward(padded).tobytes()


class TestPredict:
    def test_tie(self):
        assert predict([1, 1, 1, 1])[0] == 0

    def test_confident(self):
        cls, probs = predict([0, 5, 0, 0])
        assert cls == 1 and probs[1] > 0.98

    def test_shift(self):
        logits = np.random.default_rng(0).normal(size=4)
        assert predict(logits)[0] == predict(logits + 123.0)[0]


class TestBackward:
    def test_requires_loss(self):
        model = Model(tiny("ARE"))
        with pytest.raises(StateError):
            model.backward()
        model.forward(random_batch(np.random.default_rng(0)))
        with pytest.raises(StateError):
            model.backward()

    def test_tape_consumed(self):
        model = Model(tiny("ARE"))
        model.loss(random_batch(np.random.default_rng(0)))
        model.backward()
        with pytest.raises(StateError):
            model.backward()

    @pytest.mark.parametrize("variant", VARIANTS)
    @pytest.mark.parametrize("layers", [1, 2])
    def test_gradient_check(self, variant, layers):
        model = Model(tiny(variant, audio_layers=layers, text_layers=layers))
        batch = random_batch(np.random.default_rng(5), batch=2, t_audio=5, t_text=4, audio_len=[5, 3], text_len=[2, 4])
        assert finite_difference_check(model, batch) < 1e-4

    def test_pad_embedding_row_gets_no_gradient(self):
        model = Model(tiny("TRE"))
        model.loss(random_batch(np.random.default_rng(3)))
        grads = model.backward()
        assert np.all(grads["embedding"][0] == 0.0)
        assert np.any(grads["embedding"][1:] != 0.0)

    def test_frozen_embeddings(self):
        model = Model(tiny("TRE", train_embeddings=False))
        model.loss(random_batch(np.random.default_rng(3)))
        assert np.all(model.backward()["embedding"] == 0.0)

    def test_dropout_gradient(self):
        model = Model(tiny("MDRE", dropout=0.3))
        batch = random_batch(np.random.default_rng(4))

        model.loss(batch, training=True, rng=np.random.default_rng(9))
        analytic = model.backward()
        p = model.params["classifier.M"]
        up_idx = (1, 2)
        orig = p[up_idx]
        p[up_idx] = orig + 1e-6
        up = model.loss(batch, training=True, rng=np.random.default_rng(9))
        p[up_idx] = orig - 1e-6
        down = model.loss(batch, training=True, rng=np.random.default_rng(9))
        p[up_idx] = orig
        assert analytic["classifier.M"][up_idx] == pytest.approx((up - down) / 2e-6, rel=1e-6, abs=1e-10)

    def test_batch_len(self):
        assert len(random_batch(np.random.default_rng(0), batch=3)) == 3
        assert isinstance(random_batch(np.random.default_rng(0)), Batch)
