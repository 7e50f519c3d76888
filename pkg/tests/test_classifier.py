import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cwat.classifier import (
    SingleHeadTransformer,
    TransformerConfig,
    classifier_cost_rows,
    count_cost_attention,
    multi_head_reference_params,
)
from cwat.errors import ConfigError, ShapeError
from cwat.model import PRESETS, CwaT, preset
from cwat.numerics import Tensor, check_gradients, cross_entropy_logits, layer_norm, no_grad, softmax_lastdim

TINY = TransformerConfig(input_dim=6, d_model=8, d_k=4, d_ff=16, n_layers=1, dropout_rate=0.0)


def tokens(seed, n=4, d=8):
    return Tensor(np.random.default_rng(seed).standard_normal((n, d)))


class TestAttention:
    def test_single_token(self):
        model = SingleHeadTransformer(TINY, seed=0)
        x = tokens(0, n=1)
        with no_grad():
            out, w = model.attention(x, 0)
        assert w.data.tolist() == [[1.0]]
        p = model.params
        expected = x.data @ p["layer.0.wv"].data @ p["layer.0.wo"].data
        np.testing.assert_allclose(out.data, expected, rtol=1e-14)

    def test_identical_tokens(self):
        model = SingleHeadTransformer(TINY, seed=1)
        row = np.random.default_rng(1).standard_normal(8)
        with no_grad():
            _, w = model.attention(Tensor(np.stack([row, row])), 0)
        assert w.data.tolist() == [[0.5, 0.5], [0.5, 0.5]]

    def test_gradient(self):
        model = SingleHeadTransformer(TINY, seed=2)
        x = Tensor(np.random.default_rng(2).standard_normal((4, 8)), requires_grad=True)
        weights = [model.params[f"layer.0.{k}"] for k in ("wq", "wk", "wv", "wo")]

        def loss():
            out, _ = model.attention(x, 0)
            return (out * out).sum()

        ok, worst = check_gradients(loss, [x] + weights, rtol=1e-5, atol=1e-7)
        assert ok, worst

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**31 - 1), n=st.integers(1, 12))
    def test_rows_sum_to_one(self, seed, n):
        model = SingleHeadTransformer(TINY, seed=seed)
        with no_grad():
            _, w = model.attention(tokens(seed, n=n), 0)
        np.testing.assert_allclose(w.data.sum(axis=-1), 1.0, rtol=0, atol=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**31 - 1), shift=st.floats(-50, 50))
    def test_softmax_shift_invariance(self, seed, shift):
        scores = np.random.default_rng(seed).standard_normal((5, 5))
        a = softmax_lastdim(Tensor(scores)).data
        b = softmax_lastdim(Tensor(scores + shift)).data
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


class TestEncoderLayer:
    def test_shape_preserved(self):
        model = SingleHeadTransformer(TINY, seed=3)
        for n in (1, 3, 19):
            with no_grad():
                assert model.encoder_layer(tokens(n, n=n), 0).shape == (n, 8)

    def test_zero_residual_branches(self):
        model = SingleHeadTransformer(TINY, seed=4)
        p = model.params
        p["layer.0.wo"].data = np.zeros_like(p["layer.0.wo"].data)
        p["layer.0.ffn.w2"].data = np.zeros_like(p["layer.0.ffn.w2"].data)
        x = tokens(4)
        ones, zeros = Tensor(np.ones(8)), Tensor(np.zeros(8))
        with no_grad():
            out = model.encoder_layer(x, 0).data
            twice = layer_norm(layer_norm(x, ones, zeros), ones, zeros).data
        np.testing.assert_allclose(out, twice, rtol=0, atol=1e-12)

    def test_permutation_equivariance(self):
        model = SingleHeadTransformer(TINY, seed=5)
        x = tokens(5, n=7)
        perm = np.random.default_rng(5).permutation(7)
        with no_grad():
            a = model.encoder_layer(x, 0).data
            b = model.encoder_layer(Tensor(x.data[perm]), 0).data
        np.testing.assert_allclose(b, a[perm], rtol=0, atol=1e-12)


class TestClassify:
    def test_output_length_two(self):
        model = SingleHeadTransformer(TINY, seed=6)
        z = np.random.default_rng(6).standard_normal((19, 6))
        assert model.classify(z).shape == (2,)
        assert model.classify(np.stack([z, z, z])).shape == (3, 2)

    def test_eval_deterministic(self):
        model = SingleHeadTransformer(TransformerConfig(input_dim=6, d_model=8, d_k=4, d_ff=16), seed=7)
        z = np.random.default_rng(7).standard_normal((19, 6))
        assert np.array_equal(model.classify(z).data, model.classify(z).data)

    def test_training_dropout_needs_rng(self):
        model = SingleHeadTransformer(TransformerConfig(input_dim=6, d_model=8, d_k=4, d_ff=16), seed=8)
        z = np.zeros((3, 6))
        with pytest.raises(ConfigError):
            model.classify(z, training=True)
        a = model.classify(z + 1, training=True, rng=np.random.default_rng(0)).data
        assert a.shape == (2,)

    def test_channel_permutation_invariance(self):
        model = SingleHeadTransformer(TransformerConfig(input_dim=6, d_model=8, d_k=4, d_ff=16), seed=9)
        rng = np.random.default_rng(9)
        z = rng.standard_normal((19, 6))
        perm = rng.permutation(19)
        np.testing.assert_allclose(model.classify(z[perm]).data, model.classify(z).data, rtol=0, atol=1e-12)

    def test_attention_kept_per_layer(self):
        model = SingleHeadTransformer(TransformerConfig(input_dim=6, d_model=8, d_k=4, d_ff=16), seed=10)
        model.classify(np.ones((19, 6)))
        assert len(model.last_attention) == 2
        assert model.last_attention[0].shape == (19, 19)

    def test_wrong_width(self):
        with pytest.raises(ShapeError):
            SingleHeadTransformer(TINY).classify(np.zeros((19, 7)))

    @pytest.mark.parametrize("kwargs", [
        {"d_k": 16},
        {"d_ff": 4},
        {"n_layers": 0},
        {"dropout_rate": 1.0},
        {"embed_input": False},
    ])
    def test_invalid_config(self, kwargs):
        base = dict(input_dim=6, d_model=8, d_k=4, d_ff=16)
        with pytest.raises(ConfigError):
            TransformerConfig(**{**base, **kwargs}).validate()


class TestFullModelGradient:
    def test_toy_cwat(self):
        cfg = preset("toy")
        assert (cfg.cae.channels, cfg.cae.input_length) == (4, 64)
        t = cfg.transformer
        assert (t.d_model, t.d_k, t.d_ff, t.n_layers) == (8, 4, 16, 1)
        model = CwaT(cfg, seed=11)
        rng = np.random.default_rng(11)
        x = Tensor(rng.standard_normal((2, 4, 64)), requires_grad=True)
        y = np.array([0, 1])
        params = list(model.cae.encoder_parameters().values()) + list(model.classifier.params.values())

        def loss():
            return cross_entropy_logits(model.forward(x), y)

        ok, worst = check_gradients(loss, [x] + params, rtol=1e-4, atol=1e-7)
        assert ok, worst


class TestAttentionCost:
    def test_example(self):
        assert count_cost_attention(TransformerConfig(d_model=64, d_k=32), 19).projection_params == 6144

    def test_unit_dims(self):
        cfg = TransformerConfig(input_dim=1, d_model=1, d_k=1, d_ff=1)
        assert count_cost_attention(cfg, 1).projection_params == 3

    @settings(max_examples=50, deadline=None)
    @given(d=st.integers(1, 256), dk=st.integers(1, 256))
    def test_closed_form(self, d, dk):
        dk = min(d, dk)
        cfg = TransformerConfig(input_dim=d, d_model=d, d_k=dk, d_ff=d)
        cost = count_cost_attention(cfg, 5)
        assert cost.projection_params == 3 * d * dk
        assert cost.output_params == dk * d

    def test_params_match_model_arrays(self):
        cfg = TransformerConfig(input_dim=6, d_model=8, d_k=4, d_ff=16, n_layers=3)
        model = SingleHeadTransformer(cfg)
        assert sum(r.params for r in classifier_cost_rows(cfg, 19)) == sum(p.size for p in model.params.values())
        for name in PRESETS:
            t = PRESETS[name].transformer
            expected = sum(p.size for p in SingleHeadTransformer.init_params(t).values())
            assert sum(r.params for r in classifier_cost_rows(t, 19)) == expected

    def test_flops_itemised(self):
        cfg = TransformerConfig(input_dim=6, d_model=8, d_k=4, d_ff=16)
        a = count_cost_attention(cfg, 19)
        assert a.projection_flops == 3 * 19 * 8 * 4
        assert a.score_flops == a.mix_flops == 19 * 19 * 4
        assert a.softmax_flops == 5 * 19 * 19
        assert a.flops == (a.projection_flops + a.score_flops + a.scale_flops + a.softmax_flops
                           + a.mix_flops + a.output_flops)

    def test_multi_head_reference(self):
        assert multi_head_reference_params(64, 12000, 32) == 3 * 64 * 12000 * 32
