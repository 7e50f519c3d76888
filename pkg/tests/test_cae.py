from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cwat.cae import CaeConfig, ChannelwiseAutoencoder, LayerSpec, cae_cost_rows, count_cost_conv
from cwat.errors import ConfigError, ShapeError
from cwat.model import PRESETS
from cwat.numerics import Tensor, backward, check_gradients, conv1d_grouped, mse_loss, no_grad

SMALL = CaeConfig(channels=5, input_length=256, layer_specs=(LayerSpec(5, 2, 3), LayerSpec(3, 4, 2), LayerSpec(3, 2, 1)))


def encode_np(model, x):
    with no_grad():
        return model.encode(Tensor(x)).data


class TestShapes:
    def test_default_stage_lengths(self):
        cfg = CaeConfig()
        assert cfg.stage_lengths == [12000, 3000, 750, 188]
        assert cfg.latent_per_channel == 188

    def test_default_encode_shape(self):
        model = ChannelwiseAutoencoder(seed=0)
        x = np.random.default_rng(0).standard_normal((19, 12000))
        z = encode_np(model, x)
        assert z.shape == (19, 188)
        assert 188 <= 12000 / 16

    def test_batched_matches_single(self):
        model = ChannelwiseAutoencoder(SMALL, seed=1)
        x = np.random.default_rng(1).standard_normal((3, 5, 256))
        zb = encode_np(model, x)
        for b in range(3):
            np.testing.assert_allclose(zb[b], encode_np(model, x[b]), rtol=0, atol=1e-12)

    def test_reconstruct_shape(self):
        model = ChannelwiseAutoencoder(SMALL, seed=2)
        x = np.random.default_rng(2).standard_normal((2, 5, 256))
        with no_grad():
            assert model.reconstruct(Tensor(x)).shape == (2, 5, 256)

    def test_odd_lengths_round_trip(self):
        cfg = CaeConfig(channels=2, input_length=101, layer_specs=(LayerSpec(3, 3, 1), LayerSpec(3, 3, 1), LayerSpec(3, 2, 1)))
        assert cfg.stage_lengths == [101, 34, 12, 6]
        model = ChannelwiseAutoencoder(cfg, seed=0)
        with no_grad():
            assert model.reconstruct(Tensor(np.ones((2, 101)))).shape == (2, 101)

    def test_wrong_input_shape(self):
        model = ChannelwiseAutoencoder(SMALL)
        with pytest.raises(ShapeError):
            model.encode(Tensor(np.zeros((4, 256))))

    def test_zero_input_gives_identical_rows(self):
        model = ChannelwiseAutoencoder(SMALL, seed=3)
        z = encode_np(model, np.zeros((5, 256)))
        assert np.all(z == z[0])


class TestValidation:
    @pytest.mark.parametrize("specs", [
        (LayerSpec(4, 2, 1),),
        (LayerSpec(3, 2, 2),),
        (LayerSpec(3, 0, 1),),
    ])
    def test_bad_specs(self, specs):
        with pytest.raises(ConfigError):
            CaeConfig(channels=2, input_length=64, layer_specs=specs).validate()

    def test_latent_too_long(self):
        with pytest.raises(ConfigError):
            CaeConfig(channels=2, input_length=64, layer_specs=(LayerSpec(3, 2, 1),)).validate()


class TestChannelIndependence:
    @settings(max_examples=15, deadline=None)
    @given(seed=st.integers(0, 2**31 - 1), j=st.integers(0, 4))
    def test_perturbing_one_channel(self, seed, j):
        rng = np.random.default_rng(seed)
        model = ChannelwiseAutoencoder(SMALL, seed=seed)
        x = rng.standard_normal((5, 256))
        z = encode_np(model, x)
        x2 = x.copy()
        x2[j] += rng.standard_normal(256)
        z2 = encode_np(model, x2)
        others = [i for i in range(5) if i != j]
        assert np.array_equal(z[others], z2[others])
        assert not np.array_equal(z[j], z2[j])

    def test_gradient_probe(self):
        model = ChannelwiseAutoencoder(SMALL, seed=4)
        x = Tensor(np.random.default_rng(4).standard_normal((5, 256)), requires_grad=True)
        z = model.encode(x)
        backward(z[2].sum())
        g = x.grad
        assert np.all(g[[0, 1, 3, 4]] == 0.0)
        assert np.any(g[2] != 0.0)

    def test_default_config(self):
        model = ChannelwiseAutoencoder(seed=5)
        rng = np.random.default_rng(5)
        x = rng.standard_normal((19, 12000))
        z = encode_np(model, x)
        x[7] = rng.standard_normal(12000)
        z2 = encode_np(model, x)
        changed = np.flatnonzero(np.any(z != z2, axis=1))
        assert changed.tolist() == [7]


class TestGradients:
    def test_reconstruction_loss(self):
        cfg = CaeConfig(channels=2, input_length=32, layer_specs=(LayerSpec(3, 4, 2), LayerSpec(3, 4, 1)))
        model = ChannelwiseAutoencoder(cfg, seed=6)
        x = Tensor(np.random.default_rng(6).standard_normal((2, 2, 32)), requires_grad=True)

        def loss():
            return mse_loss(model.reconstruct(x), x)

        ok, worst = check_gradients(loss, [x] + list(model.params.values()), rtol=1e-4, atol=1e-7)
        assert ok, worst


class TestConvCost:
    def test_ratio_examples(self):
        cw = count_cost_conv(3, 19, 19, 12000, 19, "channelwise")
        std = count_cost_conv(3, 19, 19, 12000, 19, "standard")
        assert cw.flops == 684_000
        assert std.flops == 12_996_000
        assert Fraction(cw.flops, std.flops) == Fraction(1, 19)

    def test_single_channel_has_no_saving(self):
        assert count_cost_conv(7, 1, 1, 100, 1, "channelwise") == count_cost_conv(7, 1, 1, 100, 1, "standard")

    def test_indivisible(self):
        with pytest.raises(ConfigError):
            count_cost_conv(3, 20, 19, 10, 19, "channelwise")

    def test_unknown_mode(self):
        with pytest.raises(ConfigError):
            count_cost_conv(3, 19, 19, 10, 19, "dense")

    def test_flops_match_executed_macs(self):
        # every output element of a grouped conv takes (M / groups) * K multiply-adds
        c, f, k, length = 4, 3, 5, 40
        x = Tensor(np.ones((c, length)))
        w = Tensor(np.ones((c * f, 1, k)))
        y = conv1d_grouped(x, w, groups=c, stride=2, padding=2)
        macs = y.size * 1 * k
        assert count_cost_conv(k, c, c * f, y.shape[-1], c).flops == macs

    @pytest.mark.parametrize("name", sorted(PRESETS))
    def test_params_match_arrays(self, name):
        cfg = PRESETS[name].cae
        counted = sum(r.params for r in cae_cost_rows(cfg))
        model = ChannelwiseAutoencoder(cfg)
        assert counted == sum(p.size for p in model.params.values())

    def test_rows_have_one_over_c(self):
        for r in cae_cost_rows(CaeConfig()):
            if r.standard_flops is not None:
                assert Fraction(r.flops, r.standard_flops) == Fraction(1, 19)
