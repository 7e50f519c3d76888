import dataclasses

import pytest

from cwat.cae import LayerSpec
from cwat.config import build, format_layer_specs, from_text, parse_layer_specs, parse_text, to_text
from cwat.errors import ConfigError
from cwat.model import PRESETS, preset
from cwat.training import TrainConfig


class TestLayerSpecs:
    def test_round_trip(self):
        specs = (LayerSpec(7, 4, 16), LayerSpec(3, 2, 1))
        assert format_layer_specs(specs) == "7:4:16,3:2:1"
        assert parse_layer_specs("7:4:16,3:2:1") == specs

    @pytest.mark.parametrize("text", ["7:4", "a:b:c", "7:4:1:2"])
    def test_bad(self, text):
        with pytest.raises(ConfigError):
            parse_layer_specs(text)


class TestText:
    @pytest.mark.parametrize("name", sorted(PRESETS))
    def test_round_trip(self, name):
        pair = (preset(name), TrainConfig(lr=0.0003, freeze_encoder=False))
        text = to_text(*pair)
        assert from_text(text) == pair
        assert to_text(*from_text(text)) == text

    def test_sorted_lines(self):
        lines = to_text(preset("default"), TrainConfig()).splitlines()
        assert lines == sorted(lines)
        assert "train.lr=0.001" in lines
        assert "train.batch_size=64" in lines

    def test_comments_and_blanks(self):
        assert parse_text("# c\n\n a = 1 \n") == {"a": "1"}

    def test_missing_equals(self):
        with pytest.raises(ConfigError, match="line 2"):
            parse_text("a=1\nnonsense\n")


class TestBuild:
    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="unknown"):
            build({"train.learning_rate": "0.1"})

    def test_unknown_section(self):
        with pytest.raises(ConfigError):
            build({"optim.lr": "0.1"})

    def test_coercion(self):
        model, train = build({"train.epochs": "3", "train.lr": "0.5", "train.freeze_encoder": "no",
                              "cae.layer_specs": "3:4:1,3:4:1", "cae.input_length": "256"})
        assert (train.epochs, train.lr, train.freeze_encoder) == (3, 0.5, False)
        assert model.cae.layer_specs == (LayerSpec(3, 4, 1), LayerSpec(3, 4, 1))
        assert model.transformer.input_dim == 16

    def test_bad_value(self):
        with pytest.raises(ConfigError):
            build({"train.epochs": "three"})

    def test_invalid_combination(self):
        with pytest.raises(ConfigError):
            build({"transformer.d_k": "1000"})

    def test_derived_key_ignored(self):
        model, _ = build({"transformer.input_dim": "5"})
        assert model.transformer.input_dim == model.cae.latent_per_channel

    def test_base_respected(self):
        base = (preset("toy"), dataclasses.replace(TrainConfig(), seed=9))
        model, train = build({"train.epochs": 2}, base)
        assert model == preset("toy") and train.seed == 9 and train.epochs == 2
