"""The full pipeline: channelwise encoder -> latent -> single-head transformer -> logits."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

from cwat.cae import CaeConfig, ChannelwiseAutoencoder, LayerSpec
from cwat.classifier import SingleHeadTransformer, TransformerConfig
from cwat.errors import ConfigError


@dataclass(frozen=True)
class ModelConfig:
    cae: CaeConfig = field(default_factory=CaeConfig)
    transformer: TransformerConfig = field(default_factory=TransformerConfig)

    def __post_init__(self):
        # the classifier's token width is the encoder's latent length
        if self.transformer.embed_input and self.transformer.input_dim != self.cae.latent_per_channel:
            object.__setattr__(
                self, "transformer",
                dataclasses.replace(self.transformer, input_dim=self.cae.latent_per_channel),
            )

    def validate(self):
        self.cae.validate()
        self.transformer.validate()
        return self


PRESETS = {
    # desk-scale defaults used for training
    "default": ModelConfig(),
    # sized to land near the published ~202M FLOPs / ~2.9M parameters
    "paper-defaults": ModelConfig(
        cae=CaeConfig(layer_specs=(
            LayerSpec(7, 2, 16), LayerSpec(7, 2, 16), LayerSpec(7, 4, 16), LayerSpec(7, 4, 1),
        )),
        transformer=TransformerConfig(d_model=256, d_k=128, d_ff=1024, n_layers=4),
    ),
    # tiny dimensions for exhaustive finite-difference checks
    "toy": ModelConfig(
        cae=CaeConfig(channels=4, input_length=64, layer_specs=(LayerSpec(3, 4, 2), LayerSpec(3, 4, 1))),
        transformer=TransformerConfig(d_model=8, d_k=4, d_ff=16, n_layers=1, dropout_rate=0.0),
    ),
}

# transformer applied straight to raw 19 x 12000 segments (one token per channel)
RAW_TRANSFORMER = TransformerConfig(
    input_dim=12000, d_model=12000, d_k=12000, d_ff=12000, n_layers=1, embed_input=False,
)


def preset(name):
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(sorted(PRESETS))}") from None


class CwaT:
    """Autoencoder and classifier sharing one config."""

    def __init__(self, config=None, seed=0, cae_params=None, classifier_params=None):
        self.config = (config or ModelConfig()).validate()
        self.cae = ChannelwiseAutoencoder(self.config.cae, seed=seed, params=cae_params)
        self.classifier = SingleHeadTransformer(self.config.transformer, seed=seed + 1, params=classifier_params)

    def encode(self, x):
        return self.cae.encode(x)

    def reconstruct(self, x):
        return self.cae.reconstruct(x)

    def forward(self, x, training=False, rng=None):
        return self.classifier.classify(self.cae.encode(x), training=training, rng=rng)

    __call__ = forward

    def sections(self):
        return {"cae": self.cae.params, "classifier": self.classifier.params}
