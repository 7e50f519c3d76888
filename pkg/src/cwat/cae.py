"""Channelwise convolutional autoencoder.

Every convolution is grouped with ``groups = C``: channel ``c`` (and any
feature streams derived from it) is only ever combined with itself, so the
latent row ``z[c]`` is a function of the input row ``x[c]`` alone.

Encoder stage ``k`` (input length L, output ``ceil(L / stride)``)::

    h = conv1d_grouped(x, kernel, groups=C, stride, padding=(K - 1) // 2)
    h = h + shortcut(x)        # x[..., ::stride], or a strided 1-tap grouped conv
    h = relu(layer_norm(h))    # statistics over time, per row

The decoder mirrors it with strided transposed grouped convolutions and a
nearest-neighbour shortcut; its last stage is linear.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from cwat.costs import CostRow, elementwise_cost, layer_norm_cost
from cwat.errors import ConfigError, ShapeError
from cwat.numerics import (
    Tensor,
    add,
    as_tensor,
    conv1d_grouped,
    conv_transpose1d_grouped,
    conv_transpose_output_length,
    layer_norm,
    relu,
    subsample,
    upsample_nearest,
)


@dataclass(frozen=True)
class LayerSpec:
    kernel_size: int = 7
    stride: int = 4
    feature_multiplier: int = 1  # feature streams per EEG channel after this stage


@dataclass(frozen=True)
class CaeConfig:
    channels: int = 19
    input_length: int = 12000
    layer_specs: tuple = field(default_factory=lambda: (LayerSpec(), LayerSpec(), LayerSpec()))
    norm_kind: str = "layer_norm"

    def __post_init__(self):
        object.__setattr__(self, "layer_specs", tuple(self.layer_specs))

    def validate(self):
        if self.channels < 1 or self.input_length < 1:
            raise ConfigError("channels and input_length must be positive")
        if self.norm_kind != "layer_norm":
            raise ConfigError(f"unsupported norm_kind {self.norm_kind!r}")
        for i, spec in enumerate(self.layer_specs):
            if spec.kernel_size < 1 or spec.kernel_size % 2 == 0:
                raise ConfigError(f"stage {i}: kernel_size must be odd, got {spec.kernel_size}")
            if spec.stride < 1 or spec.feature_multiplier < 1:
                raise ConfigError(f"stage {i}: stride and feature_multiplier must be >= 1")
        if self.layer_specs and self.layer_specs[-1].feature_multiplier != 1:
            raise ConfigError("the last encoder stage must emit one row per channel (feature_multiplier=1)")
        if self.layer_specs and self.latent_per_channel > self.input_length / 16:
            raise ConfigError(
                f"latent length {self.latent_per_channel} exceeds input_length/16 = {self.input_length / 16}"
            )
        return self

    @property
    def stage_lengths(self):
        lengths = [self.input_length]
        for spec in self.layer_specs:
            lengths.append(-(-lengths[-1] // spec.stride))
        return lengths

    @property
    def stage_features(self):
        return [1] + [s.feature_multiplier for s in self.layer_specs]

    @property
    def latent_per_channel(self):
        return self.stage_lengths[-1]


def _uniform(rng, shape, fan_in):
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class ChannelwiseAutoencoder:
    """Parameters and forward passes of the channelwise autoencoder."""

    def __init__(self, config=None, seed=0, params=None):
        self.config = (config or CaeConfig()).validate()
        self.params = params if params is not None else self.init_params(self.config, seed)

    @staticmethod
    def init_params(config, seed=0):
        rng = np.random.default_rng(seed)
        c = config.channels
        feats = config.stage_features
        lengths = config.stage_lengths
        p = OrderedDict()
        for k, spec in enumerate(config.layer_specs):
            fi, fo = feats[k], feats[k + 1]
            p[f"enc.{k}.kernel"] = _uniform(rng, (c * fo, fi, spec.kernel_size), fi * spec.kernel_size)
            if fi != fo:
                p[f"enc.{k}.proj"] = _uniform(rng, (c * fo, fi, 1), fi)
            p[f"enc.{k}.ln.gain"] = np.ones(lengths[k + 1])
            p[f"enc.{k}.ln.bias"] = np.zeros(lengths[k + 1])
        n = len(config.layer_specs)
        for j in range(n):
            k = n - 1 - j
            spec = config.layer_specs[k]
            fi, fo = feats[k + 1], feats[k]
            p[f"dec.{j}.kernel"] = _uniform(rng, (c * fi, fo, spec.kernel_size), fi * spec.kernel_size)
            if fi != fo:
                p[f"dec.{j}.proj"] = _uniform(rng, (c * fo, fi, 1), fi)
            if j < n - 1:
                p[f"dec.{j}.ln.gain"] = np.ones(lengths[k])
                p[f"dec.{j}.ln.bias"] = np.zeros(lengths[k])
        return OrderedDict((name, Tensor(v, requires_grad=True, name=name)) for name, v in p.items())

    def parameters(self):
        return self.params

    def encoder_parameters(self):
        return OrderedDict((k, v) for k, v in self.params.items() if k.startswith("enc."))

    def decoder_parameters(self):
        return OrderedDict((k, v) for k, v in self.params.items() if k.startswith("dec."))

    def _check_input(self, x, rows, length, what):
        if x.ndim not in (2, 3) or x.shape[-2:] != (rows, length):
            raise ShapeError(f"{what} expects (..., {rows}, {length}), got {x.shape}")

    def encode(self, x):
        """``(C, T)`` or ``(B, C, T)`` -> ``(..., C, D)``."""
        cfg = self.config
        x = as_tensor(x)
        self._check_input(x, cfg.channels, cfg.input_length, "encode")
        p = self.params
        feats = cfg.stage_features
        h = x
        for k, spec in enumerate(cfg.layer_specs):
            pad = (spec.kernel_size - 1) // 2
            y = conv1d_grouped(h, p[f"enc.{k}.kernel"], cfg.channels, spec.stride, pad)
            if feats[k] == feats[k + 1]:
                skip = subsample(h, spec.stride)
            else:
                skip = conv1d_grouped(h, p[f"enc.{k}.proj"], cfg.channels, spec.stride, 0)
            h = add(y, skip)
            h = relu(layer_norm(h, p[f"enc.{k}.ln.gain"], p[f"enc.{k}.ln.bias"]))
        return h

    def decode(self, z):
        """``(..., C, D)`` -> ``(..., C, T)``."""
        cfg = self.config
        z = as_tensor(z)
        self._check_input(z, cfg.channels, cfg.latent_per_channel, "decode")
        p = self.params
        feats = cfg.stage_features
        lengths = cfg.stage_lengths
        n = len(cfg.layer_specs)
        h = z
        for j in range(n):
            k = n - 1 - j
            spec = cfg.layer_specs[k]
            pad = (spec.kernel_size - 1) // 2
            target = lengths[k]
            base = conv_transpose_output_length(lengths[k + 1], spec.kernel_size, spec.stride, pad)
            y = conv_transpose1d_grouped(h, p[f"dec.{j}.kernel"], cfg.channels, spec.stride, pad, target - base)
            skip = upsample_nearest(h, spec.stride, target)
            if feats[k] != feats[k + 1]:
                skip = conv1d_grouped(skip, p[f"dec.{j}.proj"], cfg.channels, 1, 0)
            h = add(y, skip)
            if j < n - 1:
                h = relu(layer_norm(h, p[f"dec.{j}.ln.gain"], p[f"dec.{j}.ln.bias"]))
        return h

    def reconstruct(self, x):
        return self.decode(self.encode(x))

    def cost_rows(self):
        return cae_cost_rows(self.config)


# ---------------------------------------------------------------- cost model


@dataclass(frozen=True)
class ConvCost:
    flops: int
    params: int


def count_cost_conv(kernel_size, in_channels, out_channels, length, channels, mode="channelwise"):
    """FLOPs and weights of one 1-D convolution producing ``length`` output positions.

    ``standard`` mixes all ``in_channels`` into every output channel
    (``K * M * N * length``); ``channelwise`` groups by the ``channels`` EEG
    channels, which divides both counts by ``channels`` exactly.
    """
    flops = kernel_size * in_channels * out_channels * length
    params = kernel_size * in_channels * out_channels
    if mode == "standard":
        return ConvCost(flops, params)
    if mode != "channelwise":
        raise ConfigError(f"unknown convolution mode {mode!r}")
    if in_channels % channels or out_channels % channels:
        raise ConfigError(f"{in_channels}->{out_channels} channels cannot be grouped by {channels}")
    return ConvCost(flops // channels, params // channels)


def cae_cost_rows(config):
    c = config.channels
    feats = config.stage_features
    lengths = config.stage_lengths
    rows = []

    def conv(name, component, k, m, n, length):
        cw = count_cost_conv(k, m, n, length, c, "channelwise")
        std = count_cost_conv(k, m, n, length, c, "standard")
        rows.append(CostRow(name, component, cw.flops, cw.params, std.flops))

    for k, spec in enumerate(config.layer_specs):
        m, n, lout = c * feats[k], c * feats[k + 1], lengths[k + 1]
        conv(f"enc.{k}.conv", "cae_encoder", spec.kernel_size, m, n, lout)
        if feats[k] != feats[k + 1]:
            conv(f"enc.{k}.proj", "cae_encoder", 1, m, n, lout)
        rows.append(elementwise_cost(f"enc.{k}.add", "cae_encoder", n * lout))
        rows.append(layer_norm_cost(f"enc.{k}.ln", "cae_encoder", n, lout))
        rows.append(elementwise_cost(f"enc.{k}.relu", "cae_encoder", n * lout))

    nst = len(config.layer_specs)
    for j in range(nst):
        k = nst - 1 - j
        spec = config.layer_specs[k]
        m, n, lin, lout = c * feats[k + 1], c * feats[k], lengths[k + 1], lengths[k]
        # transposed conv: every input position scatters K taps to n/groups outputs
        conv(f"dec.{j}.convT", "cae_decoder", spec.kernel_size, m, n, lin)
        if feats[k] != feats[k + 1]:
            conv(f"dec.{j}.proj", "cae_decoder", 1, m, n, lout)
        rows.append(elementwise_cost(f"dec.{j}.add", "cae_decoder", n * lout))
        if j < nst - 1:
            rows.append(layer_norm_cost(f"dec.{j}.ln", "cae_decoder", n, lout))
            rows.append(elementwise_cost(f"dec.{j}.relu", "cae_decoder", n * lout))
    return rows
