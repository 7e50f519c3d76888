"""Single-head transformer encoder over channel tokens, with a mean-pool head.

Each of the C latent rows (length D) is embedded to ``d_model`` and treated
as one token.  No positional encoding is added, so the pooled logits do not
depend on channel order.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from cwat.costs import (
    SOFTMAX_FLOPS_PER_ELEMENT,
    CostRow,
    elementwise_cost,
    layer_norm_cost,
    matmul_cost,
)
from cwat.errors import ConfigError, ShapeError
from cwat.numerics import (
    Tensor,
    add,
    as_tensor,
    dropout,
    layer_norm,
    linear,
    matmul,
    mean,
    mul,
    relu,
    reshape,
    softmax_lastdim,
    transpose,
)


@dataclass(frozen=True)
class TransformerConfig:
    input_dim: int = 188  # latent length D per channel token
    d_model: int = 128
    d_k: int = 64
    d_ff: int = 256
    n_layers: int = 2
    dropout_rate: float = 0.1
    n_classes: int = 2
    embed_input: bool = True  # False: tokens enter as-is and input_dim must equal d_model

    def validate(self, allow_empty=False):
        if min(self.input_dim, self.d_model, self.d_k, self.d_ff, self.n_classes) < 1:
            raise ConfigError("transformer dimensions must be positive")
        if self.d_k > self.d_model:
            raise ConfigError(f"d_k={self.d_k} exceeds d_model={self.d_model}")
        if self.d_ff < self.d_model:
            raise ConfigError(f"d_ff={self.d_ff} is smaller than d_model={self.d_model}")
        if self.n_layers < (0 if allow_empty else 1):
            raise ConfigError("n_layers must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must be in [0, 1)")
        if not self.embed_input and self.input_dim != self.d_model:
            raise ConfigError("without an input embedding, input_dim must equal d_model")
        return self


def _uniform(rng, shape, fan_in):
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class SingleHeadTransformer:
    def __init__(self, config=None, seed=0, params=None):
        self.config = (config or TransformerConfig()).validate()
        self.params = params if params is not None else self.init_params(self.config, seed)
        self.last_attention = []

    @staticmethod
    def init_params(config, seed=0):
        rng = np.random.default_rng(seed)
        d, dk, dff = config.d_model, config.d_k, config.d_ff
        p = OrderedDict()
        if config.embed_input:
            p["embed.weight"] = _uniform(rng, (config.input_dim, d), config.input_dim)
            p["embed.bias"] = np.zeros(d)
        for i in range(config.n_layers):
            for name in ("wq", "wk", "wv"):
                p[f"layer.{i}.{name}"] = _uniform(rng, (d, dk), d)
            p[f"layer.{i}.wo"] = _uniform(rng, (dk, d), dk)
            p[f"layer.{i}.ln1.gain"] = np.ones(d)
            p[f"layer.{i}.ln1.bias"] = np.zeros(d)
            p[f"layer.{i}.ffn.w1"] = _uniform(rng, (d, dff), d)
            p[f"layer.{i}.ffn.b1"] = np.zeros(dff)
            p[f"layer.{i}.ffn.w2"] = _uniform(rng, (dff, d), dff)
            p[f"layer.{i}.ffn.b2"] = np.zeros(d)
            p[f"layer.{i}.ln2.gain"] = np.ones(d)
            p[f"layer.{i}.ln2.bias"] = np.zeros(d)
        p["head.weight"] = _uniform(rng, (d, config.n_classes), d)
        p["head.bias"] = np.zeros(config.n_classes)
        return OrderedDict((name, Tensor(v, requires_grad=True, name=name)) for name, v in p.items())

    def parameters(self):
        return self.params

    def attention(self, x, layer):
        """Scaled dot-product self-attention with one head; returns ``(output, weights)``."""
        p = self.params
        q = matmul(x, p[f"layer.{layer}.wq"])
        k = matmul(x, p[f"layer.{layer}.wk"])
        v = matmul(x, p[f"layer.{layer}.wv"])
        scores = mul(matmul(q, transpose(k)), 1.0 / math.sqrt(self.config.d_k))
        weights = softmax_lastdim(scores)
        return matmul(matmul(weights, v), p[f"layer.{layer}.wo"]), weights

    def feed_forward(self, x, layer):
        p = self.params
        h = relu(linear(x, p[f"layer.{layer}.ffn.w1"], p[f"layer.{layer}.ffn.b1"]))
        return linear(h, p[f"layer.{layer}.ffn.w2"], p[f"layer.{layer}.ffn.b2"])

    def encoder_layer(self, x, layer, training=False, rng=None):
        p = self.params
        rate = self.config.dropout_rate
        attn, weights = self.attention(x, layer)
        self.last_attention.append(weights.data)
        x = layer_norm(add(x, dropout(attn, rate, training, rng)),
                       p[f"layer.{layer}.ln1.gain"], p[f"layer.{layer}.ln1.bias"])
        ff = self.feed_forward(x, layer)
        return layer_norm(add(x, dropout(ff, rate, training, rng)),
                          p[f"layer.{layer}.ln2.gain"], p[f"layer.{layer}.ln2.bias"])

    def embed(self, z):
        if not self.config.embed_input:
            return z
        return linear(z, self.params["embed.weight"], self.params["embed.bias"])

    def classify(self, z, training=False, rng=None):
        """``(C, D)`` -> logits ``(n_classes,)``; ``(B, C, D)`` -> ``(B, n_classes)``.

        Attention matrices of the call are kept in ``last_attention`` (one
        ``(..., C, C)`` array per layer).
        """
        z = as_tensor(z)
        if z.ndim not in (2, 3) or z.shape[-1] != self.config.input_dim:
            raise ShapeError(f"classify expects (..., tokens, {self.config.input_dim}), got {z.shape}")
        if training and self.config.dropout_rate > 0 and rng is None:
            raise ConfigError("training-mode dropout needs an rng")
        self.last_attention = []
        h = self.embed(z)
        for i in range(self.config.n_layers):
            h = self.encoder_layer(h, i, training, rng)
        pooled = mean(h, axis=-2, keepdims=True)
        logits = linear(pooled, self.params["head.weight"], self.params["head.bias"])
        return reshape(logits, logits.shape[:-2] + (self.config.n_classes,))

    def cost_rows(self, n_tokens):
        return classifier_cost_rows(self.config, n_tokens)


# ---------------------------------------------------------------- cost model


@dataclass(frozen=True)
class AttentionCost:
    projection_params: int  # W^Q, W^K, W^V
    output_params: int  # W^O
    projection_flops: int
    score_flops: int
    scale_flops: int
    softmax_flops: int
    mix_flops: int
    output_flops: int

    @property
    def flops(self):
        return (self.projection_flops + self.score_flops + self.scale_flops
                + self.softmax_flops + self.mix_flops + self.output_flops)

    @property
    def params(self):
        return self.projection_params + self.output_params


def count_cost_attention(config, n):
    """Itemised cost of one single-head attention block over ``n`` tokens."""
    d, dk = config.d_model, config.d_k
    return AttentionCost(
        projection_params=3 * d * dk,
        output_params=dk * d,
        projection_flops=3 * n * d * dk,
        score_flops=n * n * dk,
        scale_flops=n * n,
        softmax_flops=SOFTMAX_FLOPS_PER_ELEMENT * n * n,
        mix_flops=n * n * dk,
        output_flops=n * dk * d,
    )


def multi_head_reference_params(d, original_dim, d_k):
    """Reference formula ``3 * d * D_orig * d_k`` for uncompressed multi-head attention.

    Reported alongside the cost table only; nothing is derived from it.
    """
    return 3 * d * original_dim * d_k


def classifier_cost_rows(config, n_tokens):
    config.validate(allow_empty=True)
    n, d, dff = n_tokens, config.d_model, config.d_ff
    comp = "classifier"
    rows = []
    if config.embed_input:
        rows.append(matmul_cost("embed", comp, n, config.input_dim, d, bias=True))
    for i in range(config.n_layers):
        a = count_cost_attention(config, n)
        rows += [
            CostRow(f"layer.{i}.qkv", comp, a.projection_flops, a.projection_params),
            CostRow(f"layer.{i}.scores", comp, a.score_flops + a.scale_flops, 0),
            CostRow(f"layer.{i}.softmax", comp, a.softmax_flops, 0),
            CostRow(f"layer.{i}.mix", comp, a.mix_flops, 0),
            CostRow(f"layer.{i}.out_proj", comp, a.output_flops, a.output_params),
            elementwise_cost(f"layer.{i}.add1", comp, n * d),
            layer_norm_cost(f"layer.{i}.ln1", comp, n, d),
            matmul_cost(f"layer.{i}.ffn1", comp, n, d, dff, bias=True),
            elementwise_cost(f"layer.{i}.relu", comp, n * dff),
            matmul_cost(f"layer.{i}.ffn2", comp, n, dff, d, bias=True),
            elementwise_cost(f"layer.{i}.add2", comp, n * d),
            layer_norm_cost(f"layer.{i}.ln2", comp, n, d),
        ]
    rows.append(elementwise_cost("pool", comp, n * d))
    rows.append(matmul_cost("head", comp, 1, d, config.n_classes, bias=True))
    return rows
