"""Differentiable operations on :class:`~cwat.numerics.tensor.Tensor`.

Each op computes its forward value with numpy and returns a rule mapping the
output gradient to one gradient per input (``None`` where not needed).
Convolutions accept ``(channels, length)`` or ``(batch, channels, length)``.
"""

from __future__ import annotations

import numpy as np

from cwat.errors import ConfigError, InputError, ShapeError
from cwat.numerics.tensor import Tensor, as_tensor

LAYER_NORM_EPS = 1e-5


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------- elementwise


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def rule(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._result(out, (a, b), rule)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data

    def rule(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor._result(out, (a, b), rule)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def rule(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor._result(out, (a, b), rule)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def rule(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return Tensor._result(out, (a, b), rule)


def relu(x):
    mask = x.data > 0
    return Tensor._result(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def dropout(x, rate, training, rng):
    """Inverted dropout: kept activations are divided by the keep probability."""
    if not 0.0 <= rate < 1.0:
        raise InputError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    keep = 1.0 - rate
    mask = (rng.random(x.shape) >= rate) / keep
    return Tensor._result(x.data * mask, (x,), lambda g: (g * mask,))


# ---------------------------------------------------------------- shape ops


def reshape(x, shape):
    old = x.shape
    return Tensor._result(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x, axes=None):
    """Permute axes; default swaps the last two."""
    if axes is None:
        axes = list(range(x.ndim))
        axes[-2], axes[-1] = axes[-1], axes[-2]
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return Tensor._result(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inverse),))


def getitem(x, index):
    shape = x.shape

    def rule(g):
        full = np.zeros(shape)
        np.add.at(full, index, g)
        return (full,)

    return Tensor._result(x.data[index], (x,), rule)


def sum(x, axis=None, keepdims=False):  # noqa: A001
    shape = x.shape

    def rule(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return Tensor._result(np.sum(x.data, axis=axis, keepdims=keepdims), (x,), rule)


def mean(x, axis=None, keepdims=False):
    count = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def mean_lastdim(x):
    return mean(x, axis=-1)


# ---------------------------------------------------------------- linear algebra


def matmul(a, b):
    """Matrix product over the last two axes; leading axes broadcast."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs operands with >= 2 dims, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def rule(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return Tensor._result(out, (a, b), rule)


def linear(x, weight, bias=None):
    y = matmul(x, weight)
    return y if bias is None else add(y, bias)


# ---------------------------------------------------------------- normalisation


def layer_norm(x, gain, bias, eps=LAYER_NORM_EPS):
    """Normalise every innermost vector by its own mean and variance.

    Statistics run over the last axis only, so rows (channels, tokens,
    batch items) never share them.
    """
    n = x.shape[-1]
    if gain.shape != (n,) or bias.shape != (n,):
        raise ShapeError(f"layer_norm gain/bias must have shape ({n},), got {gain.shape} and {bias.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    centred = x.data - mu
    var = (centred * centred).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centred * inv_std
    out = xhat * gain.data + bias.data

    def rule(g):
        lead = tuple(range(g.ndim - 1))
        ggain = (g * xhat).sum(axis=lead)
        gbias = g.sum(axis=lead)
        gx_hat = g * gain.data
        gx = inv_std * (
            gx_hat
            - gx_hat.mean(axis=-1, keepdims=True)
            - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True)
        )
        return gx, ggain, gbias

    return Tensor._result(out, (x, gain, bias), rule)


def softmax_lastdim(x):
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def rule(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return Tensor._result(s, (x,), rule)


# ---------------------------------------------------------------- losses


def mse_loss(pred, target):
    """Mean squared error over every element."""
    target = as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss shapes differ: {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    n = diff.size

    def rule(g):
        gp = (2.0 / n) * g * diff
        return gp, -gp

    return Tensor._result(np.mean(diff * diff), (pred, target), rule)


def cross_entropy_logits(logits, labels):
    """Softmax cross-entropy; ``logits`` is ``(K,)`` with an int label or ``(B, K)`` with ``B`` labels.

    Batched inputs return the mean over the batch.
    """
    single = logits.ndim == 1
    z = logits.data[None, :] if single else logits.data
    if z.ndim != 2:
        raise ShapeError(f"cross_entropy_logits expects (K,) or (B, K), got {logits.shape}")
    y = np.atleast_1d(np.asarray(labels))
    if y.shape != (z.shape[0],):
        raise ShapeError(f"{z.shape[0]} logit rows but labels have shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.equal(np.mod(y, 1), 0)):
            raise InputError("labels must be integers")
        y = y.astype(np.int64)
    k = z.shape[1]
    if np.any(y < 0) or np.any(y >= k):
        raise InputError(f"label outside class range [0, {k})")
    shifted = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(z.shape[0])
    loss = np.mean(logsum - shifted[rows, y])

    def rule(g):
        p = np.exp(shifted - logsum[:, None])
        p[rows, y] -= 1.0
        p *= g / z.shape[0]
        return (p[0] if single else p,)

    return Tensor._result(loss, (logits,), rule)


# ---------------------------------------------------------------- convolution


def _as_batched(x):
    d = x.data
    if d.ndim == 2:
        return d[None], True
    if d.ndim == 3:
        return d, False
    raise ShapeError(f"expected (channels, length) or (batch, channels, length), got {x.shape}")


def conv_output_length(length, kernel_size, stride=1, padding=0):
    return (length + 2 * padding - kernel_size) // stride + 1


def conv1d_grouped(x, kernel, groups=1, stride=1, padding=0):
    """Grouped 1-D cross-correlation.

    ``kernel`` has shape ``(N, M // groups, K)``; output channel block ``g``
    only reads input channel block ``g``.  With ``groups == M == N`` every
    channel is filtered by its own kernel.
    """
    xd, squeeze = _as_batched(x)
    batch, m, length = xd.shape
    n, mg, k = kernel.shape
    if groups < 1 or m % groups or n % groups:
        raise ConfigError(f"channels in={m} out={n} not divisible by groups={groups}")
    if mg != m // groups:
        raise ShapeError(f"kernel {kernel.shape} does not fit {m} input channels in {groups} groups")
    if stride < 1 or padding < 0:
        raise ConfigError(f"invalid stride={stride} padding={padding}")
    lout = conv_output_length(length, k, stride, padding)
    if lout < 1:
        raise ShapeError(f"convolution output length {lout} < 1 (input {length}, kernel {k}, stride {stride}, padding {padding})")

    ng = n // groups
    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding))) if padding else xd
    xg = xp.reshape(batch, groups, mg, -1)
    w = kernel.data.reshape(groups, ng, mg, k)
    span = stride * (lout - 1) + 1
    depthwise = mg == 1 and ng == 1

    if depthwise:
        wd = w[:, 0, 0, :]
        out = np.zeros((batch, groups, 1, lout))
        for j in range(k):
            out[:, :, 0, :] += wd[None, :, j, None] * xg[:, :, 0, j:j + span:stride]
    else:
        out = np.zeros((batch, groups, ng, lout))
        for j in range(k):
            out += np.matmul(w[..., j], xg[..., j:j + span:stride])
    out = out.reshape(batch, n, lout)
    if squeeze:
        out = out[0]

    def rule(g):
        gb = g[None] if squeeze else g
        gb = gb.reshape(batch, groups, ng, lout)
        gxp = np.zeros_like(xg)
        gw = np.zeros_like(w)
        for j in range(k):
            xs = xg[..., j:j + span:stride]
            if depthwise:
                gw[:, 0, 0, j] = np.einsum("bgt,bgt->g", gb[:, :, 0, :], xs[:, :, 0, :])
                gxp[:, :, 0, j:j + span:stride] += wd[None, :, j, None] * gb[:, :, 0, :]
            else:
                gw[..., j] = np.matmul(gb, np.swapaxes(xs, -1, -2)).sum(axis=0)
                gxp[..., j:j + span:stride] += np.matmul(np.swapaxes(w[..., j], -1, -2), gb)
        gx = gxp.reshape(batch, m, -1)
        if padding:
            gx = gx[..., padding:padding + length]
        if squeeze:
            gx = gx[0]
        return gx, gw.reshape(kernel.shape)

    return Tensor._result(out, (x, kernel), rule)


def conv_transpose_output_length(length, kernel_size, stride=1, padding=0, output_padding=0):
    return (length - 1) * stride - 2 * padding + kernel_size + output_padding


def conv_transpose1d_grouped(x, kernel, groups=1, stride=1, padding=0, output_padding=0):
    """Adjoint of :func:`conv1d_grouped` (a strided, grouped transposed convolution).

    ``kernel`` has shape ``(M, N // groups, K)`` for ``M`` input and ``N``
    output channels.
    """
    xd, squeeze = _as_batched(x)
    batch, m, length = xd.shape
    mk, ng, k = kernel.shape
    if groups < 1 or m % groups:
        raise ConfigError(f"{m} input channels not divisible by groups={groups}")
    if mk != m:
        raise ShapeError(f"kernel {kernel.shape} expects {mk} input channels, got {m}")
    if stride < 1 or padding < 0 or not 0 <= output_padding < max(stride, 1):
        raise ConfigError(f"invalid stride={stride} padding={padding} output_padding={output_padding}")
    lout = conv_transpose_output_length(length, k, stride, padding, output_padding)
    if lout < 1:
        raise ShapeError(f"transposed convolution output length {lout} < 1")

    mg = m // groups
    n = ng * groups
    span = stride * (length - 1) + 1
    full_len = max(span + k - 1, padding + lout)
    xg = xd.reshape(batch, groups, mg, length)
    # (G, Ng, Mg, K): maps input block to output block per tap
    w = np.swapaxes(kernel.data.reshape(groups, mg, ng, k), 1, 2)
    depthwise = mg == 1 and ng == 1

    full = np.zeros((batch, groups, ng, full_len))
    if depthwise:
        wd = w[:, 0, 0, :]
        for j in range(k):
            full[:, :, 0, j:j + span:stride] += wd[None, :, j, None] * xg[:, :, 0, :]
    else:
        for j in range(k):
            full[..., j:j + span:stride] += np.matmul(w[..., j], xg)
    out = full[..., padding:padding + lout].reshape(batch, n, lout)
    if squeeze:
        out = out[0]

    def rule(g):
        gb = g[None] if squeeze else g
        gfull = np.zeros((batch, groups, ng, full_len))
        gfull[..., padding:padding + lout] = gb.reshape(batch, groups, ng, lout)
        gx = np.zeros_like(xg)
        gw = np.zeros_like(w)
        for j in range(k):
            gs = gfull[..., j:j + span:stride]
            if depthwise:
                gx[:, :, 0, :] += wd[None, :, j, None] * gs[:, :, 0, :]
                gw[:, 0, 0, j] = np.einsum("bgt,bgt->g", gs[:, :, 0, :], xg[:, :, 0, :])
            else:
                gx += np.matmul(np.swapaxes(w[..., j], -1, -2), gs)
                gw[..., j] = np.matmul(gs, np.swapaxes(xg, -1, -2)).sum(axis=0)
        gx = gx.reshape(batch, m, length)
        if squeeze:
            gx = gx[0]
        gk = np.swapaxes(gw, 1, 2).reshape(kernel.shape)
        return gx, gk

    return Tensor._result(out, (x, kernel), rule)


def subsample(x, stride):
    """Keep every ``stride``-th sample along the last axis, starting at 0."""
    return getitem(x, (Ellipsis, slice(None, None, stride)))


def upsample_nearest(x, factor, length):
    """Repeat each sample ``factor`` times along the last axis and crop to ``length``."""
    n = x.shape[-1]
    if not (n - 1) * factor < length <= n * factor:
        raise ShapeError(f"cannot upsample length {n} by {factor} to {length}")
    out = np.repeat(x.data, factor, axis=-1)[..., :length]

    def rule(g):
        pad = [(0, 0)] * (g.ndim - 1) + [(0, n * factor - length)]
        gp = np.pad(g, pad)
        return (gp.reshape(g.shape[:-1] + (n, factor)).sum(axis=-1),)

    return Tensor._result(out, (x,), rule)
