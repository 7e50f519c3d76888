"""Central-difference gradient checking against the tape."""

from __future__ import annotations

import numpy as np

from cwat.numerics.tensor import Tensor, backward


def numeric_grad(fn, tensors, h=1e-6):
    """Central differences of scalar ``fn()`` with respect to each tensor's data (perturbed in place)."""
    grads = []
    for t in tensors:
        g = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = fn().data.reshape(-1)[0]
            flat[i] = orig - h
            down = fn().data.reshape(-1)[0]
            flat[i] = orig
            gflat[i] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def tape_grad(fn, tensors):
    for t in tensors:
        t.grad = None
    loss = fn()
    backward(loss)
    return [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]


def max_violation(analytic, numeric, rtol, atol):
    """Largest ratio of error to allowed error, ``max(rtol * scale, atol)``; <= 1 passes."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        allowed = np.maximum(rtol * np.maximum(np.abs(a), np.abs(n)), atol)
        if a.size:
            worst = max(worst, float(np.max(np.abs(a - n) / allowed)))
    return worst


def check_gradients(fn, tensors, rtol=1e-5, atol=1e-7, h=1e-6):
    """Return ``(ok, worst_ratio)`` comparing tape and finite-difference gradients.

    ``fn`` must rebuild the forward pass on every call and return a scalar
    :class:`Tensor`.
    """
    tensors = [t for t in tensors if isinstance(t, Tensor)]
    analytic = tape_grad(fn, tensors)
    numeric = numeric_grad(fn, tensors, h=h)
    worst = max_violation(analytic, numeric, rtol, atol)
    return worst <= 1.0, worst
