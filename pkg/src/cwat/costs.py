"""Shared FLOP/parameter bookkeeping.

Convention: one multiply-accumulate counts as one FLOP.  Element-wise work is
charged per element: add/ReLU 1, layer normalisation 5 (mean, centre,
square-accumulate, scale, affine), softmax 5.
"""

from __future__ import annotations

from dataclasses import dataclass

LAYER_NORM_FLOPS_PER_ELEMENT = 5
SOFTMAX_FLOPS_PER_ELEMENT = 5


@dataclass(frozen=True)
class CostRow:
    name: str
    component: str  # cae_encoder | cae_decoder | classifier
    flops: int
    params: int
    standard_flops: int | None = None  # same conv with dense channel mixing


def layer_norm_cost(name, component, rows, width):
    return CostRow(name, component, LAYER_NORM_FLOPS_PER_ELEMENT * rows * width, 2 * width)


def elementwise_cost(name, component, elements):
    return CostRow(name, component, elements, 0)


def matmul_cost(name, component, rows, inner, cols, bias=False):
    """``(rows x inner) @ (inner x cols)`` applied to ``rows`` vectors with a learned weight."""
    flops = rows * inner * cols + (rows * cols if bias else 0)
    params = inner * cols + (cols if bias else 0)
    return CostRow(name, component, flops, params)
