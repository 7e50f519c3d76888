from cwat.numerics.tensor import Tape, Tensor, as_tensor, backward, is_grad_enabled, no_grad
from cwat.numerics.ops import (
    LAYER_NORM_EPS,
    add,
    conv1d_grouped,
    conv_output_length,
    conv_transpose1d_grouped,
    conv_transpose_output_length,
    cross_entropy_logits,
    div,
    dropout,
    getitem,
    layer_norm,
    linear,
    matmul,
    mean,
    mean_lastdim,
    mse_loss,
    mul,
    relu,
    reshape,
    softmax_lastdim,
    sub,
    subsample,
    transpose,
    upsample_nearest,
)
from cwat.numerics.gradcheck import check_gradients

__all__ = [
    "LAYER_NORM_EPS",
    "Tape",
    "Tensor",
    "add",
    "as_tensor",
    "backward",
    "check_gradients",
    "conv1d_grouped",
    "conv_output_length",
    "conv_transpose1d_grouped",
    "conv_transpose_output_length",
    "cross_entropy_logits",
    "div",
    "dropout",
    "getitem",
    "is_grad_enabled",
    "layer_norm",
    "linear",
    "matmul",
    "mean",
    "mean_lastdim",
    "mse_loss",
    "mul",
    "no_grad",
    "relu",
    "reshape",
    "softmax_lastdim",
    "sub",
    "subsample",
    "transpose",
    "upsample_nearest",
]
