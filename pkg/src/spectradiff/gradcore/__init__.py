"""Minimal dense-tensor compute layer with reverse-mode differentiation.

A graph and its tensors belong to one execution context at a time;
parallelism is safe only across independent graphs (e.g. concurrent
sampling chains), each with its own tensors and RNG.
"""

from .tensor import (
    Tensor,
    add,
    as_tensor,
    backward,
    concat,
    div,
    exp,
    gather_rows,
    grad_enabled,
    log,
    matmul,
    mean,
    mul,
    no_grad,
    pad_last,
    power,
    reshape,
    sigmoid,
    slice_,
    sqrt,
    sub,
    sum_,
    take,
    tanh,
    transpose,
)
from .functional import (
    conv1d,
    cross_entropy,
    embedding,
    gelu,
    layernorm,
    log_softmax,
    mse,
    softmax,
)
from .optim import AdamW, Params
from .check import fd_gradient, gradcheck, rel_error

__all__ = [
    "AdamW",
    "Params",
    "Tensor",
    "add",
    "as_tensor",
    "backward",
    "concat",
    "conv1d",
    "cross_entropy",
    "div",
    "embedding",
    "exp",
    "fd_gradient",
    "gather_rows",
    "gelu",
    "grad_enabled",
    "gradcheck",
    "layernorm",
    "log",
    "log_softmax",
    "matmul",
    "mean",
    "mse",
    "mul",
    "no_grad",
    "pad_last",
    "power",
    "rel_error",
    "reshape",
    "sigmoid",
    "slice_",
    "softmax",
    "sqrt",
    "sub",
    "sum_",
    "take",
    "tanh",
    "transpose",
]
