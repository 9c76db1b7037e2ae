"""Network-level operations built on the tensor tape.

softmax, layernorm and gelu carry hand-derived backward rules (they are
gradient-checked against central differences); conv1d and the losses are
composites of recorded primitives, so their gradients come for free.
"""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError
from . import tensor as T
from .tensor import Tensor, as_tensor

GELU_K0 = 0.7978845608028654  # sqrt(2/pi)
GELU_K1 = 0.044715


def softmax(a, axis: int = -1) -> Tensor:
    """Row-stochastic softmax along ``axis``, max-subtracted for stability."""
    a = as_tensor(a)
    if a.shape[axis] == 0:
        raise DimensionError("softmax over an empty axis")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    ex = np.exp(shifted)
    out_data = ex / ex.sum(axis=axis, keepdims=True)

    def bwd(g):
        if a.requires_grad:
            dot = (g * out_data).sum(axis=axis, keepdims=True)
            a._accumulate(out_data * (g - dot))

    return T._make(out_data, (a,), bwd)


def gelu(a) -> Tensor:
    """GELU with the tanh approximation x/2 * (1 + tanh(k0*(x + k1*x^3)))."""
    a = as_tensor(a)
    x = a.data
    inner = GELU_K0 * (x + GELU_K1 * x * x * x)
    t = np.tanh(inner)
    out_data = 0.5 * x * (1.0 + t)

    def bwd(g):
        if a.requires_grad:
            d_inner = GELU_K0 * (1.0 + 3.0 * GELU_K1 * x * x)
            a._accumulate(g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner))

    return T._make(out_data, (a,), bwd)


def layernorm(x, gain, bias, eps: float = 1e-6) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.shape[-1]
    if d == 0:
        raise DimensionError("layernorm over an empty last axis")
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f"layernorm affine shapes {gain.shape}/{bias.shape} for d={d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out_data = gain.data * xhat + bias.data

    def bwd(g):
        if bias.requires_grad:
            bias._accumulate(g.reshape(-1, d).sum(axis=0))
        if gain.requires_grad:
            gain._accumulate((g * xhat).reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            gh = g * gain.data
            m1 = gh.mean(axis=-1, keepdims=True)
            m2 = (gh * xhat).mean(axis=-1, keepdims=True)
            x._accumulate((gh - m1 - xhat * m2) * inv)

    return T._make(out_data, (x, gain, bias), bwd)


def embedding(table, indices) -> Tensor:
    """Look up rows of ``table`` by integer ``indices``."""
    return T.take(table, np.asarray(indices, dtype=np.int64), axis=0)


def conv1d(x, kernel, bias=None, padding: int = 0) -> Tensor:
    """1-D cross-correlation, stride 1, with a hand-derived backward.

    x: (n, c_in, length); kernel: (c_out, c_in, k); output (n, c_out, l_out)
    with l_out = length + 2*padding - k + 1.  The input gradient is the
    full correlation of the output gradient with the flipped kernel.
    """
    from numpy.lib.stride_tricks import sliding_window_view

    x, kernel = as_tensor(x), as_tensor(kernel)
    bias = as_tensor(bias) if bias is not None else None
    n, c_in, length = x.shape
    c_out, c_in_k, k = kernel.shape
    if c_in_k != c_in:
        raise DimensionError(f"conv1d channel mismatch: x has {c_in}, kernel expects {c_in_k}")
    l_out = length + 2 * padding - k + 1
    if l_out < 1:
        raise DimensionError(f"conv1d kernel {k} too large for length {length} (pad {padding})")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    # im2col: out[n,o,i] = sum_{c,j} xp[n,c,i+j] * kernel[o,c,j], one gemm
    cols = sliding_window_view(xp, k, axis=2)                 # (n, c_in, l_out, k) view
    cols_mat = np.ascontiguousarray(cols.transpose(0, 2, 1, 3)).reshape(n * l_out, c_in * k)
    w_mat = kernel.data.reshape(c_out, c_in * k)
    out_data = np.ascontiguousarray((cols_mat @ w_mat.T).reshape(n, l_out, c_out).transpose(0, 2, 1))
    if bias is not None:
        out_data += bias.data[None, :, None]

    def bwd(grad):
        g_mat = np.ascontiguousarray(grad.transpose(0, 2, 1)).reshape(n * l_out, c_out)
        if bias is not None and bias.requires_grad:
            bias._accumulate(g_mat.sum(axis=0))
        if kernel.requires_grad:
            kernel._accumulate((g_mat.T @ cols_mat).reshape(c_out, c_in, k))
        if x.requires_grad:
            # full correlation of grad with the flipped kernel
            gp = np.pad(grad, ((0, 0), (0, 0), (k - 1, k - 1)))
            gcols = sliding_window_view(gp, k, axis=2)        # (n, c_out, length+2p, k)
            lp = length + 2 * padding
            gcols_mat = np.ascontiguousarray(gcols.transpose(0, 2, 1, 3)).reshape(n * lp, c_out * k)
            kflip = np.ascontiguousarray(kernel.data[:, :, ::-1].transpose(0, 2, 1)).reshape(c_out * k, c_in)
            dxp = (gcols_mat @ kflip).reshape(n, lp, c_in).transpose(0, 2, 1)
            x._accumulate(dxp[:, :, padding:padding + length] if padding else dxp)

    parents = (x, kernel, bias) if bias is not None else (x, kernel)
    return T._make(out_data, parents, bwd)


def mse(pred, target, axis=None) -> Tensor:
    """Mean of squared differences (over everything, or along ``axis``)."""
    diff = T.sub(pred, target)
    return T.mean(T.mul(diff, diff), axis=axis)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    m = a.data.max(axis=axis, keepdims=True)  # constant shift, gradient-exact
    z = T.sub(a, m)
    lse = T.log(T.sum_(T.exp(z), axis=axis, keepdims=True))
    return T.sub(z, lse)


def cross_entropy(logits, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under ``logits``."""
    lp = log_softmax(logits, axis=-1)
    picked = T.gather_rows(lp, np.asarray(labels, dtype=np.int64))
    return T.mul(T.mean(picked), -1.0)
