"""Dense float64 tensors with reverse-mode automatic differentiation.

The tape is dynamic: every differentiable op links its output to its input
tensors through a backward closure, and :func:`backward` replays the
recorded graph once, in reverse topological order.  Arithmetic is 64-bit
throughout; the networks built on top are small enough that precision is
worth far more than speed here (finite-difference acceptance checks need
it).

Only the broadcasting the two networks actually use is supported: trailing
axes in the numpy sense for elementwise ops, and equal leading batch
extents for stacked matmul.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from ..errors import ContractError, DimensionError

Arrayish = Union["Tensor", np.ndarray, float, int]

_grad_enabled = True


@contextmanager
def no_grad():
    """Suspend tape recording (e.g. for sampling chains and inference)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """A node in the computation graph.

    ``data`` is always a C-contiguous float64 ndarray.  ``grad`` is lazily
    allocated with the same shape and accumulates across backward calls
    until :meth:`zero_grad`.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._backward = None
        self.name = name

    # -- bookkeeping --------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        nm = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad}{nm})"

    def detach(self) -> "Tensor":
        """Forward-identity constant; gradients never flow past it."""
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)  # own the buffer
            if self.grad.shape != self.data.shape:
                self.grad = np.broadcast_to(self.grad, self.data.shape).copy()
        else:
            self.grad += g

    # -- operator sugar ------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, expo):
        return power(self, expo)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return slice_(self, key)

    def reshape(self, *shape):
        return reshape(self, *shape)

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of size {self.data.size}")
        return float(self.data.reshape(()))

    def backward(self):
        backward(self)


def as_tensor(x: Arrayish) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _needs_grad(*tensors: Tensor) -> bool:
    return _grad_enabled and any(t.requires_grad for t in tensors)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor(data)
    if _needs_grad(*parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise arithmetic -------------------------------------------


def add(a: Arrayish, b: Arrayish) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(out_data, (a, b), bwd)


def sub(a: Arrayish, b: Arrayish) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data - b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _make(out_data, (a, b), bwd)


def mul(a: Arrayish, b: Arrayish) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(out_data, (a, b), bwd)


def div(a: Arrayish, b: Arrayish) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data / b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(out_data, (a, b), bwd)


def power(a: Arrayish, expo: float) -> Tensor:
    a = as_tensor(a)
    e = float(expo)
    out_data = a.data**e

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * e * a.data ** (e - 1.0))

    return _make(out_data, (a,), bwd)


def exp(a: Arrayish) -> Tensor:
    a = as_tensor(a)
    out_data = np.exp(a.data)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * out_data)

    return _make(out_data, (a,), bwd)


def log(a: Arrayish) -> Tensor:
    a = as_tensor(a)
    out_data = np.log(a.data)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g / a.data)

    return _make(out_data, (a,), bwd)


def sqrt(a: Arrayish) -> Tensor:
    a = as_tensor(a)
    out_data = np.sqrt(a.data)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * 0.5 / out_data)

    return _make(out_data, (a,), bwd)


def tanh(a: Arrayish) -> Tensor:
    a = as_tensor(a)
    out_data = np.tanh(a.data)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * (1.0 - out_data * out_data))

    return _make(out_data, (a,), bwd)


def sigmoid(a: Arrayish) -> Tensor:
    a = as_tensor(a)
    # Stable two-branch evaluation.
    x = a.data
    out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * out_data * (1.0 - out_data))

    return _make(out_data, (a,), bwd)


# -- linear algebra ----------------------------------------------------


def matmul(a: Arrayish, b: Arrayish) -> Tensor:
    """Matrix product.  2-D classic or stacked (equal leading extents)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs >=2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    if a.ndim != b.ndim and not (a.ndim > 2 and b.ndim == 2):
        raise DimensionError(f"unsupported matmul rank mix: {a.shape} @ {b.shape}")
    if a.ndim == b.ndim and a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul batch extents differ: {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def bwd(g):
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2)
            a._accumulate(ga)
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g
            if b.ndim < gb.ndim:  # stacked @ 2-D weight: sum over batch
                gb = gb.sum(axis=tuple(range(gb.ndim - 2)))
            b._accumulate(gb)

    return _make(out_data, (a, b), bwd)


# -- reductions --------------------------------------------------------


def sum_(a: Arrayish, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if not a.requires_grad:
            return
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.shape).copy())
        else:
            if not keepdims:
                g = np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(g, a.shape).copy())

    return _make(out_data, (a,), bwd)


def mean(a: Arrayish, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out_data = a.data.mean(axis=axis, keepdims=keepdims)
    denom = a.data.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])

    def bwd(g):
        if not a.requires_grad:
            return
        if axis is None:
            a._accumulate(np.broadcast_to(g / denom, a.shape).copy())
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(gg / denom, a.shape).copy())

    return _make(out_data, (a,), bwd)


# -- shape plumbing ----------------------------------------------------


def reshape(a: Arrayish, *shape) -> Tensor:
    a = as_tensor(a)
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    out_data = a.data.reshape(shape)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g.reshape(a.shape))

    return _make(out_data, (a,), bwd)


def transpose(a: Arrayish, axes=None) -> Tensor:
    a = as_tensor(a)
    out_data = np.ascontiguousarray(a.data.transpose(axes))
    inv = None if axes is None else np.argsort(axes)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g.transpose(inv) if inv is not None else g.transpose())

    return _make(out_data, (a,), bwd)


def slice_(a: Arrayish, key) -> Tensor:
    a = as_tensor(a)
    out_data = np.ascontiguousarray(a.data[key])

    def bwd(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            np.add.at(full, key, g)
            a._accumulate(full)

    return _make(out_data, (a,), bwd)


def take(a: Arrayish, indices: np.ndarray, axis: int = 0) -> Tensor:
    """Integer gather along one axis (embedding lookups, im2col windows)."""
    a = as_tensor(a)
    axis = axis % a.ndim
    idx = np.asarray(indices)
    if not np.issubdtype(idx.dtype, np.integer):
        raise ContractError("take() indices must be integers")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[axis]):
        raise ContractError(f"take() index out of range for axis extent {a.shape[axis]}")
    out_data = np.take(a.data, idx, axis=axis)

    def bwd(g):
        if not a.requires_grad:
            return
        full = np.zeros_like(a.data)
        moved = np.moveaxis(full, axis, 0)
        # g has idx.shape spliced in at `axis`; move those axes to the front.
        gm = np.moveaxis(g, tuple(range(axis, axis + idx.ndim)), tuple(range(idx.ndim)))
        np.add.at(moved, idx, gm)
        a._accumulate(full)

    return _make(out_data, (a,), bwd)


def gather_rows(a: Arrayish, indices: np.ndarray) -> Tensor:
    """out[i] = a[i, indices[i]] for a 2-D tensor (label picking)."""
    a = as_tensor(a)
    idx = np.asarray(indices)
    if a.ndim != 2 or idx.ndim != 1 or idx.shape[0] != a.shape[0]:
        raise DimensionError(f"gather_rows: shapes {a.shape} / {idx.shape}")
    rows = np.arange(a.shape[0])
    out_data = a.data[rows, idx]

    def bwd(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            np.add.at(full, (rows, idx), g)
            a._accumulate(full)

    return _make(out_data, (a,), bwd)


def pad_last(a: Arrayish, before: int, after: Optional[int] = None) -> Tensor:
    """Zero-pad the last axis on both sides."""
    a = as_tensor(a)
    after = before if after is None else after
    widths = [(0, 0)] * (a.ndim - 1) + [(before, after)]
    out_data = np.pad(a.data, widths)
    key = (Ellipsis, slice(before, before + a.shape[-1]))

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g[key])

    return _make(out_data, (a,), bwd)


def concat(tensors: Iterable[Arrayish], axis: int = 0) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    out_data = np.concatenate([p.data for p in parts], axis=axis)
    splits = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def bwd(g):
        pieces = np.split(g, splits, axis=axis)
        for p, gp in zip(parts, pieces):
            if p.requires_grad:
                p._accumulate(gp)

    return _make(out_data, parts, bwd)


# -- backward driver ---------------------------------------------------


def backward(loss: Tensor):
    """Populate ``grad`` on every requires_grad leaf reachable from ``loss``.

    Visits each recorded node exactly once, children before parents.
    Repeated calls without :meth:`Tensor.zero_grad` accumulate.
    """
    if not isinstance(loss, Tensor):
        raise ContractError("backward() expects a Tensor")
    if loss.data.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack = [(loss, False)]
    while stack:  # iterative DFS; graphs can exceed the recursion limit
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))

    loss._accumulate(np.ones_like(loss.data))
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
        if node._parents:  # free intermediate grads, keep leaf grads
            node.grad = None
