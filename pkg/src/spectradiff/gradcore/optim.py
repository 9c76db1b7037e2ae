"""Parameter containers and the decoupled-weight-decay Adam optimizer."""

from __future__ import annotations

from typing import Dict, Iterator, Tuple

import numpy as np

from ..errors import ConfigError
from .tensor import Tensor


class Params:
    """An ordered, named collection of trainable tensors."""

    def __init__(self):
        self._store: Dict[str, Tensor] = {}

    def add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self._store:
            raise ConfigError(f"duplicate parameter name {name!r}")
        t = Tensor(np.asarray(data, dtype=np.float64), requires_grad=True, name=name)
        self._store[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._store[name]

    def __contains__(self, name: str) -> bool:
        return name in self._store

    def __len__(self) -> int:
        return len(self._store)

    def items(self) -> Iterator[Tuple[str, Tensor]]:
        return iter(self._store.items())

    def tensors(self) -> Iterator[Tensor]:
        return iter(self._store.values())

    def names(self):
        return list(self._store)

    def zero_grad(self):
        for t in self._store.values():
            t.grad = None

    def num_values(self) -> int:
        return sum(t.size for t in self._store.values())

    def state_arrays(self) -> Dict[str, np.ndarray]:
        """Name -> copy of data, for checkpointing."""
        return {name: t.data.copy() for name, t in self._store.items()}

    def load_arrays(self, arrays: Dict[str, np.ndarray]):
        missing = set(self._store) - set(arrays)
        extra = set(arrays) - set(self._store)
        if missing or extra:
            raise ConfigError(f"parameter set mismatch: missing={sorted(missing)}, extra={sorted(extra)}")
        for name, t in self._store.items():
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != t.data.shape:
                raise ConfigError(f"shape mismatch for {name!r}: {arr.shape} vs {t.data.shape}")
            t.data = arr.copy()

    def clone(self) -> "Params":
        out = Params()
        for name, t in self._store.items():
            out.add(name, t.data.copy())
        return out


class AdamW:
    """Adam with decoupled weight decay, applied in place.

    theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta)
    """

    def __init__(self, params: Params, lr: float, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.0):
        if lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        b1, b2 = betas
        if not (0.0 <= b1 < 1.0 and 0.0 <= b2 < 1.0):
            raise ConfigError(f"betas must lie in [0, 1), got {betas}")
        if eps <= 0:
            raise ConfigError(f"eps must be positive, got {eps}")
        if weight_decay < 0:
            raise ConfigError(f"weight decay must be nonnegative, got {weight_decay}")
        self.params = params
        self.lr = float(lr)
        self.b1, self.b2 = float(b1), float(b2)
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.step_count = 0
        self._m = {name: np.zeros_like(t.data) for name, t in params.items()}
        self._v = {name: np.zeros_like(t.data) for name, t in params.items()}

    def step(self):
        """One update from the gradients currently stored on the params."""
        self.step_count += 1
        bc1 = 1.0 - self.b1**self.step_count
        bc2 = 1.0 - self.b2**self.step_count
        for name, t in self.params.items():
            g = t.grad
            if g is None:
                continue
            m = self._m[name]
            v = self._v[name]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * t.data
            t.data -= self.lr * update

    def zero_grad(self):
        self.params.zero_grad()
