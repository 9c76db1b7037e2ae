"""Central finite-difference gradient checking.

The independent oracle for every backward rule in the package: perturb one
entry at a time by +/-h, re-run the forward pass, and compare the secant
slope against the recorded gradient.
"""

from __future__ import annotations

from typing import Callable, Dict, Iterable

import numpy as np

from .tensor import Tensor, backward, no_grad


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    """max |a-b| / (1 + max |.|): relative for large gradients, absolute near zero."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0:
        return 0.0
    num = float(np.max(np.abs(a - b)))
    den = 1.0 + max(float(np.max(np.abs(a))), float(np.max(np.abs(b))))
    return num / den


def fd_gradient(f: Callable[[], float], t: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar ``f()`` w.r.t. every entry of ``t``.

    ``f`` must recompute from the tensor's current ``data`` on each call.
    """
    g = np.zeros_like(t.data)
    flat = t.data.ravel()
    gf = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def gradcheck(build_loss: Callable[[], Tensor], wrt: Iterable[Tensor],
              h: float = 1e-5) -> Dict[str, float]:
    """Compare recorded gradients with finite differences.

    ``build_loss`` must rebuild the scalar loss graph from the current
    parameter data each time it is called.  Returns per-tensor relative
    errors keyed by tensor name (or an index when unnamed).
    """
    wrt = list(wrt)
    for t in wrt:
        t.zero_grad()
    loss = build_loss()
    backward(loss)
    analytic = {}
    for i, t in enumerate(wrt):
        key = t.name if t.name else f"tensor{i}"
        analytic[key] = t.grad.copy() if t.grad is not None else np.zeros_like(t.data)

    def f() -> float:
        with no_grad():
            return build_loss().item()

    report = {}
    for i, t in enumerate(wrt):
        key = t.name if t.name else f"tensor{i}"
        report[key] = rel_error(analytic[key], fd_gradient(f, t, h))
    return report
