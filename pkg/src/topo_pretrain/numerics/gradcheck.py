"""Central finite differences, used to audit tape gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor, precision


def numeric_grad(f: Callable[[], Tensor], param: Tensor, h: float = 1e-3) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. every entry of ``param``.

    ``f`` is evaluated outside any tape and in float64, so rounding of the
    float32 forward pass does not swamp the O(h^2) difference quotient.
    """
    base = param.data.copy()
    flat = base.astype(np.float64).reshape(-1)
    grad = np.zeros(flat.shape, dtype=np.float64)
    with precision(np.float64):
        for i in range(flat.size):
            plus = flat.copy()
            minus = flat.copy()
            plus[i] += h
            minus[i] -= h
            param.data = plus.reshape(base.shape)
            fp = f().item()
            param.data = minus.reshape(base.shape)
            fm = f().item()
            grad[i] = (fp - fm) / (2 * h)
    param.data = base
    return grad.reshape(base.shape)


def analytic_grads(f: Callable[[], Tensor], params: Sequence[Tensor]) -> list[np.ndarray]:
    with Tape() as tape:
        tape.watch(*params)
        loss = f()
    tape.backward(loss)
    return [np.zeros(p.shape, np.float32) if p.grad is None else p.grad.copy() for p in params]


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Norm-wise relative error ``|a - n| / max(|a|, |n|, floor)``."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(n), floor)
    return float(np.linalg.norm(a - n) / denom)
