"""Adam with bias correction."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import DTYPE, ShapeError, Tensor


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray | None],
              state: AdamState) -> AdamState:
    """Apply one Adam update in place. ``None`` gradients count as zero."""
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} params but {len(grads)} gradients")
    if not state.m:
        state.m = [np.zeros(p.shape, dtype=DTYPE) for p in params]
        state.v = [np.zeros(p.shape, dtype=DTYPE) for p in params]
    elif len(state.m) != len(params):
        raise ShapeError("optimizer state does not match the parameter list")
    state.step += 1
    t = state.step
    b1, b2 = DTYPE(state.beta1), DTYPE(state.beta2)
    corr1 = DTYPE(1.0 - state.beta1 ** t)
    corr2 = DTYPE(1.0 - state.beta2 ** t)
    lr, eps = DTYPE(state.lr), DTYPE(state.eps)
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            g = np.zeros(p.shape, dtype=DTYPE)
        g = np.asarray(g, dtype=DTYPE)
        if g.shape != p.shape:
            raise ShapeError(f"gradient {g.shape} does not match parameter {p.shape}")
        if state.m[i].shape != p.shape:
            raise ShapeError(f"moment {state.m[i].shape} does not match parameter {p.shape}")
        state.m[i] = b1 * state.m[i] + (1 - b1) * g
        state.v[i] = b2 * state.v[i] + (1 - b2) * g * g
        m_hat = state.m[i] / corr1
        v_hat = state.v[i] / corr2
        p.data = (p.data - lr * m_hat / (np.sqrt(v_hat) + eps)).astype(DTYPE)
    return state


class Adam:
    """Optimizer bound to a fixed, ordered parameter list."""

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3, betas=(0.9, 0.999),
                 eps: float = 1e-8):
        self.params = list(params)
        self.state = AdamState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps)

    def step(self, grads: Sequence[np.ndarray | None] | None = None) -> None:
        if grads is None:
            grads = [p.grad for p in self.params]
        adam_step(self.params, grads, self.state)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
