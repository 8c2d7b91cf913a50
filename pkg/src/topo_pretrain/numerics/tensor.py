"""Dense float32 tensors with tape-based reverse-mode differentiation.

Operations record themselves on the innermost active :class:`Tape` whenever at
least one input is attached to it (or is a ``requires_grad`` leaf). Outside a
tape every operation is a plain numpy computation.

    with Tape() as tape:
        loss = (w @ x).sum()
    grads = tape.backward(loss)
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

DTYPE = np.float32

_PRECISION = [np.float32]


def _dt():
    return _PRECISION[-1]


@contextmanager
def precision(dtype):
    """Evaluate new tensors at ``dtype`` (float64 is used by gradient audits)."""
    _PRECISION.append(np.dtype(dtype).type)
    try:
        yield
    finally:
        _PRECISION.pop()


_ACTIVE: list["Tape"] = []


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class DomainError(ValueError):
    """An input lies outside the domain of the operation."""


class TapeError(RuntimeError):
    """Misuse of the gradient tape (non-scalar loss, foreign tensor...)."""


class Tensor:
    """A dense float32 array that can participate in a gradient tape."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = data
        self.requires_grad = requires_grad
        self.name = name
        self.grad: np.ndarray | None = None
        self.tape_id: int | None = None
        self._tape: Tape | None = None

    # -- basic properties -------------------------------------------------
    @property
    def data(self) -> np.ndarray:
        d = self._data
        return d if d.dtype == _dt() else d.astype(_dt())

    @data.setter
    def data(self, value) -> None:
        self._data = np.ascontiguousarray(np.asarray(value, dtype=_dt()))

    @property
    def shape(self) -> tuple[int, ...]:
        return self._data.shape

    @property
    def ndim(self) -> int:
        return self._data.ndim

    @property
    def size(self) -> int:
        return self._data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __len__(self) -> int:
        return self.data.shape[0]

    def __repr__(self) -> str:
        tag = f", tape_id={self.tape_id}" if self.tape_id is not None else ""
        return f"Tensor(shape={self.shape}{tag})"

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


@dataclass
class _Node:
    out_id: int
    input_ids: tuple[int | None, ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    op: str


class Tape:
    """Ordered record of primitive operations for one forward/backward pass."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self.gradients: dict[int, Tensor] = {}
        self._leaves: dict[int, Tensor] = {}
        self._shapes: dict[int, tuple[int, ...]] = {}
        self._next_id = 0
        self._consumed = False

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def _new_id(self, shape) -> int:
        i = self._next_id
        self._next_id += 1
        self._shapes[i] = shape
        return i

    def _attach(self, t: Tensor) -> int | None:
        if t._tape is self:
            return t.tape_id
        if t.requires_grad:
            t._tape = self
            t.tape_id = self._new_id(t.shape)
            self._leaves[t.tape_id] = t
            return t.tape_id
        return None

    def watch(self, *tensors: Tensor) -> None:
        """Attach leaves explicitly so they receive gradients."""
        for t in tensors:
            t.requires_grad = True
            self._attach(t)

    def backward(self, loss: Tensor) -> dict[int, Tensor]:
        if loss.size != 1:
            raise TapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss._tape is not self:
            raise TapeError("loss is not attached to this tape")
        if self._consumed:
            raise TapeError("tape already consumed by an earlier backward pass")
        grads: dict[int, np.ndarray] = {loss.tape_id: np.ones(loss.shape, dtype=_dt())}
        # intermediate gradients and node closures (which pin forward
        # activations) are released as soon as they have been propagated
        while self.nodes:
            node = self.nodes.pop()
            g = grads.pop(node.out_id, None)
            if g is None:
                continue
            in_grads = node.backward(g)
            for tid, gi in zip(node.input_ids, in_grads):
                if tid is None or gi is None:
                    continue
                gi = np.asarray(gi, dtype=_dt())
                if tid in grads:
                    grads[tid] = grads[tid] + gi
                else:
                    grads[tid] = gi
        self._consumed = True
        self.gradients = {k: Tensor(v) for k, v in grads.items()}
        for tid, leaf in self._leaves.items():
            g = grads.get(tid)
            leaf.grad = None if g is None else g.reshape(leaf.shape)
        return self.gradients

    def grad(self, t: Tensor) -> np.ndarray | None:
        if t._tape is not self:
            return None
        g = self.gradients.get(t.tape_id)
        return None if g is None else g.data


def active_tape() -> Tape | None:
    return _ACTIVE[-1] if _ACTIVE else None


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, inputs: Sequence[Tensor], backward, op: str) -> Tensor:
    out = Tensor(data)
    tape = active_tape()
    if tape is None:
        return out
    ids = tuple(tape._attach(x) for x in inputs)
    if all(i is None for i in ids):
        return out
    out._tape = tape
    out.tape_id = tape._new_id(out.shape)
    tape.nodes.append(_Node(out.tape_id, ids, backward, op))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# -- elementwise binary -------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
                 "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "div")
    out = a.data / b.data

    def backward(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * out / b.data, b.shape))

    return _make(out, (a, b), backward, "div")


def scale(a: Tensor, c: float) -> Tensor:
    c = _dt()(c)
    return _make(a.data * c, (a,), lambda g: (g * c,), "scale")


# -- elementwise unary --------------------------------------------------------

def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(np.where(mask, a.data, _dt()(0)), (a,), lambda g: (g * mask,), "relu")


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def softplus(a: Tensor) -> Tensor:
    x = a.data
    out = np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))
    return _make(out.astype(_dt()), (a,), lambda g: (g * _sigmoid_np(x),), "softplus")


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    return (0.5 * (1.0 + np.tanh(0.5 * x))).astype(_dt())


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise DomainError("log of non-positive value")
    x = a.data
    return _make(np.log(x), (a,), lambda g: (g / x,), "log")


def sqrt(a: Tensor) -> Tensor:
    if np.any(a.data < 0):
        raise DomainError("sqrt of negative value")
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def elementwise(op: str, a, b=None) -> Tensor:
    """Dispatch by name: add, sub, mul, relu, sigmoid, exp, log, scale."""
    binary = {"add": add, "sub": sub, "mul": mul, "div": div}
    unary = {"relu": relu, "sigmoid": sigmoid, "exp": exp, "log": log,
             "sqrt": sqrt, "softplus": softplus}
    if op in binary:
        if b is None:
            raise ValueError(f"{op} needs two operands")
        return binary[op](a, b)
    if op == "scale":
        return scale(as_tensor(a), float(b))
    if op in unary:
        return unary[op](as_tensor(a))
    raise ValueError(f"unknown elementwise op {op!r}")


# -- reductions and shape ops -------------------------------------------------

def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims, dtype=_dt())

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(np.asarray(out, dtype=_dt()), (a,), backward, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.size if axis is None else a.shape[axis]
    return scale(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a: Tensor) -> Tensor:
    return _make(a.data.T.copy(), (a,), lambda g: (g.T,), "transpose")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        parts = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            parts.append(g[tuple(idx)])
        return parts

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward, "concat")


# -- linear algebra and indexing ---------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return _make(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g), "matmul")


def _segment_matrix(ids: np.ndarray, num_segments: int) -> sp.csr_matrix:
    n = len(ids)
    return sp.csr_matrix((np.ones(n, dtype=_dt()), (ids, np.arange(n))),
                         shape=(num_segments, n))


def segment_sum(values: Tensor, segment_ids, num_segments: int) -> Tensor:
    """Row ``i`` of the result is the sum of value rows whose id equals ``i``."""
    values = as_tensor(values)
    ids = np.asarray(segment_ids, dtype=np.int64)
    if ids.ndim != 1 or len(ids) != values.shape[0]:
        raise ShapeError(f"segment_sum: {len(ids)} ids for {values.shape[0]} rows")
    if len(ids) and (ids.min() < 0 or ids.max() >= num_segments):
        raise IndexError(f"segment id out of range [0, {num_segments})")
    width = int(np.prod(values.shape[1:]))
    flat = values.data.reshape(values.shape[0], width)
    out = np.asarray(_segment_matrix(ids, num_segments) @ flat, dtype=_dt())
    out = out.reshape((num_segments,) + values.shape[1:])
    return _make(out, (values,), lambda g: (g[ids],), "segment_sum")


def gather_rows(a: Tensor, index) -> Tensor:
    idx = np.asarray(index, dtype=np.int64)
    n = a.shape[0]

    def backward(g):
        flat = g.reshape(len(idx), int(np.prod(a.shape[1:])))
        out = np.asarray(_segment_matrix(idx, n) @ flat, dtype=_dt())
        return (out.reshape(a.shape),)

    return _make(a.data[idx], (a,), backward, "gather_rows")


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data
    shifted = x - x.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)
    return _make(out, (a,), lambda g: (g - soft * g.sum(axis=axis, keepdims=True),),
                 "log_softmax")


# -- normalization ------------------------------------------------------------

@dataclass
class BatchNormState:
    """Affine parameters plus running statistics for one normalized layer."""

    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5
    training: bool = True

    @classmethod
    def create(cls, channels: int, momentum: float = 0.1, eps: float = 1e-5) -> "BatchNormState":
        return cls(gamma=Tensor(np.ones(channels), requires_grad=True),
                   beta=Tensor(np.zeros(channels), requires_grad=True),
                   running_mean=np.zeros(channels, dtype=DTYPE),
                   running_var=np.ones(channels, dtype=DTYPE),
                   momentum=momentum, eps=eps)

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]


def batch_norm(x: Tensor, state: BatchNormState, training: bool | None = None) -> Tensor:
    training = state.training if training is None else training
    if x.ndim != 2 or x.shape[1] != state.channels:
        raise ShapeError(f"batch_norm: input {x.shape} vs {state.channels} channels")
    if x.shape[0] < 1:
        raise ShapeError("batch_norm needs at least one row")
    eps = _dt()(state.eps)
    gamma, beta = state.gamma, state.beta
    if training:
        n = x.shape[0]
        mu = x.data.mean(axis=0, dtype=_dt())
        centered = x.data - mu
        var = (centered * centered).mean(axis=0, dtype=_dt())
        inv = (1.0 / np.sqrt(var + eps)).astype(_dt())
        xhat = centered * inv
        m = _dt()(state.momentum)
        unbiased = var * (n / (n - 1)) if n > 1 else var
        state.running_mean = ((1 - m) * state.running_mean + m * mu).astype(DTYPE)
        state.running_var = ((1 - m) * state.running_var + m * unbiased).astype(DTYPE)

        def backward(g):
            dxhat = g * gamma.data
            dx = inv / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
            return dx, (g * xhat).sum(axis=0), g.sum(axis=0)
    else:
        inv = (1.0 / np.sqrt(state.running_var + eps)).astype(_dt())
        xhat = (x.data - state.running_mean) * inv

        def backward(g):
            return g * gamma.data * inv, (g * xhat).sum(axis=0), g.sum(axis=0)

    out = xhat * gamma.data + beta.data
    return _make(out.astype(_dt()), (x, gamma, beta), backward, "batch_norm")


def backward(loss: Tensor, tape: Tape | None = None) -> dict[int, Tensor]:
    tape = tape or loss._tape
    if tape is None:
        raise TapeError("loss is not attached to any tape")
    return tape.backward(loss)
