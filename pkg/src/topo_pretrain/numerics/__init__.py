from .optim import Adam, AdamState, adam_step
from .tensor import (
    DTYPE,
    BatchNormState,
    DomainError,
    ShapeError,
    Tape,
    TapeError,
    Tensor,
    active_tape,
    add,
    as_tensor,
    backward,
    batch_norm,
    concat,
    div,
    elementwise,
    exp,
    gather_rows,
    log,
    log_softmax,
    matmul,
    mean,
    mul,
    relu,
    reshape,
    scale,
    segment_sum,
    sigmoid,
    softplus,
    sqrt,
    sub,
    transpose,
    tsum,
)

__all__ = [
    "Adam", "AdamState", "adam_step", "DTYPE", "BatchNormState", "DomainError",
    "ShapeError", "Tape", "TapeError", "Tensor", "active_tape", "add", "as_tensor",
    "backward", "batch_norm", "concat", "div", "elementwise", "exp", "gather_rows",
    "log", "log_softmax", "matmul", "mean", "mul", "relu", "reshape", "scale",
    "segment_sum", "sigmoid", "softplus", "sqrt", "sub", "transpose", "tsum",
]
