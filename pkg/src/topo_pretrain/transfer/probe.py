"""Linear models on frozen embeddings."""

from __future__ import annotations

import numpy as np
from scipy import linalg

from .finetune import split_indices
from .metrics import MetricError, auroc, rmse

RIDGE_ALPHA = 1e-3
LOGISTIC_STEPS = 500
LOGISTIC_LR = 0.5


def ridge_fit(X: np.ndarray, y: np.ndarray, alpha: float = RIDGE_ALPHA) -> tuple[np.ndarray, float]:
    """Weights and intercept minimising |y - Xw - b|^2 + alpha |w|^2 (intercept unpenalised)."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    mx, my = X.mean(axis=0), y.mean()
    Xc = X - mx
    gram = Xc.T @ Xc + alpha * np.eye(X.shape[1])
    w = linalg.solve(gram, Xc.T @ (y - my), assume_a="pos")
    return w, float(my - mx @ w)


def logistic_fit(X: np.ndarray, y: np.ndarray, steps: int = LOGISTIC_STEPS, lr: float = LOGISTIC_LR,
                 l2: float = RIDGE_ALPHA) -> tuple[np.ndarray, float, np.ndarray, np.ndarray]:
    """Full-batch gradient descent on standardized inputs.

    Returns ``(w, b, mean, scale)``; score new rows as ``((X - mean) / scale) @ w + b``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    Z = (X - mean) / scale
    w = np.zeros(X.shape[1])
    b = 0.0
    n = len(y)
    for _ in range(steps):
        p = 0.5 * (1 + np.tanh(0.5 * (Z @ w + b)))
        g = p - y
        w -= lr * (Z.T @ g / n + l2 * w)
        b -= lr * g.mean()
    return w, b, mean, scale


def linear_probe(embeddings, targets, kind: str = "regression", seed: int = 0,
                 train_fraction: float = 0.8) -> float:
    """Ridge RMSE (regression) or logistic AUROC (binary) on a held-out split."""
    X = np.asarray(getattr(embeddings, "data", embeddings), dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if X.ndim != 2 or len(X) != len(y):
        raise MetricError(f"probe: {X.shape} embeddings for {len(y)} targets")
    if np.ptp(y) == 0:
        raise MetricError("probe: targets are constant")
    train, test = split_indices(len(y), train_fraction, np.random.default_rng(seed))
    if kind == "regression":
        w, b = ridge_fit(X[train], y[train])
        return rmse(X[test] @ w + b, y[test])
    if kind == "binary":
        if len(np.unique(y[train])) < 2:
            raise MetricError("probe: training split holds a single class")
        w, b, mean, scale = logistic_fit(X[train], y[train])
        return auroc(((X[test] - mean) / scale) @ w + b, y[test])
    raise MetricError(f"probe kind must be regression or binary, got {kind!r}")
