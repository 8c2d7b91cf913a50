"""Scores, significance and the sweep heuristic."""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy import special, stats

HIGHER_IS_BETTER = {"auroc": True, "accuracy": True, "rmse": False}


class MetricError(ValueError):
    """Metric undefined for the given inputs."""


def direction(metric: str) -> str:
    if metric not in HIGHER_IS_BETTER:
        raise MetricError(f"unknown metric {metric!r}")
    return "higher" if HIGHER_IS_BETTER[metric] else "lower"


def is_better(metric: str, candidate: float, reference: float) -> bool:
    """Strict improvement under the metric's orientation."""
    if HIGHER_IS_BETTER[metric]:
        return candidate > reference
    return candidate < reference


def _pair(a, b, what: str):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if len(a) != len(b):
        raise MetricError(f"{what}: length mismatch ({len(a)} vs {len(b)})")
    if len(a) == 0:
        raise MetricError(f"{what}: empty input")
    return a, b


def rmse(pred, target) -> float:
    p, t = _pair(pred, target, "rmse")
    return float(np.sqrt(np.mean((p - t) ** 2)))


def accuracy(pred_class, target_class) -> float:
    p, t = _pair(pred_class, target_class, "accuracy")
    return float(np.mean(p == t))


def auroc(scores, labels) -> float:
    """Mann-Whitney form: P(score_pos > score_neg) + 0.5 P(tie)."""
    s, y = _pair(scores, labels, "auroc")
    if not np.isin(y, (0, 1)).all():
        raise MetricError("auroc labels must be 0/1")
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("auroc undefined: labels contain a single class")
    ranks = stats.rankdata(s)  # average ranks resolve ties as one half
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


def t_two_sided_p(t: float, df: float) -> float:
    """Two-sided tail probability of Student's t with ``df`` degrees of freedom."""
    return float(min(1.0, 2.0 * special.stdtr(df, -abs(t))))


def welch_statistic(a: Sequence[float], b: Sequence[float]) -> tuple[float, float, float]:
    """(t, Welch-Satterthwaite df, two-sided p)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) < 2 or len(b) < 2:
        raise MetricError(f"welch test needs >= 2 points per sample, got {len(a)} and {len(b)}")
    va, vb = a.var(ddof=1) / len(a), b.var(ddof=1) / len(b)
    if va + vb == 0:
        raise MetricError("welch test undefined: both samples have zero variance")
    t = (a.mean() - b.mean()) / np.sqrt(va + vb)
    df = (va + vb) ** 2 / (va ** 2 / (len(a) - 1) + vb ** 2 / (len(b) - 1))
    return float(t), float(df), t_two_sided_p(t, df)


def welch_test(a: Sequence[float], b: Sequence[float]) -> float:
    return welch_statistic(a, b)[2]


def sweep_heuristic(results: Sequence[tuple[int, float]]) -> float:
    """Sample-weighted sum of loss-oriented scores (MSE, 1 - AUROC)."""
    return float(sum(size * score for size, score in results))
