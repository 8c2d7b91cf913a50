"""Baseline-versus-model comparison rows (Welch's t-test over run scores)."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

from .metrics import MetricError, is_better, welch_test
from .results import RunResult

COLUMNS = ["dataset", "metric", "baseline_mean", "model_mean", "p_value", "better", "test"]


@dataclass
class Comparison:
    dataset: str
    metric: str
    baseline_mean: float
    model_mean: float
    p_value: float
    better: bool
    test: str = "welch_t"

    def significant(self, alpha: float = 0.05) -> bool:
        return self.better and self.p_value < alpha


def compare(baseline: RunResult, model: RunResult) -> Comparison:
    """``better`` is strict improvement of the mean in the metric's own direction."""
    if baseline.metric != model.metric:
        raise MetricError(f"cannot compare {baseline.metric} with {model.metric}")
    if baseline.encoder_hash and model.encoder_hash and baseline.encoder_hash != model.encoder_hash:
        raise MetricError("baseline parity violated: encoder configurations differ")
    if baseline.scores == model.scores:
        p = 1.0
    else:
        p = welch_test(model.scores, baseline.scores)
    return Comparison(model.dataset, model.metric, baseline.mean, model.mean, p,
                      is_better(model.metric, model.mean, baseline.mean))


def write_comparisons(rows: Sequence[Comparison], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=COLUMNS)
        w.writeheader()
        for row in rows:
            d = asdict(row)
            d["better"] = str(row.better).lower()
            d["baseline_mean"], d["model_mean"], d["p_value"] = (
                repr(row.baseline_mean), repr(row.model_mean), repr(row.p_value))
            w.writerow(d)
