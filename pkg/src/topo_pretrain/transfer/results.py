"""Task descriptions, fine-tuning settings and per-run result records."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .metrics import MetricError, direction

LEVELS = ("graph", "node", "edge")
KINDS = ("regression", "binary", "multiclass")


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_jsonable)


def _jsonable(x):
    if hasattr(x, "to_dict"):
        return x.to_dict()
    if isinstance(x, (np.integer, np.floating)):
        return x.item()
    raise TypeError(f"not JSON serializable: {type(x).__name__}")


def config_hash(obj) -> str:
    """sha256 of the key-sorted JSON form; stable under key reordering."""
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class TaskSpec:
    level: str = "graph"
    kind: str = "regression"
    metric: str = ""
    with_features: bool = False
    num_classes: int = 1

    def __post_init__(self):
        if not self.metric:
            object.__setattr__(self, "metric", default_metric(self.level, self.kind))
        self.validate()

    def validate(self) -> "TaskSpec":
        if self.level not in LEVELS:
            raise ValueError(f"task level must be one of {LEVELS}, got {self.level!r}")
        if self.kind not in KINDS:
            raise ValueError(f"task kind must be one of {KINDS}, got {self.kind!r}")
        expected = default_metric(self.level, self.kind)
        if self.metric != expected:
            raise ValueError(f"{self.level}/{self.kind} tasks report {expected}, not {self.metric}")
        if self.kind == "multiclass" and self.num_classes < 2:
            raise ValueError("multiclass tasks need num_classes >= 2")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


def default_metric(level: str, kind: str) -> str:
    if kind == "regression":
        return "rmse"
    if level == "graph" and kind == "binary":
        return "auroc"
    return "accuracy"


@dataclass
class FinetuneConfig:
    runs: int = 10
    epochs: int = 25
    lr: float = 1e-3
    batch_size: int = 128
    train_fraction: float = 0.8
    freeze_encoder: bool = False
    standardize_targets: bool = True
    seed: int = 0

    def validate(self) -> "FinetuneConfig":
        problems = []
        if self.runs < 1:
            problems.append("runs: must be >= 1")
        if self.epochs < 0:
            problems.append("epochs: must be >= 0")
        if self.lr <= 0:
            problems.append("lr: must be > 0")
        if self.batch_size < 1:
            problems.append("batch_size: must be >= 1")
        if not 0 < self.train_fraction < 1:
            problems.append("train_fraction: must lie in (0, 1)")
        if problems:
            raise ValueError("; ".join(problems))
        return self

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RunResult:
    dataset: str
    task: dict
    metric: str
    direction: str
    scores: list[float]
    mean: float
    std: float
    config_hash: str
    checkpoint_id: str
    encoder_hash: str = ""
    seeds: list[int] = field(default_factory=list)
    details: list[dict] = field(default_factory=list)

    @classmethod
    def from_scores(cls, dataset: str, task: TaskSpec, scores, config_hash: str,
                    checkpoint_id: str, encoder_hash: str = "", seeds=(), details=()) -> "RunResult":
        scores = [float(s) for s in scores]
        mean, std = summarize(scores)
        return cls(dataset, task.to_dict(), task.metric, direction(task.metric), scores, mean, std,
                   config_hash, checkpoint_id, encoder_hash, list(seeds), list(details))

    def validate(self) -> "RunResult":
        mean, std = summarize(self.scores)
        if not (math.isclose(mean, self.mean, rel_tol=1e-12, abs_tol=1e-12)
                and math.isclose(std, self.std, rel_tol=1e-12, abs_tol=1e-12)):
            raise MetricError("stored mean/std do not match the run scores")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, path: str | Path | None = None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text

    @classmethod
    def from_json(cls, text_or_path) -> "RunResult":
        text = text_or_path
        if isinstance(text_or_path, Path) or not str(text_or_path).lstrip().startswith("{"):
            text = Path(text_or_path).read_text()
        return cls(**json.loads(text)).validate()


def summarize(scores) -> tuple[float, float]:
    """Mean and sample standard deviation (0 for a single run)."""
    a = np.asarray(scores, dtype=np.float64)
    if a.size == 0:
        raise MetricError("no scores")
    std = float(a.std(ddof=1)) if a.size > 1 else 0.0
    return float(a.mean()), std
