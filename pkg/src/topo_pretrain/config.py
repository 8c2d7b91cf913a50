"""Single-file experiment description: corpus composition, encoder, pretraining, fine-tuning, tasks."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

from .encoder import EncoderConfig
from .graphs import Graph, load_corpus
from .pretrain import PretrainConfig
from .transfer import FinetuneConfig, TaskSpec, config_hash

SECTIONS = ("method", "corpus", "encoder", "pretrain", "finetune", "tasks")


class ConfigError(ValueError):
    """Every problem found in a configuration, joined into one message."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass(frozen=True)
class CorpusEntry:
    path: str
    max_count: int | None = None


@dataclass(frozen=True)
class TaskEntry:
    data: str
    name: str
    task: TaskSpec


@dataclass
class ExperimentConfig:
    corpus: list[CorpusEntry] = field(default_factory=list)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)
    tasks: list[TaskEntry] = field(default_factory=list)
    base_dir: Path = field(default=Path("."), compare=False)

    @property
    def method(self) -> str:
        return self.pretrain.method

    def to_dict(self) -> dict:
        return {
            "corpus": [asdict(c) for c in self.corpus],
            "encoder": self.encoder.to_dict(),
            "pretrain": self.pretrain.to_dict(),
            "finetune": self.finetune.to_dict(),
            "tasks": [{"data": t.data, "name": t.name, **t.task.to_dict()} for t in self.tasks],
        }

    @property
    def hash(self) -> str:
        return config_hash(self.to_dict())

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p

    def load_corpus(self) -> list[Graph]:
        graphs: list[Graph] = []
        for entry in self.corpus:
            graphs += load_corpus(self.resolve(entry.path), limit=entry.max_count)
        return graphs

    @classmethod
    def from_mapping(cls, raw: Any, base_dir: str | Path = ".") -> "ExperimentConfig":
        problems: list[str] = []
        if raw is None:
            raw = {}
        if not isinstance(raw, dict):
            raise ConfigError([f"config: expected a mapping, got {type(raw).__name__}"])
        for key in raw:
            if key not in SECTIONS:
                problems.append(f"{key}: unknown section")

        section = {name: _section(raw, name, problems) for name in ("encoder", "pretrain", "finetune")}
        if "method" in raw:
            if "method" in section["pretrain"] and section["pretrain"]["method"] != raw["method"]:
                problems.append("method: conflicts with pretrain.method")
            section["pretrain"]["method"] = raw["method"]

        encoder = _build(EncoderConfig, section["encoder"], "encoder", problems)
        pretrain = _build(PretrainConfig, section["pretrain"], "pretrain", problems)
        finetune = _build(FinetuneConfig, section["finetune"], "finetune", problems)
        corpus = _corpus(raw.get("corpus", []), problems)
        tasks = _tasks(raw.get("tasks", []), problems)
        if problems:
            raise ConfigError(problems)
        return cls(corpus, encoder, pretrain, finetune, tasks, Path(base_dir))

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as err:
            raise ConfigError([f"config: cannot read {path}: {err.strerror}"]) from None
        try:
            raw = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
        except (json.JSONDecodeError, yaml.YAMLError) as err:
            raise ConfigError([f"config: cannot parse {path}: {' '.join(str(err).split())}"]) from None
        return cls.from_mapping(raw, path.parent)


def _section(raw: dict, name: str, problems: list[str]) -> dict:
    value = raw.get(name, {}) or {}
    if not isinstance(value, dict):
        problems.append(f"{name}: expected a mapping")
        return {}
    return dict(value)


def _build(cls, values: dict, prefix: str, problems: list[str]):
    known = {f.name: f for f in fields(cls)}
    clean = {}
    for key, value in values.items():
        if key not in known:
            problems.append(f"{prefix}.{key}: unknown field")
            continue
        default = known[key].default
        if isinstance(default, bool) != isinstance(value, bool) or (
                isinstance(default, (int, float)) and not isinstance(value, (int, float))) or (
                isinstance(default, str) and not isinstance(value, str)):
            problems.append(f"{prefix}.{key}: expected {type(default).__name__}, "
                            f"got {type(value).__name__}")
            continue
        if isinstance(default, int) and not isinstance(default, bool) and isinstance(value, float):
            if not value.is_integer():
                problems.append(f"{prefix}.{key}: expected an integer, got {value}")
                continue
            value = int(value)
        clean[key] = value
    obj = cls(**clean)
    try:
        obj.validate()
    except ValueError as err:
        problems += [f"{prefix}.{p.strip()}" for p in str(err).split(";")]
    return obj


def _corpus(value, problems: list[str]) -> list[CorpusEntry]:
    if not isinstance(value, list):
        problems.append("corpus: expected a list of (path, max_count) pairs")
        return []
    out = []
    for i, item in enumerate(value):
        if isinstance(item, str):
            item = {"path": item}
        elif isinstance(item, (list, tuple)) and len(item) == 2:
            item = {"path": item[0], "max_count": item[1]}
        if not isinstance(item, dict) or not isinstance(item.get("path"), str):
            problems.append(f"corpus[{i}]: expected a path or a (path, max_count) pair")
            continue
        extra = set(item) - {"path", "max_count"}
        if extra:
            problems.append(f"corpus[{i}]: unknown keys {sorted(extra)}")
        count = item.get("max_count")
        if count is not None and (isinstance(count, bool) or not isinstance(count, int) or count < 1):
            problems.append(f"corpus[{i}].max_count: must be a positive integer or null")
            continue
        out.append(CorpusEntry(item["path"], count))
    return out


def _tasks(value, problems: list[str]) -> list[TaskEntry]:
    if not isinstance(value, list):
        problems.append("tasks: expected a list")
        return []
    out = []
    spec_fields = {f.name for f in fields(TaskSpec)}
    for i, item in enumerate(value):
        if not isinstance(item, dict) or not isinstance(item.get("data"), str):
            problems.append(f"tasks[{i}]: expected a mapping with a data path")
            continue
        extra = set(item) - spec_fields - {"data", "name"}
        if extra:
            problems.append(f"tasks[{i}]: unknown keys {sorted(extra)}")
        try:
            spec = TaskSpec(**{k: v for k, v in item.items() if k in spec_fields})
        except (TypeError, ValueError) as err:
            problems.append(f"tasks[{i}]: {err}")
            continue
        out.append(TaskEntry(item["data"], str(item.get("name") or Path(item["data"]).stem), spec))
    return out
