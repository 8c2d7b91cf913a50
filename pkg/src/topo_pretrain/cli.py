"""``topo-pretrain`` command line: generate, sample, pretrain, finetune, probe, analyze, compare, experiment.

Every command exits 0 on success. Failures print one JSON line prefixed with
``error: `` on stderr and exit 1 (2 for usage errors).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .analysis import analyze_checkpoint, embed_graphs
from .checkpoint import CheckpointError, load_checkpoint, model_from_checkpoint, save_checkpoint
from .config import ConfigError, ExperimentConfig
from .encoder import build_model
from .graphs import (
    GENERATORS,
    SAMPLERS,
    SamplingError,
    derive_seed,
    explore_sample,
    generate_corpus,
    load_corpus,
    save_corpus,
)
from .pretrain import corpus_composition, pretrain
from .transfer import (
    FinetuneConfig,
    RunResult,
    TaskSpec,
    compare,
    config_hash,
    edge_prediction_experiment,
    finetune_graph_task,
    linear_probe,
    node_classification_experiment,
    write_comparisons,
)

THREADS_ENV = "TOP_NUM_THREADS"


class CliError(Exception):
    """Reported as a single-line error with a nonzero exit."""


class UsageError(CliError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _meta_path(path: Path) -> Path:
    return path.with_name(path.name + ".meta.json")


def write_meta(artifact: str | Path, command: str, chash: str, **info) -> Path:
    """Sidecar recording the config hash for artifacts whose format has no room for it."""
    path = _meta_path(Path(artifact))
    payload = {"artifact": Path(artifact).name, "command": command, "config_hash": chash, **info}
    path.write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    return path


def _out_dir(path: Path) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
    except OSError as err:
        raise CliError(f"cannot create {path.parent}: {err.strerror}") from None


def _load_ckpt(arg: str | None):
    if arg is None or arg.lower() == "none":
        return None
    return load_checkpoint(arg)


def _load_config(arg: str | None) -> ExperimentConfig:
    return ExperimentConfig.load(arg) if arg else ExperimentConfig()


def _parse_task(text: str, num_classes: int, with_features: bool) -> TaskSpec:
    level, _, kind = text.partition("/")
    return TaskSpec(level=level, kind=kind or "regression", num_classes=num_classes,
                    with_features=with_features)


def _finetune_config(args, base: FinetuneConfig) -> FinetuneConfig:
    overrides = {k: v for k, v in {
        "runs": args.runs, "epochs": args.epochs, "lr": args.lr, "batch_size": args.batch_size,
        "seed": args.seed, "freeze_encoder": args.freeze_encoder or None}.items() if v is not None}
    return replace(base, **overrides).validate()


def _single_graph(path: str, what: str):
    graphs = load_corpus(path)
    if len(graphs) != 1:
        raise CliError(f"{what} needs a file holding exactly one graph, {path} holds {len(graphs)}")
    return graphs[0]


def run_task(ckpt, data_path: Path, name: str, task: TaskSpec, cfg: FinetuneConfig,
             exp: ExperimentConfig) -> RunResult:
    enc = None if ckpt is not None else exp.encoder
    if task.level == "graph":
        return finetune_graph_task(ckpt, load_corpus(data_path), task, cfg, enc, dataset_name=name)
    graph = _single_graph(str(data_path), f"{task.level}-level task")
    if task.level == "edge":
        return edge_prediction_experiment(ckpt, graph, cfg, enc, task.with_features, name)
    return node_classification_experiment(ckpt, graph, cfg, enc, task.with_features, name)


# -- commands ------------------------------------------------------------------

def cmd_generate(args) -> dict:
    graphs = generate_corpus(args.dataset, args.count, args.seed)
    out = Path(args.out)
    _out_dir(out)
    save_corpus(out, graphs)
    chash = config_hash({"dataset": args.dataset, "count": args.count, "seed": args.seed})
    write_meta(out, "generate", chash, dataset=args.dataset, count=args.count, seed=args.seed)
    return {"out": str(out), "graphs": len(graphs), "config_hash": chash}


def cmd_sample(args) -> dict:
    source = _single_graph(args.graph, "sample")
    if not 1 <= args.min <= args.max:
        raise CliError(f"need 1 <= min <= max, got min={args.min}, max={args.max}")
    if source.n < args.min:
        raise SamplingError(f"source graph has {source.n} nodes, fewer than min={args.min}")
    graphs = [explore_sample(source, np.random.default_rng(derive_seed(args.seed, i)),
                             args.min, args.max, sampler=args.sampler)
              for i in range(args.count)]
    out = Path(args.out)
    _out_dir(out)
    save_corpus(out, graphs)
    chash = config_hash({"graph": Path(args.graph).name, "count": args.count, "min": args.min,
                         "max": args.max, "seed": args.seed, "sampler": args.sampler})
    write_meta(out, "sample", chash, count=args.count, seed=args.seed)
    return {"out": str(out), "graphs": len(graphs), "config_hash": chash}


def cmd_pretrain(args) -> dict:
    exp = _load_config(args.config)
    if not exp.corpus:
        raise ConfigError(["corpus: pretraining needs at least one corpus entry"])
    corpus = exp.load_corpus()
    ckpt, log = pretrain(corpus, exp.pretrain, exp.encoder)
    ckpt.extra = {**ckpt.extra, "config_hash": exp.hash, "composition": corpus_composition(corpus)}
    out = Path(args.out)
    _out_dir(out)
    save_checkpoint(out, ckpt)
    log_path = Path(args.log) if args.log else out.with_name(out.name + ".log.csv")
    log.to_csv(log_path)
    write_meta(log_path, "pretrain", exp.hash, checkpoint_id=ckpt.checkpoint_id)
    return {"out": str(out), "log": str(log_path), "checkpoint_id": ckpt.checkpoint_id,
            "config_hash": exp.hash, "final_loss": log.loss[-1]}


def cmd_finetune(args) -> dict:
    exp = _load_config(args.config)
    ckpt = _load_ckpt(args.ckpt)
    task = _parse_task(args.task, args.num_classes, args.with_features)
    cfg = _finetune_config(args, exp.finetune)
    name = args.name or Path(args.data).stem
    result = run_task(ckpt, Path(args.data), name, task, cfg, exp)
    out = Path(args.out)
    _out_dir(out)
    result.to_json(out)
    return {"out": str(out), "mean": result.mean, "std": result.std,
            "config_hash": result.config_hash}


def cmd_probe(args) -> dict:
    ckpt = load_checkpoint(args.ckpt)
    graphs = load_corpus(args.data)
    if any(g.target is None for g in graphs):
        raise CliError("probe needs a target on every graph")
    emb = embed_graphs(model_from_checkpoint(ckpt), graphs)
    y = np.array([float(g.target) for g in graphs])
    score = linear_probe(emb, y, args.kind, seed=args.seed)
    chash = config_hash({"probe": args.kind, "seed": args.seed, "dataset": Path(args.data).stem,
                         "checkpoint": ckpt.checkpoint_id})
    payload = {"dataset": Path(args.data).stem, "kind": args.kind,
               "metric": "rmse" if args.kind == "regression" else "auroc", "score": score,
               "seed": args.seed, "checkpoint_id": ckpt.checkpoint_id, "config_hash": chash}
    out = Path(args.out)
    _out_dir(out)
    out.write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    return {"out": str(out), "score": score, "config_hash": chash}


def cmd_analyze(args) -> dict:
    ckpt = _load_ckpt(args.ckpt)
    if ckpt is None:
        exp = _load_config(args.config)
        source = build_model(exp.encoder, rng_seed=args.seed)
        ckpt_id = "none"
    else:
        source, ckpt_id = ckpt, ckpt.checkpoint_id
    graphs = load_corpus(args.data)
    out = Path(args.out)
    result, table = analyze_checkpoint(source, graphs, out, k=args.k, svg=args.svg)
    chash = config_hash({"k": args.k, "dataset": Path(args.data).stem, "checkpoint": ckpt_id,
                         "seed": args.seed if ckpt is None else None})
    manifest = {"command": "analyze", "config_hash": chash, "checkpoint_id": ckpt_id,
                "graphs": len(graphs), "variance_ratio": table.variance_ratio,
                "most_correlated": [table.most_correlated(c) for c in range(table.num_components)]}
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n",
                                       encoding="utf-8")
    return {"out": str(out), "config_hash": chash,
            "most_correlated": manifest["most_correlated"]}


def cmd_compare(args) -> dict:
    if len(args.a) != len(args.b):
        raise UsageError("--a and --b must be given the same number of times")
    rows = [compare(RunResult.from_json(a), RunResult.from_json(b)) for a, b in zip(args.a, args.b)]
    out = Path(args.out)
    _out_dir(out)
    write_comparisons(rows, out)
    chash = config_hash({"pairs": [[RunResult.from_json(a).config_hash, RunResult.from_json(b).config_hash]
                                   for a, b in zip(args.a, args.b)]})
    write_meta(out, "compare", chash)
    return {"out": str(out), "config_hash": chash,
            "rows": [{"dataset": r.dataset, "p_value": r.p_value, "better": r.better} for r in rows]}


def cmd_experiment(args) -> dict:
    """Pretrain, then fine-tune the checkpoint and the fresh baseline on every task and compare."""
    exp = _load_config(args.config)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as err:
        raise CliError(f"cannot create {out}: {err.strerror}") from None
    ckpt_path = out / "checkpoint.bin"
    cmd_pretrain(argparse.Namespace(config=args.config, out=str(ckpt_path), log=None))
    ckpt = load_checkpoint(ckpt_path)
    rows = []
    for entry in exp.tasks:
        data = exp.resolve(entry.data)
        model = run_task(ckpt, data, entry.name, entry.task, exp.finetune, exp)
        base = run_task(None, data, entry.name, entry.task, exp.finetune, exp)
        model.to_json(out / f"{entry.name}.model.json")
        base.to_json(out / f"{entry.name}.baseline.json")
        rows.append(compare(base, model))
    write_comparisons(rows, out / "comparison.csv")
    write_meta(out / "comparison.csv", "experiment", exp.hash, checkpoint_id=ckpt.checkpoint_id)
    return {"out": str(out), "config_hash": exp.hash, "checkpoint_id": ckpt.checkpoint_id,
            "rows": [{"dataset": r.dataset, "baseline_mean": r.baseline_mean,
                      "model_mean": r.model_mean, "p_value": r.p_value, "better": r.better}
                     for r in rows]}


# -- parser and entry point ----------------------------------------------------

def _finetune_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--runs", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--freeze-encoder", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="topo-pretrain", description=__doc__.splitlines()[0])
    parser.add_argument("--threads", type=int, default=None,
                        help=f"BLAS threads (default: ${THREADS_ENV}, else library default)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="write a synthetic corpus")
    p.add_argument("--dataset", required=True, choices=sorted(GENERATORS))
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("sample", help="cut small connected subgraphs from one large graph")
    p.add_argument("--graph", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--min", type=int, default=24)
    p.add_argument("--max", type=int, default=96)
    p.add_argument("--sampler", choices=SAMPLERS, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("pretrain", help="topology-only contrastive pretraining")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--log", default=None, help="TrainLog CSV (default: <out>.log.csv)")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="fine-tune a checkpoint, or the fresh baseline with --ckpt none")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--task", default="graph/regression", help="LEVEL/KIND, e.g. node/multiclass")
    p.add_argument("--num-classes", type=int, default=1)
    p.add_argument("--with-features", action="store_true")
    p.add_argument("--config", default=None, help="encoder and fine-tuning defaults")
    p.add_argument("--name", default=None)
    p.add_argument("--out", required=True)
    _finetune_options(p)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("probe", help="linear probe on frozen embeddings")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--kind", choices=["regression", "binary"], default="regression")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("analyze", help="PCA of frozen embeddings against graph metrics")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--svg", action="store_true")
    p.add_argument("--config", default=None, help="encoder config for --ckpt none")
    p.add_argument("--seed", type=int, default=0, help="init seed for --ckpt none")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("compare", help="Welch test of model results against baseline results")
    p.add_argument("--a", action="append", required=True, help="baseline RunResult JSON")
    p.add_argument("--b", action="append", required=True, help="model RunResult JSON")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("experiment", help="pretrain, fine-tune model and baseline on every task, compare")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_experiment)
    return parser


def thread_count(cli_value: int | None) -> int | None:
    if cli_value is not None:
        value, origin = cli_value, "--threads"
    elif os.environ.get(THREADS_ENV):
        origin = THREADS_ENV
        try:
            value = int(os.environ[THREADS_ENV])
        except ValueError:
            raise UsageError(f"{THREADS_ENV} must be an integer, got {os.environ[THREADS_ENV]!r}") from None
    else:
        return None
    if value < 1:
        raise UsageError(f"{origin} must be >= 1, got {value}")
    return value


def _fail(command: str, err: BaseException, code: int) -> int:
    payload = {"command": command, "error": type(err).__name__, "message": " ".join(str(err).split())}
    print("error: " + json.dumps(payload, sort_keys=True), file=sys.stderr)
    return code


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    command = next((a for prev, a in zip([""] + argv, argv)
                    if not a.startswith("-") and prev != "--threads"), "")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        threads = thread_count(args.threads)
    except UsageError as err:
        return _fail(command, err, 2)
    try:
        if threads is None:
            summary = args.func(args)
        else:
            with threadpool_limits(limits=threads):
                summary = args.func(args)
    except UsageError as err:
        return _fail(command, err, 2)
    except (CliError, ValueError, OSError, CheckpointError) as err:
        return _fail(command, err, 1)
    print(json.dumps(summary, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
