"""Head-swapped fine-tuning on graph-, node- and edge-level tasks."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .. import numerics as F
from ..checkpoint import Checkpoint, model_from_checkpoint
from ..encoder import (
    MLP,
    EncoderConfig,
    FeatureInputHead,
    Model,
    OutputHead,
    build_model,
    swap_input_head,
    swap_output_head,
)
from ..graphs import Graph, batch_graphs, derive_seed, ego_network
from ..numerics import Adam, Tape, Tensor
from .metrics import accuracy, auroc, rmse
from .results import FinetuneConfig, RunResult, TaskSpec, config_hash

EDGE_SPLIT = 0.05
NODE_TRAIN_FRACTION = 0.2
EDGE_EGO_HOPS = 2
NODE_EGO_HOPS = 3
NODE_FANOUT = 5


class TransferError(ValueError):
    """Dataset or checkpoint unusable for the requested task."""


@dataclass
class Source:
    """Where run models come from: a checkpoint, or fresh weights of ``config``."""

    checkpoint: Checkpoint | None
    config: EncoderConfig

    @classmethod
    def of(cls, checkpoint: Checkpoint | None, config: EncoderConfig | None) -> "Source":
        if checkpoint is not None:
            if config is not None and config_hash(config) != config_hash(checkpoint.encoder_config):
                raise TransferError("baseline parity: encoder config differs from the checkpoint's")
            return cls(checkpoint, checkpoint.encoder_config)
        return cls(None, (config or EncoderConfig()).validate())

    @property
    def checkpoint_id(self) -> str:
        return "none" if self.checkpoint is None else self.checkpoint.checkpoint_id

    @property
    def encoder_hash(self) -> str:
        return config_hash(self.config)

    def model(self, seed: int) -> Model:
        if self.checkpoint is None:
            return build_model(self.config, "constant", rng_seed=seed)
        return model_from_checkpoint(self.checkpoint)


def run_seeds(cfg: FinetuneConfig) -> list[int]:
    return [derive_seed(cfg.seed, r) for r in range(cfg.runs)]


def params_digest(*modules) -> str:
    h = hashlib.sha256()
    for mod in modules:
        for _, t in mod.named_parameters():
            h.update(t.data.tobytes())
    return h.hexdigest()[:16]


def _fit(params: list[Tensor], loss_fn: Callable[[np.ndarray], Tensor], n_items: int,
         cfg: FinetuneConfig, rng: np.random.Generator, set_mode: Callable[[bool], None]) -> None:
    if cfg.epochs == 0 or n_items == 0:
        return
    opt = Adam(params, lr=cfg.lr)
    set_mode(True)
    for _ in range(cfg.epochs):
        order = rng.permutation(n_items)
        for i in range(0, n_items, cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            with Tape() as tape:
                loss = loss_fn(idx)
            opt.zero_grad()
            tape.backward(loss)
            opt.step()
    set_mode(False)


def _trainable(model: Model, head_modules: Sequence, cfg: FinetuneConfig) -> list[Tensor]:
    if not cfg.freeze_encoder:
        return model.parameters()
    out = []
    for mod in head_modules:
        out += mod.parameters()
    return out


def bce_with_logits(logits: Tensor, y: np.ndarray) -> Tensor:
    # softplus(x) - y x
    return (F.softplus(logits) - logits * y.astype(np.float32)).mean()


def cross_entropy(logits: Tensor, y: np.ndarray) -> Tensor:
    onehot = np.zeros(logits.shape, dtype=np.float32)
    onehot[np.arange(len(y)), y] = 1
    return (F.log_softmax(logits, axis=1) * onehot).sum() * (-1.0 / len(y))


# -- graph-level tasks ---------------------------------------------------------

def split_indices(n: int, fraction: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    order = rng.permutation(n)
    k = min(max(1, int(round(fraction * n))), n - 1)
    return np.sort(order[:k]), np.sort(order[k:])


def _prepare_graphs(dataset: Sequence[Graph], task: TaskSpec) -> list[Graph]:
    if not dataset:
        raise TransferError("empty dataset")
    if any(g.target is None for g in dataset):
        raise TransferError("graph task needs a target on every graph")
    if task.with_features:
        if any(g.node_feats is None for g in dataset):
            raise TransferError("with_features task but some graphs lack node features")
        return [g.copy(edge_feats=None) for g in dataset]
    return [g.without_features() for g in dataset]


def graph_task_model(source: Source, seed: int, task: TaskSpec, node_dim: int | None) -> Model:
    """Run model: stored or fresh stack, task head, feature head if requested."""
    model = source.model(seed)
    h = source.config.hidden_dim
    head_rng = np.random.default_rng([seed, 2])
    out_dim = task.num_classes if task.kind == "multiclass" else 1
    model = swap_output_head(model, OutputHead(head_rng, "task_mlp", h, out_dim, "graph"))
    if task.with_features:
        model = swap_input_head(model, FeatureInputHead(head_rng, node_dim, h))
    return model


def predict_graphs(model: Model, graphs: Sequence[Graph], batch_size: int = 256) -> np.ndarray:
    model.eval()
    out = [model(batch_graphs(graphs[i:i + batch_size])).graphs.data
           for i in range(0, len(graphs), batch_size)]
    return np.concatenate(out).astype(np.float64)


def score_graph_task(task: TaskSpec, raw: np.ndarray, y: np.ndarray) -> float:
    if task.kind == "regression":
        return rmse(raw[:, 0], y)
    if task.kind == "binary":
        return auroc(raw[:, 0], y)
    return accuracy(raw.argmax(axis=1), y)


def finetune_graph_task(source: Checkpoint | None, dataset: Sequence[Graph], task: TaskSpec,
                        cfg: FinetuneConfig, encoder_config: EncoderConfig | None = None,
                        dataset_name: str = "dataset") -> RunResult:
    """``cfg.runs`` independent fine-tuning runs; ``source=None`` is the fresh baseline.

    Run ``r`` derives its split, head initialization and shuffling from
    ``derive_seed(cfg.seed, r)`` only, so a baseline and a checkpoint
    evaluated with the same config see identical splits.
    """
    cfg.validate()
    if task.level != "graph":
        raise TransferError(f"finetune_graph_task handles graph-level tasks, not {task.level}")
    src = Source.of(source, encoder_config)
    graphs = _prepare_graphs(dataset, task)
    if len(graphs) < 2:
        raise TransferError("need at least 2 graphs to split into train and test")
    node_dim = graphs[0].node_feats.shape[1] if task.with_features else None
    targets = np.array([g.target for g in graphs], dtype=np.float64)
    if task.kind != "regression":
        targets = targets.astype(np.int64)

    scores, details = [], []
    for seed in run_seeds(cfg):
        train, test = split_indices(len(graphs), cfg.train_fraction, np.random.default_rng([seed, 1]))
        model = graph_task_model(src, seed, task, node_dim)
        y_train = targets[train]
        shift, scale = 0.0, 1.0
        if task.kind == "regression" and cfg.standardize_targets:
            shift = float(y_train.mean())
            scale = float(y_train.std()) or 1.0
        y_fit = (y_train - shift) / scale

        def loss_fn(idx, model=model, y_fit=y_fit, train=train):
            out = model(batch_graphs([graphs[train[i]] for i in idx])).graphs
            if task.kind == "regression":
                diff = F.reshape(out, (-1,)) - y_fit[idx].astype(np.float32)
                return (diff * diff).mean()
            if task.kind == "binary":
                return bce_with_logits(F.reshape(out, (-1,)), y_fit[idx])
            return cross_entropy(out, y_fit[idx].astype(np.int64))

        params = _trainable(model, [model.output_head, model.input_head] if task.with_features
                            else [model.output_head], cfg)
        _fit(params, loss_fn, len(train), cfg, np.random.default_rng([seed, 3]), model.train)
        raw = predict_graphs(model, [graphs[i] for i in test])
        if task.kind == "regression":
            raw = raw * scale + shift
        scores.append(score_graph_task(task, raw, targets[test]))
        details.append({"seed": seed, "train_size": len(train), "test_size": len(test),
                        "params_digest": params_digest(model)})

    return RunResult.from_scores(
        dataset_name, task, scores,
        config_hash({"finetune": cfg, "task": task, "encoder": src.config, "dataset": dataset_name}),
        src.checkpoint_id, src.encoder_hash, run_seeds(cfg), details)


# -- ego-network tasks ----------------------------------------------------------

def _ego_inputs(g: Graph, with_features: bool) -> Graph:
    if with_features:
        if g.node_feats is None:
            raise TransferError("with_features task but the graph has no node features")
        return g.copy(edge_feats=None)
    return g.without_features()


def _center_embeddings(model: Model, egos: list[Graph]) -> Tensor:
    """Embedding of node 0 (the center) of each ego network."""
    b = batch_graphs(egos)
    return F.gather_rows(model.encode_nodes(b), b.node_offset)


def _ego_model(source: Source, seed: int, with_features: bool, node_dim: int | None) -> Model:
    model = swap_output_head(source.model(seed), None)
    if with_features:
        rng = np.random.default_rng([seed, 4])
        model = swap_input_head(model, FeatureInputHead(rng, node_dim, source.config.hidden_dim))
    return model


def edge_splits(g: Graph, rng: np.random.Generator, fraction: float = EDGE_SPLIT):
    """Held-out positives/negatives and the message-passing graph without the positives.

    Returns ``(message_graph, train_pos, train_neg, test_pos, test_neg)``; pairs
    are ``k x 2`` arrays.
    """
    E = g.num_edges
    k = int(round(fraction * E))
    if k < 1 or 2 * k >= E:
        raise TransferError(f"graph with {E} edges is too small for {fraction:.0%} edge splits")
    possible = g.n * (g.n - 1) // 2
    if possible - E < 2 * k:
        raise TransferError("graph is too dense to draw enough non-edges")
    order = rng.permutation(E)
    test_pos, train_pos = g.edges[order[:k]], g.edges[order[k:2 * k]]
    keep = np.ones(E, dtype=bool)
    keep[order[:2 * k]] = False
    message = g.copy(edges=g.edges[keep],
                     edge_feats=None if g.edge_feats is None else g.edge_feats[keep])
    existing = g.edge_set()
    negatives: list[tuple[int, int]] = []
    chosen: set[tuple[int, int]] = set()
    while len(negatives) < 2 * k:
        u, v = (int(x) for x in rng.integers(0, g.n, size=2))
        pair = (min(u, v), max(u, v))
        if u == v or pair in existing or pair in chosen:
            continue
        chosen.add(pair)
        negatives.append(pair)
    neg = np.array(negatives, dtype=np.int64)
    return message, train_pos, neg[k:], test_pos, neg[:k]


def edge_prediction_experiment(source: Checkpoint | None, graph: Graph, cfg: FinetuneConfig,
                               encoder_config: EncoderConfig | None = None,
                               with_features: bool = False, dataset_name: str = "graph",
                               scorer_init: str = "glorot") -> RunResult:
    """Link prediction from concatenated 2-hop ego embeddings of the endpoints.

    ``scorer_init="zero"`` with ``epochs=0`` gives the uninformative scorer.
    """
    cfg.validate()
    task = TaskSpec("edge", "binary", with_features=with_features)
    src = Source.of(source, encoder_config)
    base = _ego_inputs(graph, with_features)
    node_dim = base.node_feats.shape[1] if with_features else None
    h = src.config.hidden_dim

    scores, details = [], []
    for seed in run_seeds(cfg):
        rng = np.random.default_rng([seed, 1])
        message, tr_pos, tr_neg, te_pos, te_neg = edge_splits(base, rng)
        egos = [ego_network(message, v, EDGE_EGO_HOPS)[0] for v in range(message.n)]
        model = _ego_model(src, seed, with_features, node_dim)
        scorer = MLP(np.random.default_rng([seed, 2]), [2 * h, 1])
        if scorer_init == "zero":
            for p in scorer.parameters():
                p.data = np.zeros(p.shape, np.float32)
        pairs = np.concatenate([tr_pos, tr_neg])
        labels = np.concatenate([np.ones(len(tr_pos)), np.zeros(len(tr_neg))])

        def logits_for(pair_block, model=model, scorer=scorer, egos=egos):
            nodes, inv = np.unique(pair_block.reshape(-1), return_inverse=True)
            emb = _center_embeddings(model, [egos[v] for v in nodes])
            u, v = inv.reshape(-1, 2).T
            x = F.concat([F.gather_rows(emb, u), F.gather_rows(emb, v)], axis=1)
            return F.reshape(scorer(x), (-1,))

        def loss_fn(idx, pairs=pairs, labels=labels, logits_for=logits_for):
            return bce_with_logits(logits_for(pairs[idx]), labels[idx])

        def set_mode(training, model=model):
            model.train(training)

        params = (scorer.parameters() if cfg.freeze_encoder
                  else model.parameters() + scorer.parameters())
        _fit(params, loss_fn, len(pairs), cfg, np.random.default_rng([seed, 3]), set_mode)
        model.eval()
        test_pairs = np.concatenate([te_pos, te_neg])
        test_labels = np.concatenate([np.ones(len(te_pos)), np.zeros(len(te_neg))])
        # logit >= 0 is probability >= 0.5
        pred = (logits_for(test_pairs).data >= 0).astype(np.int64)
        scores.append(accuracy(pred, test_labels))
        details.append({"seed": seed, "train_pairs": len(pairs), "test_pairs": len(test_pairs),
                        "message_edges": message.num_edges,
                        "params_digest": params_digest(model, scorer)})

    return RunResult.from_scores(
        dataset_name, task, scores,
        config_hash({"finetune": cfg, "task": task, "encoder": src.config, "dataset": dataset_name,
                     "experiment": "edge_prediction"}),
        src.checkpoint_id, src.encoder_hash, run_seeds(cfg), details)


def node_classification_experiment(source: Checkpoint | None, graph: Graph, cfg: FinetuneConfig,
                                   encoder_config: EncoderConfig | None = None,
                                   with_features: bool = False, dataset_name: str = "graph"
                                   ) -> RunResult:
    """Classify each node from its capped 3-hop ego network; 20% of nodes train."""
    cfg.validate()
    if graph.node_labels is None:
        raise TransferError("node classification needs node labels")
    labels = np.asarray(graph.node_labels, dtype=np.int64)
    classes = np.unique(labels)
    if len(classes) < 2:
        raise TransferError("node classification needs at least 2 classes")
    C = int(labels.max()) + 1
    task = TaskSpec("node", "multiclass", with_features=with_features, num_classes=C)
    src = Source.of(source, encoder_config)
    base = _ego_inputs(graph, with_features).copy(node_labels=None)
    node_dim = base.node_feats.shape[1] if with_features else None
    h = src.config.hidden_dim

    scores, details = [], []
    for seed in run_seeds(cfg):
        rng = np.random.default_rng([seed, 1])
        train, test = split_indices(graph.n, NODE_TRAIN_FRACTION, rng)
        egos = [ego_network(base, v, NODE_EGO_HOPS, NODE_FANOUT, rng)[0] for v in range(graph.n)]
        model = _ego_model(src, seed, with_features, node_dim)
        head = MLP(np.random.default_rng([seed, 2]), [h, C])
        # only training labels are handed to the optimisation loop
        y_train = labels[train]

        def loss_fn(idx, model=model, head=head, egos=egos, train=train, y_train=y_train):
            emb = _center_embeddings(model, [egos[train[i]] for i in idx])
            return cross_entropy(head(emb), y_train[idx])

        def set_mode(training, model=model):
            model.train(training)

        params = head.parameters() if cfg.freeze_encoder else model.parameters() + head.parameters()
        _fit(params, loss_fn, len(train), cfg, np.random.default_rng([seed, 3]), set_mode)
        model.eval()
        pred = np.concatenate([
            head(_center_embeddings(model, [egos[v] for v in test[i:i + 256]])).data.argmax(axis=1)
            for i in range(0, len(test), 256)])
        scores.append(accuracy(pred, labels[test]))
        details.append({"seed": seed, "train_nodes": len(train), "test_nodes": len(test),
                        "params_digest": params_digest(model, head)})

    return RunResult.from_scores(
        dataset_name, task, scores,
        config_hash({"finetune": cfg, "task": task, "encoder": src.config, "dataset": dataset_name,
                     "experiment": "node_classification"}),
        src.checkpoint_id, src.encoder_hash, run_seeds(cfg), details)
