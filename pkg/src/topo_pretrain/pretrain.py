"""Contrastive pre-training on featureless corpora.

Two regimes share the same encoder and loss:

* ``graphcl_edge`` / ``graphcl_node``: two independent random augmentations
  of every graph, contrasted against each other.
* ``adgcl``: a view learner scores every edge; a relaxed-Bernoulli sample of
  those scores weights the messages of the second view. The view learner is
  trained to make the two views disagree (minus the contrastive loss) while
  paying ``reg_weight`` per unit of dropped-edge ratio; the encoder is then
  trained to make them agree.
"""

from __future__ import annotations

import csv
import hashlib
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import numerics as F
from .checkpoint import Checkpoint, checkpoint_from_model
from .encoder import EncoderConfig, Model, ViewLearner, build_model, view_logits
from .graphs import Graph, GraphBatch, batch_graphs, induced_subgraph
from .numerics import Adam, Tape, Tensor

METHODS = ("adgcl", "graphcl_edge", "graphcl_node")
NORM_EPS = 1e-8
# keeps log(u) and log(1-u) finite
NOISE_GUARD = 1e-6


class PretrainError(ValueError):
    """Invalid configuration or corpus for pre-training."""


@dataclass
class PretrainConfig:
    method: str = "adgcl"
    epochs: int = 100
    batch_size: int = 512
    lr_encoder: float = 1e-3
    lr_view: float = 1e-3
    temperature: float = 0.2
    drop_prob: float = 0.2
    reg_weight: float = 0.2
    concrete_temperature: float = 1.0
    seed: int = 0

    def validate(self) -> "PretrainConfig":
        problems = []
        if self.method not in METHODS:
            problems.append(f"method: must be one of {METHODS}, got {self.method!r}")
        if self.epochs < 1:
            problems.append("epochs: must be >= 1")
        if self.batch_size < 2:
            problems.append("batch_size: must be >= 2")
        if self.lr_encoder <= 0 or self.lr_view <= 0:
            problems.append("lr_encoder/lr_view: must be > 0")
        if self.temperature <= 0:
            problems.append("temperature: must be > 0")
        if not 0 <= self.drop_prob < 1:
            problems.append("drop_prob: must lie in [0, 1)")
        if self.reg_weight < 0:
            problems.append("reg_weight: must be >= 0")
        if self.concrete_temperature <= 0:
            problems.append("concrete_temperature: must be > 0")
        if problems:
            raise PretrainError("; ".join(problems))
        return self

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainLog:
    """Per-epoch record. ``seconds`` is wall clock and excluded from equality."""

    seed: int
    composition: dict[str, int]
    epochs: list[int] = field(default_factory=list)
    loss: list[float] = field(default_factory=list)
    keep_prob: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)

    def append(self, epoch: int, loss: float, keep_prob: float, seconds: float) -> None:
        if self.epochs and epoch <= self.epochs[-1]:
            raise ValueError(f"epoch {epoch} after {self.epochs[-1]}")
        self.epochs.append(epoch)
        self.loss.append(loss)
        self.keep_prob.append(keep_prob)
        self.seconds.append(seconds)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TrainLog):
            return NotImplemented
        key = lambda t: (t.seed, t.composition, t.epochs, t.loss, t.keep_prob)
        return key(self) == key(other)

    def rows(self) -> list[dict]:
        return [{"epoch": e, "loss": l, "keep_prob": k, "seconds": s}
                for e, l, k, s in zip(self.epochs, self.loss, self.keep_prob, self.seconds)]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["epoch", "loss", "keep_prob", "seconds"])
            w.writeheader()
            for row in self.rows():
                w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


# -- loss and augmentations ----------------------------------------------------

def _normalize_rows(z: Tensor) -> Tensor:
    norm = F.sqrt((z * z).sum(axis=1, keepdims=True) + NORM_EPS ** 2)
    return z / norm


def nt_xent(z1: Tensor, z2: Tensor, temperature: float = 0.2) -> Tensor:
    """Cross-view InfoNCE: row i of z1 against every row of z2, positive on the diagonal."""
    z1, z2 = F.as_tensor(z1), F.as_tensor(z2)
    if z1.shape != z2.shape or z1.ndim != 2:
        raise F.ShapeError(f"nt_xent: views have shapes {z1.shape} and {z2.shape}")
    B = z1.shape[0]
    if B < 2:
        raise PretrainError(f"nt_xent needs at least 2 rows for negatives, got {B}")
    if temperature <= 0:
        raise PretrainError("temperature must be > 0")
    sim = F.matmul(_normalize_rows(z1), F.transpose(_normalize_rows(z2))) * (1.0 / temperature)
    diag = F.log_softmax(sim, axis=1) * np.eye(B, dtype=np.float32)
    return diag.sum() * (-1.0 / B)


def random_edge_drop(g: Graph, p: float, rng: np.random.Generator) -> Graph:
    if not 0 <= p < 1:
        raise PretrainError(f"drop probability must lie in [0, 1), got {p}")
    keep = rng.random(g.num_edges) >= p
    return g.copy(edges=g.edges[keep],
                  edge_feats=None if g.edge_feats is None else g.edge_feats[keep])


def random_node_drop(g: Graph, p: float, rng: np.random.Generator) -> Graph:
    """Drop nodes independently; redraw if none survive. Incident edges go with them."""
    if not 0 <= p < 1:
        raise PretrainError(f"drop probability must lie in [0, 1), got {p}")
    if g.n == 0:
        return g.copy()
    while True:
        keep = rng.random(g.n) >= p
        if keep.any():
            return induced_subgraph(g, np.flatnonzero(keep))


def concrete_edge_weights(logits: Tensor, temperature: float, rng: np.random.Generator | None,
                          undirected_id: np.ndarray | None = None,
                          noise: np.ndarray | None = None) -> Tensor:
    """sigmoid((logit + log u - log(1-u)) / t), one ``u`` per undirected edge.

    ``noise`` pins ``u`` (indexed by undirected id) instead of drawing it.
    """
    if temperature <= 0:
        raise PretrainError("concrete temperature must be > 0")
    logits = F.as_tensor(logits)
    m = logits.shape[0]
    ids = np.arange(m) if undirected_id is None else np.asarray(undirected_id)
    count = int(ids.max()) + 1 if m else 0
    u = rng.random(count) if noise is None else np.asarray(noise, dtype=np.float64)
    u = np.clip(u, NOISE_GUARD, 1 - NOISE_GUARD)
    gumbel = (np.log(u) - np.log1p(-u))[ids].astype(np.float32)
    return F.sigmoid((logits + gumbel) * (1.0 / temperature))


def drop_ratio(weights: Tensor, batch: GraphBatch) -> Tensor:
    """Mean over graphs (with edges) of the fraction of edge mass dropped."""
    weights = F.as_tensor(weights)
    if weights.shape != (batch.total_edges,):
        raise F.ShapeError(f"drop_ratio: {weights.shape[0] if weights.ndim else 0} weights "
                           f"for {batch.total_edges} directed edges")
    counts = batch.edges_per_graph
    has = np.flatnonzero(counts > 0)
    if len(has) == 0:
        return Tensor(np.float32(0))
    dropped = F.segment_sum(F.reshape(1.0 - weights, (-1, 1)), batch.edge_to_graph,
                            batch.num_graphs)
    per_graph = F.gather_rows(dropped, has) * (1.0 / counts[has].astype(np.float32)).reshape(-1, 1)
    return per_graph.mean()


# -- training loops ------------------------------------------------------------

def corpus_composition(corpus: Sequence[Graph]) -> dict[str, int]:
    out: dict[str, int] = {}
    for g in corpus:
        key = g.domain or "unknown"
        out[key] = out.get(key, 0) + 1
    return dict(sorted(out.items()))


def corpus_digest(corpus: Sequence[Graph]) -> str:
    h = hashlib.sha256()
    for g in corpus:
        h.update(np.int64(g.n).tobytes())
        h.update(np.ascontiguousarray(g.edges, dtype=np.int64).tobytes())
        h.update(b"|")
    return h.hexdigest()[:16]


def _prepare(corpus: Sequence[Graph], config: PretrainConfig) -> list[Graph]:
    config.validate()
    corpus = [g.without_features() for g in corpus]
    if len(corpus) < 2:
        raise PretrainError(f"corpus has {len(corpus)} graph(s); contrastive training needs >= 2")
    return corpus


def epoch_batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffled index batches; a trailing singleton is merged into the previous batch."""
    order = rng.permutation(n)
    parts = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    if len(parts) > 1 and len(parts[-1]) == 1:
        tail = parts.pop()
        parts[-1] = np.concatenate([parts[-1], tail])
    return parts


def _step(opt: Adam, loss: Tensor, tape: Tape) -> None:
    opt.zero_grad()
    tape.backward(loss)
    opt.step()


StepHook = Callable[[str, str], None]


def train_adgcl(corpus: Sequence[Graph], config: PretrainConfig,
                encoder_config: EncoderConfig | None = None, *, freeze_encoder: bool = False,
                step_hook: StepHook | None = None, model: Model | None = None,
                view: ViewLearner | None = None) -> tuple[Checkpoint, TrainLog, Model, ViewLearner]:
    """Alternate one view-learner step and one encoder step per batch.

    ``step_hook(stage, phase)`` is called with stage ``"view"``/``"encoder"`` and
    phase ``"before"``/``"after"`` around each optimizer step.
    """
    corpus = _prepare(corpus, config)
    encoder_config = (encoder_config or EncoderConfig()).validate()
    rng = np.random.default_rng([config.seed, 0])
    model = model or build_model(encoder_config, "constant", rng_seed=config.seed)
    view = view or ViewLearner(encoder_config, rng_seed=config.seed + 1)
    enc_opt = Adam(model.parameters(), lr=config.lr_encoder)
    view_opt = Adam(view.parameters(), lr=config.lr_view)
    hook = step_hook or (lambda stage, phase: None)
    log = TrainLog(config.seed, corpus_composition(corpus))
    tau, t = config.temperature, config.concrete_temperature

    for epoch in range(config.epochs):
        start = time.perf_counter()
        losses, keeps = [], []
        for idx in epoch_batches(len(corpus), config.batch_size, rng):
            batch = batch_graphs([corpus[i] for i in idx])

            # view step: maximise disagreement, pay for dropped edges
            model.eval()
            view.train()
            with Tape() as tape:
                w = concrete_edge_weights(view_logits(view, batch), t, rng, batch.undirected_id)
                z1 = model(batch).graphs
                z2 = model(batch, edge_weights=w).graphs
                view_loss = config.reg_weight * drop_ratio(w, batch) - nt_xent(z1, z2, tau)
            hook("view", "before")
            _step(view_opt, view_loss, tape)
            hook("view", "after")
            keeps.append(float(w.data.mean()) if w.size else 1.0)

            # encoder step: fresh noise, view learner fixed
            if freeze_encoder:
                losses.append(-float(view_loss.item()))
                continue
            model.train()
            view.eval()
            w = Tensor(concrete_edge_weights(view_logits(view, batch), t, rng,
                                             batch.undirected_id).data)
            with Tape() as tape:
                z1 = model(batch).graphs
                z2 = model(batch, edge_weights=w).graphs
                loss = nt_xent(z1, z2, tau)
            hook("encoder", "before")
            _step(enc_opt, loss, tape)
            hook("encoder", "after")
            losses.append(float(loss.item()))
        log.append(epoch, float(np.mean(losses)), float(np.mean(keeps)),
                   time.perf_counter() - start)

    model.train()
    ckpt = checkpoint_from_model(model, view, method="adgcl", corpus_digest=corpus_digest(corpus),
                                 seed=config.seed, extra={"pretrain": config.to_dict(),
                                                          "composition": log.composition})
    return ckpt, log, model, view


def train_graphcl(corpus: Sequence[Graph], config: PretrainConfig,
                  encoder_config: EncoderConfig | None = None, *,
                  model: Model | None = None) -> tuple[Checkpoint, TrainLog, Model]:
    """Two independent random edge (or node) drops per graph, one Adam step per batch."""
    corpus = _prepare(corpus, config)
    if config.method not in ("graphcl_edge", "graphcl_node"):
        raise PretrainError(f"train_graphcl cannot run method {config.method!r}")
    augment = random_edge_drop if config.method == "graphcl_edge" else random_node_drop
    encoder_config = (encoder_config or EncoderConfig()).validate()
    rng = np.random.default_rng([config.seed, 0])
    model = model or build_model(encoder_config, "constant", rng_seed=config.seed)
    opt = Adam(model.parameters(), lr=config.lr_encoder)
    log = TrainLog(config.seed, corpus_composition(corpus))
    p = config.drop_prob

    model.train()
    for epoch in range(config.epochs):
        start = time.perf_counter()
        losses = []
        for idx in epoch_batches(len(corpus), config.batch_size, rng):
            graphs = [corpus[i] for i in idx]
            b1 = batch_graphs([augment(g, p, rng) for g in graphs])
            b2 = batch_graphs([augment(g, p, rng) for g in graphs])
            with Tape() as tape:
                loss = nt_xent(model(b1).graphs, model(b2).graphs, config.temperature)
            _step(opt, loss, tape)
            losses.append(float(loss.item()))
        log.append(epoch, float(np.mean(losses)), 1.0 - p, time.perf_counter() - start)

    ckpt = checkpoint_from_model(model, None, method=config.method,
                                 corpus_digest=corpus_digest(corpus), seed=config.seed,
                                 extra={"pretrain": config.to_dict(),
                                        "composition": log.composition})
    return ckpt, log, model


def pretrain(corpus: Sequence[Graph], config: PretrainConfig,
             encoder_config: EncoderConfig | None = None) -> tuple[Checkpoint, TrainLog]:
    if config.method == "adgcl":
        ckpt, log, _, _ = train_adgcl(corpus, config, encoder_config)
    else:
        ckpt, log, _ = train_graphcl(corpus, config, encoder_config)
    return ckpt, log
