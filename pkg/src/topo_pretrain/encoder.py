"""GIN encoder with swappable input and output heads, plus the edge view learner.

During pre-training every node starts from the same learned vector (the
"constant" input head), so the encoder sees topology only. For transfer the
input head can be swapped for a feature MLP and the output head for a task MLP
without touching the message-passing stack.
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass
from typing import Iterator, NamedTuple

import numpy as np

from . import numerics as F
from .graphs import GraphBatch
from .numerics import BatchNormState, Tensor


class HeadError(ValueError):
    """Input/output head incompatible with the model or the batch."""


@dataclass
class EncoderConfig:
    num_layers: int = 6
    hidden_dim: int = 300
    projection_dim: int = 300
    readout: str = "mean"
    batch_norm: bool = True
    epsilon_learnable: bool = True

    def validate(self) -> "EncoderConfig":
        if self.num_layers < 1:
            raise ValueError(f"num_layers must be >= 1, got {self.num_layers}")
        if self.hidden_dim < 1 or self.projection_dim < 1:
            raise ValueError("hidden_dim and projection_dim must be >= 1")
        if self.readout not in ("mean", "sum"):
            raise ValueError(f"readout must be 'mean' or 'sum', got {self.readout!r}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        return cls(**d).validate()


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(np.float32)


class Module:
    """Ordered container of parameters, batch-norm states and submodules."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._modules: dict[str, Module] = {}
        self._norms: dict[str, BatchNormState] = {}
        self.training = True

    def param(self, name: str, value: np.ndarray) -> Tensor:
        t = Tensor(value, requires_grad=True, name=name)
        self._params[name] = t
        return t

    def module(self, name: str, mod: "Module") -> "Module":
        self._modules[name] = mod
        return mod

    def norm(self, name: str, channels: int) -> BatchNormState:
        state = BatchNormState.create(channels)
        self._norms[name] = state
        return state

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, t in self._params.items():
            yield prefix + name, t
        for name, st in self._norms.items():
            yield f"{prefix}{name}.gamma", st.gamma
            yield f"{prefix}{name}.beta", st.beta
        for name, mod in self._modules.items():
            yield from mod.named_parameters(f"{prefix}{name}.")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, BatchNormState, str]]:
        for name, st in self._norms.items():
            yield f"{prefix}{name}.running_mean", st, "running_mean"
            yield f"{prefix}{name}.running_var", st, "running_var"
        for name, mod in self._modules.items():
            yield from mod.named_buffers(f"{prefix}{name}.")

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for st in self._norms.values():
            st.training = mode
        for mod in self._modules.values():
            mod.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)


class Linear(Module):
    def __init__(self, rng, fan_in: int, fan_out: int):
        super().__init__()
        self.W = self.param("W", glorot(rng, fan_in, fan_out))
        # nonzero biases break the positive homogeneity of a zero-bias relu
        # stack, which would make every constant-input graph embedding parallel
        bound = 1.0 / np.sqrt(fan_in)
        self.b = self.param("b", rng.uniform(-bound, bound, size=fan_out).astype(np.float32))
        self.fan_in, self.fan_out = fan_in, fan_out

    def __call__(self, x: Tensor) -> Tensor:
        return F.matmul(x, self.W) + self.b


class MLP(Module):
    """Linear layers with relu between them (none after the last)."""

    def __init__(self, rng, dims: list[int], batch_norm: bool = False):
        super().__init__()
        self.layers = [self.module(f"lin{i}", Linear(rng, a, b))
                       for i, (a, b) in enumerate(zip(dims[:-1], dims[1:]))]
        self.norms = [self.norm(f"bn{i}", d) if batch_norm else None
                      for i, d in enumerate(dims[1:-1])]
        self.in_dim, self.out_dim = dims[0], dims[-1]

    def __call__(self, x: Tensor) -> Tensor:
        last = len(self.layers) - 1
        for i, lin in enumerate(self.layers):
            x = lin(x)
            if i < last:
                if self.norms[i] is not None:
                    x = F.batch_norm(x, self.norms[i], training=self.training)
                x = F.relu(x)
        return x


# -- input heads ---------------------------------------------------------------

class ConstantInputHead(Module):
    """One learned vector shared by every node (and optionally every edge)."""

    kind = "constant"

    def __init__(self, rng, hidden_dim: int, edge_embedding: bool = False):
        super().__init__()
        self.hidden_dim = hidden_dim
        self.node_vec = self.param("node_vec", glorot(rng, 1, hidden_dim))
        self.edge_vec = self.param("edge_vec", glorot(rng, 1, hidden_dim)) if edge_embedding else None

    @property
    def out_dim(self) -> int:
        return self.hidden_dim

    def descriptor(self) -> dict:
        return {"kind": self.kind, "edge_embedding": self.edge_vec is not None}

    def __call__(self, batch: GraphBatch):
        nodes = F.gather_rows(self.node_vec, np.zeros(batch.total_nodes, dtype=np.int64))
        edges = None
        if self.edge_vec is not None:
            edges = F.gather_rows(self.edge_vec, np.zeros(batch.total_edges, dtype=np.int64))
        return nodes, edges


class FeatureInputHead(Module):
    """Three-layer MLPs lifting node (and edge) features to the hidden width."""

    kind = "feature_mlp"

    def __init__(self, rng, node_dim: int, hidden_dim: int, edge_dim: int | None = None):
        super().__init__()
        self.node_dim, self.edge_dim, self.hidden_dim = node_dim, edge_dim, hidden_dim
        self.node_mlp = self.module("node_mlp", MLP(rng, [node_dim, hidden_dim, hidden_dim, hidden_dim]))
        self.edge_mlp = None
        if edge_dim:
            self.edge_mlp = self.module(
                "edge_mlp", MLP(rng, [edge_dim, hidden_dim, hidden_dim, hidden_dim]))

    @property
    def out_dim(self) -> int:
        return self.node_mlp.out_dim

    def descriptor(self) -> dict:
        return {"kind": self.kind, "node_dim": self.node_dim, "edge_dim": self.edge_dim,
                "hidden_dim": self.hidden_dim}

    def __call__(self, batch: GraphBatch):
        if batch.node_feats is None:
            raise HeadError("feature input head needs node features; batch has none")
        if batch.node_feats.shape[1] != self.node_dim:
            raise HeadError(f"node features have width {batch.node_feats.shape[1]}, "
                            f"head expects {self.node_dim}")
        nodes = self.node_mlp(Tensor(batch.node_feats))
        edges = None
        if self.edge_mlp is not None:
            if batch.edge_feats is None:
                raise HeadError("feature input head needs edge features; batch has none")
            edges = self.edge_mlp(Tensor(batch.edge_feats))
        return nodes, edges


def make_input_head(descriptor: dict, hidden_dim: int, rng) -> Module:
    kind = descriptor["kind"]
    if kind == "constant":
        return ConstantInputHead(rng, hidden_dim, descriptor.get("edge_embedding", False))
    if kind == "feature_mlp":
        return FeatureInputHead(rng, descriptor["node_dim"], descriptor.get("hidden_dim", hidden_dim),
                                descriptor.get("edge_dim"))
    raise HeadError(f"unknown input head kind {kind!r}")


# -- output heads --------------------------------------------------------------

class OutputHead(Module):
    """``projection``: 2-layer hidden->proj; ``task_mlp``: per task level."""

    def __init__(self, rng, kind: str, hidden_dim: int, out_dim: int = 1, level: str = "graph"):
        super().__init__()
        self.kind, self.level, self.hidden_dim, self.out_dim = kind, level, hidden_dim, out_dim
        if kind == "projection":
            self.mlp = self.module("mlp", MLP(rng, [hidden_dim, hidden_dim, out_dim]))
            self.level = "graph"
        elif kind == "task_mlp":
            if level == "graph":
                dims = [hidden_dim, hidden_dim, out_dim]
            elif level == "node":
                dims = [hidden_dim, out_dim]
            elif level == "edge":
                dims = [2 * hidden_dim, out_dim]
            else:
                raise HeadError(f"unknown task level {level!r}")
            self.mlp = self.module("mlp", MLP(rng, dims))
        else:
            raise HeadError(f"unknown output head kind {kind!r}")

    @property
    def in_dim(self) -> int:
        return self.mlp.in_dim

    def descriptor(self) -> dict:
        return {"kind": self.kind, "level": self.level, "out_dim": self.out_dim,
                "hidden_dim": self.hidden_dim}

    def __call__(self, x: Tensor) -> Tensor:
        return self.mlp(x)


def make_output_head(descriptor: dict, hidden_dim: int, rng) -> OutputHead | None:
    if descriptor["kind"] == "none":
        return None
    return OutputHead(rng, descriptor["kind"], descriptor.get("hidden_dim", hidden_dim),
                      descriptor.get("out_dim", 1), descriptor.get("level", "graph"))


# -- GIN -----------------------------------------------------------------------

class GINLayer(Module):
    """h' = MLP((1 + eps) h + sum_u w_uv m_u); m_u = relu(h_u + e_uv) with edge vectors."""

    def __init__(self, rng, dim: int, batch_norm: bool, epsilon_learnable: bool):
        super().__init__()
        self.eps = self.param("eps", np.zeros(1, np.float32)) if epsilon_learnable else None
        self.mlp = self.module("mlp", MLP(rng, [dim, dim, dim], batch_norm=batch_norm))

    def __call__(self, h: Tensor, batch: GraphBatch, edge_emb: Tensor | None,
                 edge_weights: Tensor | None) -> Tensor:
        src, dst = batch.edge_index
        msg = F.gather_rows(h, src)
        if edge_emb is not None:
            msg = F.relu(msg + edge_emb)
        if edge_weights is not None:
            msg = msg * F.reshape(edge_weights, (-1, 1))
        agg = F.segment_sum(msg, dst, batch.total_nodes)
        self_term = h if self.eps is None else h * (self.eps + 1.0)
        return self.mlp(self_term + agg)


class EncoderOutput(NamedTuple):
    nodes: Tensor
    graphs: Tensor | None


class Model(Module):
    def __init__(self, config: EncoderConfig, input_head: Module, layers: list[GINLayer],
                 output_head: OutputHead | None):
        super().__init__()
        self.config = config
        self.input_head = self.module("input_head", input_head)
        self.layers = [self.module(f"gin{i}", layer) for i, layer in enumerate(layers)]
        self.output_head = output_head
        if output_head is not None:
            self.module("output_head", output_head)

    # encoder-stack parameters, i.e. everything except the two heads
    def stack_parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        for i, layer in enumerate(self.layers):
            out += list(layer.named_parameters(f"gin{i}."))
        return out

    def _check_weights(self, batch: GraphBatch, edge_weights) -> Tensor | None:
        if edge_weights is None:
            return None
        w = edge_weights if isinstance(edge_weights, Tensor) else Tensor(edge_weights)
        if w.shape != (batch.total_edges,):
            raise ValueError(f"edge_weights has shape {w.shape}, batch has {batch.total_edges} "
                             "directed edges")
        if w.size and (w.data.min() < 0 or w.data.max() > 1):
            raise ValueError("edge_weights must lie in [0, 1]")
        return w

    def encode_nodes(self, batch: GraphBatch, edge_weights=None) -> Tensor:
        w = self._check_weights(batch, edge_weights)
        h, e = self.input_head(batch)
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            h = layer(h, batch, e, w)
            if i < last:
                h = F.relu(h)
        return h

    def readout(self, h: Tensor, batch: GraphBatch) -> Tensor:
        pooled = F.segment_sum(h, batch.node_to_graph, batch.num_graphs)
        if self.config.readout == "sum":
            return pooled
        counts = np.maximum(batch.nodes_per_graph, 1).astype(np.float32).reshape(-1, 1)
        return pooled * (1.0 / counts)

    def embed_graphs(self, batch: GraphBatch, edge_weights=None) -> Tensor:
        return self.readout(self.encode_nodes(batch, edge_weights), batch)

    def forward(self, batch: GraphBatch, edge_weights=None) -> EncoderOutput:
        nodes = self.encode_nodes(batch, edge_weights)
        head = self.output_head
        if head is None or head.level != "graph":
            return EncoderOutput(nodes, None)
        return EncoderOutput(nodes, head(self.readout(nodes, batch)))

    __call__ = forward


def build_model(config: EncoderConfig | None = None, input_kind: str | dict = "constant",
                rng_seed: int = 0, output: dict | str = "projection") -> Model:
    """Fresh model; Glorot-uniform weights, uniform(+-1/sqrt(fan_in)) biases, eps 0, BN at identity."""
    config = (config or EncoderConfig()).validate()
    rng = np.random.default_rng(rng_seed)
    h = config.hidden_dim
    in_desc = {"kind": input_kind} if isinstance(input_kind, str) else input_kind
    input_head = make_input_head(in_desc, h, rng)
    layers = [GINLayer(rng, h, config.batch_norm, config.epsilon_learnable)
              for _ in range(config.num_layers)]
    if isinstance(output, str):
        output = {"kind": output}
    if output["kind"] == "projection":
        output = {"kind": "projection", "out_dim": config.projection_dim}
    return Model(config, input_head, layers, make_output_head(output, h, rng))


def swap_input_head(model: Model, new_head: Module) -> Model:
    if new_head.out_dim != model.config.hidden_dim:
        raise HeadError(f"input head emits {new_head.out_dim}, encoder expects "
                        f"{model.config.hidden_dim}")
    out = Model(model.config, new_head, copy.deepcopy(model.layers),
                copy.deepcopy(model.output_head))
    return out.train(model.training)


def swap_output_head(model: Model, new_head: OutputHead | None) -> Model:
    if new_head is not None:
        need = 2 * model.config.hidden_dim if new_head.level == "edge" else model.config.hidden_dim
        if new_head.in_dim != need:
            raise HeadError(f"output head takes {new_head.in_dim}, encoder emits {need}")
    out = Model(model.config, copy.deepcopy(model.input_head), copy.deepcopy(model.layers),
                new_head)
    return out.train(model.training)


def parameter_count(model: Module) -> int:
    return int(sum(t.size for t in model.parameters()))


# -- view learner --------------------------------------------------------------

class ViewLearner(Module):
    """Independent GIN stack plus an MLP scoring each edge from [h_u; h_v]."""

    def __init__(self, config: EncoderConfig, rng_seed: int = 0):
        super().__init__()
        self.encoder = self.module("encoder", build_model(config, "constant", rng_seed, "none"))
        rng = np.random.default_rng([rng_seed, 1])
        h = config.hidden_dim
        self.scorer = self.module("scorer", MLP(rng, [2 * h, h, 1]))


def view_logits(view: ViewLearner, batch: GraphBatch) -> Tensor:
    """One logit per directed edge; both orientations share the averaged value."""
    h = view.encoder.encode_nodes(batch)
    src, dst = batch.edge_index
    pair = F.concat([F.gather_rows(h, src), F.gather_rows(h, dst)], axis=1)
    raw = F.reshape(view.scorer(pair), (-1,))
    return (raw + F.gather_rows(raw, batch.reverse_edge)) * 0.5
