"""Graph container and disjoint-union batching."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components


class GraphError(ValueError):
    """A graph violates a structural invariant."""


class BatchingError(ValueError):
    """Graphs cannot be combined into one batch."""


def _as_matrix(x, rows: int | None = None) -> np.ndarray | None:
    if x is None:
        return None
    arr = np.asarray(x, dtype=np.float32)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1) if rows is None or arr.size == rows else arr.reshape(rows, -1)
    return arr


@dataclass(eq=False)
class Graph:
    """Undirected simple graph; each edge is stored once as a ``(u, v)`` row."""

    n: int
    edges: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    node_feats: np.ndarray | None = None
    edge_feats: np.ndarray | None = None
    target: float | int | None = None
    node_labels: np.ndarray | None = None
    domain: str = ""

    def __post_init__(self):
        self.n = int(self.n)
        e = np.asarray(self.edges, dtype=np.int64)
        self.edges = e.reshape(-1, 2) if e.size else np.zeros((0, 2), dtype=np.int64)
        self.node_feats = _as_matrix(self.node_feats, self.n)
        self.edge_feats = _as_matrix(self.edge_feats, len(self.edges))
        if self.node_labels is not None:
            self.node_labels = np.asarray(self.node_labels, dtype=np.int64)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def validate(self) -> "Graph":
        """Raise :class:`GraphError` on the first violated invariant."""
        if self.n < 0:
            raise GraphError(f"negative node count {self.n}")
        e = self.edges
        if len(e):
            if e.min() < 0 or e.max() >= self.n:
                raise GraphError(f"edge endpoint out of range [0, {self.n})")
            if np.any(e[:, 0] == e[:, 1]):
                raise GraphError("self-loop present")
            key = np.sort(e, axis=1)
            if len(np.unique(key, axis=0)) != len(key):
                raise GraphError("duplicate undirected edge")
        if self.node_feats is not None and self.node_feats.shape[0] != self.n:
            raise GraphError(f"node_feats has {self.node_feats.shape[0]} rows for {self.n} nodes")
        if self.edge_feats is not None and self.edge_feats.shape[0] != len(e):
            raise GraphError(f"edge_feats has {self.edge_feats.shape[0]} rows for {len(e)} edges")
        if self.node_labels is not None and len(self.node_labels) != self.n:
            raise GraphError(f"node_labels has {len(self.node_labels)} entries for {self.n} nodes")
        return self

    # -- cached structure --------------------------------------------------
    @cached_property
    def csr(self) -> sp.csr_matrix:
        e = self.edges
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        data = np.ones(len(rows), dtype=np.int8)
        return sp.csr_matrix((data, (rows, cols)), shape=(self.n, self.n))

    def neighbors(self, u: int) -> np.ndarray:
        m = self.csr
        return m.indices[m.indptr[u]:m.indptr[u + 1]]

    @cached_property
    def degrees(self) -> np.ndarray:
        return np.diff(self.csr.indptr)

    @cached_property
    def components(self) -> np.ndarray:
        """Component label per node."""
        if self.n == 0:
            return np.zeros(0, dtype=np.int64)
        _, labels = connected_components(self.csr, directed=False)
        return labels

    def is_connected(self) -> bool:
        return self.n <= 1 or int(self.components.max()) == 0

    def edge_set(self) -> set[tuple[int, int]]:
        return {(int(min(u, v)), int(max(u, v))) for u, v in self.edges}

    def copy(self, **changes) -> "Graph":
        fields = dict(n=self.n, edges=self.edges.copy(), node_feats=self.node_feats,
                      edge_feats=self.edge_feats, target=self.target,
                      node_labels=self.node_labels, domain=self.domain)
        fields.update(changes)
        return Graph(**fields)

    def without_features(self) -> "Graph":
        return self.copy(node_feats=None, edge_feats=None)


def induced_subgraph(g: Graph, nodes: Sequence[int], keep_target: bool = True) -> Graph:
    """All edges of ``g`` among ``nodes``; node ``nodes[i]`` becomes ``i``."""
    nodes = np.asarray(nodes, dtype=np.int64)
    remap = np.full(g.n, -1, dtype=np.int64)
    remap[nodes] = np.arange(len(nodes))
    if len(g.edges):
        mapped = remap[g.edges]
        keep = (mapped >= 0).all(axis=1)
        edges = mapped[keep]
    else:
        keep = np.zeros(0, dtype=bool)
        edges = np.zeros((0, 2), dtype=np.int64)
    return Graph(
        n=len(nodes),
        edges=edges,
        node_feats=None if g.node_feats is None else g.node_feats[nodes],
        edge_feats=None if g.edge_feats is None else g.edge_feats[keep],
        target=g.target if keep_target else None,
        node_labels=None if g.node_labels is None else g.node_labels[nodes],
        domain=g.domain,
    )


@dataclass(eq=False)
class GraphBatch:
    """Disjoint union of graphs.

    Directed edges are laid out graph by graph: for a graph with ``E`` edges
    starting at directed offset ``o``, position ``o + k`` holds edge ``k`` as
    stored and ``o + E + k`` holds its reverse.
    """

    graphs: list[Graph]
    node_offset: np.ndarray
    node_to_graph: np.ndarray
    edge_index: np.ndarray          # 2 x M (source row, destination row)
    edge_to_graph: np.ndarray
    reverse_edge: np.ndarray        # position of the opposite orientation
    undirected_id: np.ndarray       # shared id of both orientations
    node_feats: np.ndarray | None
    edge_feats: np.ndarray | None

    @property
    def num_graphs(self) -> int:
        return len(self.graphs)

    @property
    def total_nodes(self) -> int:
        return len(self.node_to_graph)

    @property
    def total_edges(self) -> int:
        return self.edge_index.shape[1]

    @property
    def num_undirected(self) -> int:
        return self.total_edges // 2

    @property
    def directed_edge_index(self) -> np.ndarray:
        return self.edge_index

    @cached_property
    def nodes_per_graph(self) -> np.ndarray:
        return np.bincount(self.node_to_graph, minlength=self.num_graphs)

    @cached_property
    def edges_per_graph(self) -> np.ndarray:
        """Directed edge count per graph."""
        return np.bincount(self.edge_to_graph, minlength=self.num_graphs)

    def targets(self) -> np.ndarray:
        return np.array([np.nan if g.target is None else g.target for g in self.graphs],
                        dtype=np.float64)

    def unbatch(self) -> list[Graph]:
        out = []
        src, dst = self.edge_index
        for i, g in enumerate(self.graphs):
            off = self.node_offset[i]
            sel = np.flatnonzero(self.edge_to_graph == i)
            first = sel[: len(sel) // 2]
            edges = np.stack([src[first] - off, dst[first] - off], axis=1)
            nodes = slice(off, off + self.nodes_per_graph[i])
            out.append(Graph(
                n=int(self.nodes_per_graph[i]),
                edges=edges,
                node_feats=None if self.node_feats is None else self.node_feats[nodes],
                edge_feats=None if self.edge_feats is None else self.edge_feats[first],
                target=g.target, node_labels=g.node_labels, domain=g.domain,
            ))
        return out


def batch_graphs(graphs: Sequence[Graph]) -> GraphBatch:
    graphs = list(graphs)
    if not graphs:
        raise BatchingError("cannot batch an empty list of graphs")
    has_nf = {g.node_feats is not None for g in graphs}
    has_ef = {g.edge_feats is not None for g in graphs}
    if len(has_nf) > 1:
        raise BatchingError("mixed node-feature presence across graphs")
    if len(has_ef) > 1:
        raise BatchingError("mixed edge-feature presence across graphs")

    sizes = np.array([g.n for g in graphs], dtype=np.int64)
    ecount = np.array([g.num_edges for g in graphs], dtype=np.int64)
    node_offset = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
    und_offset = np.concatenate([[0], np.cumsum(ecount)[:-1]]).astype(np.int64)

    src, dst, rev, und = [], [], [], []
    for g, noff, uoff in zip(graphs, node_offset, und_offset):
        E = g.num_edges
        doff = 2 * uoff
        u, v = g.edges[:, 0] + noff, g.edges[:, 1] + noff
        src += [u, v]
        dst += [v, u]
        k = np.arange(E, dtype=np.int64)
        rev += [doff + E + k, doff + k]
        und += [uoff + k, uoff + k]
    cat = lambda parts: np.concatenate(parts).astype(np.int64) if parts else np.zeros(0, np.int64)
    edge_index = np.stack([cat(src), cat(dst)]) if src else np.zeros((2, 0), np.int64)

    node_feats = None
    if True in has_nf:
        dims = {g.node_feats.shape[1] for g in graphs}
        if len(dims) > 1:
            raise BatchingError(f"node feature widths differ: {sorted(dims)}")
        node_feats = np.concatenate([g.node_feats for g in graphs]).astype(np.float32)
    edge_feats = None
    if True in has_ef:
        dims = {g.edge_feats.shape[1] for g in graphs}
        if len(dims) > 1:
            raise BatchingError(f"edge feature widths differ: {sorted(dims)}")
        edge_feats = np.concatenate(
            [np.concatenate([g.edge_feats, g.edge_feats]) for g in graphs]).astype(np.float32)

    return GraphBatch(
        graphs=graphs,
        node_offset=node_offset,
        node_to_graph=np.repeat(np.arange(len(graphs)), sizes),
        edge_index=edge_index,
        edge_to_graph=np.repeat(np.arange(len(graphs)), 2 * ecount),
        reverse_edge=cat(rev),
        undirected_id=cat(und),
        node_feats=node_feats,
        edge_feats=edge_feats,
    )
