from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.sparse.csgraph import shortest_path

from .core import Graph

METRIC_NAMES = ("nodes", "edges", "density", "diameter", "avg_clustering", "transitivity")


@dataclass(frozen=True)
class MetricRecord:
    nodes: int
    edges: int
    density: float
    diameter: int
    avg_clustering: float
    transitivity: float

    def as_dict(self) -> dict:
        return asdict(self)


def _diameter(g: Graph) -> int:
    if g.num_edges == 0:
        return 0
    labels = g.components
    counts = np.bincount(labels)
    big = np.flatnonzero(labels == int(np.argmax(counts)))
    sub = g.csr[big][:, big]
    dist = shortest_path(sub, method="D", unweighted=True, directed=False)
    return int(dist.max())


def graph_metrics(g: Graph) -> MetricRecord:
    """Size, density, diameter (largest component), clustering and transitivity."""
    n, m = g.n, g.num_edges
    density = 2.0 * m / (n * (n - 1)) if n > 1 else 0.0
    if m == 0:
        return MetricRecord(n, 0, density, 0, 0.0, 0.0)
    a = g.csr.astype(np.int64)
    # triangles through each node = diag(A^3) / 2
    tri = np.asarray((a @ a).multiply(a).sum(axis=1)).ravel() / 2.0
    deg = g.degrees.astype(np.float64)
    pairs = deg * (deg - 1) / 2.0
    with np.errstate(divide="ignore", invalid="ignore"):
        local = np.where(pairs > 0, tri / pairs, 0.0)
    triads = pairs.sum()
    transitivity = float(tri.sum() / triads) if triads > 0 else 0.0
    return MetricRecord(
        nodes=n, edges=m, density=float(density), diameter=_diameter(g),
        avg_clustering=float(local.mean()), transitivity=transitivity,
    )
