"""JSON Lines corpus format, one graph per line.

    {"n": 3, "edges": [[0, 1], [1, 2]], "node_feats": null, "edge_feats": null,
     "y": 0.5, "node_labels": null, "domain": "random"}
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Iterable

import numpy as np

from .core import Graph, GraphError


class CorpusError(ValueError):
    """A corpus line is malformed; the message starts with ``line N:``."""


def _target_out(y):
    if y is None:
        return None
    if isinstance(y, (int, np.integer)):
        return int(y)
    return float(y)


def graph_to_record(g: Graph) -> dict:
    return {
        "n": int(g.n),
        "edges": g.edges.tolist(),
        "node_feats": None if g.node_feats is None else g.node_feats.astype(float).tolist(),
        "edge_feats": None if g.edge_feats is None else g.edge_feats.astype(float).tolist(),
        "y": _target_out(g.target),
        "node_labels": None if g.node_labels is None else g.node_labels.tolist(),
        "domain": g.domain,
    }


def _matrix(value, name):
    if value is None:
        return None
    if not isinstance(value, list) or any(not isinstance(r, list) for r in value):
        raise GraphError(f"{name} must be a list of rows")
    widths = {len(r) for r in value}
    if len(widths) > 1:
        raise GraphError(f"{name} rows have differing widths")
    arr = np.asarray(value, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise GraphError(f"{name} contains non-finite values")
    return arr.reshape(len(value), -1)


def record_to_graph(rec: dict) -> Graph:
    if not isinstance(rec, dict):
        raise GraphError("record is not a JSON object")
    n = rec.get("n")
    if not isinstance(n, int) or isinstance(n, bool) or n < 0:
        raise GraphError(f"'n' must be a non-negative integer, got {n!r}")
    edges = rec.get("edges", [])
    if not isinstance(edges, list) or any(
            not isinstance(e, list) or len(e) != 2 or not all(isinstance(x, int) for x in e)
            for e in edges):
        raise GraphError("'edges' must be a list of integer pairs")
    y = rec.get("y")
    if y is not None and (not isinstance(y, (int, float)) or isinstance(y, bool)
                          or not math.isfinite(y)):
        raise GraphError(f"'y' must be a finite number or null, got {y!r}")
    labels = rec.get("node_labels")
    if labels is not None and (not isinstance(labels, list)
                               or not all(isinstance(x, int) for x in labels)):
        raise GraphError("'node_labels' must be a list of integers")
    domain = rec.get("domain", "")
    if not isinstance(domain, str):
        raise GraphError("'domain' must be a string")
    g = Graph(n=n, edges=np.asarray(edges, dtype=np.int64).reshape(-1, 2),
              node_feats=_matrix(rec.get("node_feats"), "node_feats"),
              edge_feats=_matrix(rec.get("edge_feats"), "edge_feats"),
              target=y, node_labels=labels, domain=domain)
    return g.validate()


def iter_corpus(path: str | Path) -> Iterable[Graph]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as err:
                raise CorpusError(f"line {lineno}: invalid JSON ({err.msg})") from None
            try:
                yield record_to_graph(rec)
            except GraphError as err:
                raise CorpusError(f"line {lineno}: {err}") from None


def load_corpus(path: str | Path, limit: int | None = None) -> list[Graph]:
    out = []
    for g in iter_corpus(path):
        if limit is not None and len(out) >= limit:
            break
        out.append(g)
    return out


def save_corpus(path: str | Path, graphs: Iterable[Graph]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for g in graphs:
            fh.write(json.dumps(graph_to_record(g), separators=(",", ":")))
            fh.write("\n")
