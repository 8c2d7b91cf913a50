"""Exploration samplers and ego networks.

Every sampler grows a visited set one node at a time, each new node adjacent
to an already visited one, so the induced subgraph is always connected.
"""

from __future__ import annotations

from collections import deque

import numpy as np

from .core import Graph, induced_subgraph


class SamplingError(ValueError):
    """The source graph cannot supply a sample of the requested size."""


SAMPLERS = ("random_walk", "random_walk_restart", "snowball", "forest_fire")
RESTART_PROB = 0.1
BURN_PROB = 0.4


def _random_walk(g: Graph, start: int, size: int, rng, restart: float) -> list[int]:
    visited = {start: None}
    anchor = cur = start
    stall, patience = 0, 10 * size
    while len(visited) < size:
        if restart and rng.random() < restart:
            cur = anchor
        else:
            nbrs = g.neighbors(cur)
            cur = int(nbrs[rng.integers(len(nbrs))])
        if cur not in visited:
            visited[cur] = None
            stall = 0
        else:
            stall += 1
            if stall > patience:
                # stuck around the anchor: move it to some visited node
                keys = list(visited)
                anchor = cur = keys[rng.integers(len(keys))]
                stall = 0
    return list(visited)


def _snowball(g: Graph, start: int, size: int, rng) -> list[int]:
    visited = {start: None}
    queue = deque([start])
    while queue and len(visited) < size:
        u = queue.popleft()
        for v in rng.permutation(g.neighbors(u)):
            v = int(v)
            if v not in visited:
                visited[v] = None
                queue.append(v)
                if len(visited) == size:
                    break
    return list(visited)


def _forest_fire(g: Graph, start: int, size: int, rng, burn: float) -> list[int]:
    visited = {start: None}
    queue = deque([start])
    while len(visited) < size:
        if not queue:
            # fire died out: reignite at a visited node that still has fuel
            keys = list(visited)
            for idx in rng.permutation(len(keys)):
                u = keys[idx]
                if any(int(v) not in visited for v in g.neighbors(u)):
                    queue.append(u)
                    break
            else:
                break
        u = queue.popleft()
        fresh = [int(v) for v in g.neighbors(u) if int(v) not in visited]
        if not fresh:
            continue
        count = min(int(rng.geometric(1.0 - burn)), len(fresh))
        for idx in rng.choice(len(fresh), size=count, replace=False):
            v = fresh[idx]
            visited[v] = None
            queue.append(v)
            if len(visited) == size:
                break
    return list(visited)


def explore_sample(source: Graph, rng: np.random.Generator, min_nodes: int = 24,
                   max_nodes: int = 96, sampler: str | None = None, start: int | None = None,
                   size: int | None = None) -> Graph:
    """Cut a connected induced subgraph of uniformly random size from ``source``."""
    if size is None:
        size = int(rng.integers(min_nodes, max_nodes + 1))
    if sampler is None:
        sampler = SAMPLERS[int(rng.integers(len(SAMPLERS)))]
    if sampler not in SAMPLERS:
        raise ValueError(f"unknown sampler {sampler!r}")
    labels = source.components
    comp_sizes = np.bincount(labels) if source.n else np.zeros(0, dtype=np.int64)
    if start is None:
        eligible = np.flatnonzero(comp_sizes[labels] >= size) if source.n else []
        if len(eligible) == 0:
            largest = int(comp_sizes.max()) if len(comp_sizes) else 0
            raise SamplingError(f"largest component has {largest} nodes, need {size}")
        start = int(eligible[rng.integers(len(eligible))])
    elif comp_sizes[labels[start]] < size:
        raise SamplingError(
            f"component of node {start} has {comp_sizes[labels[start]]} nodes, need {size}")

    if sampler == "random_walk":
        nodes = _random_walk(source, start, size, rng, restart=0.0)
    elif sampler == "random_walk_restart":
        nodes = _random_walk(source, start, size, rng, restart=RESTART_PROB)
    elif sampler == "snowball":
        nodes = _snowball(source, start, size, rng)
    else:
        nodes = _forest_fire(source, start, size, rng, burn=BURN_PROB)
    sub = induced_subgraph(source, nodes, keep_target=False)
    sub.domain = source.domain
    return sub


def ego_network(g: Graph, center: int, hops: int, fanout_cap: int | None = None,
                rng: np.random.Generator | None = None) -> tuple[Graph, int]:
    """Induced subgraph on nodes within ``hops`` of ``center``.

    With ``fanout_cap`` each expanded node contributes at most that many of its
    not-yet-kept neighbours, drawn uniformly. The center is renumbered to 0.
    """
    if not 0 <= center < g.n:
        raise IndexError(f"center {center} outside [0, {g.n})")
    if hops < 1:
        raise ValueError("hops must be >= 1")
    if fanout_cap is not None and rng is None:
        rng = np.random.default_rng(0)
    kept = {center: None}
    frontier = [center]
    for _ in range(hops):
        nxt = []
        for u in frontier:
            fresh = [int(v) for v in g.neighbors(u) if int(v) not in kept]
            if fanout_cap is not None and len(fresh) > fanout_cap:
                pick = rng.choice(len(fresh), size=fanout_cap, replace=False)
                fresh = [fresh[i] for i in sorted(pick)]
            for v in fresh:
                kept[v] = None
                nxt.append(v)
        frontier = nxt
        if not frontier:
            break
    return induced_subgraph(g, list(kept), keep_target=False), 0
