"""Synthetic evaluation corpora: random trees, Erdos-Renyi graphs, communities."""

from __future__ import annotations

import hashlib

import numpy as np

from .core import Graph

# Tree ranges give a mean tree size of about 19.6 nodes.
TREE_DEPTH_RANGE = (3, 5)
TREE_PROB_RANGE = (0.7, 0.95)
ER_NODE_RANGE = (12, 48)
ER_PROB_RANGE = (0.05, 0.5)
COMMUNITY_INTER_RANGE = (0.01, 0.15)


def derive_seed(master_seed: int, index: int) -> int:
    """Stable per-item seed, independent of platform and hash randomization."""
    digest = hashlib.sha256(f"{int(master_seed)}:{int(index)}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def generate_tree(rng: np.random.Generator, max_depth: int | None = None,
                  branch_prob: float | None = None, depth_range=TREE_DEPTH_RANGE,
                  prob_range=TREE_PROB_RANGE) -> Graph:
    """Rooted tree grown level by level; two child slots per frontier node.

    The target is the depth actually reached (root alone has depth 0).
    """
    if max_depth is None:
        max_depth = int(rng.integers(depth_range[0], depth_range[1] + 1))
    if branch_prob is None:
        branch_prob = float(rng.uniform(*prob_range))
    edges: list[tuple[int, int]] = []
    frontier = [0]
    n, depth = 1, 0
    for level in range(1, max_depth + 1):
        draws = rng.random(2 * len(frontier)) < branch_prob
        children = []
        for slot in np.flatnonzero(draws):
            edges.append((frontier[slot // 2], n))
            children.append(n)
            n += 1
        if not children:
            break
        frontier, depth = children, level
    return Graph(n=n, edges=np.array(edges, dtype=np.int64).reshape(-1, 2),
                 target=depth, domain="trees")


def _pairs(n: int) -> np.ndarray:
    iu, ju = np.triu_indices(n, k=1)
    return np.stack([iu, ju], axis=1)


def generate_er(rng: np.random.Generator, n: int | None = None, p: float | None = None,
                node_range=ER_NODE_RANGE, prob_range=ER_PROB_RANGE) -> Graph:
    """G(n, p); the target is the edge probability ``p``."""
    if n is None:
        n = int(rng.integers(node_range[0], node_range[1] + 1))
    if p is None:
        p = float(rng.uniform(*prob_range))
    pairs = _pairs(n)
    keep = rng.random(len(pairs)) < p
    return Graph(n=n, edges=pairs[keep], target=float(p), domain="random")


def generate_community(rng: np.random.Generator, communities: int = 4,
                       nodes_per_community: int = 12, p_intra: float = 0.3,
                       p_inter: float | None = None,
                       inter_range=COMMUNITY_INTER_RANGE) -> Graph:
    """Planted partition graph; the target is the inter-community probability."""
    if p_inter is None:
        p_inter = float(rng.uniform(*inter_range))
    n = communities * nodes_per_community
    block = np.repeat(np.arange(communities), nodes_per_community)
    pairs = _pairs(n)
    same = block[pairs[:, 0]] == block[pairs[:, 1]]
    prob = np.where(same, p_intra, p_inter)
    keep = rng.random(len(pairs)) < prob
    return Graph(n=n, edges=pairs[keep], target=float(p_inter), domain="community")


GENERATORS = {
    "trees": generate_tree,
    "er": generate_er,
    "community": generate_community,
}


def generate_corpus(name: str, count: int, seed: int) -> list[Graph]:
    """``count`` graphs, graph ``i`` drawn from its own derived seed."""
    try:
        gen = GENERATORS[name]
    except KeyError:
        raise ValueError(f"unknown dataset {name!r}; expected one of {sorted(GENERATORS)}") from None
    return [gen(np.random.default_rng(derive_seed(seed, i))) for i in range(count)]
