"""Graph loading, preprocessing, and instance construction.

Edge lists are SNAP-style whitespace-separated node pairs; '#' and '%'
comment lines are skipped, self-loops dropped, duplicate and reversed
edges merged, and node ids relabeled densely 1..n in first-appearance
order.  Instances follow the 0/1 construction: dissimilarity 0 on edges
and 1 elsewhere by default, with the four values exposed as knobs.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass

import numpy as np

from .core import Norm, ProblemInstance, SparseTriVec, pair_count, pair_index, pair_unrank

__all__ = [
    "Graph",
    "load_edge_list",
    "largest_component",
    "build_instance",
    "gen_random_instance",
    "gen_random_graph",
    "load_instance_json",
]


@dataclass(frozen=True)
class Graph:
    """Undirected simple graph: node count and sorted flat pair slots."""

    n: int
    edges: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=np.int64)
        if e.size and (e.min() < 0 or e.max() >= pair_count(self.n)):
            raise ValueError("edge slot out of range")
        if e.size > 1 and not np.all(np.diff(e) > 0):
            raise ValueError("edges must be sorted and deduplicated")
        object.__setattr__(self, "edges", e)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def edge_pairs(self) -> list[tuple[int, int]]:
        return [pair_unrank(int(k), self.n) for k in self.edges]


def load_edge_list(path) -> Graph:
    """Parse a SNAP-style edge list into a relabeled simple graph."""
    labels: dict[int, int] = {}
    raw_edges: set[tuple[int, int]] = set()
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s or s[0] in "#%":
                continue
            parts = s.split()
            if len(parts) < 2:
                raise ValueError(f"{path}:{lineno}: expected two node ids")
            try:
                a, b = int(parts[0]), int(parts[1])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: unparseable node pair {parts[:2]}") from exc
            if a == b:
                continue
            for node in (a, b):
                if node not in labels:
                    labels[node] = len(labels) + 1
            u, v = labels[a], labels[b]
            raw_edges.add((min(u, v), max(u, v)))
    if not raw_edges:
        raise ValueError(f"{path}: no edges found")
    n = len(labels)
    slots = np.sort(np.array([pair_index(u, v, n) for u, v in raw_edges], dtype=np.int64))
    return Graph(n=n, edges=slots)


def largest_component(g: Graph) -> Graph:
    """Induced subgraph on the largest connected component, relabeled 1..n'.

    Size ties go to the component containing the smallest node label; the
    surviving nodes are relabeled in ascending label order.
    """
    adj: dict[int, list[int]] = {v: [] for v in range(1, g.n + 1)}
    for u, v in g.edge_pairs():
        adj[u].append(v)
        adj[v].append(u)
    seen = set()
    best: list[int] = []
    for start in range(1, g.n + 1):
        if start in seen:
            continue
        comp = [start]
        seen.add(start)
        queue = deque([start])
        while queue:
            node = queue.popleft()
            for nb in adj[node]:
                if nb not in seen:
                    seen.add(nb)
                    comp.append(nb)
                    queue.append(nb)
        if len(comp) > len(best) or (len(comp) == len(best) and comp and min(comp) < min(best)):
            best = comp
    relabel = {old: new for new, old in enumerate(sorted(best), start=1)}
    n_new = len(best)
    slots = []
    for u, v in g.edge_pairs():
        if u in relabel and v in relabel:
            a, b = relabel[u], relabel[v]
            slots.append(pair_index(min(a, b), max(a, b), n_new))
    return Graph(n=n_new, edges=np.sort(np.array(sorted(set(slots)), dtype=np.int64)))


def build_instance(g: Graph, edge_dissim: float = 0.0, nonedge_dissim: float = 1.0,
                   edge_weight: float = 1.0, nonedge_weight: float = 1.0,
                   norm: Norm = Norm.L1) -> ProblemInstance:
    """0/1-style instance from a graph, all four construction values exposed."""
    if edge_weight <= 0 or nonedge_weight <= 0:
        raise ValueError("weights must be strictly positive")
    if edge_dissim < 0 or nonedge_dissim < 0:
        raise ValueError("dissimilarities must be nonnegative")
    dis = SparseTriVec(g.n, nonedge_dissim, {int(k): edge_dissim for k in g.edges})
    wts = SparseTriVec(g.n, nonedge_weight, {int(k): edge_weight for k in g.edges})
    return ProblemInstance(n=g.n, dissimilarity=dis, weights=wts, norm=Norm(norm))


def gen_random_instance(n: int, seed: int, norm: Norm = Norm.L1) -> ProblemInstance:
    """Dense random instance: x~ ~ U(0,2), weights ~ U(0.1,1), seeded."""
    if n < 3:
        raise ValueError("need n >= 3")
    rng = np.random.default_rng(seed)
    n1 = pair_count(n)
    dis_vals = rng.uniform(0.0, 2.0, n1)
    w_vals = rng.uniform(0.1, 1.0, n1)
    dis = SparseTriVec(n, 0.0, {k: float(dis_vals[k]) for k in range(n1)})
    wts = SparseTriVec(n, 1.0, {k: float(w_vals[k]) for k in range(n1)})
    return ProblemInstance(n=n, dissimilarity=dis, weights=wts, norm=Norm(norm))


def gen_random_graph(n: int, edge_prob: float, seed: int) -> Graph:
    """Erdos-Renyi style random graph over the flat pair slots, seeded."""
    rng = np.random.default_rng(seed)
    mask = rng.random(pair_count(n)) < edge_prob
    return Graph(n=n, edges=np.nonzero(mask)[0].astype(np.int64))


def load_instance_json(path, norm: Norm | None = None) -> ProblemInstance:
    """Small JSON instance format for non-0/1 fixtures.

    Schema: {"n": int, "norm": optional, "dissimilarity": {"default": float,
    "entries": [[i, j, value], ...]}, "weights": {...}} with 1-based nodes.
    """
    with open(path) as fh:
        data = json.load(fh)
    n = int(data["n"])

    def to_vec(block, fallback_default):
        block = block or {}
        default = float(block.get("default", fallback_default))
        exc = {}
        for i, j, val in block.get("entries", []):
            exc[pair_index(int(i), int(j), n)] = float(val)
        return SparseTriVec(n, default, exc)

    norm = norm if norm is not None else Norm(data.get("norm", "l1"))
    return ProblemInstance(
        n=n,
        dissimilarity=to_vec(data.get("dissimilarity"), 0.0),
        weights=to_vec(data.get("weights"), 1.0),
        norm=Norm(norm),
    )
