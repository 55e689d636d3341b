"""Pairwise connectivity graph over images."""

from __future__ import annotations

from dataclasses import dataclass

from ..geometry import ImageSize
from ..pointmap import PairPrediction


class DisconnectedGraphError(ValueError):
    def __init__(self, components):
        self.components = components
        desc = " | ".join("{" + ", ".join(map(str, c)) + "}" for c in components)
        super().__init__(f"graph is disconnected; components: {desc}")


@dataclass(frozen=True, eq=False)
class Edge:
    n: int
    m: int
    pair: PairPrediction
    mean_confidence: float


@dataclass(frozen=True, eq=False)
class SceneGraph:
    sizes: dict[int, ImageSize]
    edges: list[Edge]

    @property
    def vertices(self):
        return sorted(self.sizes)

    @property
    def num_views(self):
        return len(self.sizes)

    def components(self):
        parent = {v: v for v in self.sizes}

        def find(v):
            while parent[v] != v:
                parent[v] = parent[parent[v]]
                v = parent[v]
            return v

        for e in self.edges:
            a, b = find(e.n), find(e.m)
            if a != b:
                parent[max(a, b)] = min(a, b)
        groups: dict[int, list[int]] = {}
        for v in sorted(self.sizes):
            groups.setdefault(find(v), []).append(v)
        return sorted(groups.values())

    def check_connected(self):
        comps = self.components()
        if len(comps) > 1:
            raise DisconnectedGraphError(comps)


def build_graph(predictions: dict[tuple[int, int], PairPrediction], keep_threshold: float = 0.0) -> SceneGraph:
    """Keep the pairs whose mean confidence reaches ``keep_threshold``.

    Vertices are all image ids mentioned by ``predictions``; views must be
    numbered ``0..N-1``. Edges are ordered by ``(n, m)``.
    """
    sizes: dict[int, ImageSize] = {}
    edges = []
    for (n, m), pair in sorted(predictions.items()):
        if n == m:
            raise ValueError(f"self-edge ({n}, {n}) is not allowed")
        for v, pm in ((n, pair.pts1), (m, pair.pts2)):
            if v in sizes and sizes[v] != pm.size:
                raise ValueError(f"view {v} has inconsistent sizes {sizes[v]} vs {pm.size}")
            sizes[v] = pm.size
        conf = pair.mean_confidence()
        if conf >= keep_threshold:
            edges.append(Edge(n, m, pair, conf))
    if sorted(sizes) != list(range(len(sizes))):
        raise ValueError(f"view ids must be 0..N-1, got {sorted(sizes)}")
    graph = SceneGraph(sizes, edges)
    graph.check_connected()
    return graph
