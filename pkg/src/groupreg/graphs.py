"""Weighted relation graphs and the greedy path-initialization search.

Edges are inserted in ascending weight order; the first time a node becomes
connected to the reference node its cheapest path through the inserted edges
is frozen, together with a confidence equal to the inverse of the mean edge
weight along that path.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field


class DisconnectedGraphError(ValueError):
    def __init__(self, unreachable):
        self.unreachable = sorted(unreachable)
        super().__init__(f"nodes unreachable from the reference: {self.unreachable}")


@dataclass
class RelationGraph:
    """Undirected graph with positive finite edge weights, one edge per pair."""

    nodes: list = field(default_factory=list)
    edges: dict = field(default_factory=dict)   # (a, b) canonical -> weight

    @staticmethod
    def canonical(a, b):
        return (a, b) if a < b else (b, a)

    def add_edge(self, a, b, weight: float):
        if a == b:
            raise ValueError("self-edges are not allowed")
        if not (weight > 0 and weight < float("inf")):
            raise ValueError(f"edge weight must be positive and finite, got {weight}")
        self.edges[self.canonical(a, b)] = float(weight)

    def sorted_edges(self):
        """Edges by ascending weight, ties broken lexicographically."""
        return sorted(self.edges.items(), key=lambda kv: (kv[1], kv[0]))


def _dijkstra_path(adj, source, target):
    """Cheapest path source -> target in an adjacency dict, or None."""
    dist = {source: 0.0}
    prev = {}
    heap = [(0.0, source)]
    seen = set()
    while heap:
        d, u = heapq.heappop(heap)
        if u in seen:
            continue
        seen.add(u)
        if u == target:
            break
        for v, w in sorted(adj.get(u, {}).items()):
            nd = d + w
            if v not in dist or nd < dist[v] - 1e-15:
                dist[v] = nd
                prev[v] = u
                heapq.heappush(heap, (nd, v))
    if target not in seen:
        return None
    path = [target]
    while path[-1] != source:
        path.append(prev[path[-1]])
    return list(reversed(path))


def greedy_paths(graph: RelationGraph, reference):
    """Greedy ascending-weight edge insertion; returns {node: (path, confidence)}.

    path runs from the node to the reference; confidence is the inverse of
    the mean edge weight along it.  Each node is finalized exactly once, the
    first time a path to the reference appears.
    """
    if reference not in graph.nodes:
        raise ValueError("reference node missing from the graph")
    pending = set(graph.nodes) - {reference}
    adj: dict = {}
    result = {}
    for (a, b), w in graph.sorted_edges():
        adj.setdefault(a, {})[b] = w
        adj.setdefault(b, {})[a] = w
        for node in sorted(pending):
            path = _dijkstra_path(adj, node, reference)
            if path is not None:
                weights = [graph.edges[RelationGraph.canonical(u, v)]
                           for u, v in zip(path, path[1:])]
                result[node] = (path, 1.0 / (sum(weights) / len(weights)))
                pending.discard(node)
        if not pending:
            break
    if pending:
        raise DisconnectedGraphError(pending)
    return result
