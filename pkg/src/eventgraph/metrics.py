"""Structural analytics over the event graph.

Density and in-degree centrality read the directed graph as-is. Clustering
and degree connectivity read an undirected projection in which antiparallel
edge weights are summed, since mutual process activity is evidence of the
same relationship. The terminal path selector condenses cycles first so a
longest path is well defined on arbitrary directed graphs.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from datetime import datetime
from typing import IO

from .graph import EventGraph

__all__ = [
    "edge_density",
    "in_degree_centrality",
    "clustering_coefficient",
    "avg_degree_connectivity",
    "strongly_connected_components",
    "longest_path_via_condensation",
    "MetricsReport",
    "metrics_report",
    "write_node_metrics_csv",
    "write_degree_connectivity_csv",
]


def edge_density(graph: EventGraph) -> float:
    """m / (n * (n - 1)); zero when fewer than two nodes."""
    n = graph.num_nodes
    if n < 2:
        return 0.0
    return graph.num_edges / (n * (n - 1))


def in_degree_centrality(graph: EventGraph) -> list[float]:
    """deg_in(v) / (n - 1) per node; self-loops count toward deg_in."""
    n = graph.num_nodes
    if n < 2:
        return [0.0] * n
    return [graph.in_degree(v) / (n - 1) for v in range(n)]


def _undirected_weights(graph: EventGraph) -> list[dict[int, float]]:
    """Projection weights: raw counts summed over both directions, no self-loops."""
    adj: list[dict[int, float]] = [{} for _ in range(graph.num_nodes)]
    for edge in graph.edges:
        if edge.source == edge.target:
            continue
        adj[edge.source][edge.target] = adj[edge.source].get(edge.target, 0.0) + edge.weight
        adj[edge.target][edge.source] = adj[edge.target].get(edge.source, 0.0) + edge.weight
    return adj


def clustering_coefficient(graph: EventGraph) -> list[float]:
    """Geometric-mean weighted clustering per node on the projection.

    c_u = (1 / (k_u (k_u - 1))) * sum over ordered neighbor pairs (v, w) of
    (wn_uv * wn_uw * wn_vw)^(1/3), with wn the projection weight divided by
    the maximum projection weight. Nodes of degree < 2 score 0.
    """
    adj = _undirected_weights(graph)
    max_w = max((w for nbrs in adj for w in nbrs.values()), default=0.0)
    scores = [0.0] * graph.num_nodes
    if max_w == 0.0:
        return scores
    for u in range(graph.num_nodes):
        neighbors = sorted(adj[u])
        k = len(neighbors)
        if k < 2:
            continue
        total = 0.0
        for i, v in enumerate(neighbors):
            for w in neighbors[i + 1 :]:
                w_vw = adj[v].get(w)
                if w_vw is None:
                    continue
                product = (adj[u][v] / max_w) * (adj[u][w] / max_w) * (w_vw / max_w)
                total += product ** (1.0 / 3.0)
        # each unordered pair counts twice in the ordered-pair sum
        scores[u] = 2.0 * total / (k * (k - 1))
    return scores


def avg_degree_connectivity(graph: EventGraph, weighted: bool = True) -> dict[int, float]:
    """Average nearest-neighbor degree, grouped by node degree.

    Per node, weighted form is (1/s_i) * sum_j w_ij * k_j with s_i the node
    strength; unweighted form is the plain neighbor-degree mean. Values are
    then averaged over all nodes sharing a degree.
    """
    adj = _undirected_weights(graph)
    sums: dict[int, float] = {}
    counts: dict[int, int] = {}
    for u in range(graph.num_nodes):
        k = len(adj[u])
        if k == 0:
            continue
        if weighted:
            strength = sum(adj[u].values())
            knn = sum(w * len(adj[v]) for v, w in adj[u].items()) / strength
        else:
            knn = sum(len(adj[v]) for v in adj[u]) / k
        sums[k] = sums.get(k, 0.0) + knn
        counts[k] = counts.get(k, 0) + 1
    return {k: sums[k] / counts[k] for k in sorted(sums)}


def strongly_connected_components(graph: EventGraph) -> list[list[int]]:
    """Tarjan's algorithm, iterative so deep chains cannot overflow the stack.

    Components come out in reverse topological order of the condensation.
    Node lists are sorted ascending.
    """
    n = graph.num_nodes
    index_of = [-1] * n
    lowlink = [0] * n
    on_stack = [False] * n
    stack: list[int] = []
    components: list[list[int]] = []
    counter = 0

    for root in range(n):
        if index_of[root] != -1:
            continue
        # work items: (node, iterator position over successors)
        work = [(root, 0)]
        while work:
            v, pos = work.pop()
            if pos == 0:
                index_of[v] = counter
                lowlink[v] = counter
                counter += 1
                stack.append(v)
                on_stack[v] = True
            successors = graph.successors(v)
            advanced = False
            for i in range(pos, len(successors)):
                w = successors[i]
                if index_of[w] == -1:
                    work.append((v, i + 1))
                    work.append((w, 0))
                    advanced = True
                    break
                if on_stack[w]:
                    lowlink[v] = min(lowlink[v], index_of[w])
            if advanced:
                continue
            if lowlink[v] == index_of[v]:
                component = []
                while True:
                    w = stack.pop()
                    on_stack[w] = False
                    component.append(w)
                    if w == v:
                        break
                components.append(sorted(component))
            if work:
                parent = work[-1][0]
                lowlink[parent] = min(lowlink[parent], lowlink[v])
    return components


def longest_path_via_condensation(graph: EventGraph) -> list[int]:
    """Terminal path: longest (by edge count) path over the condensation DAG.

    Each strongly connected component is represented by its earliest node
    (first_seen, then key). Among equally long paths the lexicographically
    smallest representative-key sequence wins, so output is stable across
    runs. Returns node ids; empty graph gives an empty path.
    """
    n = graph.num_nodes
    if n == 0:
        return []
    components = strongly_connected_components(graph)
    comp_of = [0] * n
    for comp_id, members in enumerate(components):
        for v in members:
            comp_of[v] = comp_id

    def representative(comp_id: int) -> int:
        return min(
            components[comp_id],
            key=lambda v: (graph.node(v).first_seen or datetime.min, graph.node(v).key),
        )

    reps = [representative(c) for c in range(len(components))]
    rep_keys = [graph.node(r).key for r in reps]

    dag: list[set[int]] = [set() for _ in components]
    for edge in graph.edges:
        cs, ct = comp_of[edge.source], comp_of[edge.target]
        if cs != ct:
            dag[cs].add(ct)

    # Tarjan emits reverse topological order, so successors are already solved
    # when each component is visited in emission order.
    best_len = [1] * len(components)
    for c in range(len(components)):
        for succ in dag[c]:
            best_len[c] = max(best_len[c], 1 + best_len[succ])

    start = max(range(len(components)), key=lambda c: (best_len[c], ), default=0)
    target_len = best_len[start]
    start = min(
        (c for c in range(len(components)) if best_len[c] == target_len),
        key=lambda c: rep_keys[c],
    )

    path = [reps[start]]
    current = start
    remaining = target_len - 1
    while remaining > 0:
        candidates = [succ for succ in dag[current] if best_len[succ] == remaining]
        current = min(candidates, key=lambda c: rep_keys[c])
        path.append(reps[current])
        remaining -= 1
    return path


@dataclass
class MetricsReport:
    """One analysis pass over a graph, ready for serialization."""

    num_nodes: int
    num_edges: int
    density: float
    mean_clustering: float
    clustering: dict[str, float]
    degree_connectivity: dict[int, float]
    in_degree_centrality: dict[str, float]
    longest_path: list[str]
    longest_path_edges: int

    def to_json(self) -> str:
        doc = {
            "num_nodes": self.num_nodes,
            "num_edges": self.num_edges,
            "density": self.density,
            "mean_clustering": self.mean_clustering,
            "clustering": self.clustering,
            "degree_connectivity": {str(k): v for k, v in self.degree_connectivity.items()},
            "in_degree_centrality": self.in_degree_centrality,
            "longest_path": self.longest_path,
            "longest_path_edges": self.longest_path_edges,
        }
        return json.dumps(doc, indent=2, sort_keys=True)


def metrics_report(graph: EventGraph, weighted_connectivity: bool = True) -> MetricsReport:
    clustering = clustering_coefficient(graph)
    centrality = in_degree_centrality(graph)
    path = longest_path_via_condensation(graph)
    keys = [node.key for node in graph.nodes]
    n = graph.num_nodes
    return MetricsReport(
        num_nodes=n,
        num_edges=graph.num_edges,
        density=edge_density(graph),
        mean_clustering=sum(clustering) / n if n else 0.0,
        clustering={keys[i]: clustering[i] for i in range(n)},
        degree_connectivity=avg_degree_connectivity(graph, weighted=weighted_connectivity),
        in_degree_centrality={keys[i]: centrality[i] for i in range(n)},
        longest_path=[graph.node(v).key for v in path],
        longest_path_edges=max(len(path) - 1, 0),
    )


def write_node_metrics_csv(graph: EventGraph, report: MetricsReport, stream: IO[str]) -> None:
    writer = csv.writer(stream)
    writer.writerow(
        ["key", "label", "in_degree", "out_degree", "in_degree_centrality", "clustering"]
    )
    for node in graph.nodes:
        writer.writerow(
            [
                node.key,
                node.label,
                graph.in_degree(node.node_id),
                graph.out_degree(node.node_id),
                f"{report.in_degree_centrality[node.key]:.10g}",
                f"{report.clustering[node.key]:.10g}",
            ]
        )


def write_degree_connectivity_csv(report: MetricsReport, stream: IO[str]) -> None:
    writer = csv.writer(stream)
    writer.writerow(["degree", "avg_degree_connectivity"])
    for degree, value in report.degree_connectivity.items():
        writer.writerow([degree, f"{value:.10g}"])
