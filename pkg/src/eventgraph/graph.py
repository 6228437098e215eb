"""Attributed directed process graph.

Nodes are processes or touched objects (files, registry keys, synthetic
termination markers), keyed either by lowercased image basename ("label") or
by basename plus process id ("label+pid"). Parallel relations between the
same endpoints merge into a single edge whose weight is the relation count.

The module also provides the numeric view used by learning code: per-node
feature vectors and fixed-capacity zero-padded snapshots.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field, replace
from datetime import datetime
from typing import Iterable, Sequence

import numpy as np

from .errors import GraphParseError, SizingError, UsageError
from .ingest import (
    EventKind,
    IntegrityLevel,
    ParentChildRelation,
    format_timestamp,
    parse_timestamp,
)

MAX_LABEL_LENGTH = 256

KEYING_LABEL = "label"
KEYING_LABEL_PID = "label+pid"


def derive_label(identity: str) -> str:
    """Reduce a full path identity to its node label.

    Takes the basename across both path separator conventions, lowercases,
    and truncates to MAX_LABEL_LENGTH characters.
    """
    base = identity.replace("\\", "/").rsplit("/", 1)[-1]
    return base.lower()[:MAX_LABEL_LENGTH]


@dataclass
class ProcessNode:
    node_id: int
    key: str
    label: str
    pid: int | None = None
    integrity: IntegrityLevel = IntegrityLevel.UNKNOWN
    user: str = ""
    host: str = ""
    first_seen: datetime | None = None
    last_seen: datetime | None = None

    @property
    def duration_seconds(self) -> float:
        if self.first_seen is None or self.last_seen is None:
            return 0.0
        return (self.last_seen - self.first_seen).total_seconds()


@dataclass
class CausalEdge:
    source: int
    target: int
    weight: int
    normalized_weight: float
    kind_counts: dict[EventKind, int] = field(default_factory=dict)
    first_seen: datetime | None = None


class EventGraph:
    """Directed multigraph collapsed to weighted simple-graph form.

    Node ids are dense 0..n-1 in (first_seen, key) order, so action numbering
    downstream is reproducible for the same input.
    """

    def __init__(self, keying: str = KEYING_LABEL):
        if keying not in (KEYING_LABEL, KEYING_LABEL_PID):
            raise UsageError(f"unknown keying strategy: {keying!r}")
        self.keying = keying
        self.nodes: list[ProcessNode] = []
        self.edges: list[CausalEdge] = []
        self._key_to_id: dict[str, int] = {}
        self._out: list[dict[int, int]] = []  # node -> {target: edge index}
        self._in: list[dict[int, int]] = []  # node -> {source: edge index}

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def node_id_for_key(self, key: str) -> int | None:
        return self._key_to_id.get(key)

    def node(self, node_id: int) -> ProcessNode:
        return self.nodes[node_id]

    def edge_between(self, source: int, target: int) -> CausalEdge | None:
        idx = self._out[source].get(target)
        return self.edges[idx] if idx is not None else None

    def successors(self, node_id: int) -> list[int]:
        return sorted(self._out[node_id])

    def predecessors(self, node_id: int) -> list[int]:
        return sorted(self._in[node_id])

    def out_degree(self, node_id: int) -> int:
        return len(self._out[node_id])

    def in_degree(self, node_id: int) -> int:
        return len(self._in[node_id])

    def undirected_neighbors(self, node_id: int) -> list[int]:
        """Neighbors under the undirected projection, self excluded."""
        merged = set(self._out[node_id]) | set(self._in[node_id])
        merged.discard(node_id)
        return sorted(merged)

    def undirected_weight(self, u: int, v: int) -> float:
        """Sum of normalized weights over both edge directions."""
        total = 0.0
        e = self.edge_between(u, v)
        if e is not None:
            total += e.normalized_weight
        if u != v:
            e = self.edge_between(v, u)
            if e is not None:
                total += e.normalized_weight
        return total

    def max_edge_weight(self) -> int:
        return max((e.weight for e in self.edges), default=0)

    # --- construction ------------------------------------------------

    def _ensure_node(
        self,
        key: str,
        label: str,
        pid: int | None,
        timestamp: datetime,
    ) -> int:
        node_id = self._key_to_id.get(key)
        if node_id is None:
            node_id = len(self.nodes)
            self.nodes.append(
                ProcessNode(
                    node_id=node_id,
                    key=key,
                    label=label,
                    pid=pid,
                    first_seen=timestamp,
                    last_seen=timestamp,
                )
            )
            self._key_to_id[key] = node_id
            self._out.append({})
            self._in.append({})
            return node_id
        node = self.nodes[node_id]
        if node.first_seen is None or timestamp < node.first_seen:
            node.first_seen = timestamp
        if node.last_seen is None or timestamp > node.last_seen:
            node.last_seen = timestamp
        if node.pid is None and pid is not None:
            node.pid = pid
        return node_id

    def _merge_node_attrs(
        self,
        node_id: int,
        integrity: IntegrityLevel,
        user: str,
        host: str,
    ) -> None:
        node = self.nodes[node_id]
        if integrity.value > node.integrity.value:
            node.integrity = integrity
        if not node.user and user:
            node.user = user
        if not node.host and host:
            node.host = host

    def _add_relation_edge(
        self,
        source: int,
        target: int,
        kind: EventKind,
        timestamp: datetime,
    ) -> None:
        idx = self._out[source].get(target)
        if idx is None:
            idx = len(self.edges)
            self.edges.append(
                CausalEdge(
                    source=source,
                    target=target,
                    weight=0,
                    normalized_weight=0.0,
                    first_seen=timestamp,
                )
            )
            self._out[source][target] = idx
            self._in[target][source] = idx
        edge = self.edges[idx]
        edge.weight += 1
        edge.kind_counts[kind] = edge.kind_counts.get(kind, 0) + 1
        if edge.first_seen is None or timestamp < edge.first_seen:
            edge.first_seen = timestamp

    def _finalize(self) -> None:
        """Re-index into deterministic order and refresh normalized weights."""
        order = sorted(
            range(len(self.nodes)),
            key=lambda i: (self.nodes[i].first_seen or datetime.min, self.nodes[i].key),
        )
        remap = {old: new for new, old in enumerate(order)}
        self.nodes = [replace(self.nodes[old], node_id=new) for new, old in enumerate(order)]
        for edge in self.edges:
            edge.source = remap[edge.source]
            edge.target = remap[edge.target]
        self.edges.sort(
            key=lambda e: (
                e.first_seen or datetime.min,
                self.nodes[e.source].key,
                self.nodes[e.target].key,
            )
        )
        self._key_to_id = {node.key: node.node_id for node in self.nodes}
        self._out = [{} for _ in self.nodes]
        self._in = [{} for _ in self.nodes]
        for idx, edge in enumerate(self.edges):
            self._out[edge.source][edge.target] = idx
            self._in[edge.target][edge.source] = idx
        max_w = self.max_edge_weight()
        for edge in self.edges:
            edge.normalized_weight = edge.weight / max_w if max_w else 0.0


def _node_key(keying: str, label: str, pid: int | None) -> str:
    if keying == KEYING_LABEL_PID and pid is not None:
        return f"{label}:{pid}"
    return label


def _attr_pid(attributes: dict[str, str], name: str) -> int | None:
    raw = attributes.get(name)
    if raw is None:
        return None
    try:
        return int(raw)
    except ValueError:
        return None


def build_graph(
    relations: Iterable[ParentChildRelation],
    keying: str = KEYING_LABEL,
) -> EventGraph:
    """Aggregate relations into an EventGraph under the given keying."""
    graph = EventGraph(keying=keying)
    for rel in relations:
        parent_label = derive_label(rel.parent_key)
        child_label = derive_label(rel.child_key)
        parent_pid = _attr_pid(rel.attributes, "parent_pid")
        child_pid = _attr_pid(rel.attributes, "child_pid")
        parent_id = graph._ensure_node(
            _node_key(keying, parent_label, parent_pid),
            parent_label,
            parent_pid,
            rel.timestamp,
        )
        child_id = graph._ensure_node(
            _node_key(keying, child_label, child_pid),
            child_label,
            child_pid,
            rel.timestamp,
        )
        user = rel.attributes.get("user", "")
        host = rel.attributes.get("host", "")
        parent_integrity = normalize_name(rel.attributes.get("parent_integrity"))
        child_integrity = normalize_name(rel.attributes.get("child_integrity"))
        graph._merge_node_attrs(parent_id, parent_integrity, user, host)
        graph._merge_node_attrs(child_id, child_integrity, user, host)
        graph._add_relation_edge(parent_id, child_id, rel.relation_kind, rel.timestamp)
    graph._finalize()
    return graph


def normalize_name(raw: str | None) -> IntegrityLevel:
    """IntegrityLevel from its enum name; UNKNOWN for anything else."""
    if not raw:
        return IntegrityLevel.UNKNOWN
    try:
        return IntegrityLevel[raw.strip().upper()]
    except KeyError:
        return IntegrityLevel.UNKNOWN


def prune_isolated(graph: EventGraph) -> EventGraph:
    """Copy of the graph without degree-zero nodes; relative order kept."""
    keep = [
        node.node_id
        for node in graph.nodes
        if graph.in_degree(node.node_id) + graph.out_degree(node.node_id) > 0
    ]
    remap = {old: new for new, old in enumerate(keep)}
    pruned = EventGraph(keying=graph.keying)
    pruned.nodes = [replace(graph.nodes[old], node_id=new) for new, old in enumerate(keep)]
    pruned._key_to_id = {node.key: node.node_id for node in pruned.nodes}
    pruned._out = [{} for _ in pruned.nodes]
    pruned._in = [{} for _ in pruned.nodes]
    for edge in graph.edges:
        copied = CausalEdge(
            source=remap[edge.source],
            target=remap[edge.target],
            weight=edge.weight,
            normalized_weight=edge.normalized_weight,
            kind_counts=dict(edge.kind_counts),
            first_seen=edge.first_seen,
        )
        idx = len(pruned.edges)
        pruned.edges.append(copied)
        pruned._out[copied.source][copied.target] = idx
        pruned._in[copied.target][copied.source] = idx
    return pruned


# --- feature encoding ----------------------------------------------------


@dataclass(frozen=True)
class EncoderConfig:
    """Sizing for the hashed categorical sections of the feature vector."""

    label_buckets: int = 32
    user_buckets: int = 8
    host_buckets: int = 8

    def __post_init__(self):
        for name in ("label_buckets", "user_buckets", "host_buckets"):
            if getattr(self, name) < 1:
                raise UsageError(f"{name} must be >= 1")

    @property
    def feature_dim(self) -> int:
        return 4 + self.label_buckets + self.user_buckets + self.host_buckets


def hash_bucket(text: str, buckets: int) -> int:
    """Stable non-cryptographic bucket via crc32; identical across runs."""
    return zlib.crc32(text.encode("utf-8")) % buckets


def encode_features(graph: EventGraph, config: EncoderConfig | None = None) -> np.ndarray:
    """Per-node feature matrix [num_nodes, feature_dim].

    Columns: scaled integrity, log-scaled in/out degree, min-max scaled
    lifetime duration, then one-hot hash buckets for label, user, and host.
    Unknown integrity encodes as 0; empty user or host leaves its section
    all-zero.
    """
    cfg = config or EncoderConfig()
    n = graph.num_nodes
    out = np.zeros((n, cfg.feature_dim), dtype=np.float64)
    if n == 0:
        return out

    in_degrees = np.array([graph.in_degree(i) for i in range(n)], dtype=np.float64)
    out_degrees = np.array([graph.out_degree(i) for i in range(n)], dtype=np.float64)
    durations = np.array([node.duration_seconds for node in graph.nodes], dtype=np.float64)

    max_log_in = np.log1p(in_degrees.max())
    max_log_out = np.log1p(out_degrees.max())
    d_min, d_max = durations.min(), durations.max()

    for i, node in enumerate(graph.nodes):
        out[i, 0] = max(node.integrity.value, 0) / IntegrityLevel.SYSTEM.value
        if max_log_in > 0:
            out[i, 1] = np.log1p(in_degrees[i]) / max_log_in
        if max_log_out > 0:
            out[i, 2] = np.log1p(out_degrees[i]) / max_log_out
        if d_max > d_min:
            out[i, 3] = (durations[i] - d_min) / (d_max - d_min)
        base = 4
        out[i, base + hash_bucket(node.label, cfg.label_buckets)] = 1.0
        base += cfg.label_buckets
        if node.user:
            out[i, base + hash_bucket(node.user, cfg.user_buckets)] = 1.0
        base += cfg.user_buckets
        if node.host:
            out[i, base + hash_bucket(node.host, cfg.host_buckets)] = 1.0
    return out


@dataclass
class GraphSnapshot:
    """Fixed-capacity numeric view of a graph for batched model input.

    Arrays are zero-padded to capacity; ``node_mask`` is true for the first
    ``num_nodes`` rows and drives masked pooling downstream.
    """

    node_features: np.ndarray  # [max_nodes, feature_dim]
    edge_index: np.ndarray  # [2, max_edges], int64
    num_nodes: int
    num_edges: int
    node_mask: np.ndarray  # [max_nodes], bool
    current_node: int


def snapshot(
    graph: EventGraph,
    current_node: int,
    max_nodes: int,
    max_edges: int,
    config: EncoderConfig | None = None,
    node_features: np.ndarray | None = None,
) -> GraphSnapshot:
    """Pad the graph into fixed arrays; SizingError names the short capacity.

    ``node_features`` lets callers reuse a precomputed encoding; shape must
    be [num_nodes, feature_dim].
    """
    cfg = config or EncoderConfig()
    n, m = graph.num_nodes, graph.num_edges
    if n > max_nodes:
        raise SizingError(f"graph has {n} nodes; capacity max_nodes={max_nodes} is too small")
    if m > max_edges:
        raise SizingError(f"graph has {m} edges; capacity max_edges={max_edges} is too small")
    if not 0 <= current_node < n:
        raise UsageError(f"current_node {current_node} out of range for {n} nodes")

    if node_features is None:
        node_features = encode_features(graph, cfg)
    features = np.zeros((max_nodes, cfg.feature_dim), dtype=np.float64)
    features[:n] = node_features

    edge_index = np.zeros((2, max_edges), dtype=np.int64)
    for idx, edge in enumerate(graph.edges):
        edge_index[0, idx] = edge.source
        edge_index[1, idx] = edge.target

    mask = np.zeros(max_nodes, dtype=bool)
    mask[:n] = True
    return GraphSnapshot(
        node_features=features,
        edge_index=edge_index,
        num_nodes=n,
        num_edges=m,
        node_mask=mask,
        current_node=current_node,
    )


# --- import / export -----------------------------------------------------


def export_graph(graph: EventGraph, fmt: str = "json") -> str:
    """Serialize to node-link JSON (lossless) or DOT (for rendering)."""
    if fmt == "json":
        return _export_json(graph)
    if fmt == "dot":
        return _export_dot(graph)
    raise UsageError(f"unknown export format: {fmt!r}")


def _export_json(graph: EventGraph) -> str:
    doc = {
        "directed": True,
        "keying": graph.keying,
        "nodes": [
            {
                "id": node.node_id,
                "key": node.key,
                "label": node.label,
                "pid": node.pid,
                "integrity": node.integrity.name,
                "user": node.user,
                "host": node.host,
                "first_seen": format_timestamp(node.first_seen) if node.first_seen else None,
                "last_seen": format_timestamp(node.last_seen) if node.last_seen else None,
            }
            for node in graph.nodes
        ],
        "edges": [
            {
                "source": edge.source,
                "target": edge.target,
                "weight": edge.weight,
                "kind_counts": {str(kind.value): count for kind, count in sorted(edge.kind_counts.items())},
                "first_seen": format_timestamp(edge.first_seen) if edge.first_seen else None,
            }
            for edge in graph.edges
        ],
    }
    return json.dumps(doc, indent=2, sort_keys=True)


def _export_dot(graph: EventGraph) -> str:
    def quote(text: str) -> str:
        return '"' + text.replace("\\", "\\\\").replace('"', '\\"') + '"'

    lines = ["digraph eventgraph {"]
    for node in graph.nodes:
        lines.append(f"  n{node.node_id} [label={quote(node.label)}];")
    for edge in graph.edges:
        width = 0.5 + 3.0 * edge.normalized_weight
        lines.append(
            f"  n{edge.source} -> n{edge.target} "
            f'[label="{edge.weight}", penwidth={width:.2f}];'
        )
    lines.append("}")
    return "\n".join(lines)


def _parse_field(container: dict, name: str, where: str, types, required: bool = True):
    if name not in container:
        if required:
            raise GraphParseError(f"{where}: missing field {name!r}")
        return None
    value = container[name]
    if value is None and not required:
        return None
    if not isinstance(value, types):
        raise GraphParseError(f"{where}: field {name!r} has wrong type")
    return value


def import_graph(text: str) -> EventGraph:
    """Rebuild an EventGraph from node-link JSON; GraphParseError says where."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GraphParseError(f"invalid json at line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise GraphParseError("top level: expected an object")
    keying = doc.get("keying", KEYING_LABEL)
    if keying not in (KEYING_LABEL, KEYING_LABEL_PID):
        raise GraphParseError(f"top level: unknown keying {keying!r}")
    nodes_doc = _parse_field(doc, "nodes", "top level", list)
    edges_doc = _parse_field(doc, "edges", "top level", list)

    graph = EventGraph(keying=keying)
    for i, node_doc in enumerate(nodes_doc):
        where = f"nodes[{i}]"
        if not isinstance(node_doc, dict):
            raise GraphParseError(f"{where}: expected an object")
        node_id = _parse_field(node_doc, "id", where, int)
        if node_id != i:
            raise GraphParseError(f"{where}: id {node_id} out of order, expected {i}")
        key = _parse_field(node_doc, "key", where, str)
        if key in graph._key_to_id:
            raise GraphParseError(f"{where}: duplicate key {key!r}")
        first_seen_raw = _parse_field(node_doc, "first_seen", where, str, required=False)
        last_seen_raw = _parse_field(node_doc, "last_seen", where, str, required=False)
        try:
            first_seen = parse_timestamp(first_seen_raw) if first_seen_raw else None
            last_seen = parse_timestamp(last_seen_raw) if last_seen_raw else None
        except ValueError as exc:
            raise GraphParseError(f"{where}: bad timestamp: {exc}") from exc
        node = ProcessNode(
            node_id=node_id,
            key=key,
            label=_parse_field(node_doc, "label", where, str),
            pid=_parse_field(node_doc, "pid", where, int, required=False),
            integrity=normalize_name(_parse_field(node_doc, "integrity", where, str, required=False)),
            user=_parse_field(node_doc, "user", where, str, required=False) or "",
            host=_parse_field(node_doc, "host", where, str, required=False) or "",
            first_seen=first_seen,
            last_seen=last_seen,
        )
        graph.nodes.append(node)
        graph._key_to_id[key] = node_id
        graph._out.append({})
        graph._in.append({})

    n = len(graph.nodes)
    for i, edge_doc in enumerate(edges_doc):
        where = f"edges[{i}]"
        if not isinstance(edge_doc, dict):
            raise GraphParseError(f"{where}: expected an object")
        source = _parse_field(edge_doc, "source", where, int)
        target = _parse_field(edge_doc, "target", where, int)
        if not 0 <= source < n:
            raise GraphParseError(f"{where}: source {source} out of range")
        if not 0 <= target < n:
            raise GraphParseError(f"{where}: target {target} out of range")
        if target in graph._out[source]:
            raise GraphParseError(f"{where}: duplicate edge {source}->{target}")
        weight = _parse_field(edge_doc, "weight", where, int)
        if weight < 1:
            raise GraphParseError(f"{where}: weight must be positive")
        kind_counts_doc = _parse_field(edge_doc, "kind_counts", where, dict, required=False) or {}
        kind_counts: dict[EventKind, int] = {}
        for raw_kind, count in kind_counts_doc.items():
            try:
                kind = EventKind(int(raw_kind))
            except ValueError as exc:
                raise GraphParseError(f"{where}: unknown relation kind {raw_kind!r}") from exc
            if not isinstance(count, int) or count < 0:
                raise GraphParseError(f"{where}: bad count for kind {raw_kind!r}")
            kind_counts[kind] = count
        first_seen_raw = _parse_field(edge_doc, "first_seen", where, str, required=False)
        try:
            first_seen = parse_timestamp(first_seen_raw) if first_seen_raw else None
        except ValueError as exc:
            raise GraphParseError(f"{where}: bad timestamp: {exc}") from exc
        edge = CausalEdge(
            source=source,
            target=target,
            weight=weight,
            normalized_weight=0.0,
            kind_counts=kind_counts,
            first_seen=first_seen,
        )
        idx = len(graph.edges)
        graph.edges.append(edge)
        graph._out[source][target] = idx
        graph._in[target][source] = idx

    max_w = graph.max_edge_weight()
    for edge in graph.edges:
        edge.normalized_weight = edge.weight / max_w if max_w else 0.0
    return graph
