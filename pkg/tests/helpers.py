"""Shared fixtures and independent oracles.

The oracles here deliberately re-derive results from first principles with
different algorithms and data access patterns than the library, so that a
shared bug cannot hide on both sides of a comparison.
"""

from datetime import datetime, timedelta, timezone
from fractions import Fraction

import numpy as np

from eventgraph.agent import forward
from eventgraph.graph import EventGraph, build_graph
from eventgraph.harness import WorkerStats
from eventgraph.ingest import EventKind, ParentChildRelation

BASE_TS = datetime(2024, 1, 1, tzinfo=timezone.utc)

INTEGRITY_NAMES = ("UNKNOWN", "UNTRUSTED", "LOW", "MEDIUM", "HIGH", "SYSTEM")


def node_name(i: int) -> str:
    return f"n{i:04d}.exe"


def graph_from_edges(
    pairs,
    weights=None,
    integrities=None,
    keying: str = "label",
) -> EventGraph:
    """Build a graph from (u, v) int pairs; weight k emits k parallel relations.

    ``integrities`` maps int node -> integrity level name; it is attached on
    every relation touching that node so aggregation lands deterministically.
    """
    integrities = integrities or {}
    relations = []
    tick = 0
    for idx, (u, v) in enumerate(pairs):
        count = weights[idx] if weights else 1
        attrs = {}
        if u in integrities:
            attrs["parent_integrity"] = integrities[u]
        if v in integrities:
            attrs["child_integrity"] = integrities[v]
        for _ in range(count):
            relations.append(
                ParentChildRelation(
                    parent_key=node_name(u),
                    child_key=node_name(v),
                    relation_kind=EventKind.PROCESS_CREATE,
                    timestamp=BASE_TS + timedelta(seconds=tick),
                    attributes=dict(attrs),
                )
            )
            tick += 1
    return build_graph(relations, keying=keying)


def ids_by_name(graph: EventGraph) -> dict[int, int]:
    """Map the integer used in graph_from_edges back to the final node id."""
    out = {}
    for node in graph.nodes:
        if node.label.startswith("n") and node.label.endswith(".exe"):
            out[int(node.label[1:5])] = node.node_id
    return out


def chain_graph(n: int = 6) -> EventGraph:
    return graph_from_edges([(i, i + 1) for i in range(n - 1)])


def random_graph(
    rng: np.random.Generator,
    max_nodes: int = 8,
    self_loops: bool = True,
    max_weight: int = 3,
    integrity: bool = True,
) -> EventGraph:
    """Random directed multigraph through the public builder."""
    n = int(rng.integers(2, max_nodes + 1))
    pairs = [(i, (i + 1) % n) for i in range(n - 1)]  # keep every node reachable
    extras = int(rng.integers(0, 2 * n))
    for _ in range(extras):
        u = int(rng.integers(0, n))
        v = int(rng.integers(0, n))
        if u == v and not self_loops:
            continue
        pairs.append((u, v))
    seen = set()
    unique_pairs = []
    for p in pairs:
        if p not in seen:
            seen.add(p)
            unique_pairs.append(p)
    weights = [int(rng.integers(1, max_weight + 1)) for _ in unique_pairs]
    levels = None
    if integrity:
        levels = {
            i: INTEGRITY_NAMES[int(rng.integers(0, len(INTEGRITY_NAMES)))]
            for i in range(n)
        }
    return graph_from_edges(unique_pairs, weights=weights, integrities=levels)


def random_dag(rng: np.random.Generator, max_nodes: int = 10, p: float = 0.3) -> EventGraph:
    """Random DAG: edges only from lower to higher index, so it is acyclic."""
    n = int(rng.integers(2, max_nodes + 1))
    pairs = [
        (i, j)
        for i in range(n)
        for j in range(i + 1, n)
        if rng.random() < p
    ]
    if not pairs:
        pairs = [(0, n - 1)]
    return graph_from_edges(pairs)


def exact_count_graph(n_nodes: int, n_edges: int, seed: int = 0) -> EventGraph:
    """A graph with exactly the requested node and edge counts."""
    if n_edges < n_nodes - 1:
        raise ValueError("need at least a spanning chain")
    rng = np.random.default_rng(seed)
    pairs = [(i, i + 1) for i in range(n_nodes - 1)]
    present = set(pairs)
    while len(pairs) < n_edges:
        u = int(rng.integers(0, n_nodes))
        v = int(rng.integers(0, n_nodes))
        if u != v and (u, v) not in present:
            present.add((u, v))
            pairs.append((u, v))
    graph = graph_from_edges(pairs)
    assert graph.num_nodes == n_nodes and graph.num_edges == n_edges
    return graph


# --- reward oracle ---------------------------------------------------------


def reference_baseline_reward(graph, current, action, terminal, cfg):
    """Straight-line transcription of the baseline scheme, kept independent.

    Adjacency, weights, and centrality are all recomputed here by scanning
    the edge list directly.
    """
    n = graph.num_nodes
    if action < 0 or action >= n:
        return cfg.invalid_penalty, False

    edge = None
    for e in graph.edges:
        if e.source == current and e.target == action:
            edge = e
            break
    if edge is None:
        return cfg.step_reward + cfg.non_adjacent_offset, False

    max_w = max(e.weight for e in graph.edges)
    w_hat = edge.weight / max_w
    reward = cfg.step_reward
    reward += w_hat
    reward += -cfg.weight_cost_scale * w_hat
    src = graph.nodes[current].integrity.value
    dst = graph.nodes[action].integrity.value
    if dst > src:
        reward += cfg.escalation_reward
    elif dst < src:
        reward += cfg.downgrade_penalty
    in_deg = sum(1 for e in graph.edges if e.target == action)
    centrality = in_deg / (n - 1) if n > 1 else 0.0
    reward += cfg.centrality_bonus_scale * centrality
    if action == terminal:
        return reward + cfg.terminal_reward, True
    return reward, False


def reference_refined_reward(graph, current, action, terminal, cfg, prior_visits):
    n = graph.num_nodes
    if action < 0 or action >= n:
        return cfg.invalid_penalty * 10.0, False

    edge = None
    for e in graph.edges:
        if e.source == current and e.target == action:
            edge = e
            break
    if edge is None:
        return (cfg.step_reward + cfg.non_adjacent_offset) * 10.0, False

    max_w = max(e.weight for e in graph.edges)
    reward = cfg.step_reward + edge.weight / max_w
    src = graph.nodes[current].integrity.value
    dst = graph.nodes[action].integrity.value
    if dst > src:
        reward += cfg.escalation_reward
    elif dst < src:
        reward += cfg.downgrade_penalty / 100.0
    in_deg = sum(1 for e in graph.edges if e.target == action)
    reward += cfg.centrality_bonus_scale * (in_deg / (n - 1) if n > 1 else 0.0)
    if prior_visits > 0:
        reward += -cfg.node_frequency_penalty_scale * prior_visits
    if action == terminal:
        return reward + cfg.terminal_reward, True
    return reward, False


# --- metrics oracles -------------------------------------------------------


def reference_scc(graph) -> list[list[int]]:
    """Components via pairwise reachability closure."""
    n = graph.num_nodes
    reach = [[False] * n for _ in range(n)]
    for i in range(n):
        reach[i][i] = True
    for e in graph.edges:
        reach[e.source][e.target] = True
    for k in range(n):
        rk = reach[k]
        for i in range(n):
            if reach[i][k]:
                ri = reach[i]
                for j in range(n):
                    if rk[j]:
                        ri[j] = True
    comps = []
    assigned = [False] * n
    for i in range(n):
        if assigned[i]:
            continue
        comp = [j for j in range(n) if reach[i][j] and reach[j][i]]
        for j in comp:
            assigned[j] = True
        comps.append(sorted(comp))
    return comps


def reference_longest_paths(graph):
    """All maximum-edge-count condensation paths as rep-key tuples.

    Representative of a component is its earliest (first_seen, key) node.
    Returns (max_edges, set of key tuples).
    """
    comps = reference_scc(graph)
    reps = [
        min(c, key=lambda i: (graph.nodes[i].first_seen, graph.nodes[i].key))
        for c in comps
    ]
    comp_of = {}
    for ci, comp in enumerate(comps):
        for i in comp:
            comp_of[i] = ci
    adj = {ci: set() for ci in range(len(comps))}
    for e in graph.edges:
        a, b = comp_of[e.source], comp_of[e.target]
        if a != b:
            adj[a].add(b)

    best_len = -1
    best: list[tuple[int, ...]] = []

    def dfs(node, path):
        nonlocal best_len, best
        length = len(path) - 1
        if length > best_len:
            best_len = length
            best = [tuple(path)]
        elif length == best_len:
            best.append(tuple(path))
        for nxt in adj[node]:
            dfs(nxt, path + [nxt])

    for ci in range(len(comps)):
        dfs(ci, [ci])
    keyed = {
        tuple(graph.nodes[reps[c]].key for c in path)
        for path in best
        if len(path) - 1 == best_len
    }
    return best_len, keyed


def reference_clustering(graph) -> list[float]:
    """Geometric-mean weighted clustering on the undirected projection."""
    n = graph.num_nodes
    raw = {}
    for e in graph.edges:
        if e.source == e.target:
            continue
        key = (min(e.source, e.target), max(e.source, e.target))
        raw[key] = raw.get(key, 0.0) + e.weight
    if not raw:
        return [0.0] * n
    w_max = max(raw.values())

    def w_hat(i, j):
        return raw.get((min(i, j), max(i, j)), 0.0) / w_max

    out = []
    for i in range(n):
        nbrs = [j for j in range(n) if j != i and w_hat(i, j) > 0]
        k = len(nbrs)
        if k < 2:
            out.append(0.0)
            continue
        total = 0.0
        for a in range(k):
            for b in range(a + 1, k):
                j, l = nbrs[a], nbrs[b]
                if w_hat(j, l) > 0:
                    total += (w_hat(i, j) * w_hat(i, l) * w_hat(j, l)) ** (1.0 / 3.0)
        out.append(2.0 * total / (k * (k - 1)))
    return out


def reference_degree_connectivity(graph, weighted=True) -> dict[int, float]:
    n = graph.num_nodes
    raw = {}
    for e in graph.edges:
        if e.source == e.target:
            continue
        key = (min(e.source, e.target), max(e.source, e.target))
        raw[key] = raw.get(key, 0.0) + e.weight
    degree = [0] * n
    for i in range(n):
        degree[i] = sum(1 for key in raw if i in key)
    per_node = {}
    for i in range(n):
        nbrs = [j for j in range(n) if (min(i, j), max(i, j)) in raw and j != i]
        if not nbrs:
            continue
        if weighted:
            s = sum(raw[(min(i, j), max(i, j))] for j in nbrs)
            per_node[i] = sum(
                raw[(min(i, j), max(i, j))] * degree[j] for j in nbrs
            ) / s
        else:
            per_node[i] = sum(degree[j] for j in nbrs) / len(nbrs)
    out = {}
    for deg in sorted({degree[i] for i in per_node}):
        members = [per_node[i] for i in per_node if degree[i] == deg]
        out[deg] = sum(members) / len(members)
    return out


# --- gradient oracle -------------------------------------------------------


def frozen_loss(snaps, actions, rets, advantages, params, c_v, c_e) -> float:
    """Total loss with advantages pinned to externally supplied constants."""
    b = len(snaps)
    policy = value = entropy = 0.0
    for snap, action, ret, adv in zip(snaps, actions, rets, advantages):
        _logits, v, cache = forward(snap, params)
        policy += -float(cache.log_probs[action]) * adv
        value += (v - ret) ** 2
        entropy += -float(np.sum(cache.probs * cache.log_probs))
    return policy / b + c_v * (value / b) - c_e * (entropy / b)


def finite_difference_grads(snaps, actions, rets, params, c_v, c_e, h=1e-5):
    """Central differences of frozen_loss w.r.t. every parameter tensor."""
    advantages = []
    for snap, ret in zip(snaps, rets):
        _logits, v, _cache = forward(snap, params)
        advantages.append(ret - v)

    grads = {}
    for name, arr in params.arrays().items():
        grad = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = frozen_loss(snaps, actions, rets, advantages, params, c_v, c_e)
            flat[i] = orig - h
            down = frozen_loss(snaps, actions, rets, advantages, params, c_v, c_e)
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * h)
        grads[name] = grad
    return grads


def tensor_relative_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(float(np.linalg.norm(a)), float(np.linalg.norm(b)), 1e-12)
    return float(np.linalg.norm(a - b)) / denom


# --- returns oracle --------------------------------------------------------


def reference_returns(rewards, bootstrap, gamma, dones):
    """Forward-sum formulation: discount until the first done, else bootstrap."""
    t_count = len(rewards)
    out = []
    for t in range(t_count):
        total = 0.0
        factor = 1.0
        hit_done = False
        for k in range(t, t_count):
            total += factor * rewards[k]
            if dones[k]:
                hit_done = True
                break
            factor *= gamma
        if not hit_done:
            total += factor * bootstrap
        out.append(total)
    return out


# --- aggregation oracle ----------------------------------------------------


def random_worker_logs(rng: np.random.Generator, n_workers: int):
    """Raw per-worker logs with dyadic values so float sums are exact."""
    logs = []
    for _ in range(n_workers):
        steps = int(rng.integers(0, 40))
        step_rewards = [float(int(rng.integers(-64, 65))) / 4.0 for _ in range(steps)]
        n_eps = int(rng.integers(0, 6))
        episodes = [
            (
                float(int(rng.integers(-4000, 4001))) / 4.0,
                int(rng.integers(1, 30)),
                bool(rng.integers(0, 2)),
            )
            for _ in range(n_eps)
        ]
        n_loss = int(rng.integers(0, 12))
        losses = [
            (
                float(int(rng.integers(-64, 65))) / 4.0,
                float(int(rng.integers(0, 257))) / 4.0,
                float(int(rng.integers(0, 9))) / 4.0,
            )
            for _ in range(n_loss)
        ]
        logs.append({"step_rewards": step_rewards, "episodes": episodes, "losses": losses})
    return logs


def stats_from_logs(logs) -> list[WorkerStats]:
    out = []
    for w, log in enumerate(logs):
        stats = WorkerStats(worker_id=w)
        for r in log["step_rewards"]:
            stats.steps += 1
            stats.reward_sum += r
        for reward, length, terminated in log["episodes"]:
            stats.episodes += 1
            stats.episode_rewards.append(reward)
            stats.episode_lengths.append(length)
            if terminated:
                stats.terminal_episodes += 1
        for p, v, e in log["losses"]:
            stats.loss_samples += 1
            stats.policy_loss_sum += p
            stats.value_loss_sum += v
            stats.entropy_sum += e
        out.append(stats)
    return out


def reference_aggregate(logs) -> dict:
    """Recompute pooled metrics from the raw logs with exact arithmetic."""
    step_rewards = [Fraction(r) for log in logs for r in log["step_rewards"]]
    episode_rewards = [reward for log in logs for reward, _l, _t in log["episodes"]]
    terminal = sum(1 for log in logs for _r, _l, t in log["episodes"] if t)
    episodes = sum(len(log["episodes"]) for log in logs)
    losses = [log_entry for log in logs for log_entry in log["losses"]]

    def ratio(values):
        if not values:
            return 0.0
        return float(sum(values, Fraction(0)) / len(values))

    return {
        "total_steps": len(step_rewards),
        "episodes": episodes,
        "terminal_episodes": terminal,
        "terminal_fraction": float(Fraction(terminal, episodes)) if episodes else 0.0,
        "avg_step_reward": ratio(step_rewards),
        "avg_policy_loss": ratio([Fraction(p) for p, _v, _e in losses]),
        "avg_value_loss": ratio([Fraction(v) for _p, v, _e in losses]),
        "avg_entropy": ratio([Fraction(e) for _p, _v, e in losses]),
        "min_episode_reward": min(episode_rewards) if episode_rewards else None,
        "max_episode_reward": max(episode_rewards) if episode_rewards else None,
    }
