"""Episodic environment over the event graph.

An episode starts at a designated node; each action names a target node id.
Moving along an existing edge advances the walker, a non-adjacent target
leaves it in place at a penalty, and reaching the terminal node ends the
episode. Two reward schemes are provided: ``baseline`` and a ``refined``
variant that punishes wasted moves harder and discourages revisiting nodes
instead of taxing edge weight.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields
from typing import Mapping

import numpy as np

from .errors import ConfigError, UsageError
from .graph import EncoderConfig, EventGraph, GraphSnapshot, encode_features, snapshot
from .metrics import in_degree_centrality, longest_path_via_condensation

VARIANT_BASELINE = "baseline"
VARIANT_REFINED = "refined"

REFINED_WASTE_MULTIPLIER = 10.0
REFINED_DOWNGRADE_DIVISOR = 100.0


@dataclass(frozen=True)
class RewardConfig:
    """Scales for every reward term; see module docstring for the scheme."""

    variant: str = VARIANT_BASELINE
    step_reward: float = -0.1
    invalid_penalty: float = -1.0
    non_adjacent_offset: float = -0.5
    weight_cost_scale: float = 0.01
    centrality_bonus_scale: float = 10.0
    escalation_reward: float = 100.0
    downgrade_penalty: float = -1.0
    terminal_reward: float = 5000.0
    node_frequency_penalty_scale: float = 5.0

    def validate(self) -> "RewardConfig":
        if self.variant not in (VARIANT_BASELINE, VARIANT_REFINED):
            raise ConfigError(f"unknown reward variant: {self.variant!r}")
        for f in fields(self):
            if f.name == "variant":
                continue
            value = getattr(self, f.name)
            if not isinstance(value, (int, float)) or not math.isfinite(value):
                raise ConfigError(f"reward field {f.name} must be a finite number")
        if self.invalid_penalty > 0:
            raise ConfigError("invalid_penalty must not be positive")
        if self.node_frequency_penalty_scale < 0:
            raise ConfigError("node_frequency_penalty_scale must not be negative")
        return self

    @classmethod
    def from_dict(cls, doc: Mapping) -> "RewardConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown reward config keys: {sorted(unknown)}")
        return cls(**doc).validate()

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def baseline_reward(
    graph: EventGraph,
    centrality: list[float] | np.ndarray,
    current: int,
    action: int,
    terminal: int,
    config: RewardConfig,
) -> tuple[float, bool]:
    """Reward for one transition under the baseline scheme."""
    components, terminated = _baseline_components(
        graph, centrality, current, action, terminal, config
    )
    return sum(components.values()), terminated


def refined_reward(
    graph: EventGraph,
    centrality: list[float] | np.ndarray,
    current: int,
    action: int,
    terminal: int,
    config: RewardConfig,
    prior_visits: int,
) -> tuple[float, bool]:
    """Reward for one transition under the refined scheme.

    ``prior_visits`` is how many times the target node was entered before
    this transition (the start node counts its initial placement).
    """
    components, terminated = _refined_components(
        graph, centrality, current, action, terminal, config, prior_visits
    )
    return sum(components.values()), terminated


def _baseline_components(
    graph: EventGraph,
    centrality,
    current: int,
    action: int,
    terminal: int,
    config: RewardConfig,
) -> tuple[dict[str, float], bool]:
    if not 0 <= action < graph.num_nodes:
        return {"invalid": config.invalid_penalty}, False
    edge = graph.edge_between(current, action)
    if edge is None:
        return {"step": config.step_reward, "non_adjacent": config.non_adjacent_offset}, False

    components = {"step": config.step_reward}
    components["weight"] = edge.normalized_weight
    components["weight_cost"] = -config.weight_cost_scale * edge.normalized_weight
    src = graph.node(current).integrity.value
    dst = graph.node(action).integrity.value
    if dst > src:
        components["escalation"] = config.escalation_reward
    elif dst < src:
        components["downgrade"] = config.downgrade_penalty
    components["centrality"] = config.centrality_bonus_scale * centrality[action]
    terminated = action == terminal
    if terminated:
        components["terminal"] = config.terminal_reward
    return components, terminated


def _refined_components(
    graph: EventGraph,
    centrality,
    current: int,
    action: int,
    terminal: int,
    config: RewardConfig,
    prior_visits: int,
) -> tuple[dict[str, float], bool]:
    if not 0 <= action < graph.num_nodes:
        return {"invalid": config.invalid_penalty * REFINED_WASTE_MULTIPLIER}, False
    edge = graph.edge_between(current, action)
    if edge is None:
        wasted = (config.step_reward + config.non_adjacent_offset) * REFINED_WASTE_MULTIPLIER
        return {"non_adjacent": wasted}, False

    components = {"step": config.step_reward}
    components["weight"] = edge.normalized_weight
    src = graph.node(current).integrity.value
    dst = graph.node(action).integrity.value
    if dst > src:
        components["escalation"] = config.escalation_reward
    elif dst < src:
        components["downgrade"] = config.downgrade_penalty / REFINED_DOWNGRADE_DIVISOR
    components["centrality"] = config.centrality_bonus_scale * centrality[action]
    if prior_visits > 0:
        components["revisit"] = -config.node_frequency_penalty_scale * prior_visits
    terminated = action == terminal
    if terminated:
        components["terminal"] = config.terminal_reward
    return components, terminated


@dataclass
class EpisodeState:
    current_node: int
    step_count: int
    visit_counts: np.ndarray
    terminated: bool
    truncated: bool
    start_node: int
    terminal_node: int

    @property
    def done(self) -> bool:
        return self.terminated or self.truncated


@dataclass
class StepResult:
    observation: GraphSnapshot
    reward: float
    terminated: bool
    truncated: bool
    info: dict


@dataclass(frozen=True)
class EnvConfig:
    """Episode wiring: endpoints (node key or id), budget, capacities, reward."""

    start_node: str | int
    terminal_node: str | int
    max_steps: int | None = None
    max_nodes: int | None = None
    max_edges: int | None = None
    reward: RewardConfig = field(default_factory=RewardConfig)

    @classmethod
    def from_json(cls, text: str) -> "EnvConfig":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid env config json: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("env config must be a json object")
        known = {"start_node", "terminal_node", "max_steps", "max_nodes", "max_edges", "reward"}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown env config keys: {sorted(unknown)}")
        for required in ("start_node", "terminal_node"):
            if required not in doc:
                raise ConfigError(f"env config requires {required!r}")
            if not isinstance(doc[required], (str, int)):
                raise ConfigError(f"{required!r} must be a node key or node id")
        for capacity in ("max_steps", "max_nodes", "max_edges"):
            value = doc.get(capacity)
            if value is not None and (not isinstance(value, int) or value < 1):
                raise ConfigError(f"{capacity!r} must be a positive integer")
        reward_doc = doc.get("reward", {})
        if not isinstance(reward_doc, Mapping):
            raise ConfigError("'reward' must be an object")
        return cls(
            start_node=doc["start_node"],
            terminal_node=doc["terminal_node"],
            max_steps=doc.get("max_steps"),
            max_nodes=doc.get("max_nodes"),
            max_edges=doc.get("max_edges"),
            reward=RewardConfig.from_dict(reward_doc),
        )


class GraphEnv:
    """Walker over a fixed EventGraph with dense node-id actions.

    The action space is every node id up to snapshot capacity; structure is
    taught through reward rather than masking. ``valid_action_mask`` exposes
    true adjacency for diagnostics and scripted baselines; the default agent
    does not consume it.
    """

    def __init__(
        self,
        graph: EventGraph,
        start_node: int,
        terminal_node: int,
        reward: RewardConfig | None = None,
        max_steps: int | None = None,
        max_nodes: int | None = None,
        max_edges: int | None = None,
        encoder: EncoderConfig | None = None,
    ):
        if graph.num_nodes == 0:
            raise UsageError("environment requires a non-empty graph")
        n = graph.num_nodes
        if not 0 <= start_node < n:
            raise UsageError(f"start node {start_node} out of range for {n} nodes")
        if not 0 <= terminal_node < n:
            raise UsageError(f"terminal node {terminal_node} out of range for {n} nodes")
        self.graph = graph
        self.start_node = start_node
        self.terminal_node = terminal_node
        self.reward_config = (reward or RewardConfig()).validate()
        self.encoder = encoder or EncoderConfig()
        self.max_nodes = max_nodes if max_nodes is not None else n
        self.max_edges = max_edges if max_edges is not None else max(graph.num_edges, 1)
        if self.max_nodes < n:
            raise UsageError(f"max_nodes={self.max_nodes} below graph size {n}")
        if self.max_edges < graph.num_edges:
            raise UsageError(
                f"max_edges={self.max_edges} below graph size {graph.num_edges}"
            )
        if max_steps is None:
            path_len = len(longest_path_via_condensation(graph))
            max_steps = max(64, 4 * path_len)
        if max_steps < 1:
            raise UsageError("max_steps must be positive")
        self.max_steps = max_steps
        self._features = encode_features(graph, self.encoder)
        self._centrality = in_degree_centrality(graph)
        self._state: EpisodeState | None = None

    @classmethod
    def from_config(
        cls,
        graph: EventGraph,
        config: EnvConfig,
        encoder: EncoderConfig | None = None,
    ) -> "GraphEnv":
        def resolve(endpoint: str | int, name: str) -> int:
            if isinstance(endpoint, int):
                return endpoint
            node_id = graph.node_id_for_key(endpoint)
            if node_id is None:
                raise ConfigError(f"{name} key not in graph: {endpoint!r}")
            return node_id

        return cls(
            graph,
            start_node=resolve(config.start_node, "start_node"),
            terminal_node=resolve(config.terminal_node, "terminal_node"),
            reward=config.reward,
            max_steps=config.max_steps,
            max_nodes=config.max_nodes,
            max_edges=config.max_edges,
            encoder=encoder,
        )

    @property
    def num_actions(self) -> int:
        return self.graph.num_nodes

    @property
    def feature_dim(self) -> int:
        return self.encoder.feature_dim

    @property
    def state(self) -> EpisodeState:
        if self._state is None:
            raise UsageError("reset() must be called before reading state")
        return self._state

    def reset(self) -> GraphSnapshot:
        visits = np.zeros(self.graph.num_nodes, dtype=np.int64)
        visits[self.start_node] = 1
        self._state = EpisodeState(
            current_node=self.start_node,
            step_count=0,
            visit_counts=visits,
            terminated=False,
            truncated=False,
            start_node=self.start_node,
            terminal_node=self.terminal_node,
        )
        return self._observe()

    def _observe(self) -> GraphSnapshot:
        return snapshot(
            self.graph,
            current_node=self.state.current_node,
            max_nodes=self.max_nodes,
            max_edges=self.max_edges,
            config=self.encoder,
            node_features=self._features,
        )

    def valid_action_mask(self) -> np.ndarray:
        """Boolean mask over node ids: true where an out-edge exists."""
        state = self.state
        mask = np.zeros(self.graph.num_nodes, dtype=bool)
        if not state.done:
            for target in self.graph.successors(state.current_node):
                mask[target] = True
        return mask

    def step(self, action: int) -> StepResult:
        state = self.state
        if state.done:
            raise UsageError("step() called on a finished episode")
        action = int(action)

        if self.reward_config.variant == VARIANT_REFINED:
            prior = (
                int(state.visit_counts[action])
                if 0 <= action < self.graph.num_nodes
                else 0
            )
            components, terminated = _refined_components(
                self.graph,
                self._centrality,
                state.current_node,
                action,
                self.terminal_node,
                self.reward_config,
                prior,
            )
        else:
            components, terminated = _baseline_components(
                self.graph,
                self._centrality,
                state.current_node,
                action,
                self.terminal_node,
                self.reward_config,
            )
        reward = sum(components.values())

        moved = (
            0 <= action < self.graph.num_nodes
            and self.graph.edge_between(state.current_node, action) is not None
        )
        if moved:
            state.current_node = action
            state.visit_counts[action] += 1
        state.step_count += 1
        state.terminated = terminated
        state.truncated = (not terminated) and state.step_count >= self.max_steps
        info = {
            "reward_components": components,
            "moved": moved,
            "current_node": state.current_node,
            "step_count": state.step_count,
        }
        return StepResult(
            observation=self._observe(),
            reward=reward,
            terminated=state.terminated,
            truncated=state.truncated,
            info=info,
        )
