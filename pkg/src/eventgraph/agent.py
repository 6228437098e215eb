"""Graph-convolutional actor-critic implemented directly on numpy.

The model embeds node features, runs two symmetric-normalized graph
convolutions with ReLU and (train-time) inverted dropout, mean-pools the
masked node rows into a graph embedding, and reads an action distribution
and a state value off linear heads:

    H0 = X W_e + b_e
    H1 = relu(A_hat H0 W_1)            A_hat = D^-1/2 (A or I) D^-1/2
    H2 = relu(A_hat drop(H1) W_2)
    g  = mean over masked rows of drop(H2)
    logits = g W_a + b_a               value = g w_c + b_c

Training minimizes

    L = L_policy + c_v L_value - c_e H

with L_policy = -(1/B) sum log pi(a_i|s_i) A_i (advantages held constant),
L_value = (1/B) sum (V_i - R_i)^2, and H the mean policy entropy. Gradients
are computed analytically in ``backward``; there is no autograd anywhere, so
every formula here is checked against finite differences in the test suite.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, UsageError
from .graph import GraphSnapshot

PARAM_NAMES = (
    "embed_w",
    "embed_b",
    "gcn1_w",
    "gcn2_w",
    "actor_w",
    "actor_b",
    "critic_w",
    "critic_b",
)

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class AgentConfig:
    feature_dim: int
    hidden_dim: int
    output_dim: int
    dropout_rate: float = 0.1

    def validate(self) -> "AgentConfig":
        if self.feature_dim < 1 or self.hidden_dim < 1 or self.output_dim < 1:
            raise ConfigError("model dimensions must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must be in [0, 1)")
        return self


@dataclass
class AgentParams:
    config: AgentConfig
    embed_w: np.ndarray
    embed_b: np.ndarray
    gcn1_w: np.ndarray
    gcn2_w: np.ndarray
    actor_w: np.ndarray
    actor_b: np.ndarray
    critic_w: np.ndarray
    critic_b: np.ndarray

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_params(config: AgentConfig, seed: int | np.random.Generator) -> AgentParams:
    """Glorot-uniform weights, zero biases, all float64."""
    config = config.validate()
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    f, m, a = config.feature_dim, config.hidden_dim, config.output_dim
    return AgentParams(
        config=config,
        embed_w=_glorot(rng, f, m),
        embed_b=np.zeros(m),
        gcn1_w=_glorot(rng, m, m),
        gcn2_w=_glorot(rng, m, m),
        actor_w=_glorot(rng, m, a),
        actor_b=np.zeros(a),
        critic_w=_glorot(rng, m, 1),
        critic_b=np.zeros(1),
    )


def build_adjacency(snap: GraphSnapshot) -> np.ndarray:
    """Symmetric-normalized adjacency with self-loops over snapshot capacity.

    A_hat = D^-1/2 (A + I) D^-1/2 with A the binarized undirected adjacency
    read from edge_index. The identity covers padded rows too, so every
    degree is at least one and the normalization never divides by zero.
    """
    n = snap.node_features.shape[0]
    adj = np.zeros((n, n))
    for i in range(snap.num_edges):
        s, t = snap.edge_index[0, i], snap.edge_index[1, i]
        adj[s, t] = 1.0
        adj[t, s] = 1.0
    adj += np.eye(n)
    d_inv_sqrt = 1.0 / np.sqrt(adj.sum(axis=1))
    return adj * d_inv_sqrt[:, None] * d_inv_sqrt[None, :]


@dataclass
class ForwardCache:
    """Every intermediate needed to replay the forward pass in backward."""

    x: np.ndarray
    a_hat: np.ndarray
    mask: np.ndarray
    h0: np.ndarray
    m1: np.ndarray  # a_hat @ h0
    z1: np.ndarray
    d1: np.ndarray  # post-ReLU, post-dropout layer 1 output
    drop1: np.ndarray | None
    m2: np.ndarray  # a_hat @ d1
    z2: np.ndarray
    d2: np.ndarray
    drop2: np.ndarray | None
    pooled: np.ndarray
    logits: np.ndarray
    probs: np.ndarray
    log_probs: np.ndarray
    value: float
    train_mode: bool


def forward(
    snap: GraphSnapshot,
    params: AgentParams,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
    a_hat: np.ndarray | None = None,
) -> tuple[np.ndarray, float, ForwardCache]:
    """Run the model on one snapshot; returns (logits, value, cache).

    ``train_mode`` enables dropout, which then requires ``rng``. ``a_hat``
    lets callers reuse a precomputed adjacency when the graph is static.
    The cache retains every activation ``backward`` needs.
    """
    cfg = params.config
    if snap.node_features.shape[1] != cfg.feature_dim:
        raise UsageError(
            f"snapshot feature dim {snap.node_features.shape[1]} "
            f"!= model feature dim {cfg.feature_dim}"
        )
    if snap.num_nodes > cfg.output_dim:
        raise UsageError(
            f"snapshot has {snap.num_nodes} nodes but model emits "
            f"{cfg.output_dim} action logits"
        )
    if train_mode and cfg.dropout_rate > 0.0 and rng is None:
        raise UsageError("train_mode forward with dropout requires rng")

    x = snap.node_features
    if a_hat is None:
        a_hat = build_adjacency(snap)
    mask = snap.node_mask

    h0 = x @ params.embed_w + params.embed_b
    m1 = a_hat @ h0
    z1 = m1 @ params.gcn1_w
    h1 = np.maximum(z1, 0.0)
    drop1 = drop2 = None
    if train_mode and cfg.dropout_rate > 0.0:
        keep = 1.0 - cfg.dropout_rate
        drop1 = (rng.random(h1.shape) < keep) / keep
        d1 = h1 * drop1
    else:
        d1 = h1
    m2 = a_hat @ d1
    z2 = m2 @ params.gcn2_w
    h2 = np.maximum(z2, 0.0)
    if train_mode and cfg.dropout_rate > 0.0:
        keep = 1.0 - cfg.dropout_rate
        drop2 = (rng.random(h2.shape) < keep) / keep
        d2 = h2 * drop2
    else:
        d2 = h2

    n_masked = int(mask.sum())
    if n_masked == 0:
        raise UsageError("snapshot mask selects no nodes")
    pooled = d2[mask].mean(axis=0)

    logits = pooled @ params.actor_w + params.actor_b
    shifted = logits - logits.max()
    exp = np.exp(shifted)
    probs = exp / exp.sum()
    log_probs = shifted - math.log(exp.sum())
    value = float((pooled @ params.critic_w + params.critic_b)[0])

    cache = ForwardCache(
        x=x,
        a_hat=a_hat,
        mask=mask,
        h0=h0,
        m1=m1,
        z1=z1,
        d1=d1,
        drop1=drop1,
        m2=m2,
        z2=z2,
        d2=d2,
        drop2=drop2,
        pooled=pooled,
        logits=logits,
        probs=probs,
        log_probs=log_probs,
        value=value,
        train_mode=train_mode,
    )
    return logits, value, cache


def sample_action(
    logits: np.ndarray, rng: np.random.Generator
) -> tuple[int, float, float]:
    """Draw from softmax(logits); returns (action, log_prob, entropy).

    No validity masking: structurally impossible actions are part of the
    distribution, and the environment prices them.
    """
    shifted = logits - logits.max()
    exp = np.exp(shifted)
    probs = exp / exp.sum()
    log_probs = shifted - math.log(exp.sum())
    action = int(rng.choice(len(probs), p=probs / probs.sum()))
    entropy = -float(np.sum(probs * log_probs))
    return action, float(log_probs[action]), entropy


def n_step_returns(
    rewards: Sequence[float],
    bootstrap_value: float,
    gamma: float,
    dones: Sequence[bool],
) -> np.ndarray:
    """Discounted returns over a rollout window.

    R_t = r_t + gamma * R_{t+1}, seeded past the window with the critic's
    bootstrap value. A done flag cuts the recursion: the following step
    starts a new episode, so nothing after it leaks backward.
    """
    if len(rewards) == 0:
        raise UsageError("n_step_returns requires at least one reward")
    if len(rewards) != len(dones):
        raise UsageError("rewards and dones must have equal length")
    out = np.zeros(len(rewards))
    running = float(bootstrap_value)
    for t in range(len(rewards) - 1, -1, -1):
        if dones[t]:
            running = 0.0
        running = rewards[t] + gamma * running
        out[t] = running
    return out


@dataclass(frozen=True)
class TransitionSample:
    """One training sample: the acting-time cache plus action and target."""

    cache: ForwardCache
    action: int
    ret: float


@dataclass
class LossBreakdown:
    policy_loss: float
    value_loss: float
    entropy: float
    total: float
    advantage_mean: float
    value_coef: float
    entropy_coef: float
    per_sample_policy: np.ndarray
    per_sample_value: np.ndarray
    per_sample_entropy: np.ndarray


def compute_losses(
    samples: Sequence[TransitionSample],
    params: AgentParams,
    value_coef: float,
    entropy_coef: float,
) -> LossBreakdown:
    """Batch losses; advantages R - V are treated as constants."""
    if not samples:
        raise UsageError("loss computation requires at least one sample")
    n_actions = params.actor_b.shape[0]
    for s in samples:
        if s.cache.logits.shape[0] != n_actions:
            raise UsageError(
                "sample cache does not match the supplied parameters"
            )
    b = len(samples)
    policy = np.zeros(b)
    value = np.zeros(b)
    entropy = np.zeros(b)
    advantages = np.zeros(b)
    for i, s in enumerate(samples):
        adv = s.ret - s.cache.value
        advantages[i] = adv
        policy[i] = -s.cache.log_probs[s.action] * adv
        value[i] = (s.cache.value - s.ret) ** 2
        entropy[i] = -float(np.sum(s.cache.probs * s.cache.log_probs))
    policy_loss = float(policy.mean())
    value_loss = float(value.mean())
    mean_entropy = float(entropy.mean())
    total = policy_loss + value_coef * value_loss - entropy_coef * mean_entropy
    return LossBreakdown(
        policy_loss=policy_loss,
        value_loss=value_loss,
        entropy=mean_entropy,
        total=total,
        advantage_mean=float(advantages.mean()),
        value_coef=value_coef,
        entropy_coef=entropy_coef,
        per_sample_policy=policy,
        per_sample_value=value,
        per_sample_entropy=entropy,
    )


def backward(
    samples: Sequence[TransitionSample],
    losses: LossBreakdown,
    params: AgentParams,
) -> dict[str, np.ndarray]:
    """Exact gradient of the total loss w.r.t. every parameter.

    ``losses`` must come from ``compute_losses`` on the same batch; it
    carries the coefficients the total was assembled under. Per sample,
    with H_i the sample entropy and e_a the one-hot action:

        dL/dlogits_i = (1/B) [ -A_i (e_a - pi_i)
                               + c_e * pi_i * (log pi_i + H_i) ]
        dL/dV_i      = (2/B) c_v (V_i - R_i)

    and the rest is the chain rule back through the heads, pooling, dropout
    masks, ReLUs, and the (symmetric) normalized adjacency.
    """
    if len(losses.per_sample_policy) != len(samples):
        raise UsageError("loss breakdown was computed on a different batch")
    value_coef = losses.value_coef
    entropy_coef = losses.entropy_coef
    grads = {name: np.zeros_like(arr) for name, arr in params.arrays().items()}
    b = len(samples)

    for s in samples:
        c = s.cache
        adv = s.ret - c.value
        sample_entropy = -float(np.sum(c.probs * c.log_probs))

        g_logits = (adv / b) * c.probs
        g_logits[s.action] -= adv / b
        g_logits += (entropy_coef / b) * c.probs * (c.log_probs + sample_entropy)
        g_value = 2.0 * value_coef * (c.value - s.ret) / b

        grads["actor_w"] += np.outer(c.pooled, g_logits)
        grads["actor_b"] += g_logits
        grads["critic_w"] += c.pooled[:, None] * g_value
        grads["critic_b"] += np.array([g_value])

        g_pooled = params.actor_w @ g_logits + params.critic_w[:, 0] * g_value

        n_masked = int(c.mask.sum())
        g_d2 = np.zeros_like(c.d2)
        g_d2[c.mask] = g_pooled / n_masked
        g_h2 = g_d2 * c.drop2 if c.drop2 is not None else g_d2
        g_z2 = g_h2 * (c.z2 > 0.0)
        grads["gcn2_w"] += c.m2.T @ g_z2
        g_d1 = c.a_hat @ (g_z2 @ params.gcn2_w.T)
        g_h1 = g_d1 * c.drop1 if c.drop1 is not None else g_d1
        g_z1 = g_h1 * (c.z1 > 0.0)
        grads["gcn1_w"] += c.m1.T @ g_z1
        g_h0 = c.a_hat @ (g_z1 @ params.gcn1_w.T)
        grads["embed_w"] += c.x.T @ g_h0
        grads["embed_b"] += g_h0.sum(axis=0)

    return grads


# --- optimizer -------------------------------------------------------------


@dataclass
class OptimizerState:
    """Adam moment estimates plus the shared timestep."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def init_optimizer(params: AgentParams) -> OptimizerState:
    return OptimizerState(
        m={name: np.zeros_like(arr) for name, arr in params.arrays().items()},
        v={name: np.zeros_like(arr) for name, arr in params.arrays().items()},
        t=0,
    )


def adam_step(
    params: AgentParams,
    grads: Mapping[str, np.ndarray],
    state: OptimizerState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> dict:
    """One bias-corrected Adam update, applied to params in place.

    A non-finite value in any gradient rejects the whole update: parameters
    and moments are left untouched and the diagnostics name the offenders.
    """
    bad = [
        name for name, g in grads.items() if not np.all(np.isfinite(g))
    ]
    if bad:
        return {"applied": False, "non_finite_grads": sorted(bad), "t": state.t}

    state.t += 1
    t = state.t
    arrays = params.arrays()
    max_update = 0.0
    for name, g in grads.items():
        state.m[name] = beta1 * state.m[name] + (1.0 - beta1) * g
        state.v[name] = beta2 * state.v[name] + (1.0 - beta2) * g * g
        m_hat = state.m[name] / (1.0 - beta1**t)
        v_hat = state.v[name] / (1.0 - beta2**t)
        update = lr * m_hat / (np.sqrt(v_hat) + eps)
        arrays[name] -= update
        if update.size:
            max_update = max(max_update, float(np.abs(update).max()))
    return {"applied": True, "t": t, "max_update": max_update}


# --- checkpointing ---------------------------------------------------------


def save_checkpoint(
    path: str,
    params: AgentParams,
    optimizer: OptimizerState | None = None,
    step: int = 0,
) -> None:
    """Versioned JSON checkpoint; arrays stored as nested lists."""
    doc: dict = {
        "version": CHECKPOINT_VERSION,
        "step": step,
        "config": {
            "feature_dim": params.config.feature_dim,
            "hidden_dim": params.config.hidden_dim,
            "output_dim": params.config.output_dim,
            "dropout_rate": params.config.dropout_rate,
        },
        "params": {name: arr.tolist() for name, arr in params.arrays().items()},
    }
    if optimizer is not None:
        doc["optimizer"] = {
            "t": optimizer.t,
            "m": {name: arr.tolist() for name, arr in optimizer.m.items()},
            "v": {name: arr.tolist() for name, arr in optimizer.v.items()},
        }
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
    os.replace(tmp, path)


def load_checkpoint(path: str) -> tuple[AgentParams, OptimizerState | None, int]:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"checkpoint is not valid json: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(
            f"unsupported checkpoint version: {doc.get('version')!r}"
            if isinstance(doc, dict)
            else "checkpoint is not an object"
        )
    try:
        config = AgentConfig(**doc["config"]).validate()
        raw = doc["params"]
        params = AgentParams(
            config=config,
            **{name: np.array(raw[name], dtype=np.float64) for name in PARAM_NAMES},
        )
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed checkpoint: {exc}") from exc

    expected = {
        "embed_w": (config.feature_dim, config.hidden_dim),
        "embed_b": (config.hidden_dim,),
        "gcn1_w": (config.hidden_dim, config.hidden_dim),
        "gcn2_w": (config.hidden_dim, config.hidden_dim),
        "actor_w": (config.hidden_dim, config.output_dim),
        "actor_b": (config.output_dim,),
        "critic_w": (config.hidden_dim, 1),
        "critic_b": (1,),
    }
    for name, shape in expected.items():
        actual = getattr(params, name).shape
        if actual != shape:
            raise ConfigError(f"checkpoint array {name} has shape {actual}, expected {shape}")

    optimizer = None
    if "optimizer" in doc:
        opt_doc = doc["optimizer"]
        try:
            optimizer = OptimizerState(
                m={name: np.array(opt_doc["m"][name], dtype=np.float64) for name in PARAM_NAMES},
                v={name: np.array(opt_doc["v"][name], dtype=np.float64) for name in PARAM_NAMES},
                t=int(opt_doc["t"]),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed checkpoint optimizer state: {exc}") from exc
    step = doc.get("step", 0)
    if not isinstance(step, int) or step < 0:
        raise ConfigError("checkpoint step must be a non-negative integer")
    return params, optimizer, step
