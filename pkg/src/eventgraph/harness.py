"""Training orchestration: rollouts, updates, sweeps, and run reports.

Training is synchronous advantage actor-critic: W in-process workers walk
their own environment copies in lockstep, every worker contributes an
n-step window to one combined batch, and a single Adam update follows each
round. The global step budget is exact: issuing stops mid-round once
``total_training_steps`` environment steps have happened.
"""

from __future__ import annotations

import itertools
import json
import math
import os
import time
import traceback
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from .agent import (
    AgentConfig,
    AgentParams,
    OptimizerState,
    TransitionSample,
    adam_step,
    backward,
    build_adjacency,
    compute_losses,
    forward,
    init_optimizer,
    init_params,
    n_step_returns,
    sample_action,
    save_checkpoint,
)
from .env import GraphEnv
from .errors import BudgetError, ConfigError

EnvFactory = Callable[[], GraphEnv]


@dataclass(frozen=True)
class TrainConfig:
    """Training knobs. ``model_output_dim`` is the GCN embedding width m;
    the action head is always sized to the environment's node capacity."""

    total_training_steps: int = 2000
    num_parallel_envs: int = 1
    n_steps: int = 3
    gamma: float = 0.99
    learning_rate: float = 0.001
    value_loss_coef: float = 0.5
    entropy_coef: float = 0.01
    model_output_dim: int = 16
    dropout_rate: float = 0.1
    seed: int = 0
    max_memory_mb: float | None = None

    def validate(self) -> "TrainConfig":
        if self.total_training_steps < 1:
            raise ConfigError("total_training_steps must be positive")
        if self.num_parallel_envs < 1:
            raise ConfigError("num_parallel_envs must be positive")
        if self.n_steps < 1:
            raise ConfigError("n_steps must be positive")
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError("gamma must be in (0, 1]")
        if not (math.isfinite(self.learning_rate) and self.learning_rate > 0):
            raise ConfigError("learning_rate must be positive")
        if self.value_loss_coef < 0 or self.entropy_coef < 0:
            raise ConfigError("loss coefficients must not be negative")
        if self.model_output_dim < 1:
            raise ConfigError("model_output_dim must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must be in [0, 1)")
        if self.max_memory_mb is not None and self.max_memory_mb <= 0:
            raise ConfigError("max_memory_mb must be positive")
        return self

    @classmethod
    def from_dict(cls, doc: Mapping) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**doc).validate()


@dataclass
class WorkerStats:
    """Per-worker tallies; sums rather than means so aggregation is exact."""

    worker_id: int
    steps: int = 0
    episodes: int = 0
    terminal_episodes: int = 0
    reward_sum: float = 0.0
    episode_rewards: list[float] = field(default_factory=list)
    episode_lengths: list[int] = field(default_factory=list)
    loss_samples: int = 0
    policy_loss_sum: float = 0.0
    value_loss_sum: float = 0.0
    entropy_sum: float = 0.0


def aggregate_worker_metrics(workers: Sequence[WorkerStats]) -> dict:
    """Pooled metrics: sum of sums over sum of counts, extrema over extrema.

    Equivalent to computing each statistic over the concatenation of all
    workers' samples, which is what the tests check against.
    """
    total_steps = sum(w.steps for w in workers)
    total_loss_samples = sum(w.loss_samples for w in workers)
    all_episode_rewards = [r for w in workers for r in w.episode_rewards]
    episodes = sum(w.episodes for w in workers)
    terminal = sum(w.terminal_episodes for w in workers)
    return {
        "total_steps": total_steps,
        "episodes": episodes,
        "terminal_episodes": terminal,
        "terminal_fraction": terminal / episodes if episodes else 0.0,
        "avg_step_reward": sum(w.reward_sum for w in workers) / total_steps
        if total_steps
        else 0.0,
        "avg_policy_loss": sum(w.policy_loss_sum for w in workers) / total_loss_samples
        if total_loss_samples
        else 0.0,
        "avg_value_loss": sum(w.value_loss_sum for w in workers) / total_loss_samples
        if total_loss_samples
        else 0.0,
        "avg_entropy": sum(w.entropy_sum for w in workers) / total_loss_samples
        if total_loss_samples
        else 0.0,
        "min_episode_reward": min(all_episode_rewards) if all_episode_rewards else None,
        "max_episode_reward": max(all_episode_rewards) if all_episode_rewards else None,
    }


@dataclass
class RunReport:
    train_config: dict
    env_summary: dict
    status: str
    global_step_count: int
    updates_applied: int
    updates_skipped: int
    wall_time_seconds: float
    workers: list[WorkerStats]
    aggregate: dict
    value_losses: list[float]
    reward_events: list[dict]
    error: str | None = None

    def to_dict(self) -> dict:
        doc = {
            "train_config": self.train_config,
            "env_summary": self.env_summary,
            "status": self.status,
            "global_step_count": self.global_step_count,
            "updates_applied": self.updates_applied,
            "updates_skipped": self.updates_skipped,
            "wall_time_seconds": self.wall_time_seconds,
            "workers": [asdict(w) for w in self.workers],
            "aggregate": self.aggregate,
            "value_losses": self.value_losses,
            "reward_events": self.reward_events,
        }
        if self.error is not None:
            doc["error"] = self.error
        return doc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def estimate_training_memory_mb(env: GraphEnv, config: TrainConfig) -> float:
    """Rough peak-resident estimate for the rollout buffers and adjacency."""
    n = env.max_nodes
    fd = env.feature_dim
    m = config.model_output_dim
    w = config.num_parallel_envs
    per_cache = 8.0 * n * (fd + 8 * m)
    adjacency = 8.0 * n * n * w
    params = 8.0 * (fd * m + 2 * m * m + m * n + 4 * m)
    return (w * config.n_steps * per_cache + adjacency + 4 * params) / (1024.0 * 1024.0)


def run_training(
    env_factory: EnvFactory,
    config: TrainConfig,
    checkpoint_path: str | None = None,
) -> tuple[AgentParams, OptimizerState, RunReport]:
    """Train one agent; deterministic for a fixed config and factory.

    Seeding: one root SeedSequence spawns a child per worker plus one for
    parameter init, so changing worker count never reshuffles the streams
    of the workers that remain.
    """
    config = config.validate()
    w_count = config.num_parallel_envs
    envs = [env_factory() for _ in range(w_count)]

    first = envs[0]
    for env in envs[1:]:
        if env.feature_dim != first.feature_dim or env.max_nodes != first.max_nodes:
            raise ConfigError("all worker environments must share one graph shape")

    if config.max_memory_mb is not None:
        estimate = estimate_training_memory_mb(first, config)
        if estimate > config.max_memory_mb:
            raise BudgetError(
                f"estimated working set {estimate:.1f} MiB exceeds "
                f"budget {config.max_memory_mb:.1f} MiB"
            )

    children = np.random.SeedSequence(config.seed).spawn(w_count + 1)
    params_rng = np.random.default_rng(children[0])
    worker_rngs = [np.random.default_rng(child) for child in children[1:]]

    agent_config = AgentConfig(
        feature_dim=first.feature_dim,
        hidden_dim=config.model_output_dim,
        output_dim=first.max_nodes,
        dropout_rate=config.dropout_rate,
    )
    params = init_params(agent_config, params_rng)
    optimizer = init_optimizer(params)

    observations = [env.reset() for env in envs]
    adjacencies = [build_adjacency(obs) for obs in observations]
    stats = [WorkerStats(worker_id=w) for w in range(w_count)]
    episode_reward = [0.0] * w_count
    episode_length = [0] * w_count

    global_step = 0
    updates_applied = 0
    updates_skipped = 0
    value_losses: list[float] = []
    reward_events: list[dict] = []
    started = time.perf_counter()

    while global_step < config.total_training_steps:
        window: list[list[tuple]] = [[] for _ in range(w_count)]
        for _t in range(config.n_steps):
            if global_step >= config.total_training_steps:
                break
            for w in range(w_count):
                if global_step >= config.total_training_steps:
                    break
                logits, _value, cache = forward(
                    observations[w],
                    params,
                    train_mode=True,
                    rng=worker_rngs[w],
                    a_hat=adjacencies[w],
                )
                action, _log_prob, _entropy = sample_action(logits, worker_rngs[w])
                result = envs[w].step(action)
                done = result.terminated or result.truncated
                window[w].append((cache, action, result.reward, done))
                global_step += 1
                stats[w].steps += 1
                stats[w].reward_sum += result.reward
                episode_reward[w] += result.reward
                episode_length[w] += 1
                if done:
                    stats[w].episodes += 1
                    stats[w].episode_rewards.append(episode_reward[w])
                    stats[w].episode_lengths.append(episode_length[w])
                    if result.terminated:
                        stats[w].terminal_episodes += 1
                    reward_events.append(
                        {
                            "global_step": global_step,
                            "worker": w,
                            "episode_reward": episode_reward[w],
                            "episode_length": episode_length[w],
                            "terminated": result.terminated,
                        }
                    )
                    episode_reward[w] = 0.0
                    episode_length[w] = 0
                    observations[w] = envs[w].reset()
                else:
                    observations[w] = result.observation

        samples: list[TransitionSample] = []
        owners: list[int] = []
        for w in range(w_count):
            if not window[w]:
                continue
            rewards = [step[2] for step in window[w]]
            dones = [step[3] for step in window[w]]
            if dones[-1]:
                bootstrap = 0.0
            else:
                _logits, bootstrap, _cache = forward(
                    observations[w], params, train_mode=False, a_hat=adjacencies[w]
                )
            returns = n_step_returns(rewards, bootstrap, config.gamma, dones)
            for (cache, action, _r, _d), ret in zip(window[w], returns):
                samples.append(TransitionSample(cache=cache, action=action, ret=float(ret)))
                owners.append(w)

        if not samples:
            break
        losses = compute_losses(
            samples, params, config.value_loss_coef, config.entropy_coef
        )
        grads = backward(samples, losses, params)
        diagnostics = adam_step(params, grads, optimizer, config.learning_rate)
        if diagnostics["applied"]:
            updates_applied += 1
            value_losses.append(losses.value_loss)
        else:
            updates_skipped += 1
        for i, w in enumerate(owners):
            stats[w].loss_samples += 1
            stats[w].policy_loss_sum += float(losses.per_sample_policy[i])
            stats[w].value_loss_sum += float(losses.per_sample_value[i])
            stats[w].entropy_sum += float(losses.per_sample_entropy[i])

    elapsed = time.perf_counter() - started
    report = RunReport(
        train_config=_config_dict(config),
        env_summary={
            "num_nodes": first.graph.num_nodes,
            "num_edges": first.graph.num_edges,
            "start_node": first.start_node,
            "terminal_node": first.terminal_node,
            "max_steps": first.max_steps,
            "reward_variant": first.reward_config.variant,
        },
        status="completed",
        global_step_count=global_step,
        updates_applied=updates_applied,
        updates_skipped=updates_skipped,
        wall_time_seconds=elapsed,
        workers=stats,
        aggregate=aggregate_worker_metrics(stats),
        value_losses=value_losses,
        reward_events=reward_events,
    )
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, params, optimizer, step=global_step)
    return params, optimizer, report


def _config_dict(config: TrainConfig) -> dict:
    return {f.name: getattr(config, f.name) for f in fields(config)}


# --- reports on disk -------------------------------------------------------


def _atomic_write(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def emit_run_report(report: RunReport, out_dir: str) -> dict[str, str]:
    """Write report.json plus the two delimited series; returns paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "report": os.path.join(out_dir, "report.json"),
        "value_loss": os.path.join(out_dir, "value_loss.csv"),
        "episodes": os.path.join(out_dir, "episodes.csv"),
    }
    _atomic_write(paths["report"], report.to_json())

    lines = ["update,value_loss"]
    lines += [f"{i},{v:.10g}" for i, v in enumerate(report.value_losses)]
    _atomic_write(paths["value_loss"], "\n".join(lines) + "\n")

    lines = ["global_step,worker,episode_reward,episode_length,terminated"]
    for event in report.reward_events:
        lines.append(
            f"{event['global_step']},{event['worker']},"
            f"{event['episode_reward']:.10g},{event['episode_length']},"
            f"{int(event['terminated'])}"
        )
    _atomic_write(paths["episodes"], "\n".join(lines) + "\n")
    return paths


# --- sweeps ----------------------------------------------------------------

SWEEPABLE_TRAIN_KEYS = {
    "learning_rate",
    "value_loss_coef",
    "entropy_coef",
    "total_training_steps",
    "num_parallel_envs",
    "n_steps",
    "gamma",
    "model_output_dim",
    "dropout_rate",
}
SWEEPABLE_ENV_KEYS = {"node_frequency_penalty_scale"}


@dataclass(frozen=True)
class SweepGrid:
    """Cartesian grid over training and reward knobs.

    Keys must be training config fields or reward knobs the environment
    factory understands; combinations enumerate in sorted-key order so run
    indices are stable.
    """

    values: Mapping[str, Sequence]

    def validate(self) -> "SweepGrid":
        unknown = set(self.values) - SWEEPABLE_TRAIN_KEYS - SWEEPABLE_ENV_KEYS
        if unknown:
            raise ConfigError(f"unsweepable keys: {sorted(unknown)}")
        for key, options in self.values.items():
            if not options:
                raise ConfigError(f"sweep key {key!r} has no values")
        return self

    def combos(self) -> list[dict]:
        keys = sorted(self.values)
        return [
            dict(zip(keys, combo))
            for combo in itertools.product(*(self.values[k] for k in keys))
        ]


SWEEP_CSV_FIELDS = (
    "run_index",
    "seed",
    "status",
    "overrides",
    "global_steps",
    "updates_applied",
    "wall_time_seconds",
    "avg_value_loss",
    "avg_policy_loss",
    "avg_entropy",
    "avg_step_reward",
    "episodes",
    "terminal_fraction",
    "min_episode_reward",
    "max_episode_reward",
    "error",
)


def run_sweep(
    env_factory: Callable[[dict], GraphEnv],
    base_config: TrainConfig,
    grid: SweepGrid,
    out_dir: str,
    base_seed: int = 0,
) -> list[dict]:
    """Run every grid combination; one failure never stops the sweep.

    Run i uses seed base_seed + i and writes run_{i:04d}/ under out_dir.
    The summary CSV is rewritten atomically after every run, and runs whose
    report.json already records a completed status are skipped on resume.
    """
    grid = grid.validate()
    os.makedirs(out_dir, exist_ok=True)
    rows: list[dict] = []
    for index, overrides in enumerate(grid.combos()):
        run_dir = os.path.join(out_dir, f"run_{index:04d}")
        report_path = os.path.join(run_dir, "report.json")
        row = {
            "run_index": index,
            "seed": base_seed + index,
            "overrides": json.dumps(overrides, sort_keys=True),
            "error": "",
        }
        previous = _load_completed_report(report_path)
        if previous is not None:
            rows.append(_sweep_row(row, previous))
            _write_sweep_csv(rows, out_dir)
            continue

        train_overrides = {
            k: v for k, v in overrides.items() if k in SWEEPABLE_TRAIN_KEYS
        }
        env_overrides = {k: v for k, v in overrides.items() if k in SWEEPABLE_ENV_KEYS}
        config = replace(base_config, seed=base_seed + index, **train_overrides)
        try:
            _params, _optimizer, report = run_training(
                lambda: env_factory(env_overrides),
                config,
                checkpoint_path=None,
            )
            os.makedirs(run_dir, exist_ok=True)
            emit_run_report(report, run_dir)
            save_checkpoint(
                os.path.join(run_dir, "checkpoint.json"),
                _params,
                _optimizer,
                step=report.global_step_count,
            )
            rows.append(_sweep_row(row, report.to_dict()))
        except Exception:
            row.update(status="failed", error=traceback.format_exc(limit=3).strip())
            rows.append(_sweep_row(row, None))
        _write_sweep_csv(rows, out_dir)
    return rows


def _load_completed_report(path: str) -> dict | None:
    if not os.path.exists(path):
        return None
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError):
        return None
    if isinstance(doc, dict) and doc.get("status") == "completed":
        return doc
    return None


def _sweep_row(base: dict, report_doc: dict | None) -> dict:
    row = dict(base)
    if report_doc is None:
        row.setdefault("status", "failed")
        for name in SWEEP_CSV_FIELDS:
            row.setdefault(name, "")
        return row
    agg = report_doc.get("aggregate", {})
    row.update(
        status=report_doc.get("status", ""),
        global_steps=report_doc.get("global_step_count", ""),
        updates_applied=report_doc.get("updates_applied", ""),
        wall_time_seconds=round(report_doc.get("wall_time_seconds", 0.0), 3),
        avg_value_loss=agg.get("avg_value_loss", ""),
        avg_policy_loss=agg.get("avg_policy_loss", ""),
        avg_entropy=agg.get("avg_entropy", ""),
        avg_step_reward=agg.get("avg_step_reward", ""),
        episodes=agg.get("episodes", ""),
        terminal_fraction=agg.get("terminal_fraction", ""),
        min_episode_reward=agg.get("min_episode_reward", ""),
        max_episode_reward=agg.get("max_episode_reward", ""),
    )
    for name in SWEEP_CSV_FIELDS:
        row.setdefault(name, "")
    return row


def _write_sweep_csv(rows: list[dict], out_dir: str) -> str:
    import csv
    import io

    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=SWEEP_CSV_FIELDS, extrasaction="ignore")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    path = os.path.join(out_dir, "sweep_results.csv")
    _atomic_write(path, buffer.getvalue())
    return path
