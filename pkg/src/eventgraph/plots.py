"""Figure rendering for analysis and training reports.

All functions draw to files through the Agg backend, so they work headless.
Each returns the path it wrote.
"""

from __future__ import annotations

from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .metrics import MetricsReport

plt.rcParams.update(
    {
        "figure.figsize": (8.0, 5.0),
        "figure.dpi": 110,
        "axes.grid": True,
        "grid.alpha": 0.3,
        "axes.spines.top": False,
        "axes.spines.right": False,
    }
)


def _finish(fig, path: str) -> str:
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_value_loss(value_losses: Sequence[float], path: str) -> str:
    """Value loss per update, log-scaled when the range justifies it."""
    fig, ax = plt.subplots()
    ax.plot(range(len(value_losses)), value_losses, linewidth=1.0)
    positives = [v for v in value_losses if v > 0]
    if positives and max(positives) / min(positives) > 100:
        ax.set_yscale("log")
    ax.set_xlabel("update")
    ax.set_ylabel("value loss")
    ax.set_title("Critic loss per update")
    return _finish(fig, path)


def plot_episode_rewards(reward_events: Sequence[dict], path: str) -> str:
    """Episode return against the global step at which the episode ended."""
    fig, ax = plt.subplots()
    steps = [e["global_step"] for e in reward_events]
    rewards = [e["episode_reward"] for e in reward_events]
    terminated = [e["terminated"] for e in reward_events]
    ax.scatter(
        [s for s, t in zip(steps, terminated) if t],
        [r for r, t in zip(rewards, terminated) if t],
        s=12,
        label="reached terminal",
    )
    ax.scatter(
        [s for s, t in zip(steps, terminated) if not t],
        [r for r, t in zip(rewards, terminated) if not t],
        s=12,
        marker="x",
        label="truncated",
    )
    ax.set_xlabel("global step")
    ax.set_ylabel("episode reward")
    ax.set_title("Episode returns")
    if reward_events:
        ax.legend()
    return _finish(fig, path)


def plot_degree_connectivity(report: MetricsReport, path: str) -> str:
    """Average nearest-neighbor degree by node degree, log-log."""
    fig, ax = plt.subplots()
    degrees = sorted(report.degree_connectivity)
    values = [report.degree_connectivity[k] for k in degrees]
    ax.scatter(degrees, values, s=20)
    if degrees and min(degrees) > 0 and min(values) > 0:
        ax.set_xscale("log")
        ax.set_yscale("log")
    ax.set_xlabel("degree")
    ax.set_ylabel("avg neighbor degree")
    ax.set_title("Degree connectivity")
    return _finish(fig, path)


def plot_top_centrality(report: MetricsReport, path: str, top_n: int = 15) -> str:
    """Horizontal bars for the most central nodes by in-degree centrality."""
    ranked = sorted(report.in_degree_centrality.items(), key=lambda kv: (-kv[1], kv[0]))
    ranked = ranked[:top_n]
    fig, ax = plt.subplots()
    labels = [key for key, _v in reversed(ranked)]
    values = [v for _k, v in reversed(ranked)]
    ax.barh(range(len(ranked)), values)
    ax.set_yticks(range(len(ranked)), labels=labels, fontsize=8)
    ax.set_xlabel("in-degree centrality")
    ax.set_title(f"Top {len(ranked)} nodes by in-degree centrality")
    return _finish(fig, path)
