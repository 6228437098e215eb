"""Command line interface.

Subcommands cover the full pipeline: ``ingest`` normalizes raw logs,
``build-graph`` aggregates them into the process graph, ``analyze`` computes
structural metrics (figures included), ``train`` fits the actor-critic
walker, ``sweep`` grids over hyperparameters, and ``report`` renders figures
for a finished run.

Exit codes: 0 success, 1 usage or configuration problem, 2 unreadable or
malformed data, 3 refused resource budget.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

from .env import EnvConfig, GraphEnv, RewardConfig
from .errors import (
    BudgetError,
    ConfigError,
    EventGraphError,
    GraphParseError,
    IngestError,
    SizingError,
    UsageError,
)
from .graph import KEYING_LABEL, KEYING_LABEL_PID, build_graph, export_graph, import_graph, prune_isolated
from .harness import (
    SweepGrid,
    TrainConfig,
    emit_run_report,
    run_sweep,
    run_training,
)
from .ingest import extract_relations, parse_sysmon_records, serialize_events, write_reject_report
from .metrics import (
    metrics_report,
    write_degree_connectivity_csv,
    write_node_metrics_csv,
)


class _CliUsage(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad flags; this project reserves 2 for
    # data problems, so surface parse errors as the usage exit instead.
    def error(self, message):
        raise _CliUsage(message)


def _read_text(path: str) -> str:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise IngestError(f"cannot read {path}: {exc}") from exc
    except UnicodeDecodeError as exc:
        raise IngestError(f"{path} is not valid UTF-8: {exc}") from exc


def _write_text(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _parse_events(path: str, fmt: str):
    if path == "-":
        return parse_sysmon_records(sys.stdin, fmt)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse_sysmon_records(fh, fmt)
    except OSError as exc:
        raise IngestError(f"cannot read {path}: {exc}") from exc


def _load_graph_arg(args) -> "EventGraph":
    if getattr(args, "graph", None):
        return import_graph(_read_text(args.graph))
    events, rejects = _parse_events(args.events, args.format)
    if rejects:
        print(f"note: {len(rejects)} records rejected during ingest", file=sys.stderr)
    relations, summary = extract_relations(events)
    if summary.total_skipped:
        print(
            f"note: {summary.total_skipped} events lacked relation endpoints",
            file=sys.stderr,
        )
    graph = build_graph(relations, keying=args.keying)
    if getattr(args, "prune_isolated", False):
        graph = prune_isolated(graph)
    return graph


# --- subcommands -----------------------------------------------------------


def cmd_ingest(args) -> int:
    events, rejects = _parse_events(args.input, args.format)
    lines = "\n".join(serialize_events(events))
    if args.output:
        _write_text(args.output, lines + ("\n" if lines else ""))
    else:
        if lines:
            print(lines)
    if args.rejects:
        with open(args.rejects, "w", encoding="utf-8", newline="") as fh:
            write_reject_report(rejects, fh)
    print(f"parsed {len(events)} events, rejected {len(rejects)} records", file=sys.stderr)
    return 0


def cmd_build_graph(args) -> int:
    events, rejects = _parse_events(args.events, args.format)
    relations, summary = extract_relations(events)
    graph = build_graph(relations, keying=args.keying)
    if args.prune_isolated:
        graph = prune_isolated(graph)
    text = export_graph(graph, "json")
    if args.output:
        _write_text(args.output, text + "\n")
    else:
        print(text)
    if args.dot:
        _write_text(args.dot, export_graph(graph, "dot") + "\n")
    print(
        f"graph: {graph.num_nodes} nodes, {graph.num_edges} edges "
        f"({len(rejects)} rejected records, {summary.total_skipped} skipped events)",
        file=sys.stderr,
    )
    return 0


def cmd_analyze(args) -> int:
    from . import plots

    graph = _load_graph_arg(args)
    report = metrics_report(graph, weighted_connectivity=not args.unweighted_connectivity)
    os.makedirs(args.out_dir, exist_ok=True)

    doc = json.loads(report.to_json())
    if args.expect_nodes is not None or args.expect_edges is not None:
        expectations = {
            "expected_nodes": args.expect_nodes,
            "expected_edges": args.expect_edges,
            "actual_nodes": report.num_nodes,
            "actual_edges": report.num_edges,
            "matched": (args.expect_nodes in (None, report.num_nodes))
            and (args.expect_edges in (None, report.num_edges)),
        }
        doc["expectations"] = expectations
        if not expectations["matched"]:
            print(
                "warning: graph size does not match expectations: "
                f"nodes {report.num_nodes} vs {args.expect_nodes}, "
                f"edges {report.num_edges} vs {args.expect_edges}",
                file=sys.stderr,
            )
    _write_text(os.path.join(args.out_dir, "metrics.json"), json.dumps(doc, indent=2, sort_keys=True) + "\n")

    with open(os.path.join(args.out_dir, "node_metrics.csv"), "w", encoding="utf-8", newline="") as fh:
        write_node_metrics_csv(graph, report, fh)
    with open(os.path.join(args.out_dir, "degree_connectivity.csv"), "w", encoding="utf-8", newline="") as fh:
        write_degree_connectivity_csv(report, fh)
    plots.plot_degree_connectivity(report, os.path.join(args.out_dir, "degree_connectivity.png"))
    plots.plot_top_centrality(report, os.path.join(args.out_dir, "top_centrality.png"))

    print(
        f"nodes={report.num_nodes} edges={report.num_edges} "
        f"density={report.density:.6g} mean_clustering={report.mean_clustering:.6g}"
    )
    print(f"longest path ({report.longest_path_edges} edges): " + " -> ".join(report.longest_path))
    return 0


def _load_env_config(args) -> EnvConfig:
    doc = json.loads(_read_text(args.env_config))
    if not isinstance(doc, dict):
        raise ConfigError("env config must be a json object")
    reward_doc = dict(doc.get("reward", {}))
    # command line supplies defaults; the config file wins where both speak
    if args.reward_variant is not None:
        reward_doc.setdefault("variant", args.reward_variant)
    if args.node_frequency_penalty_scale is not None:
        reward_doc.setdefault(
            "node_frequency_penalty_scale", args.node_frequency_penalty_scale
        )
    doc["reward"] = reward_doc
    return EnvConfig.from_json(json.dumps(doc))


_TRAIN_FLAG_FIELDS = (
    "total_training_steps",
    "num_parallel_envs",
    "n_steps",
    "gamma",
    "learning_rate",
    "value_loss_coef",
    "entropy_coef",
    "model_output_dim",
    "dropout_rate",
    "seed",
    "max_memory_mb",
)


def _train_config(args) -> TrainConfig:
    merged = {}
    for name in _TRAIN_FLAG_FIELDS:
        value = getattr(args, name)
        if value is not None:
            merged[name] = value
    if args.config:
        doc = json.loads(_read_text(args.config))
        if not isinstance(doc, dict):
            raise ConfigError("training config must be a json object")
        merged.update(doc)
    return TrainConfig.from_dict(merged)


def cmd_train(args) -> int:
    graph = import_graph(_read_text(args.graph))
    env_config = _load_env_config(args)
    config = _train_config(args)
    os.makedirs(args.out_dir, exist_ok=True)
    _params, _optimizer, report = run_training(
        lambda: GraphEnv.from_config(graph, env_config),
        config,
        checkpoint_path=os.path.join(args.out_dir, "checkpoint.json"),
    )
    paths = emit_run_report(report, args.out_dir)
    agg = report.aggregate
    print(
        f"status={report.status} steps={report.global_step_count} "
        f"updates={report.updates_applied} episodes={agg['episodes']} "
        f"terminal_fraction={agg['terminal_fraction']:.3f}"
    )
    print(f"report written to {paths['report']}")
    return 0


def cmd_sweep(args) -> int:
    graph = import_graph(_read_text(args.graph))
    env_config = _load_env_config(args)
    config = _train_config(args)
    grid_doc = json.loads(_read_text(args.grid))
    if not isinstance(grid_doc, dict):
        raise ConfigError("sweep grid must be a json object of lists")
    grid = SweepGrid(grid_doc)

    def factory(overrides: dict) -> GraphEnv:
        cfg = env_config
        if overrides:
            cfg = replace(cfg, reward=replace(cfg.reward, **overrides))
        return GraphEnv.from_config(graph, cfg)

    rows = run_sweep(factory, config, grid, args.out_dir, base_seed=args.base_seed)
    failed = sum(1 for r in rows if r["status"] == "failed")
    print(f"sweep finished: {len(rows)} runs, {failed} failed")
    print(f"summary at {os.path.join(args.out_dir, 'sweep_results.csv')}")
    return 0


def cmd_report(args) -> int:
    from . import plots

    report_path = os.path.join(args.run_dir, "report.json")
    try:
        doc = json.loads(_read_text(report_path))
    except json.JSONDecodeError as exc:
        raise GraphParseError(f"{report_path} is not valid json: {exc}") from exc
    if not isinstance(doc, dict):
        raise GraphParseError(f"{report_path}: expected an object")
    out_dir = args.out_dir or args.run_dir
    os.makedirs(out_dir, exist_ok=True)

    written = [
        plots.plot_value_loss(doc.get("value_losses", []), os.path.join(out_dir, "value_loss.png")),
        plots.plot_episode_rewards(
            doc.get("reward_events", []), os.path.join(out_dir, "episode_rewards.png")
        ),
    ]
    summary_path = os.path.join(out_dir, "summary.csv")
    lines = ["metric,value"]
    lines.append(f"status,{doc.get('status', '')}")
    lines.append(f"global_step_count,{doc.get('global_step_count', '')}")
    lines.append(f"updates_applied,{doc.get('updates_applied', '')}")
    for key, value in sorted(doc.get("aggregate", {}).items()):
        lines.append(f"{key},{value}")
    _write_text(summary_path, "\n".join(lines) + "\n")
    written.append(summary_path)
    for path in written:
        print(f"wrote {path}")
    return 0


# --- parser wiring ---------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="eventgraph", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", help="normalize raw logs to canonical json-lines")
    p.add_argument("--input", required=True, help="log file, or - for stdin")
    p.add_argument("--format", default="jsonl", choices=["jsonl", "csv"])
    p.add_argument("--output", help="canonical events file (default stdout)")
    p.add_argument("--rejects", help="write rejected records as CSV here")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("build-graph", help="aggregate events into the process graph")
    p.add_argument("--events", required=True, help="events file, or - for stdin")
    p.add_argument("--format", default="jsonl", choices=["jsonl", "csv"])
    p.add_argument("--keying", default=KEYING_LABEL, choices=[KEYING_LABEL, KEYING_LABEL_PID])
    p.add_argument("--prune-isolated", action="store_true")
    p.add_argument("--output", help="graph json file (default stdout)")
    p.add_argument("--dot", help="also write a DOT rendering here")
    p.set_defaults(func=cmd_build_graph)

    p = sub.add_parser("analyze", help="structural metrics, tables, and figures")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--graph", help="graph json produced by build-graph")
    src.add_argument("--events", help="events file, or - for stdin")
    p.add_argument("--format", default="jsonl", choices=["jsonl", "csv"])
    p.add_argument("--keying", default=KEYING_LABEL, choices=[KEYING_LABEL, KEYING_LABEL_PID])
    p.add_argument("--prune-isolated", action="store_true")
    p.add_argument("--unweighted-connectivity", action="store_true")
    p.add_argument("--expect-nodes", type=int)
    p.add_argument("--expect-edges", type=int)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_analyze)

    for name in ("train", "sweep"):
        p = sub.add_parser(name, help=f"{name} the actor-critic walker")
        p.add_argument("--graph", required=True, help="graph json produced by build-graph")
        p.add_argument("--env-config", required=True, help="episode wiring json")
        p.add_argument("--config", help="training config json; overrides flags")
        p.add_argument("--out-dir", required=True)
        p.add_argument("--total-training-steps", type=int)
        p.add_argument("--num-parallel-envs", type=int)
        p.add_argument("--n-steps", type=int)
        p.add_argument("--gamma", type=float)
        p.add_argument("--learning-rate", type=float)
        p.add_argument("--value-loss-coef", type=float)
        p.add_argument("--entropy-coef", type=float)
        p.add_argument("--model-output-dim", type=int, help="GCN embedding width m")
        p.add_argument("--dropout-rate", type=float)
        p.add_argument("--seed", type=int)
        p.add_argument("--max-memory-mb", type=float)
        p.add_argument("--reward-variant", choices=["baseline", "refined"])
        p.add_argument("--node-frequency-penalty-scale", type=float)
        if name == "train":
            p.set_defaults(func=cmd_train)
        else:
            p.add_argument("--grid", required=True, help="json object of lists to sweep")
            p.add_argument("--base-seed", type=int, default=0)
            p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="render figures and summary for a finished run")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--out-dir", help="defaults to the run directory")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _CliUsage as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (IngestError, GraphParseError, SizingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except BudgetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except json.JSONDecodeError as exc:
        print(f"error: invalid json input: {exc}", file=sys.stderr)
        return 2
    except EventGraphError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
