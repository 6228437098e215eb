import csv
import json
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eventgraph.agent import load_checkpoint
from eventgraph.env import GraphEnv, RewardConfig
from eventgraph.errors import BudgetError, ConfigError
from eventgraph.harness import (
    SWEEP_CSV_FIELDS,
    RunReport,
    SweepGrid,
    TrainConfig,
    WorkerStats,
    aggregate_worker_metrics,
    emit_run_report,
    estimate_training_memory_mb,
    run_sweep,
    run_training,
)

from helpers import (
    chain_graph,
    random_worker_logs,
    reference_aggregate,
    stats_from_logs,
)


def make_factory(n=4, **env_kwargs):
    g = chain_graph(n)

    def factory(overrides=None):
        reward = RewardConfig(**(overrides or {}))
        return GraphEnv(g, 0, n - 1, reward=reward, **env_kwargs)

    return factory


def tiny_config(**overrides):
    base = dict(
        total_training_steps=30,
        num_parallel_envs=2,
        n_steps=3,
        seed=0,
    )
    base.update(overrides)
    return TrainConfig(**base)


class TestTrainConfig:
    def test_defaults_validate(self):
        TrainConfig().validate()

    @pytest.mark.parametrize(
        "field,value",
        [
            ("total_training_steps", 0),
            ("num_parallel_envs", 0),
            ("n_steps", 0),
            ("gamma", 0.0),
            ("gamma", 1.5),
            ("learning_rate", 0.0),
            ("learning_rate", float("inf")),
            ("value_loss_coef", -0.1),
            ("entropy_coef", -0.1),
            ("model_output_dim", 0),
            ("dropout_rate", 1.0),
            ("max_memory_mb", 0.0),
        ],
    )
    def test_rejects_bad_values(self, field, value):
        with pytest.raises(ConfigError):
            TrainConfig(**{field: value}).validate()

    def test_from_dict_round_trip(self):
        doc = {"total_training_steps": 50, "gamma": 0.9, "seed": 3}
        cfg = TrainConfig.from_dict(doc)
        assert cfg.total_training_steps == 50
        assert cfg.gamma == 0.9
        assert cfg.n_steps == 3

    def test_from_dict_unknown_key(self):
        with pytest.raises(ConfigError, match="unknown training config keys"):
            TrainConfig.from_dict({"learning_rte": 0.01})


class TestAggregation:
    def test_matches_exact_reference(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            logs = random_worker_logs(rng, int(rng.integers(1, 6)))
            mine = aggregate_worker_metrics(stats_from_logs(logs))
            assert mine == reference_aggregate(logs)

    def test_empty_workers(self):
        out = aggregate_worker_metrics([WorkerStats(worker_id=0)])
        assert out["total_steps"] == 0
        assert out["terminal_fraction"] == 0.0
        assert out["avg_step_reward"] == 0.0
        assert out["min_episode_reward"] is None
        assert out["max_episode_reward"] is None

    def test_no_workers(self):
        out = aggregate_worker_metrics([])
        assert out["episodes"] == 0 and out["avg_value_loss"] == 0.0

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 5))
    def test_pooling_property(self, seed, n_workers):
        logs = random_worker_logs(np.random.default_rng(seed), n_workers)
        assert aggregate_worker_metrics(stats_from_logs(logs)) == reference_aggregate(
            logs
        )


class TestRunTraining:
    def test_exact_step_accounting(self):
        _p, _o, report = run_training(
            make_factory(), tiny_config(total_training_steps=10, num_parallel_envs=3, n_steps=4)
        )
        assert report.global_step_count == 10
        assert sum(w.steps for w in report.workers) == 10
        assert report.status == "completed"

    def test_worker_count_matches_config(self):
        _p, _o, report = run_training(make_factory(), tiny_config(num_parallel_envs=3))
        assert [w.worker_id for w in report.workers] == [0, 1, 2]

    @pytest.mark.parametrize("workers", [1, 4])
    def test_fixed_seed_reports_identical(self, workers):
        cfg = tiny_config(total_training_steps=60, num_parallel_envs=workers, seed=5)
        docs = []
        for _ in range(2):
            _p, _o, report = run_training(make_factory(), cfg)
            doc = json.loads(report.to_json())
            doc.pop("wall_time_seconds")
            docs.append(doc)
        assert docs[0] == docs[1]

    def test_different_seeds_diverge(self):
        reports = [
            run_training(make_factory(), tiny_config(total_training_steps=60, seed=s))[2]
            for s in (0, 1)
        ]
        assert reports[0].aggregate != reports[1].aggregate

    def test_params_change_and_value_losses_tracked(self):
        params, optimizer, report = run_training(make_factory(), tiny_config())
        assert optimizer.t == report.updates_applied
        assert len(report.value_losses) == report.updates_applied
        assert report.updates_applied > 0
        assert all(v >= 0.0 for v in report.value_losses)

    def test_episode_bookkeeping_consistent(self):
        _p, _o, report = run_training(
            make_factory(), tiny_config(total_training_steps=200)
        )
        for w in report.workers:
            assert len(w.episode_rewards) == w.episodes
            assert len(w.episode_lengths) == w.episodes
            assert w.terminal_episodes <= w.episodes
        assert len(report.reward_events) == sum(w.episodes for w in report.workers)
        agg = report.aggregate
        assert agg["episodes"] == sum(w.episodes for w in report.workers)

    def test_env_summary_fields(self):
        _p, _o, report = run_training(make_factory(), tiny_config())
        assert report.env_summary == {
            "num_nodes": 4,
            "num_edges": 3,
            "start_node": 0,
            "terminal_node": 3,
            "max_steps": 64,
            "reward_variant": "baseline",
        }

    def test_checkpoint_written_and_loadable(self, tmp_path):
        path = str(tmp_path / "ckpt.json")
        params, _o, report = run_training(
            make_factory(), tiny_config(), checkpoint_path=path
        )
        loaded, opt, step = load_checkpoint(path)
        assert step == report.global_step_count
        assert opt is not None
        for name, arr in params.arrays().items():
            assert np.array_equal(arr, loaded.arrays()[name])

    def test_shape_mismatch_rejected(self):
        graphs = [chain_graph(4), chain_graph(5)]
        calls = {"n": 0}

        def factory():
            g = graphs[calls["n"] % 2]
            calls["n"] += 1
            return GraphEnv(g, 0, g.num_nodes - 1)

        with pytest.raises(ConfigError, match="share one graph shape"):
            run_training(factory, tiny_config(num_parallel_envs=2))

    def test_memory_budget_preflight(self):
        with pytest.raises(BudgetError, match="exceeds"):
            run_training(make_factory(), tiny_config(max_memory_mb=0.0001))

    def test_memory_estimate_monotone(self):
        env = make_factory()()
        base = tiny_config()
        more_workers = tiny_config(num_parallel_envs=8)
        wider = tiny_config(model_output_dim=64)
        assert estimate_training_memory_mb(env, more_workers) > estimate_training_memory_mb(env, base)
        assert estimate_training_memory_mb(env, wider) > estimate_training_memory_mb(env, base)


class TestRunReportFiles:
    def test_emit_files_match_report(self, tmp_path):
        _p, _o, report = run_training(
            make_factory(), tiny_config(total_training_steps=120)
        )
        paths = emit_run_report(report, str(tmp_path / "out"))
        with open(paths["report"]) as fh:
            doc = json.load(fh)
        assert doc == report.to_dict()

        with open(paths["value_loss"]) as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == len(report.value_losses)
        for i, row in enumerate(rows):
            assert int(row["update"]) == i
            assert float(row["value_loss"]) == pytest.approx(
                report.value_losses[i], rel=1e-9
            )

        with open(paths["episodes"]) as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == len(report.reward_events)
        if rows:
            first = rows[0]
            event = report.reward_events[0]
            assert int(first["global_step"]) == event["global_step"]
            assert int(first["terminated"]) == int(event["terminated"])

    def test_error_field_omitted_when_clean(self):
        _p, _o, report = run_training(make_factory(), tiny_config())
        assert "error" not in report.to_dict()
        failed = RunReport(
            train_config={},
            env_summary={},
            status="failed",
            global_step_count=0,
            updates_applied=0,
            updates_skipped=0,
            wall_time_seconds=0.0,
            workers=[],
            aggregate={},
            value_losses=[],
            reward_events=[],
            error="boom",
        )
        assert failed.to_dict()["error"] == "boom"


class TestSweep:
    def test_grid_validation(self):
        with pytest.raises(ConfigError, match="unsweepable"):
            SweepGrid({"learning_rte": [0.1]}).validate()
        with pytest.raises(ConfigError, match="no values"):
            SweepGrid({"learning_rate": []}).validate()

    def test_combos_sorted_key_order(self):
        grid = SweepGrid({"n_steps": [2, 3], "gamma": [0.9, 0.99]})
        combos = grid.combos()
        assert combos == [
            {"gamma": 0.9, "n_steps": 2},
            {"gamma": 0.9, "n_steps": 3},
            {"gamma": 0.99, "n_steps": 2},
            {"gamma": 0.99, "n_steps": 3},
        ]

    def test_full_sweep_writes_runs_and_csv(self, tmp_path):
        out = str(tmp_path / "sweep")
        grid = SweepGrid({"gamma": [0.9, 0.99], "n_steps": [2, 4]})
        rows = run_sweep(
            make_factory(), tiny_config(total_training_steps=12), grid, out, base_seed=7
        )
        assert len(rows) == 4
        for i in range(4):
            run_dir = os.path.join(out, f"run_{i:04d}")
            assert os.path.exists(os.path.join(run_dir, "report.json"))
            assert os.path.exists(os.path.join(run_dir, "checkpoint.json"))
        with open(os.path.join(out, "sweep_results.csv")) as fh:
            reader = csv.DictReader(fh)
            assert tuple(reader.fieldnames) == SWEEP_CSV_FIELDS
            csv_rows = list(reader)
        assert [r["status"] for r in csv_rows] == ["completed"] * 4
        assert [int(r["seed"]) for r in csv_rows] == [7, 8, 9, 10]
        assert json.loads(csv_rows[0]["overrides"]) == {"gamma": 0.9, "n_steps": 2}

    def test_resume_skips_completed_runs(self, tmp_path):
        out = str(tmp_path / "sweep")
        grid = SweepGrid({"gamma": [0.9, 0.99]})
        run_sweep(make_factory(), tiny_config(total_training_steps=12), grid, out)
        marker = os.path.join(out, "run_0000", "report.json")
        before = os.path.getmtime(marker)
        with open(marker) as fh:
            first_doc = json.load(fh)
        rows = run_sweep(make_factory(), tiny_config(total_training_steps=12), grid, out)
        assert os.path.getmtime(marker) == before
        assert len(rows) == 2
        with open(marker) as fh:
            assert json.load(fh) == first_doc

    def test_failure_isolated_to_its_run(self, tmp_path):
        out = str(tmp_path / "sweep")
        base_factory = make_factory()

        def factory(overrides):
            if overrides.get("node_frequency_penalty_scale") == 7.0:
                raise RuntimeError("synthetic factory failure")
            return base_factory(overrides)

        grid = SweepGrid({"node_frequency_penalty_scale": [5.0, 7.0]})
        rows = run_sweep(factory, tiny_config(total_training_steps=12), grid, out)
        assert [r["status"] for r in rows] == ["completed", "failed"]
        assert "synthetic factory failure" in rows[1]["error"]
        assert rows[0]["error"] == ""
        assert os.path.exists(os.path.join(out, "run_0000", "report.json"))
        assert not os.path.exists(os.path.join(out, "run_0001", "report.json"))

    def test_env_override_reaches_reward(self, tmp_path):
        captured = []
        base_factory = make_factory()

        def factory(overrides):
            captured.append(dict(overrides))
            return base_factory(overrides)

        grid = SweepGrid({"node_frequency_penalty_scale": [2.0]})
        run_sweep(
            factory,
            tiny_config(total_training_steps=6, num_parallel_envs=1),
            grid,
            str(tmp_path / "sweep"),
        )
        assert captured == [{"node_frequency_penalty_scale": 2.0}]
