import csv
import dataclasses

import numpy as np
import pytest

from uavmpt.config import (ConfigError, SimConfig, TrainingParams, format_config,
                           load_config, parse_config_text)
from uavmpt.harness import (SweepSpec, episodes_to_stabilization, evaluate_policy,
                            load_summary_costs, run_sweep, run_training)

from conftest import small_config


def short_train(**overrides) -> TrainingParams:
    base = dict(episodes=2, steps=10, warmup=32, batch_size=8,
                hidden_sizes=(8, 8, 8), replay_capacity=100, eval_episodes=2)
    base.update(overrides)
    return TrainingParams(**base)


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestRunTraining:
    def test_row_counts(self, tmp_path):
        result = run_training(small_config(), short_train(), "rsa", tmp_path)
        assert len(read_rows(result.frames_path)) == 20
        assert len(read_rows(result.summary_path)) == 2

    def test_unknown_policy_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="policy"):
            run_training(small_config(), short_train(), "greedy", tmp_path)

    def test_byte_identical_reruns(self, tmp_path):
        for policy in ("rsa", "lqsa"):
            a = run_training(small_config(), short_train(), policy, tmp_path / "a")
            b = run_training(small_config(), short_train(), policy, tmp_path / "b")
            assert a.frames_path.read_bytes() == b.frames_path.read_bytes()
            assert a.summary_path.read_bytes() == b.summary_path.read_bytes()

    def test_drlsa_byte_identical_and_learning_rows(self, tmp_path):
        train = short_train(episodes=2, steps=40, warmup=16)
        a = run_training(small_config(), train, "drlsa", tmp_path / "a")
        b = run_training(small_config(), train, "drlsa", tmp_path / "b")
        assert a.frames_path.read_bytes() == b.frames_path.read_bytes()
        assert a.checkpoint_path.read_bytes() == b.checkpoint_path.read_bytes()
        rows = read_rows(a.frames_path)
        assert len(rows) == 80
        assert all(row["epsilon"] != "" for row in rows)
        assert any(row["loss"] != "" for row in rows[20:])

    def test_changing_seed_changes_results(self, tmp_path):
        cfg = small_config()
        a = run_training(cfg, short_train(), "rsa", tmp_path / "a")
        b = run_training(dataclasses.replace(cfg, seed=cfg.seed + 1),
                         short_train(), "rsa", tmp_path / "b")
        assert a.frames_path.read_bytes() != b.frames_path.read_bytes()

    def test_summary_matches_frame_recomputation(self, tmp_path):
        result = run_training(small_config(), short_train(episodes=3), "rsa",
                              tmp_path)
        frames = read_rows(result.frames_path)
        summaries = read_rows(result.summary_path)
        for summary in summaries:
            ep = summary["episode"]
            ep_rows = [r for r in frames if r["episode"] == ep]
            assert float(summary["total_cost"]) == pytest.approx(
                sum(float(r["cost"]) for r in ep_rows), abs=1e-9)
            assert float(summary["mean_velocity"]) == pytest.approx(
                np.mean([float(r["velocity"]) for r in ep_rows]), abs=1e-9)

    def test_cumulative_cost_non_decreasing_within_episode(self, tmp_path):
        result = run_training(small_config(arrival_prob=0.8), short_train(),
                              "lqsa", tmp_path)
        frames = read_rows(result.frames_path)
        for ep in ("0", "1"):
            cum = [float(r["cumulative_cost"]) for r in frames if r["episode"] == ep]
            assert all(b >= a for a, b in zip(cum, cum[1:]))

    def test_terminal_mid_episode_resets_and_keeps_row_count(self, tmp_path):
        cfg = small_config(num_laps=1, num_waypoints=3)   # terminal every 3 frames
        result = run_training(cfg, short_train(episodes=2, steps=10), "rsa",
                              tmp_path)
        assert len(read_rows(result.frames_path)) == 20


class TestEvaluatePolicy:
    def test_eval_metrics_and_frames(self, tmp_path):
        cfg = small_config(arrival_prob=0.6)
        result = evaluate_policy(cfg, short_train(), "rsa", out_dir=tmp_path)
        assert result.episode_costs.shape == (2,)
        assert 0.0 <= result.loss_rate <= 1.0
        rows = read_rows(result.frames_path)
        assert len(rows) == 20
        assert all(r["epsilon"] == repr(0.0) for r in rows)

    def test_eval_is_deterministic(self, tmp_path):
        cfg = small_config()
        a = evaluate_policy(cfg, short_train(), "lqsa", out_dir=tmp_path / "a")
        b = evaluate_policy(cfg, short_train(), "lqsa", out_dir=tmp_path / "b")
        assert np.array_equal(a.episode_costs, b.episode_costs)
        assert a.frames_path.read_bytes() == b.frames_path.read_bytes()

    def test_drlsa_needs_parameters(self):
        with pytest.raises(ConfigError, match="checkpoint"):
            evaluate_policy(small_config(), short_train(), "drlsa")


class TestConfigFormat:
    def test_empty_text_resolves_defaults(self):
        sim, train = parse_config_text("")
        assert sim == SimConfig()
        assert train == TrainingParams()
        assert train.discount == 0.99 and train.learning_rate == 0.0001
        assert train.replay_capacity == 5000 and train.batch_size == 32
        assert sim.num_waypoints == 100 and sim.battery_levels == 50
        assert train.episodes == 500 and train.steps == 1000

    def test_round_trip(self):
        sim = small_config(arrival_rate=0.02, gain_thresholds_db=(-80.0, -70.0))
        train = TrainingParams(hidden_sizes=(32, 16, 8), episodes=7)
        text = format_config(sim, train)
        sim2, train2 = parse_config_text(text)
        assert sim2 == sim and train2 == train

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown key 'num_device'"):
            parse_config_text("num_device = 5")

    def test_invariant_violation_names_field(self):
        with pytest.raises(ConfigError, match="v_min"):
            parse_config_text("v_min = 30\nv_max = 10")

    def test_duplicate_key_rejected(self):
        with pytest.raises(ConfigError, match="duplicate"):
            parse_config_text("seed = 1\nseed = 2")

    def test_comments_and_blanks_ignored(self):
        sim, _ = parse_config_text("# header\n\nnum_devices = 4  # trailing\n")
        assert sim.num_devices == 4

    def test_load_config_file(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text("num_devices = 9\ntrain.discount = 0.5\nfading.m = 2\n")
        sim, train = load_config(path)
        assert sim.num_devices == 9
        assert train.discount == 0.5
        assert sim.fading.m == 2


class TestSweep:
    def test_cell_and_aggregate_shapes(self, tmp_path):
        spec = SweepSpec(variable="num_devices", values=(2, 3), episodes=1,
                         steps=8, repetitions=2, eval_episodes=1,
                         policies=("rsa", "lqsa"))
        summary = run_sweep(spec, small_config(), short_train(), tmp_path)
        cells = read_rows(tmp_path / "cells.csv")
        assert len(cells) == 8    # values x policies x seeds
        aggregate = read_rows(summary)
        eval_rows = [r for r in aggregate if r["phase"] == "eval"]
        assert len(eval_rows) == 4   # values x policies
        for row in eval_rows:
            assert 0.0 <= float(row["mean_loss_rate"]) <= 1.0
            assert row["repetitions"] == "2"

    def test_aggregates_match_cells(self, tmp_path):
        spec = SweepSpec(variable="queue_capacity", values=(2,), episodes=1,
                         steps=8, repetitions=3, eval_episodes=1,
                         policies=("rsa",))
        summary = run_sweep(spec, small_config(arrival_prob=0.9), short_train(),
                            tmp_path)
        cells = read_rows(tmp_path / "cells.csv")
        costs = [float(r["eval_total_cost"]) for r in cells]
        agg = [r for r in read_rows(summary) if r["phase"] == "eval"][0]
        assert float(agg["mean_total_cost"]) == pytest.approx(np.mean(costs), abs=1e-9)
        assert float(agg["std_total_cost"]) == pytest.approx(
            np.std(costs, ddof=1), abs=1e-9)

    def test_discount_sweep_routes_to_training(self, tmp_path):
        spec = SweepSpec(variable="discount", values=(0.5,), episodes=1, steps=8,
                         repetitions=1, eval_episodes=1, policies=("rsa",))
        run_sweep(spec, small_config(), short_train(), tmp_path)
        cfg_files = list(tmp_path.glob("cells/*/config_*.cfg"))
        assert cfg_files
        text = cfg_files[0].read_text()
        assert "train.discount = 0.5" in text

    def test_bad_variable_rejected(self):
        with pytest.raises(ConfigError, match="variable"):
            SweepSpec(variable="altitude", values=(1,), episodes=1, steps=1)


class TestStabilization:
    def test_constant_series_stabilizes_immediately(self):
        costs = np.full(100, 40.0)
        assert episodes_to_stabilization(costs, window=20) == 19

    def test_late_drop_stabilizes_late(self):
        costs = np.concatenate([np.full(80, 100.0), np.full(40, 10.0)])
        k = episodes_to_stabilization(costs, window=20)
        assert k >= 99   # window must fully clear the regime change

    def test_decaying_curve_orders_by_decay_speed(self):
        episodes = np.arange(200.0)
        fast = 10 + 90 * np.exp(-episodes / 10)
        slow = 10 + 90 * np.exp(-episodes / 60)
        assert (episodes_to_stabilization(fast, window=20)
                < episodes_to_stabilization(slow, window=20))

    def test_summary_loader(self, tmp_path):
        result = run_training(small_config(), short_train(episodes=4), "rsa",
                              tmp_path)
        costs = load_summary_costs(result.summary_path)
        assert costs.shape == (4,)
        assert np.array_equal(costs, result.episode_costs)
