import dataclasses
import json

import numpy as np
import pytest

from uavmpt.env import (Action, Simulator, encode_state, from_snapshot, reset,
                        snapshot_json, step, to_snapshot)
from uavmpt.exact_mdp import enumerate_exact_mdp

from conftest import small_config


class TestReset:
    def test_initial_devices(self):
        cfg = small_config(num_devices=3)
        state = reset(cfg, np.random.default_rng(0))
        assert len(state.devices) == 3
        assert all(d.queue_len == 0 for d in state.devices)

    def test_same_seed_bitwise_identical(self):
        cfg = small_config()
        a = reset(cfg, np.random.default_rng(5))
        b = reset(cfg, np.random.default_rng(5))
        assert a == b

    def test_battery_starts_at_half(self):
        cfg = small_config(battery_levels=50, battery_capacity=1e-5)
        state = reset(cfg, np.random.default_rng(0))
        assert np.all(state.batteries == 25)

    def test_placement_inside_region(self):
        cfg = small_config(num_devices=50)
        state = reset(cfg, np.random.default_rng(0))
        assert np.all(np.hypot(state.xs, state.ys) <= cfg.region_radius)

    def test_uav_initial_pose(self):
        cfg = small_config()
        state = reset(cfg, np.random.default_rng(0))
        assert state.uav.lap == 1 and state.uav.waypoint == 0
        assert state.uav.velocity == cfg.velocity_grid[cfg.midpoint_velocity_index]


class TestStep:
    def test_overflow_when_unscheduled_queue_full(self):
        cfg = small_config(arrival_prob=1.0)
        state = reset(cfg, np.random.default_rng(1))
        state.queues[1] = cfg.queue_capacity
        _, out = step(state, Action(0, 0), cfg, np.random.default_rng(2))
        assert out.overflow_dropped >= 1
        assert out.cost >= 1

    def test_full_queue_stays_full(self):
        cfg = small_config(arrival_prob=1.0)
        state = reset(cfg, np.random.default_rng(1))
        state.queues[1] = cfg.queue_capacity
        new_state, _ = step(state, Action(0, 0), cfg, np.random.default_rng(2))
        assert new_state.queues[1] == cfg.queue_capacity

    def test_empty_queue_full_battery_harvest_only(self):
        cfg = small_config(arrival_prob=0.0)
        state = reset(cfg, np.random.default_rng(1))
        state.batteries[:] = cfg.battery_levels
        new_state, out = step(state, Action(0, 0), cfg, np.random.default_rng(2))
        assert out.delivered == 0 and out.tx_failed == 0
        assert new_state.batteries[0] == cfg.battery_levels   # clamped at the cap
        assert out.harvested_levels == 0

    def test_closed_system_has_zero_cost(self):
        cfg = small_config(arrival_prob=0.0)
        sim = Simulator(cfg, np.random.default_rng(3))
        sim.reset()
        total = 0
        for t in range(200):
            total += sim.step(Action(t % cfg.num_devices, t % cfg.num_velocities)).cost
        assert total == 0

    def test_terminal_state_rejected(self):
        cfg = small_config(num_laps=1)
        sim = Simulator(cfg, np.random.default_rng(0))
        sim.reset()
        terminal_seen = False
        for t in range(cfg.num_waypoints):
            out = sim.step(Action(0, 0))
            terminal_seen = terminal_seen or out.terminal
        assert terminal_seen
        with pytest.raises(ValueError, match="terminal"):
            sim.step(Action(0, 0))

    def test_deterministic_given_stream(self):
        cfg = small_config()
        state = reset(cfg, np.random.default_rng(9))
        s1, o1 = step(state, Action(1, 2), cfg, np.random.default_rng(11))
        s2, o2 = step(state, Action(1, 2), cfg, np.random.default_rng(11))
        assert s1 == s2 and o1 == o2

    def test_action_validation(self):
        cfg = small_config()
        state = reset(cfg, np.random.default_rng(0))
        with pytest.raises(ValueError, match="device"):
            step(state, Action(cfg.num_devices, 0), cfg, np.random.default_rng(0))
        with pytest.raises(ValueError, match="velocity"):
            step(state, Action(0, cfg.num_velocities), cfg, np.random.default_rng(0))

    def test_tau_scales_inversely_with_velocity(self):
        cfg = small_config(num_velocities=3, v_min=5.0, v_max=20.0)
        state = reset(cfg, np.random.default_rng(0))
        # grid is [5, 12.5, 20]; compare v=5 against v=20: tau ratio 4 exactly
        _, slow = step(state, Action(0, 0), cfg, np.random.default_rng(1))
        _, fast = step(state, Action(0, 2), cfg, np.random.default_rng(1))
        assert slow.tau == pytest.approx(4.0 * fast.tau, rel=1e-12)
        assert slow.tau == pytest.approx(cfg.segment_length / 5.0, rel=1e-12)

    def test_conservation_and_bounds_fuzz(self):
        cfg = small_config(arrival_prob=0.5)
        sim = Simulator(cfg, np.random.default_rng(17))
        sim.reset()
        rng = np.random.default_rng(99)
        generated = delivered = overflow = failed = 0
        for _ in range(5000):
            action = Action(int(rng.integers(cfg.num_devices)),
                            int(rng.integers(cfg.num_velocities)))
            out = sim.step(action)
            generated += out.arrivals
            delivered += out.delivered
            overflow += out.overflow_dropped
            failed += out.tx_failed
            queued = int(sim.state.queues.sum())
            assert generated == delivered + overflow + failed + queued
            assert np.all(sim.state.queues >= 0)
            assert np.all(sim.state.queues <= cfg.queue_capacity)
            assert np.all(sim.state.batteries >= 0)
            assert np.all(sim.state.batteries <= cfg.battery_levels)


class TestEncodeState:
    def test_dimension(self):
        cfg = small_config(num_devices=2)
        state = reset(cfg, np.random.default_rng(0))
        assert encode_state(state, cfg).shape == (9,)

    def test_zero_pattern_and_waypoint_phase(self):
        cfg = small_config(num_devices=2)
        state = reset(cfg, np.random.default_rng(0))
        state.batteries[:] = 0
        vec = encode_state(state, cfg)
        assert vec[0] == 0.0 and vec[1] == 0.0   # queue, battery of device 0
        assert vec[3] == 0.0 and vec[4] == 0.0
        assert vec[6] == pytest.approx(0.0)      # sin at waypoint 0
        assert vec[7] == pytest.approx(1.0)      # cos at waypoint 0

    def test_bounded_entries(self):
        cfg = small_config()
        sim = Simulator(cfg, np.random.default_rng(4))
        sim.reset()
        for t in range(100):
            vec = encode_state(sim.state, cfg)
            assert np.all(np.isfinite(vec))
            assert np.all(vec >= -1.0) and np.all(vec <= 1.0)
            sim.step(Action(t % cfg.num_devices, 0))


class TestSnapshots:
    def test_schema_field_names(self):
        cfg = small_config()
        state = reset(cfg, np.random.default_rng(0))
        snap = json.loads(snapshot_json(state))
        assert set(snap) == {"devices", "uav", "rng_position"}
        assert set(snap["devices"][0]) == {"queue", "battery", "x", "y"}
        assert set(snap["uav"]) == {"lap", "waypoint", "velocity"}

    def test_round_trip_restores_dynamic_fields(self):
        cfg = small_config()
        sim = Simulator(cfg, np.random.default_rng(0))
        sim.reset()
        for t in range(7):
            sim.step(Action(t % cfg.num_devices, 1))
        snap = to_snapshot(sim.state)
        restored = from_snapshot(cfg, snap, np.random.default_rng(123))
        assert np.array_equal(restored.queues, sim.state.queues)
        assert np.array_equal(restored.batteries, sim.state.batteries)
        assert restored.uav == sim.state.uav
        assert restored.frame_index == sim.state.frame_index

    def test_snapshot_from_wrong_config_rejected(self):
        cfg = small_config(seed=1)
        other = small_config(seed=2)
        snap = to_snapshot(reset(cfg, np.random.default_rng(0)))
        with pytest.raises(ValueError, match="placement"):
            from_snapshot(other, snap, np.random.default_rng(0))


class TestQuantizedMode:
    def test_quantized_draws_use_representative_gains(self):
        cfg = small_config(quantized_channel=True, num_gain_bins=3)
        mdp = enumerate_exact_mdp(dataclasses.replace(
            cfg, num_devices=1, battery_levels=2, queue_capacity=1,
            num_waypoints=4, num_velocities=1))
        assert mdp.num_states > 0
        sim = Simulator(cfg, np.random.default_rng(0))
        sim.reset()
        from uavmpt.env import get_context
        _, _, reps = get_context(cfg).bin_tables
        for t in range(20):
            sim.step(Action(0, 0))
            w = sim.state.uav.waypoint
            for i in range(cfg.num_devices):
                b = sim.state.gain_bins[i]
                assert sim.state.gains[i] == reps[i, w, b]
