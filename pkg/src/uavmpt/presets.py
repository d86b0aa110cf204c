"""Canned configurations.

`default` mirrors the documented defaults. `tiny_mdp` is the oracle fixture:
small enough to enumerate exactly, with per-second arrivals so the two
velocity actions genuinely differ in value. `desk` is the desk-scale sweep
fixture: constants are sized so that transmit energy, harvested energy and
queue pressure all stay in play (a few battery levels per packet, a few
levels harvested per good pass) and the load at the largest network size
exceeds what the baseline mid-velocity can carry.
"""

from __future__ import annotations

import dataclasses

from .channel import FadingParams
from .config import SimConfig, TrainingParams


def default_config() -> tuple[SimConfig, TrainingParams]:
    return SimConfig(), TrainingParams()


def tiny_mdp_config(seed: int = 7) -> SimConfig:
    """Exactly enumerable instance: 1 device, 4x4 queue/battery grid, 2 gain
    bins, 8 waypoints, 2 velocities -> 256 states x 2 actions."""
    return SimConfig(
        num_devices=1,
        num_laps=1_000_000,            # continuing task: no terminal inside training
        battery_levels=3,
        battery_capacity=6e-7,
        queue_capacity=3,
        max_order=4,
        v_min=5.0,
        v_max=20.0,
        num_velocities=2,
        num_waypoints=8,
        trajectory_radius=100.0,
        altitude=60.0,
        region_radius=120.0,
        bits_per_packet=1024.0,
        bandwidth=1024.0,
        ber_target=1e-4,
        uav_tx_power=1.2,
        arrival_rate=0.04,
        num_gain_bins=2,
        mpt_eta0=0.6,
        mpt_decay_distance=200.0,
        quantized_channel=True,
        seed=seed,
        fading=FadingParams(m=1, mean_gain_1m=1e-3, pathloss_exp=2.0,
                            kappa1=0.2, kappa2=1.2e14),
    )


def tiny_mdp_training(episodes: int = 1800, steps: int = 40) -> TrainingParams:
    return TrainingParams(
        discount=0.9,
        learning_rate=0.001,
        replay_capacity=5000,
        batch_size=32,
        episodes=episodes,
        steps=steps,
        hidden_sizes=(64, 64, 32),
        target_sync=200,
        warmup=500,
        eps_start=1.0,
        eps_end=0.05,
        eps_fraction=0.6,
        eval_episodes=5,
    )


def desk_config(num_devices: int = 20, queue_capacity: int = 8,
                seed: int = 0) -> SimConfig:
    """Desk-scale network: 50 waypoints, 6 laps per 300-step episode."""
    return SimConfig(
        num_devices=num_devices,
        num_laps=6,
        battery_levels=25,
        battery_capacity=5e-6,
        queue_capacity=queue_capacity,
        max_order=8,
        v_min=5.0,
        v_max=20.0,
        num_velocities=5,
        num_waypoints=50,
        trajectory_radius=150.0,
        altitude=60.0,
        region_radius=200.0,
        bits_per_packet=1024.0,
        bandwidth=2400.0,
        ber_target=1e-5,
        uav_tx_power=10.0,
        arrival_rate=0.015,
        num_gain_bins=4,
        mpt_eta0=0.6,
        mpt_decay_distance=200.0,
        seed=seed,
        fading=FadingParams(m=1, mean_gain_1m=1e-3, pathloss_exp=2.0,
                            kappa1=0.2, kappa2=5e13),
    )


def desk_training(episodes: int = 200, steps: int = 300) -> TrainingParams:
    return TrainingParams(
        discount=0.99,
        learning_rate=0.0005,
        replay_capacity=5000,
        batch_size=32,
        episodes=episodes,
        steps=steps,
        hidden_sizes=(64, 64, 32),
        target_sync=200,
        warmup=500,
        eps_start=1.0,
        eps_end=0.05,
        eps_fraction=0.6,
        eval_episodes=5,
    )


PRESETS = {
    "default": default_config,
    "tiny": lambda: (tiny_mdp_config(), tiny_mdp_training()),
    "desk": lambda: (desk_config(), desk_training()),
}


def get_preset(name: str) -> tuple[SimConfig, TrainingParams]:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    sim, train = PRESETS[name]()
    return sim, train


def with_seed(config: SimConfig, seed: int) -> SimConfig:
    return dataclasses.replace(config, seed=seed)
