import dataclasses

import numpy as np
import pytest

from uavmpt.channel import FadingParams
from uavmpt.config import SimConfig


def small_config(**overrides) -> SimConfig:
    """A fast, fully-featured instance for unit tests."""
    base = dict(
        num_devices=3,
        num_laps=1_000_000,
        battery_levels=10,
        battery_capacity=2e-6,
        queue_capacity=4,
        max_order=4,
        v_min=5.0,
        v_max=20.0,
        num_velocities=3,
        num_waypoints=6,
        trajectory_radius=120.0,
        altitude=60.0,
        region_radius=150.0,
        bits_per_packet=1024.0,
        bandwidth=2400.0,
        ber_target=1e-4,
        uav_tx_power=10.0,
        arrival_prob=0.3,
        num_gain_bins=3,
        seed=123,
        fading=FadingParams(m=1, mean_gain_1m=1e-3, pathloss_exp=2.0,
                            kappa1=0.2, kappa2=5e13),
    )
    fading_overrides = {k: v for k, v in overrides.items()
                        if k in ("m", "mean_gain_1m", "pathloss_exp", "kappa1", "kappa2")}
    if fading_overrides:
        base["fading"] = dataclasses.replace(base["fading"], **fading_overrides)
        overrides = {k: v for k, v in overrides.items() if k not in fading_overrides}
    base.update(overrides)
    return SimConfig(**base)


@pytest.fixture
def rng():
    return np.random.default_rng(42)
