"""Simulation and training configuration, plus the flat text config format.

Config files are plain ``key = value`` lines with ``#`` comments. Nested
blocks use dotted prefixes (``fading.m``, ``train.discount``). Unknown keys
are rejected outright so typos cannot silently fall back to defaults, and a
fully-resolved copy of every run's configuration is echoed next to its
outputs.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .channel import FadingParams


class ConfigError(ValueError):
    """Invalid configuration: unknown key, unparsable value, or violated invariant."""


@dataclass(frozen=True)
class SimConfig:
    """Every physical and MDP constant of one simulated network."""

    num_devices: int = 50
    num_laps: int = 10
    battery_levels: int = 50            # battery discretized into this many steps
    battery_capacity: float = 0.1       # joules at full charge
    queue_capacity: int = 20            # packets per device
    max_order: int = 8
    v_min: float = 5.0
    v_max: float = 20.0
    num_velocities: int = 5
    num_waypoints: int = 100
    trajectory_radius: float = 500.0
    altitude: float = 100.0
    region_radius: float = 600.0        # devices placed uniformly in this disk
    bits_per_packet: float = 1024.0     # 128-byte packets
    bandwidth: float = 1e6
    ber_target: float = 5e-4
    uav_tx_power: float = 0.1
    arrival_prob: float = 0.3           # per-device per-frame Bernoulli
    arrival_rate: float | None = None   # per-second rate; when set, overrides arrival_prob
    num_gain_bins: int = 4
    gain_thresholds_db: tuple[float, ...] | None = None   # explicit override
    mpt_eta0: float = 0.6
    mpt_decay_distance: float = 200.0
    uplink_batch: int = 1               # packets attempted per scheduled frame
    idle_drain: float = 0.0             # joules per frame for non-scheduled devices
    fading_ar_rho: float | None = None  # AR(1) fading coefficient; None = i.i.d.
    quantized_channel: bool = False     # draw bin-representative gains (exact-MDP mode)
    seed: int = 0
    fading: FadingParams = FadingParams()

    def __post_init__(self):
        checks = [
            (self.num_devices >= 1, "num_devices must be >= 1"),
            (self.num_laps >= 1, "num_laps must be >= 1"),
            (self.battery_levels >= 1, "battery_levels must be >= 1"),
            (self.battery_capacity > 0, "battery_capacity must be positive"),
            (self.queue_capacity >= 1, "queue_capacity must be >= 1"),
            (self.max_order >= 1, "max_order must be >= 1"),
            (self.v_min < self.v_max, "v_min must be strictly below v_max"),
            (self.v_min > 0, "v_min must be positive"),
            (self.num_velocities >= 1, "num_velocities must be >= 1"),
            (self.num_waypoints >= 3, "num_waypoints must be >= 3"),
            (self.trajectory_radius > 0, "trajectory_radius must be positive"),
            (self.altitude > 0, "altitude must be positive"),
            (self.region_radius > 0, "region_radius must be positive"),
            (self.bits_per_packet > 0, "bits_per_packet must be positive"),
            (self.bandwidth > 0, "bandwidth must be positive"),
            (0 < self.ber_target <= self.fading.kappa1,
             "ber_target must lie in (0, fading.kappa1]"),
            (self.uav_tx_power > 0, "uav_tx_power must be positive"),
            (0 <= self.arrival_prob <= 1, "arrival_prob must lie in [0, 1]"),
            (self.arrival_rate is None or self.arrival_rate >= 0,
             "arrival_rate must be >= 0"),
            (self.num_gain_bins >= 1, "num_gain_bins must be >= 1"),
            (self.gain_thresholds_db is None
             or len(self.gain_thresholds_db) == self.num_gain_bins - 1,
             "gain_thresholds_db must list num_gain_bins - 1 thresholds"),
            (0 < self.mpt_eta0 <= 1, "mpt_eta0 must lie in (0, 1]"),
            (self.mpt_decay_distance > 0, "mpt_decay_distance must be positive"),
            (self.uplink_batch >= 1, "uplink_batch must be >= 1"),
            (self.idle_drain >= 0, "idle_drain must be >= 0"),
            (self.fading_ar_rho is None or 0 <= self.fading_ar_rho < 1,
             "fading_ar_rho must lie in [0, 1)"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    @property
    def velocity_grid(self) -> np.ndarray:
        if self.num_velocities == 1:
            return np.array([0.5 * (self.v_min + self.v_max)])
        return np.linspace(self.v_min, self.v_max, self.num_velocities)

    @property
    def midpoint_velocity_index(self) -> int:
        return (self.num_velocities - 1) // 2

    @property
    def energy_unit(self) -> float:
        """Joules per battery level."""
        return self.battery_capacity / self.battery_levels

    @property
    def packet_success_prob(self) -> float:
        """Chance a power-controlled uplink packet survives: (1 - ber)**bits."""
        return (1.0 - self.ber_target) ** self.bits_per_packet

    @property
    def segment_length(self) -> float:
        """Arc length of one waypoint segment."""
        return 2.0 * math.pi * self.trajectory_radius / self.num_waypoints

    @property
    def num_actions(self) -> int:
        return self.num_devices * self.num_velocities

    def arrival_probability(self, tau: float) -> float:
        """Per-device arrival probability for a frame lasting tau seconds."""
        if self.arrival_rate is None:
            return self.arrival_prob
        return -math.expm1(-self.arrival_rate * tau)


@dataclass(frozen=True)
class TrainingParams:
    """Learning-side hyperparameters shared by the DQN and the experiment harness."""

    discount: float = 0.99
    learning_rate: float = 0.0001
    replay_capacity: int = 5000
    batch_size: int = 32
    episodes: int = 500
    steps: int = 1000
    hidden_sizes: tuple[int, ...] = (256, 128, 64)
    target_sync: int = 200              # online -> target copy period, in updates
    warmup: int = 500                   # replay records required before updates start
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_fraction: float = 0.6           # fraction of total frames spent annealing
    grad_clip: float = 10.0
    eval_episodes: int = 5
    updates_per_frame: int = 1          # gradient steps per environment frame

    def __post_init__(self):
        checks = [
            (0 <= self.discount < 1, "discount must lie in [0, 1)"),
            (self.learning_rate > 0, "learning_rate must be positive"),
            (self.replay_capacity >= 1, "replay_capacity must be >= 1"),
            (1 <= self.batch_size <= self.replay_capacity,
             "batch_size must lie in [1, replay_capacity]"),
            (self.episodes >= 1, "episodes must be >= 1"),
            (self.steps >= 1, "steps must be >= 1"),
            (len(self.hidden_sizes) == 3 and all(h >= 1 for h in self.hidden_sizes),
             "hidden_sizes must list three positive layer widths"),
            (self.target_sync >= 1, "target_sync must be >= 1"),
            (self.warmup >= self.batch_size, "warmup must be >= batch_size"),
            (0 <= self.eps_end <= self.eps_start <= 1,
             "need 0 <= eps_end <= eps_start <= 1"),
            (0 < self.eps_fraction <= 1, "eps_fraction must lie in (0, 1]"),
            (self.grad_clip > 0, "grad_clip must be positive"),
            (self.eval_episodes >= 1, "eval_episodes must be >= 1"),
            (self.updates_per_frame >= 1, "updates_per_frame must be >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)


# --- flat text format -------------------------------------------------------

def _to_int(s: str) -> int:
    return int(s)


def _to_float(s: str) -> float:
    return float(s)


def _to_bool(s: str) -> bool:
    low = s.lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _optional(conv):
    def parse(s: str):
        return None if s.lower() in ("none", "null", "") else conv(s)
    return parse


def _tuple_of(conv):
    def parse(s: str):
        if s.lower() in ("none", "null", ""):
            return None
        return tuple(conv(part.strip()) for part in s.split(",") if part.strip())
    return parse


_SIM_PARSERS = {
    "num_devices": _to_int, "num_laps": _to_int, "battery_levels": _to_int,
    "battery_capacity": _to_float, "queue_capacity": _to_int, "max_order": _to_int,
    "v_min": _to_float, "v_max": _to_float, "num_velocities": _to_int,
    "num_waypoints": _to_int, "trajectory_radius": _to_float, "altitude": _to_float,
    "region_radius": _to_float, "bits_per_packet": _to_float, "bandwidth": _to_float,
    "ber_target": _to_float, "uav_tx_power": _to_float, "arrival_prob": _to_float,
    "arrival_rate": _optional(_to_float), "num_gain_bins": _to_int,
    "gain_thresholds_db": _tuple_of(_to_float), "mpt_eta0": _to_float,
    "mpt_decay_distance": _to_float, "uplink_batch": _to_int, "idle_drain": _to_float,
    "fading_ar_rho": _optional(_to_float), "quantized_channel": _to_bool,
    "seed": _to_int,
}

_FADING_PARSERS = {
    "m": _to_int, "mean_gain_1m": _to_float, "pathloss_exp": _to_float,
    "noise_power": _to_float, "kappa1": _to_float, "kappa2": _to_float,
}

_TRAIN_PARSERS = {
    "discount": _to_float, "learning_rate": _to_float, "replay_capacity": _to_int,
    "batch_size": _to_int, "episodes": _to_int, "steps": _to_int,
    "hidden_sizes": _tuple_of(_to_int), "target_sync": _to_int, "warmup": _to_int,
    "eps_start": _to_float, "eps_end": _to_float, "eps_fraction": _to_float,
    "grad_clip": _to_float, "eval_episodes": _to_int, "updates_per_frame": _to_int,
}


def parse_config_text(text: str) -> tuple[SimConfig, TrainingParams]:
    sim_kw: dict = {}
    fading_kw: dict = {}
    train_kw: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key.startswith("fading."):
            table, kw, name = _FADING_PARSERS, fading_kw, key[len("fading."):]
        elif key.startswith("train."):
            table, kw, name = _TRAIN_PARSERS, train_kw, key[len("train."):]
        else:
            table, kw, name = _SIM_PARSERS, sim_kw, key
        if name not in table:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if name in kw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            kw[name] = table[name](value)
        except (ValueError, ConfigError) as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from exc
    try:
        fading = FadingParams(**fading_kw)
        sim = SimConfig(fading=fading, **sim_kw)
        train = TrainingParams(**train_kw)
    except (ValueError, ConfigError) as exc:
        raise ConfigError(str(exc)) from exc
    return sim, train


def load_config(path: str | Path) -> tuple[SimConfig, TrainingParams]:
    """Read a flat config file; unset keys take the documented defaults."""
    return parse_config_text(Path(path).read_text())


def _format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(repr(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_config(sim: SimConfig, train: TrainingParams) -> str:
    """Render a fully-resolved config; load_config on the result round-trips."""
    lines = ["# resolved configuration"]
    for f in dataclasses.fields(SimConfig):
        if f.name == "fading":
            continue
        lines.append(f"{f.name} = {_format_value(getattr(sim, f.name))}")
    for f in dataclasses.fields(FadingParams):
        lines.append(f"fading.{f.name} = {_format_value(getattr(sim.fading, f.name))}")
    for f in dataclasses.fields(TrainingParams):
        lines.append(f"train.{f.name} = {_format_value(getattr(train, f.name))}")
    return "\n".join(lines) + "\n"


def save_config(sim: SimConfig, train: TrainingParams, path: str | Path) -> None:
    Path(path).write_text(format_config(sim, train))
