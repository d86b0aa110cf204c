"""Frame-level MDP environment.

One frame = the UAV flying one waypoint segment at the commanded velocity and
serving one device: uplink attempt(s) first, then charging over the rest of
the contact window, then independent packet arrivals at every device. The
per-frame cost is the number of packets lost (queue overflow plus failed
uplinks).

State mutation is functional: step() returns a fresh EnvState, so trajectories
can be replayed and snapshotted. Geometry, modulation-efficiency and channel
quantization tables depend only on the config and are cached per config.
"""

from __future__ import annotations

import functools
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammainc

from . import channel as ch
from .config import SimConfig
from .modulation import ModulationProblem, optimal_modulation

_GAIN_DB_SPAN = 60.0   # encode_state clamps gains to +-60 dB around the median


@dataclass(frozen=True)
class Action:
    device: int
    velocity_index: int

    def flat(self, num_velocities: int) -> int:
        return self.device * num_velocities + self.velocity_index

    @classmethod
    def from_flat(cls, index: int, num_velocities: int) -> "Action":
        return cls(device=index // num_velocities, velocity_index=index % num_velocities)


@dataclass(frozen=True)
class DeviceState:
    queue_len: int
    battery_level: int
    x: float
    y: float


@dataclass(frozen=True)
class UavState:
    lap: int
    waypoint: int
    velocity: float


@dataclass(frozen=True)
class StepOutcome:
    cost: int                 # packets lost this frame
    delivered: int
    harvested_levels: int
    terminal: bool
    overflow_dropped: int
    tx_failed: int            # energy shortfalls + channel failures
    arrivals: int             # packets generated this frame, dropped ones included
    phi_star: int | None      # None when no order fits the contact window
    tau: float                # frame duration, seconds
    velocity: float


@dataclass(eq=False)
class EnvState:
    queues: np.ndarray        # int, packets per device
    batteries: np.ndarray     # int, battery level per device
    gains: np.ndarray         # linear power gain per device
    gain_bins: np.ndarray     # quantized gain index per device
    xs: np.ndarray
    ys: np.ndarray
    uav: UavState
    frame_index: int          # frames stepped since reset; the rng stream position
    fading_latents: np.ndarray | None = None   # AR(1) mode only

    def __eq__(self, other):
        if not isinstance(other, EnvState):
            return NotImplemented
        arrays_equal = all(
            np.array_equal(getattr(self, name), getattr(other, name))
            for name in ("queues", "batteries", "gains", "gain_bins", "xs", "ys")
        )
        latents_equal = (
            (self.fading_latents is None) == (other.fading_latents is None)
            and (self.fading_latents is None
                 or np.array_equal(self.fading_latents, other.fading_latents))
        )
        return (arrays_equal and latents_equal and self.uav == other.uav
                and self.frame_index == other.frame_index)

    @property
    def devices(self) -> list[DeviceState]:
        return [
            DeviceState(int(q), int(b), float(x), float(y))
            for q, b, x, y in zip(self.queues, self.batteries, self.xs, self.ys)
        ]


class SimContext:
    """Per-config caches: placement, per-waypoint link geometry, quantizer."""

    def __init__(self, config: SimConfig):
        self.config = config
        cfg = config
        place_rng = np.random.default_rng(cfg.seed)
        radii = cfg.region_radius * np.sqrt(place_rng.random(cfg.num_devices))
        angles = 2.0 * math.pi * place_rng.random(cfg.num_devices)
        self.xs = radii * np.cos(angles)
        self.ys = radii * np.sin(angles)

        wp_angles = 2.0 * math.pi * np.arange(cfg.num_waypoints) / cfg.num_waypoints
        ux = cfg.trajectory_radius * np.cos(wp_angles)
        uy = cfg.trajectory_radius * np.sin(wp_angles)
        # [device, waypoint] geometry tables
        self.dxy = np.hypot(self.xs[:, None] - ux[None, :], self.ys[:, None] - uy[None, :])
        self.d3 = np.hypot(self.dxy, cfg.altitude)
        cos_theta = cfg.altitude / self.d3
        self.omega = (cfg.mpt_eta0 * cos_theta * np.exp(-self.d3 / cfg.mpt_decay_distance))
        self.mean_gain = cfg.fading.mean_gain_1m * self.d3 ** (-cfg.fading.pathloss_exp)

        self.efficiency_model = ch.EfficiencyModel(cfg.mpt_eta0, cfg.mpt_decay_distance)
        if cfg.gain_thresholds_db is not None:
            self.quantizer = ch.GainQuantizer(cfg.gain_thresholds_db)
        else:
            ref = math.hypot(cfg.trajectory_radius, cfg.altitude)
            self.quantizer = ch.GainQuantizer.from_distribution(
                cfg.fading, ref, cfg.num_gain_bins)
        self.velocity_grid = cfg.velocity_grid
        self._bin_tables = None

    @property
    def bin_tables(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(probs, cumulative, representative gain) per [device, waypoint, bin]."""
        if self._bin_tables is None:
            m = self.config.fading.m
            thresholds = 10.0 ** (self.quantizer.thresholds_db / 10.0)
            # scaled bin edges: x * m / mean, with 0 and +inf at the ends
            scale = m / self.mean_gain[:, :, None]
            inner = thresholds[None, None, :] * scale
            zeros = np.zeros_like(self.mean_gain)[:, :, None]
            infs = np.full_like(zeros, np.inf)
            edges = np.concatenate([zeros, inner, infs], axis=2)
            cdf = gammainc(m, edges)
            probs = np.diff(cdf, axis=2)
            # conditional mean within each bin via the truncated-Gamma identity
            cdf_up = gammainc(m + 1, edges)
            mass = np.diff(cdf_up, axis=2) * self.mean_gain[:, :, None]
            with np.errstate(invalid="ignore", divide="ignore"):
                reps = mass / probs
            # bins with no mass: fall back to a positive in-bin point
            lo = np.maximum(edges[:, :, :-1], 1e-300 * np.ones_like(probs))
            hi = np.where(np.isinf(edges[:, :, 1:]), 2.0 * np.maximum(lo, 1e-300), edges[:, :, 1:])
            fallback = 0.5 * (lo / scale + hi / scale)
            reps = np.where((probs > 1e-300) & np.isfinite(reps), reps, fallback)
            cum = np.cumsum(probs, axis=2)
            cum[:, :, -1] = 1.0
            self._bin_tables = (probs, cum, reps)
        return self._bin_tables


@functools.lru_cache(maxsize=16)
def _context(config: SimConfig) -> SimContext:
    return SimContext(config)


def get_context(config: SimConfig) -> SimContext:
    return _context(config)


def _draw_gains(ctx: SimContext, waypoint: int, rng: np.random.Generator,
                latents: np.ndarray | None):
    cfg = ctx.config
    n = cfg.num_devices
    m = cfg.fading.m
    if cfg.quantized_channel:
        _, cum, reps = ctx.bin_tables
        u = rng.random(n)
        bins = np.empty(n, dtype=np.int64)
        gains = np.empty(n)
        for i in range(n):
            b = int(np.searchsorted(cum[i, waypoint], u[i], side="right"))
            b = min(b, cfg.num_gain_bins - 1)
            bins[i] = b
            gains[i] = reps[i, waypoint, b]
        return gains, bins, None
    if cfg.fading_ar_rho is not None:
        rho = cfg.fading_ar_rho
        noise = rng.standard_normal((n, 2 * m))
        if latents is None:
            latents = noise
        else:
            latents = rho * latents + math.sqrt(1.0 - rho * rho) * noise
        factors = np.sum(latents ** 2, axis=1) / (2.0 * m)
    else:
        factors = rng.gamma(shape=m, scale=1.0 / m, size=n)
        latents = None
    gains = ctx.mean_gain[:, waypoint] * factors
    bins = np.array([ctx.quantizer.bin_of(g) for g in gains], dtype=np.int64)
    bins = np.minimum(bins, cfg.num_gain_bins - 1)
    return gains, bins, latents


def reset(config: SimConfig, rng: np.random.Generator) -> EnvState:
    """Fresh episode: empty queues, half-charged batteries, UAV at waypoint 0.

    Device placement is a pure function of config.seed, so every reset of the
    same config sees the same network; the passed rng only drives the channel.
    """
    ctx = _context(config)
    gains, bins, latents = _draw_gains(ctx, 0, rng, None)
    return EnvState(
        queues=np.zeros(config.num_devices, dtype=np.int64),
        batteries=np.full(config.num_devices, config.battery_levels // 2, dtype=np.int64),
        gains=gains,
        gain_bins=bins,
        xs=ctx.xs,
        ys=ctx.ys,
        uav=UavState(lap=1, waypoint=0,
                     velocity=float(ctx.velocity_grid[config.midpoint_velocity_index])),
        frame_index=0,
        fading_latents=latents,
    )


def modulation_problem(config: SimConfig, device: int, waypoint: int, gain: float,
                       velocity: float) -> ModulationProblem | None:
    """Contact-window energy problem for one device at one waypoint.

    Returns None when the geometry leaves no service window at all
    (device exactly under the flight path).
    """
    ctx = _context(config)
    tau = config.segment_length / velocity
    contact = 2.0 * ctx.dxy[device, waypoint] / velocity
    window = min(contact, tau)
    if window <= 0.0:
        return None
    return ModulationProblem(
        contact_time=window,
        bits_per_packet=config.bits_per_packet,
        bandwidth=config.bandwidth,
        power_gain=gain,
        uav_tx_power=config.uav_tx_power,
        efficiency=float(ctx.omega[device, waypoint]),
        ber_target=config.ber_target,
        kappa1=config.fading.kappa1,
        kappa2=config.fading.kappa2,
        max_order=config.max_order,
    )


def step(state: EnvState, action: Action, config: SimConfig,
         rng: np.random.Generator) -> tuple[EnvState, StepOutcome]:
    """Advance one frame. Order: UAV motion, channel refresh, uplink, charging,
    idle drain, arrivals."""
    cfg = config
    ctx = _context(cfg)
    if state.uav.lap > cfg.num_laps:
        raise ValueError("cannot step a terminal state")
    if not 0 <= action.device < cfg.num_devices:
        raise ValueError(f"device index {action.device} out of range")
    if not 0 <= action.velocity_index < cfg.num_velocities:
        raise ValueError(f"velocity index {action.velocity_index} out of range")

    v = float(ctx.velocity_grid[action.velocity_index])
    tau = cfg.segment_length / v
    waypoint = (state.uav.waypoint + 1) % cfg.num_waypoints
    lap = state.uav.lap + (1 if waypoint == 0 else 0)
    terminal = lap > cfg.num_laps

    gains, bins, latents = _draw_gains(ctx, waypoint, rng, state.fading_latents)

    queues = state.queues.copy()
    batteries = state.batteries.copy()
    unit = cfg.energy_unit
    i = action.device

    problem = modulation_problem(cfg, i, waypoint, float(gains[i]), v)
    window = problem.contact_time if problem is not None else 0.0
    phi_star = optimal_modulation(problem) if problem is not None else None

    delivered = tx_failed = 0
    slots_sent = 0
    if phi_star is not None:
        slot = cfg.bits_per_packet / (phi_star * cfg.bandwidth)
        tx_power = ch.required_tx_power(phi_star, float(gains[i]), cfg.fading, cfg.ber_target)
        packet_energy = tx_power * slot
        max_slots = int(window // slot)
        attempts = min(cfg.uplink_batch, int(queues[i]), max_slots)
        for _ in range(attempts):
            if batteries[i] * unit < packet_energy:
                # not enough charge: the head-of-line packet is lost, stop trying
                tx_failed += 1
                queues[i] -= 1
                break
            batteries[i] = int((batteries[i] * unit - packet_energy) // unit)
            slots_sent += 1
            queues[i] -= 1
            if rng.random() < cfg.packet_success_prob:
                delivered += 1
            else:
                tx_failed += 1
        # one uplink slot stays reserved by the protocol even if nothing was sent
        window = max(0.0, window - max(1, slots_sent) * slot)

    harvest_power = ctx.omega[i, waypoint] * cfg.uav_tx_power * gains[i]
    gained = int((harvest_power * window) // unit)
    before = int(batteries[i])
    batteries[i] = min(cfg.battery_levels, before + gained)
    harvested_levels = int(batteries[i]) - before

    if cfg.idle_drain > 0:
        drain_levels = math.ceil(cfg.idle_drain / unit)
        mask = np.arange(cfg.num_devices) != i
        batteries[mask] = np.maximum(0, batteries[mask] - drain_levels)

    p_arr = cfg.arrival_probability(tau)
    arrived = rng.random(cfg.num_devices) < p_arr
    overflow = int(np.count_nonzero(arrived & (queues >= cfg.queue_capacity)))
    accepted = arrived & (queues < cfg.queue_capacity)
    queues[accepted] += 1
    arrivals = int(np.count_nonzero(arrived))

    new_state = EnvState(
        queues=queues, batteries=batteries, gains=gains, gain_bins=bins,
        xs=state.xs, ys=state.ys,
        uav=UavState(lap=lap, waypoint=waypoint, velocity=v),
        frame_index=state.frame_index + 1,
        fading_latents=latents,
    )
    outcome = StepOutcome(
        cost=overflow + tx_failed, delivered=delivered, harvested_levels=harvested_levels,
        terminal=terminal, overflow_dropped=overflow, tx_failed=tx_failed,
        arrivals=arrivals, phi_star=phi_star, tau=tau, velocity=v,
    )
    return new_state, outcome


def encode_state(state: EnvState, config: SimConfig) -> np.ndarray:
    """Learning input of length 3I + 3: per device (queue, battery, gain-dB)
    normalized to [0, 1] / [-1, 1], then the UAV waypoint phase and lap progress."""
    ctx = _context(config)
    n = config.num_devices
    vec = np.empty(3 * n + 3)
    vec[0:3 * n:3] = state.queues / config.queue_capacity
    vec[1:3 * n:3] = state.batteries / config.battery_levels
    with np.errstate(divide="ignore"):
        db = 10.0 * np.log10(np.maximum(state.gains, 1e-300))
    vec[2:3 * n:3] = np.clip((db - ctx.quantizer.center_db) / _GAIN_DB_SPAN, -1.0, 1.0)
    phase = 2.0 * math.pi * state.uav.waypoint / config.num_waypoints
    vec[3 * n] = math.sin(phase)
    vec[3 * n + 1] = math.cos(phase)
    vec[3 * n + 2] = state.uav.lap / config.num_laps
    return vec


def to_snapshot(state: EnvState) -> dict:
    """JSON-friendly snapshot for replay and debugging."""
    return {
        "devices": [
            {"queue": int(q), "battery": int(b), "x": float(x), "y": float(y)}
            for q, b, x, y in zip(state.queues, state.batteries, state.xs, state.ys)
        ],
        "uav": {
            "lap": state.uav.lap,
            "waypoint": state.uav.waypoint,
            "velocity": state.uav.velocity,
        },
        "rng_position": state.frame_index,
    }


def snapshot_json(state: EnvState) -> str:
    return json.dumps(to_snapshot(state), indent=2)


def from_snapshot(config: SimConfig, snapshot: dict,
                  rng: np.random.Generator) -> EnvState:
    """Rebuild an EnvState from a snapshot taken under the same config.

    Channel gains are not part of the snapshot; they are redrawn from the
    passed rng (they refresh before being used on the next step anyway).
    """
    ctx = _context(config)
    devices = snapshot["devices"]
    if len(devices) != config.num_devices:
        raise ValueError("snapshot device count does not match the config")
    xs = np.array([d["x"] for d in devices])
    ys = np.array([d["y"] for d in devices])
    if not (np.allclose(xs, ctx.xs) and np.allclose(ys, ctx.ys)):
        raise ValueError("snapshot device placement does not match the config seed")
    uav = snapshot["uav"]
    gains, bins, latents = _draw_gains(ctx, int(uav["waypoint"]), rng, None)
    return EnvState(
        queues=np.array([d["queue"] for d in devices], dtype=np.int64),
        batteries=np.array([d["battery"] for d in devices], dtype=np.int64),
        gains=gains, gain_bins=bins, xs=ctx.xs, ys=ctx.ys,
        uav=UavState(lap=int(uav["lap"]), waypoint=int(uav["waypoint"]),
                     velocity=float(uav["velocity"])),
        frame_index=int(snapshot["rng_position"]),
        fading_latents=latents,
    )


class Simulator:
    """Stateful convenience wrapper over the functional reset/step API."""

    def __init__(self, config: SimConfig, rng: np.random.Generator | int | None = None):
        self.config = config
        if rng is None or isinstance(rng, (int, np.integer)):
            rng = np.random.default_rng(config.seed if rng is None else rng)
        self.rng = rng
        self.state: EnvState | None = None

    def reset(self) -> EnvState:
        self.state = reset(self.config, self.rng)
        return self.state

    def step(self, action: Action) -> StepOutcome:
        if self.state is None:
            raise RuntimeError("reset() the simulator before stepping")
        self.state, outcome = step(self.state, action, self.config, self.rng)
        return outcome

    def encode(self) -> np.ndarray:
        if self.state is None:
            raise RuntimeError("reset() the simulator before encoding")
        return encode_state(self.state, self.config)
