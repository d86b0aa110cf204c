"""Per-frame scheduling policies: DQN-driven, random, and longest-queue.

Each policy picks (device, velocity). The modulation order is decided
separately by finalize_action from geometry and channel alone, so it never
depends on queue or battery state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import SimConfig
from .dqn import MlpParams, forward
from .env import Action, EnvState, modulation_problem
from .modulation import optimal_modulation

POLICY_NAMES = ("drlsa", "rsa", "lqsa", "tabular-q")


@dataclass(frozen=True)
class EpsilonSchedule:
    """Piecewise-linear exploration rate: start -> end over decay_frames, then flat."""

    start: float = 1.0
    end: float = 0.05
    decay_frames: int = 1

    def __post_init__(self):
        if not 0 <= self.end <= self.start <= 1:
            raise ValueError("need 0 <= end <= start <= 1")
        if self.decay_frames < 1:
            raise ValueError("decay_frames must be >= 1")

    def value(self, frame: int) -> float:
        frac = min(1.0, max(0, frame) / self.decay_frames)
        return self.start + (self.end - self.start) * frac


def drlsa_select(state_vector: np.ndarray, params: MlpParams, epsilon: float,
                 rng: np.random.Generator, num_velocities: int) -> Action:
    """Epsilon-greedy argmin over the network's cost estimates."""
    num_actions = params.output_dim
    if epsilon > 0 and rng.random() < epsilon:
        flat = int(rng.integers(num_actions))
    else:
        flat = int(np.argmin(forward(params, state_vector)))
    return Action.from_flat(flat, num_velocities)


def rsa_select(config: SimConfig, rng: np.random.Generator) -> Action:
    """Uniformly random device, baseline velocity; blind to every state variable."""
    return Action(device=int(rng.integers(config.num_devices)),
                  velocity_index=config.midpoint_velocity_index)


def lqsa_select(state: EnvState, config: SimConfig) -> Action:
    """Greedy on queue length (ties to the smaller index), baseline velocity."""
    return Action(device=int(np.argmax(state.queues)),
                  velocity_index=config.midpoint_velocity_index)


def finalize_action(action: Action, state: EnvState,
                    config: SimConfig) -> tuple[Action, int | None]:
    """Attach the energy-optimal modulation order for the scheduled device.

    Computed from the device's current geometry and channel draw and the
    velocity implied by the action; returns None for the order when no order
    fits the contact window (the frame is then charge-only).
    """
    velocity = float(config.velocity_grid[action.velocity_index])
    problem = modulation_problem(config, action.device, state.uav.waypoint,
                                 float(state.gains[action.device]), velocity)
    phi = optimal_modulation(problem) if problem is not None else None
    return action, phi
