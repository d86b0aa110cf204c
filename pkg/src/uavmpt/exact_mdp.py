"""Exact transition enumeration for tiny quantized instances.

With the channel reduced to per-waypoint bin distributions (the env's
quantized mode), the frame dynamics become a finite MDP over tuples
(queues, battery levels, gain bins, waypoint). This module enumerates that
chain exactly, giving value iteration and the learning stacks a ground truth
to be checked against. Laps are ignored: the chain is treated as continuing,
which matches discounted infinite-horizon planning.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import channel as ch
from .config import SimConfig
from .env import Action, EnvState, UavState, encode_state, get_context, modulation_problem
from .modulation import optimal_modulation

STATE_CAP = 50_000          # on the spec's I*(K+1)*(D+1)*H*V count
JOINT_CAP = 2_000_000       # hard guard on the joint enumeration size


@dataclass
class ExactMdp:
    """Dense small-MDP view: states are tuples (q_1..q_I, e_1..e_I, bin_1..bin_I, w)."""

    config: SimConfig
    states: list[tuple]
    state_index: dict
    num_actions: int
    # transitions[s][a] = list of (next_state_id, probability, expected_cost)
    transitions: list[list[list[tuple[int, float, float]]]]
    initial: list[tuple[int, float]] = field(default_factory=list)

    @property
    def num_states(self) -> int:
        return len(self.states)

    def expected_cost(self, s: int, a: int) -> float:
        return sum(p * c for _, p, c in self.transitions[s][a])

    def sample_initial(self, rng: np.random.Generator) -> int:
        ids = [sid for sid, _ in self.initial]
        probs = [p for _, p in self.initial]
        return int(ids[rng.choice(len(ids), p=probs)])

    def sample_transition(self, s: int, a: int, rng: np.random.Generator) -> tuple[int, float]:
        branches = self.transitions[s][a]
        probs = np.array([p for _, p, _ in branches])
        k = int(rng.choice(len(branches), p=probs))
        nxt, _, cost = branches[k]
        return nxt, cost

    def reachable_ids(self) -> list[int]:
        """States reachable from the initial distribution under any action sequence."""
        seen = {sid for sid, _ in self.initial}
        frontier = list(seen)
        while frontier:
            s = frontier.pop()
            for a in range(self.num_actions):
                for nxt, p, _ in self.transitions[s][a]:
                    if p > 0 and nxt not in seen:
                        seen.add(nxt)
                        frontier.append(nxt)
        return sorted(seen)

    def env_state(self, state_id: int) -> EnvState:
        """Materialize a quantized state as an EnvState (lap fixed at 1)."""
        cfg = self.config
        ctx = get_context(cfg)
        _, _, reps = ctx.bin_tables
        n = cfg.num_devices
        tup = self.states[state_id]
        queues = np.array(tup[0:n], dtype=np.int64)
        batteries = np.array(tup[n:2 * n], dtype=np.int64)
        bins = np.array(tup[2 * n:3 * n], dtype=np.int64)
        w = tup[3 * n]
        gains = np.array([reps[i, w, bins[i]] for i in range(n)])
        return EnvState(queues=queues, batteries=batteries, gains=gains, gain_bins=bins,
                        xs=ctx.xs, ys=ctx.ys,
                        uav=UavState(lap=1, waypoint=w,
                                     velocity=float(ctx.velocity_grid[cfg.midpoint_velocity_index])),
                        frame_index=0)

    def encode(self, state_id: int) -> np.ndarray:
        return encode_state(self.env_state(state_id), self.config)


def _device_service_branches(cfg: SimConfig, ctx, reps, i: int, waypoint: int,
                             velocity: float, q: int, e: int):
    """Branches for the scheduled device, per possible new gain bin.

    Yields (prob_within_bin, new_bin, new_q, new_e, cost) before arrivals.
    Mirrors env.step exactly for uplink_batch == 1.
    """
    unit = cfg.energy_unit
    p_succ = cfg.packet_success_prob
    probs, _, _ = ctx.bin_tables
    for b in range(cfg.num_gain_bins):
        p_bin = float(probs[i, waypoint, b])
        if p_bin <= 0.0:
            continue
        gain = float(reps[i, waypoint, b])
        problem = modulation_problem(cfg, i, waypoint, gain, velocity)
        phi = optimal_modulation(problem) if problem is not None else None
        window = problem.contact_time if problem is not None else 0.0
        harvest_power = float(ctx.omega[i, waypoint]) * cfg.uav_tx_power * gain

        def harvested(level: int, hours: float) -> int:
            gained = int((harvest_power * hours) // unit)
            return min(cfg.battery_levels, level + gained)

        if phi is None:
            yield p_bin, b, q, harvested(e, window), 0
            continue
        slot = cfg.bits_per_packet / (phi * cfg.bandwidth)
        tx_power = ch.required_tx_power(phi, gain, cfg.fading, cfg.ber_target)
        packet_energy = tx_power * slot
        attempts = min(cfg.uplink_batch, q, int(window // slot))
        residual = max(0.0, window - slot)
        if attempts == 0:
            yield p_bin, b, q, harvested(e, residual), 0
        elif e * unit < packet_energy:
            # energy shortfall: head-of-line packet lost, no transmission
            yield p_bin, b, q - 1, harvested(e, residual), 1
        else:
            e_after = int((e * unit - packet_energy) // unit)
            yield p_bin * p_succ, b, q - 1, harvested(e_after, residual), 0
            yield p_bin * (1.0 - p_succ), b, q - 1, harvested(e_after, residual), 1


def enumerate_exact_mdp(config: SimConfig) -> ExactMdp:
    """Build the exact transition table; refuses instances over the state cap."""
    cfg = config
    n = cfg.num_devices
    if cfg.uplink_batch != 1:
        raise ValueError("exact enumeration supports uplink_batch = 1 only")
    if cfg.fading_ar_rho is not None:
        raise ValueError("exact enumeration requires i.i.d. fading (fading_ar_rho = none)")
    spec_count = (n * (cfg.battery_levels + 1) * (cfg.queue_capacity + 1)
                  * cfg.num_gain_bins * cfg.num_waypoints)
    if spec_count > STATE_CAP:
        raise ValueError(
            f"state count {spec_count} exceeds the cap of {STATE_CAP}; "
            "shrink the instance")
    per_device = (cfg.queue_capacity + 1) * (cfg.battery_levels + 1) * cfg.num_gain_bins
    joint = per_device ** n * cfg.num_waypoints
    if joint > JOINT_CAP:
        raise ValueError(f"joint state count {joint} exceeds {JOINT_CAP}")

    ctx = get_context(cfg)
    bin_probs, _, reps = ctx.bin_tables
    q_range = range(cfg.queue_capacity + 1)
    e_range = range(cfg.battery_levels + 1)
    b_range = range(cfg.num_gain_bins)
    w_range = range(cfg.num_waypoints)

    states = [
        qs + es + bs + (w,)
        for qs in itertools.product(q_range, repeat=n)
        for es in itertools.product(e_range, repeat=n)
        for bs in itertools.product(b_range, repeat=n)
        for w in w_range
    ]
    state_index = {s: k for k, s in enumerate(states)}
    num_actions = n * cfg.num_velocities
    drain_levels = math.ceil(cfg.idle_drain / cfg.energy_unit) if cfg.idle_drain > 0 else 0

    def arrival_branches(q: int, cost: int, p_arr: float):
        out = []
        if p_arr < 1.0:
            out.append((1.0 - p_arr, q, cost))
        if p_arr > 0.0:
            if q >= cfg.queue_capacity:
                out.append((p_arr, q, cost + 1))
            else:
                out.append((p_arr, q + 1, cost))
        return out

    transitions: list[list[list[tuple[int, float, float]]]] = []
    for s in states:
        qs, es, bs = s[0:n], s[n:2 * n], s[2 * n:3 * n]
        w = s[3 * n]
        w_next = (w + 1) % cfg.num_waypoints
        per_action: list[list[tuple[int, float, float]]] = []
        for a in range(num_actions):
            act = Action.from_flat(a, cfg.num_velocities)
            v = float(ctx.velocity_grid[act.velocity_index])
            tau = cfg.segment_length / v
            p_arr = cfg.arrival_probability(tau)
            # branch list per device: (prob, new_q, new_e, new_bin, cost)
            dev_lists = []
            for j in range(n):
                branches = []
                if j == act.device:
                    for p, b, q1, e1, c in _device_service_branches(
                            cfg, ctx, reps, j, w_next, v, qs[j], es[j]):
                        for p_a, q2, c2 in arrival_branches(q1, c, p_arr):
                            branches.append((p * p_a, q2, e1, b, c2))
                else:
                    e1 = max(0, es[j] - drain_levels)
                    for b in b_range:
                        p_bin = float(bin_probs[j, w_next, b])
                        if p_bin <= 0.0:
                            continue
                        for p_a, q2, c2 in arrival_branches(qs[j], 0, p_arr):
                            branches.append((p_bin * p_a, q2, e1, b, c2))
                dev_lists.append(branches)
            merged: dict[int, list[float]] = {}
            for combo in itertools.product(*dev_lists):
                prob = 1.0
                cost = 0.0
                nq, ne, nb = [], [], []
                for p, q2, e1, b, c in combo:
                    prob *= p
                    cost += c
                    nq.append(q2)
                    ne.append(e1)
                    nb.append(b)
                nxt = state_index[tuple(nq) + tuple(ne) + tuple(nb) + (w_next,)]
                slot = merged.setdefault(nxt, [0.0, 0.0])
                slot[0] += prob
                slot[1] += prob * cost
            per_action.append([
                (nxt, p, pc / p) for nxt, (p, pc) in sorted(merged.items()) if p > 0.0
            ])
        transitions.append(per_action)

    # initial distribution: empty queues, half-charged batteries, waypoint 0,
    # bins drawn from the waypoint-0 channel distribution
    half = cfg.battery_levels // 2
    initial = []
    for bs in itertools.product(b_range, repeat=n):
        p = 1.0
        for j, b in enumerate(bs):
            p *= float(bin_probs[j, 0, b])
        if p > 0.0:
            sid = state_index[(0,) * n + (half,) * n + bs + (0,)]
            initial.append((sid, p))

    return ExactMdp(config=cfg, states=states, state_index=state_index,
                    num_actions=num_actions, transitions=transitions, initial=initial)
