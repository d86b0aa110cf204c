"""Tabular planning and learning on exact small MDPs.

Value iteration is the planning oracle; tabular Q-learning (with an
epsilon-greedy behaviour policy annealed to near-greedy) is checked against
it. Costs are minimized throughout, and ties always break toward the smaller
action id so that policies compare deterministically.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exact_mdp import ExactMdp


@dataclass
class QTable:
    num_states: int
    num_actions: int
    learning_rate: float = 0.1
    discount: float = 0.9
    values: np.ndarray = field(init=False)

    def __post_init__(self):
        # 0 freezes the table, which is occasionally useful for evaluation
        if not 0 <= self.learning_rate <= 1:
            raise ValueError("learning_rate must lie in [0, 1]")
        if not 0 <= self.discount <= 1:
            raise ValueError("discount must lie in [0, 1]")
        self.values = np.zeros((self.num_states, self.num_actions))

    def greedy_policy(self) -> np.ndarray:
        return np.argmin(self.values, axis=1)

    def dump_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["state_id", "action_id", "value"])
            for s in range(self.num_states):
                for a in range(self.num_actions):
                    writer.writerow([s, a, repr(float(self.values[s, a]))])


def _compiled(mdp: ExactMdp):
    """Flatten the branch lists into arrays for fast sweeps."""
    exp_cost = np.zeros((mdp.num_states, mdp.num_actions))
    nexts, probs = [], []
    for s in range(mdp.num_states):
        row_n, row_p = [], []
        for a in range(mdp.num_actions):
            branches = mdp.transitions[s][a]
            row_n.append(np.array([b[0] for b in branches], dtype=np.int64))
            row_p.append(np.array([b[1] for b in branches]))
            exp_cost[s, a] = sum(p * c for _, p, c in branches)
        nexts.append(row_n)
        probs.append(row_p)
    return exp_cost, nexts, probs


def value_iteration(mdp: ExactMdp, discount: float, tol: float = 1e-10,
                    max_sweeps: int = 1_000_000) -> tuple[np.ndarray, np.ndarray]:
    """Optimal state values and the (smallest-index) argmin policy."""
    if not 0 <= discount < 1:
        raise ValueError(
            "discount must lie in [0, 1); the enumerated chain has no terminal "
            "states, so an undiscounted sum diverges")
    if tol <= 0:
        raise ValueError("tol must be positive")
    exp_cost, nexts, probs = _compiled(mdp)
    v = np.zeros(mdp.num_states)
    q = np.zeros((mdp.num_states, mdp.num_actions))
    for _ in range(max_sweeps):
        for s in range(mdp.num_states):
            for a in range(mdp.num_actions):
                q[s, a] = exp_cost[s, a] + discount * float(probs[s][a] @ v[nexts[s][a]])
        v_new = q.min(axis=1)
        delta = np.max(np.abs(v_new - v))
        v = v_new
        if delta < tol:
            break
    return v, q.argmin(axis=1)


def policy_evaluation(mdp: ExactMdp, policy: np.ndarray, discount: float,
                      tol: float = 1e-12, max_sweeps: int = 1_000_000) -> np.ndarray:
    """Exact discounted value of a fixed deterministic policy."""
    if not 0 <= discount < 1:
        raise ValueError("discount must lie in [0, 1)")
    exp_cost, nexts, probs = _compiled(mdp)
    v = np.zeros(mdp.num_states)
    for _ in range(max_sweeps):
        v_new = np.empty_like(v)
        for s in range(mdp.num_states):
            a = int(policy[s])
            v_new[s] = exp_cost[s, a] + discount * float(probs[s][a] @ v[nexts[s][a]])
        delta = np.max(np.abs(v_new - v))
        v = v_new
        if delta < tol:
            break
    return v


def q_update(table: QTable, s: int, a: int, cost: float, s_next: int,
             terminal: bool = False) -> float:
    """One Q-learning update; returns the new entry.

    Q(s,a) <- (1 - lr) Q(s,a) + lr (cost + discount * min_a' Q(s',a')),
    with the bootstrap term dropped on terminal transitions.
    """
    bootstrap = 0.0 if terminal else table.discount * float(np.min(table.values[s_next]))
    updated = ((1.0 - table.learning_rate) * table.values[s, a]
               + table.learning_rate * (cost + bootstrap))
    table.values[s, a] = updated
    return updated


def epsilon_for_episode(episode: int, episodes: int, start: float = 1.0,
                        end: float = 0.01, anneal_fraction: float = 0.8) -> float:
    """Linear anneal over the first anneal_fraction of episodes, then flat."""
    horizon = max(1, int(episodes * anneal_fraction))
    frac = min(1.0, episode / horizon)
    return start + (end - start) * frac


def train_tabular(mdp: ExactMdp, table: QTable, episodes: int, steps: int,
                  rng: np.random.Generator, eps_start: float = 1.0,
                  eps_end: float = 0.01, anneal_fraction: float = 0.8,
                  exploring_starts: bool = False) -> QTable:
    """Epsilon-greedy Q-learning on the enumerated chain, sampled transition by
    transition. Deterministic given the rng.

    exploring_starts launches episodes uniformly over the reachable states,
    which evens out coverage of rarely-visited corners on small instances.
    """
    starts = mdp.reachable_ids() if exploring_starts else None
    for episode in range(episodes):
        eps = epsilon_for_episode(episode, episodes, eps_start, eps_end, anneal_fraction)
        if starts is not None:
            s = int(starts[rng.integers(len(starts))])
        else:
            s = mdp.sample_initial(rng)
        for _ in range(steps):
            if rng.random() < eps:
                a = int(rng.integers(mdp.num_actions))
            else:
                a = int(np.argmin(table.values[s]))
            s_next, cost = mdp.sample_transition(s, a, rng)
            q_update(table, s, a, cost, s_next)
            s = s_next
    return table
