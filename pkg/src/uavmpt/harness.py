"""Experiment orchestration: seeded training runs, frozen-policy evaluation,
parameter sweeps, and CSV emission.

Every run is a pure function of (config, seed): run ids, file contents and
aggregates contain no timestamps or machine state, so repeating a run yields
byte-identical outputs. Frame files carry one row per frame; summary files one
row per episode; sweeps write one cell directory per (value, policy, seed)
plus an index and an aggregate table.
"""

from __future__ import annotations

import csv
import dataclasses
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ConfigError, SimConfig, TrainingParams, save_config
from .dqn import (AdamState, Experience, MlpParams, ReplayMemory, forward,
                  load_checkpoint, save_checkpoint, sync_target, train_step)
from .env import Action, Simulator
from .exact_mdp import enumerate_exact_mdp
from .schedulers import (POLICY_NAMES, EpsilonSchedule, drlsa_select, lqsa_select,
                         rsa_select)
from .tabular import QTable, policy_evaluation, train_tabular, value_iteration

FRAME_COLUMNS = ["run_id", "policy", "seed", "episode", "step", "cost",
                 "cumulative_cost", "velocity", "scheduled_device", "phi_star",
                 "epsilon", "loss"]
SUMMARY_COLUMNS = ["episode", "total_cost", "mean_velocity", "mean_epsilon", "mean_loss"]
SWEEP_COLUMNS = ["variable", "value", "policy", "phase", "repetitions",
                 "mean_total_cost", "std_total_cost", "mean_loss_rate",
                 "std_loss_rate", "mean_velocity", "std_velocity"]


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass
class RunResult:
    run_id: str
    policy: str
    seed: int
    episode_costs: np.ndarray
    episode_velocities: np.ndarray
    frames_path: Path | None
    summary_path: Path
    checkpoint_path: Path | None
    config_path: Path


@dataclass
class EvalResult:
    episode_costs: np.ndarray
    episode_arrivals: np.ndarray
    episode_velocities: np.ndarray
    frames_path: Path | None

    @property
    def total_cost(self) -> float:
        return float(self.episode_costs.sum())

    @property
    def loss_rate(self) -> float:
        generated = float(self.episode_arrivals.sum())
        return self.total_cost / generated if generated > 0 else 0.0

    @property
    def mean_velocity(self) -> float:
        return float(self.episode_velocities.mean())


class _DrlsaAgent:
    """Online DQN learner driving and trained by the environment loop."""

    def __init__(self, config: SimConfig, train: TrainingParams,
                 init_rng: np.random.Generator, policy_rng: np.random.Generator,
                 replay_rng: np.random.Generator, total_frames: int):
        layer_sizes = (3 * config.num_devices + 3, *train.hidden_sizes,
                       config.num_actions)
        self.online = MlpParams.initialize(layer_sizes, init_rng)
        self.target = self.online.copy()
        self.memory = ReplayMemory(train.replay_capacity)
        self.adam = AdamState.for_params(self.online, train.learning_rate)
        self.schedule = EpsilonSchedule(
            start=train.eps_start, end=train.eps_end,
            decay_frames=max(1, int(total_frames * train.eps_fraction)))
        self.train_params = train
        self.config = config
        self.policy_rng = policy_rng
        self.replay_rng = replay_rng
        self.updates = 0

    def select(self, state_vec: np.ndarray, frame: int) -> tuple[Action, float]:
        eps = self.schedule.value(frame)
        return drlsa_select(state_vec, self.online, eps, self.policy_rng,
                            self.config.num_velocities), eps

    def observe(self, experience: Experience) -> float | None:
        self.memory.push(experience)
        tp = self.train_params
        if len(self.memory) < max(tp.warmup, tp.batch_size):
            return None
        loss = None
        for _ in range(tp.updates_per_frame):
            loss = train_step(self.online, self.target, self.memory, self.adam,
                              tp.batch_size, tp.discount, self.replay_rng,
                              tp.grad_clip)
            self.updates += 1
            sync_target(self.online, self.target, self.updates, tp.target_sync)
        return loss


class _TabularAgent:
    """Greedy policy from tabular Q-learning on the enumerated exact MDP."""

    def __init__(self, config: SimConfig, train: TrainingParams,
                 rng: np.random.Generator):
        if not config.quantized_channel:
            raise ConfigError("the tabular-q policy requires quantized_channel = true")
        self.config = config
        self.mdp = enumerate_exact_mdp(config)
        self.table = QTable(self.mdp.num_states, self.mdp.num_actions,
                            learning_rate=0.1, discount=train.discount)
        train_tabular(self.mdp, self.table, train.episodes, train.steps, rng)

    def state_id(self, state) -> int:
        tup = (tuple(int(q) for q in state.queues)
               + tuple(int(b) for b in state.batteries)
               + tuple(int(b) for b in state.gain_bins)
               + (state.uav.waypoint,))
        return self.mdp.state_index[tup]

    def select(self, state) -> Action:
        row = self.table.values[self.state_id(state)]
        return Action.from_flat(int(np.argmin(row)), self.config.num_velocities)


def _spawn_rngs(seed: int, n: int) -> list[np.random.Generator]:
    seq = np.random.SeedSequence(seed)
    return [np.random.default_rng(child) for child in seq.spawn(n)]


def run_training(config: SimConfig, train: TrainingParams, policy: str,
                 out_dir: str | Path, run_id: str | None = None,
                 write_frames: bool = True) -> RunResult:
    """Train (or simply run) a policy for train.episodes x train.steps frames.

    Episodes are fixed-length: if the UAV finishes its laps mid-episode the
    environment resets and the episode keeps filling, so frame files always
    hold exactly episodes*steps rows.
    """
    if policy not in POLICY_NAMES:
        raise ConfigError(f"unknown policy {policy!r}; expected one of {POLICY_NAMES}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    run_id = run_id or f"{policy}_s{config.seed}"

    env_rng, init_rng, policy_rng, replay_rng = _spawn_rngs(config.seed, 4)
    sim = Simulator(config, env_rng)
    total_frames = train.episodes * train.steps
    agent = None
    if policy == "drlsa":
        agent = _DrlsaAgent(config, train, init_rng, policy_rng, replay_rng,
                            total_frames)
    elif policy == "tabular-q":
        agent = _TabularAgent(config, train, policy_rng)

    config_path = out / f"config_{run_id}.cfg"
    save_config(config, train, config_path)

    frames_path = out / f"frames_{run_id}.csv" if write_frames else None
    summary_path = out / f"summary_{run_id}.csv"
    episode_costs = np.zeros(train.episodes)
    episode_velocities = np.zeros(train.episodes)

    frames_fh = open(frames_path, "w", newline="") if frames_path else None
    frame_writer = None
    if frames_fh:
        frame_writer = csv.writer(frames_fh)
        frame_writer.writerow(FRAME_COLUMNS)
    with open(summary_path, "w", newline="") as summary_fh:
        summary_writer = csv.writer(summary_fh)
        summary_writer.writerow(SUMMARY_COLUMNS)
        frame = 0
        for episode in range(train.episodes):
            sim.reset()
            total_cost = 0.0
            velocities = np.zeros(train.steps)
            epsilons: list[float] = []
            losses: list[float] = []
            for t in range(train.steps):
                eps = loss = None
                if policy == "drlsa":
                    state_vec = sim.encode()
                    action, eps = agent.select(state_vec, frame)
                elif policy == "rsa":
                    action = rsa_select(config, policy_rng)
                elif policy == "lqsa":
                    action = lqsa_select(sim.state, config)
                else:
                    action = agent.select(sim.state)
                outcome = sim.step(action)
                if policy == "drlsa":
                    next_vec = sim.encode()
                    loss = agent.observe(Experience(
                        state_vec, action.flat(config.num_velocities),
                        float(outcome.cost), next_vec, outcome.terminal))
                total_cost += outcome.cost
                velocities[t] = outcome.velocity
                if eps is not None:
                    epsilons.append(eps)
                if loss is not None:
                    losses.append(loss)
                if frame_writer:
                    frame_writer.writerow([
                        run_id, policy, str(config.seed), str(episode), str(t),
                        str(outcome.cost), _fmt(total_cost), _fmt(outcome.velocity),
                        str(action.device), _fmt(outcome.phi_star), _fmt(eps),
                        _fmt(loss),
                    ])
                frame += 1
                if outcome.terminal:
                    sim.reset()
            episode_costs[episode] = total_cost
            episode_velocities[episode] = velocities.mean()
            summary_writer.writerow([
                str(episode), _fmt(total_cost), _fmt(float(velocities.mean())),
                _fmt(float(np.mean(epsilons)) if epsilons else None),
                _fmt(float(np.mean(losses)) if losses else None),
            ])
    if frames_fh:
        frames_fh.close()

    checkpoint_path = None
    if policy == "drlsa":
        checkpoint_path = out / f"checkpoint_{run_id}.json"
        save_checkpoint(agent.online, checkpoint_path, agent.adam.step)
    elif policy == "tabular-q":
        checkpoint_path = out / f"qtable_{run_id}.csv"
        agent.table.dump_csv(checkpoint_path)

    return RunResult(run_id=run_id, policy=policy, seed=config.seed,
                     episode_costs=episode_costs,
                     episode_velocities=episode_velocities,
                     frames_path=frames_path, summary_path=summary_path,
                     checkpoint_path=checkpoint_path, config_path=config_path)


def evaluate_policy(config: SimConfig, train: TrainingParams, policy: str,
                    out_dir: str | Path | None = None, run_id: str | None = None,
                    params: MlpParams | None = None,
                    checkpoint: str | Path | None = None,
                    episodes: int | None = None) -> EvalResult:
    """Run a frozen policy (epsilon = 0) and report costs, loss rate, velocity.

    A deterministic evaluation stream (separate from the training streams)
    drives the environment, so baselines and trained policies face identical
    conditions for a given seed.
    """
    if policy not in POLICY_NAMES:
        raise ConfigError(f"unknown policy {policy!r}; expected one of {POLICY_NAMES}")
    episodes = episodes or train.eval_episodes
    if policy == "drlsa" and params is None:
        if checkpoint is None:
            raise ConfigError("evaluating drlsa needs a checkpoint or parameters")
        params, _ = load_checkpoint(checkpoint)

    rngs = _spawn_rngs(config.seed, 6)
    env_rng, policy_rng = rngs[4], rngs[5]
    sim = Simulator(config, env_rng)
    tab_agent = _TabularAgent(config, train, rngs[2]) if policy == "tabular-q" else None

    run_id = run_id or f"{policy}_s{config.seed}"
    frames_path = None
    frame_writer = None
    frames_fh = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        frames_path = out / f"eval_frames_{run_id}.csv"
        frames_fh = open(frames_path, "w", newline="")
        frame_writer = csv.writer(frames_fh)
        frame_writer.writerow(FRAME_COLUMNS)

    episode_costs = np.zeros(episodes)
    episode_arrivals = np.zeros(episodes)
    episode_velocities = np.zeros(episodes)
    for episode in range(episodes):
        sim.reset()
        cost = arrivals = 0.0
        velocities = np.zeros(train.steps)
        for t in range(train.steps):
            if policy == "drlsa":
                action = drlsa_select(sim.encode(), params, 0.0, policy_rng,
                                      config.num_velocities)
            elif policy == "rsa":
                action = rsa_select(config, policy_rng)
            elif policy == "lqsa":
                action = lqsa_select(sim.state, config)
            else:
                action = tab_agent.select(sim.state)
            outcome = sim.step(action)
            cost += outcome.cost
            arrivals += outcome.arrivals
            velocities[t] = outcome.velocity
            if frame_writer:
                frame_writer.writerow([
                    run_id, policy, str(config.seed), str(episode), str(t),
                    str(outcome.cost), _fmt(cost), _fmt(outcome.velocity),
                    str(action.device), _fmt(outcome.phi_star), _fmt(0.0), "",
                ])
            if outcome.terminal:
                sim.reset()
        episode_costs[episode] = cost
        episode_arrivals[episode] = arrivals
        episode_velocities[episode] = velocities.mean()
    if frames_fh:
        frames_fh.close()
    return EvalResult(episode_costs=episode_costs, episode_arrivals=episode_arrivals,
                      episode_velocities=episode_velocities, frames_path=frames_path)


@dataclass(frozen=True)
class SweepSpec:
    variable: str                      # num_devices | queue_capacity | discount
    values: tuple
    episodes: int
    steps: int
    repetitions: int = 1
    eval_episodes: int = 5
    policies: tuple[str, ...] = ("drlsa", "rsa", "lqsa")

    def __post_init__(self):
        if self.variable not in ("num_devices", "queue_capacity", "discount"):
            raise ConfigError(f"unsupported sweep variable {self.variable!r}")
        if not self.values:
            raise ConfigError("sweep needs at least one value")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        for p in self.policies:
            if p not in POLICY_NAMES:
                raise ConfigError(f"unknown policy {p!r}")


def _cell_configs(spec: SweepSpec, base_sim: SimConfig, base_train: TrainingParams,
                  value, seed: int) -> tuple[SimConfig, TrainingParams]:
    train = dataclasses.replace(base_train, episodes=spec.episodes, steps=spec.steps,
                                eval_episodes=spec.eval_episodes)
    if spec.variable == "discount":
        train = dataclasses.replace(train, discount=value)
        sim = dataclasses.replace(base_sim, seed=seed)
    else:
        sim = dataclasses.replace(base_sim, **{spec.variable: value}, seed=seed)
    return sim, train


def _run_cell(args) -> dict:
    spec, base_sim, base_train, value, policy, seed, out_root = args
    sim_cfg, train_cfg = _cell_configs(spec, base_sim, base_train, value, seed)
    run_id = f"{spec.variable}-{value}_{policy}_s{seed}"
    cell_dir = Path(out_root) / "cells" / run_id
    needs_training = policy in ("drlsa", "tabular-q")
    params = None
    train_final_cost = None
    if needs_training:
        result = run_training(sim_cfg, train_cfg, policy, cell_dir, run_id=run_id,
                              write_frames=False)
        tail = max(1, len(result.episode_costs) // 4)
        train_final_cost = float(result.episode_costs[-tail:].mean())
        if policy == "drlsa":
            params, _ = load_checkpoint(result.checkpoint_path)
    else:
        cell_dir.mkdir(parents=True, exist_ok=True)
        save_config(sim_cfg, train_cfg, cell_dir / f"config_{run_id}.cfg")
    ev = evaluate_policy(sim_cfg, train_cfg, policy, out_dir=cell_dir, run_id=run_id,
                         params=params, episodes=spec.eval_episodes)
    return {
        "run_id": run_id, "variable": spec.variable, "value": value,
        "policy": policy, "seed": seed,
        "eval_total_cost": ev.total_cost, "eval_loss_rate": ev.loss_rate,
        "eval_mean_velocity": ev.mean_velocity,
        "train_final_cost": train_final_cost,
        "eval_frames": str(ev.frames_path.relative_to(out_root)),
    }


def run_sweep(spec: SweepSpec, base_sim: SimConfig, base_train: TrainingParams,
              out_dir: str | Path, workers: int = 1) -> Path:
    """Train + evaluate every (value, policy, seed) cell; returns the aggregate CSV.

    Cells are independent seeded runs, so they may execute in parallel;
    aggregation is a deterministic single-threaded reduce over the results.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seeds = [base_sim.seed + rep for rep in range(spec.repetitions)]
    tasks = [(spec, base_sim, base_train, value, policy, seed, out)
             for value in spec.values for policy in spec.policies for seed in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_cell, tasks))
    else:
        rows = [_run_cell(task) for task in tasks]

    cells_path = out / "cells.csv"
    with open(cells_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["run_id", "variable", "value", "policy", "seed",
                  "eval_total_cost", "eval_loss_rate", "eval_mean_velocity",
                  "train_final_cost", "eval_frames"]
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(row[k]) for k in header])

    summary_path = out / "sweep_summary.csv"
    with open(summary_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SWEEP_COLUMNS)
        for value in spec.values:
            for policy in spec.policies:
                cells = [r for r in rows
                         if r["value"] == value and r["policy"] == policy]
                for phase in ("eval", "train"):
                    if phase == "eval":
                        costs = [r["eval_total_cost"] for r in cells]
                        rates = [r["eval_loss_rate"] for r in cells]
                        vels = [r["eval_mean_velocity"] for r in cells]
                    else:
                        costs = [r["train_final_cost"] for r in cells
                                 if r["train_final_cost"] is not None]
                        if not costs:
                            continue
                        rates, vels = [], []
                    writer.writerow([
                        spec.variable, _fmt(value), policy, phase, str(len(cells)),
                        _fmt(_mean(costs)), _fmt(_std(costs)),
                        _fmt(_mean(rates)), _fmt(_std(rates)),
                        _fmt(_mean(vels)), _fmt(_std(vels)),
                    ])
    return summary_path


def _mean(xs) -> float | None:
    return float(np.mean(xs)) if len(xs) else None


def _std(xs) -> float | None:
    if not len(xs):
        return None
    return float(np.std(xs, ddof=1)) if len(xs) > 1 else 0.0


def episodes_to_stabilization(episode_costs: np.ndarray, window: int = 20,
                              band: float = 0.10) -> int:
    """First episode index after which the trailing moving average stays within
    band * |final average| of the final average; the final average is the last
    window's mean."""
    costs = np.asarray(episode_costs, dtype=float)
    if len(costs) < window:
        raise ValueError("need at least `window` episodes")
    kernel = np.ones(window) / window
    ma = np.convolve(costs, kernel, mode="valid")   # ma[k] covers episodes k..k+window-1
    final = ma[-1]
    tol = band * abs(final)
    inside = np.abs(ma - final) <= tol
    # walk backwards to the first index from which every later average stays inside
    k = len(ma)
    while k > 0 and inside[k - 1]:
        k -= 1
    return k + window - 1 if k < len(ma) else len(costs) - 1


def load_summary_costs(summary_path: str | Path) -> np.ndarray:
    """Per-episode total cost column of a summary CSV."""
    with open(summary_path, newline="") as fh:
        reader = csv.DictReader(fh)
        return np.array([float(row["total_cost"]) for row in reader])


@dataclass
class OracleReport:
    num_states: int
    num_reachable: int
    optimal_mean_value: float
    tabular_mean_value: float
    tabular_gap: float                  # relative gap of mean values
    dqn_match_fraction: float           # strict argmin agreement on reachable states
    dqn_mean_regret: float              # mean Q-value excess of the DQN's choices

    def describe(self) -> str:
        return (
            f"states={self.num_states} reachable={self.num_reachable}\n"
            f"value iteration mean value : {self.optimal_mean_value:.6f}\n"
            f"tabular Q greedy mean value: {self.tabular_mean_value:.6f} "
            f"(gap {100 * self.tabular_gap:.3f}%)\n"
            f"dqn argmin agreement       : {100 * self.dqn_match_fraction:.1f}% "
            f"(mean regret {self.dqn_mean_regret:.6f})"
        )


def action_values(mdp, values: np.ndarray, discount: float) -> np.ndarray:
    """Q(s, a) implied by a state-value vector."""
    q = np.zeros((mdp.num_states, mdp.num_actions))
    for s in range(mdp.num_states):
        for a in range(mdp.num_actions):
            q[s, a] = sum(p * (c + discount * values[nxt])
                          for nxt, p, c in mdp.transitions[s][a])
    return q


TABULAR_ORACLE_SCHEDULE = (
    # (learning rate, episodes, eps start, eps end): coarse-to-fine annealing
    (0.25, 1500, 1.0, 0.3),
    (0.10, 1500, 0.3, 0.15),
    (0.05, 1500, 0.15, 0.1),
    (0.02, 2000, 0.1, 0.1),
)


def train_tabular_oracle(mdp, discount: float, rng: np.random.Generator,
                         steps: int = 100) -> QTable:
    """Q-learning with a decaying step size and exploring starts; converges
    tightly enough to be compared against value iteration."""
    table = QTable(mdp.num_states, mdp.num_actions,
                   learning_rate=TABULAR_ORACLE_SCHEDULE[0][0], discount=discount)
    for lr, episodes, eps_start, eps_end in TABULAR_ORACLE_SCHEDULE:
        table.learning_rate = lr
        train_tabular(mdp, table, episodes, steps, rng, eps_start=eps_start,
                      eps_end=eps_end, exploring_starts=True)
    return table


def run_oracle(config: SimConfig, train: TrainingParams,
               out_dir: str | Path) -> OracleReport:
    """Tiny-instance agreement check: value iteration vs tabular Q vs DQN."""
    mdp = enumerate_exact_mdp(config)
    v_star, pi_star = value_iteration(mdp, train.discount)
    q_star = action_values(mdp, v_star, train.discount)
    reachable = mdp.reachable_ids()

    table = train_tabular_oracle(mdp, train.discount,
                                 np.random.default_rng(config.seed + 1))
    v_tab = policy_evaluation(mdp, table.greedy_policy(), train.discount)

    result = run_training(config, train, "drlsa", out_dir, write_frames=False)
    params, _ = load_checkpoint(result.checkpoint_path)
    matches = 0
    regret = 0.0
    for s in reachable:
        a_dqn = int(np.argmin(forward(params, mdp.encode(s))))
        if a_dqn == int(pi_star[s]):
            matches += 1
        regret += q_star[s, a_dqn] - q_star[s, int(pi_star[s])]

    opt_mean = float(v_star[reachable].mean())
    tab_mean = float(v_tab[reachable].mean())
    return OracleReport(
        num_states=mdp.num_states, num_reachable=len(reachable),
        optimal_mean_value=opt_mean, tabular_mean_value=tab_mean,
        tabular_gap=abs(tab_mean - opt_mean) / max(abs(opt_mean), 1e-12),
        dqn_match_fraction=matches / len(reachable),
        dqn_mean_regret=regret / len(reachable),
    )
