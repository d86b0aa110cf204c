"""Self-contained deep Q-network: numpy MLP, reverse-mode gradients, Adam,
uniform experience replay, and a periodically synchronized target network.

Outputs are expected discounted *costs*, one per flat action, so policies take
the argmin. Everything runs in double precision so the finite-difference
gradient checks can be held to tight tolerances.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class Experience:
    state: np.ndarray
    action: int
    cost: float
    next_state: np.ndarray
    terminal: bool


class ReplayMemory:
    """Fixed-capacity ring buffer; push evicts the oldest record."""

    def __init__(self, capacity: int = 5000):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._records: list[Experience] = []
        self._cursor = 0

    def __len__(self) -> int:
        return len(self._records)

    def push(self, record: Experience) -> None:
        if len(self._records) < self.capacity:
            self._records.append(record)
        else:
            self._records[self._cursor] = record
        self._cursor = (self._cursor + 1) % self.capacity

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[Experience]:
        """Uniform sample with replacement."""
        if len(self._records) < batch_size:
            raise ValueError(
                f"memory holds {len(self._records)} records, need {batch_size}")
        idx = rng.integers(0, len(self._records), size=batch_size)
        return [self._records[i] for i in idx]

    def records(self) -> list[Experience]:
        return list(self._records)


@dataclass
class MlpParams:
    """Weights and biases of a rectifier MLP with identity output."""

    layer_sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def initialize(cls, layer_sizes, rng: np.random.Generator) -> "MlpParams":
        """Fan-in-scaled uniform weights and biases.

        Biases are randomized too: zero biases would leave pre-activations of
        dead rectifier rows sitting exactly on the kink, where numeric and
        analytic gradients legitimately disagree.
        """
        sizes = tuple(int(s) for s in layer_sizes)
        if len(sizes) < 2:
            raise ValueError("need at least input and output layers")
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(rng.uniform(-bound, bound, size=fan_out))
        return cls(layer_sizes=sizes, weights=weights, biases=biases)

    def copy(self) -> "MlpParams":
        return MlpParams(self.layer_sizes, [w.copy() for w in self.weights],
                         [b.copy() for b in self.biases])

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_dim(self) -> int:
        return self.layer_sizes[-1]


def forward(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Q-values for one state vector or a batch of them."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    h = x[None, :] if single else x
    if h.shape[1] != params.input_dim:
        raise ValueError(f"input dim {h.shape[1]} != network input {params.input_dim}")
    last = len(params.weights) - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if k < last:
            h = np.maximum(h, 0.0)
    return h[0] if single else h


def _forward_cached(params: MlpParams, x: np.ndarray):
    """Forward pass keeping post-activation layer inputs for the backward pass."""
    activations = [x]
    h = x
    last = len(params.weights) - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if k < last:
            h = np.maximum(h, 0.0)
        activations.append(h)
    return activations


def backward(params: MlpParams, activations: list[np.ndarray],
             d_out: np.ndarray) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Reverse-mode gradients of a scalar loss given d(loss)/d(output)."""
    grads_w = [np.empty_like(w) for w in params.weights]
    grads_b = [np.empty_like(b) for b in params.biases]
    delta = d_out
    for k in reversed(range(len(params.weights))):
        grads_w[k] = activations[k].T @ delta
        grads_b[k] = delta.sum(axis=0)
        if k > 0:
            delta = delta @ params.weights[k].T
            delta = delta * (activations[k] > 0.0)
    return grads_w, grads_b


def loss_and_gradients(params: MlpParams, states: np.ndarray, actions: np.ndarray,
                       targets: np.ndarray):
    """Mean squared TD error over the batch (only the taken action's output
    participates) and its gradients."""
    acts = _forward_cached(params, states)
    out = acts[-1]
    n = states.shape[0]
    picked = out[np.arange(n), actions]
    residual = picked - targets
    loss = float(np.mean(residual ** 2))
    d_out = np.zeros_like(out)
    d_out[np.arange(n), actions] = 2.0 * residual / n
    grads_w, grads_b = backward(params, acts, d_out)
    return loss, grads_w, grads_b


@dataclass
class AdamState:
    """Adam accumulators mirroring an MlpParams, plus the global step counter."""

    learning_rate: float = 0.0001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m_w: list[np.ndarray] = field(default_factory=list)
    v_w: list[np.ndarray] = field(default_factory=list)
    m_b: list[np.ndarray] = field(default_factory=list)
    v_b: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: MlpParams, learning_rate: float = 0.0001) -> "AdamState":
        return cls(
            learning_rate=learning_rate,
            m_w=[np.zeros_like(w) for w in params.weights],
            v_w=[np.zeros_like(w) for w in params.weights],
            m_b=[np.zeros_like(b) for b in params.biases],
            v_b=[np.zeros_like(b) for b in params.biases],
        )


def clip_gradients(grads_w: list[np.ndarray], grads_b: list[np.ndarray],
                   max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm."""
    total = 0.0
    for g in grads_w:
        total += float(np.sum(g * g))
    for g in grads_b:
        total += float(np.sum(g * g))
    norm = np.sqrt(total)
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for g in grads_w:
            g *= scale
        for g in grads_b:
            g *= scale
    return norm


def adam_step(params: MlpParams, adam: AdamState, grads_w: list[np.ndarray],
              grads_b: list[np.ndarray]) -> None:
    adam.step += 1
    t = adam.step
    corr1 = 1.0 - adam.beta1 ** t
    corr2 = 1.0 - adam.beta2 ** t
    for tensors, grads, ms, vs in (
        (params.weights, grads_w, adam.m_w, adam.v_w),
        (params.biases, grads_b, adam.m_b, adam.v_b),
    ):
        for p, g, m, v in zip(tensors, grads, ms, vs):
            m *= adam.beta1
            m += (1.0 - adam.beta1) * g
            v *= adam.beta2
            v += (1.0 - adam.beta2) * g * g
            p -= adam.learning_rate * (m / corr1) / (np.sqrt(v / corr2) + adam.eps)


def td_targets(batch: list[Experience], online: MlpParams, target: MlpParams,
               discount: float) -> np.ndarray:
    """Bootstrap targets: cost, plus the discounted target-network minimum over
    next-state actions for non-terminal records."""
    if not batch:
        raise ValueError("batch must be non-empty")
    costs = np.array([e.cost for e in batch], dtype=float)
    terminal = np.array([e.terminal for e in batch])
    next_states = np.stack([e.next_state for e in batch])
    next_min = forward(target, next_states).min(axis=1)
    return costs + np.where(terminal, 0.0, discount * next_min)


def train_step(online: MlpParams, target: MlpParams, memory: ReplayMemory,
               adam: AdamState, batch_size: int, discount: float,
               rng: np.random.Generator, grad_clip: float = 10.0) -> float:
    """One minibatch update of the online network; returns the pre-step loss.

    The target network is never touched here; sync_target handles that.
    """
    batch = memory.sample(batch_size, rng)
    states = np.stack([e.state for e in batch])
    actions = np.array([e.action for e in batch], dtype=np.int64)
    targets = td_targets(batch, online, target, discount)
    loss, grads_w, grads_b = loss_and_gradients(online, states, actions, targets)
    clip_gradients(grads_w, grads_b, grad_clip)
    adam_step(online, adam, grads_w, grads_b)
    return loss


def sync_target(online: MlpParams, target: MlpParams, update_count: int,
                period: int) -> bool:
    """Copy online weights into the target every `period` updates.

    update_count is the global number of updates performed so far; the copy
    happens exactly when it is a positive multiple of the period.
    """
    if period < 1:
        raise ValueError("period must be >= 1")
    if update_count > 0 and update_count % period == 0:
        for dst, src in zip(target.weights, online.weights):
            np.copyto(dst, src)
        for dst, src in zip(target.biases, online.biases):
            np.copyto(dst, src)
        return True
    return False


def save_checkpoint(params: MlpParams, path: str | Path, adam_step_count: int = 0) -> None:
    """Versioned JSON checkpoint; floats round-trip bit-exactly via repr."""
    payload = {
        "version": CHECKPOINT_VERSION,
        "layer_sizes": list(params.layer_sizes),
        "weights": [w.tolist() for w in params.weights],
        "biases": [b.tolist() for b in params.biases],
        "adam_step": adam_step_count,
    }
    Path(path).write_text(json.dumps(payload))


def load_checkpoint(path: str | Path) -> tuple[MlpParams, int]:
    payload = json.loads(Path(path).read_text())
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')!r}")
    params = MlpParams(
        layer_sizes=tuple(payload["layer_sizes"]),
        weights=[np.array(w, dtype=float) for w in payload["weights"]],
        biases=[np.array(b, dtype=float) for b in payload["biases"]],
    )
    return params, int(payload["adam_step"])
