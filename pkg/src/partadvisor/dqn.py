"""A small deep Q-network written directly against numpy.

ReLU hidden layers, linear output, Adam updates, a ring replay buffer, an
epsilon-greedy policy restricted to legal actions and a soft-updated target
network. Everything runs in float64 on one core.
"""

from __future__ import annotations

import base64
import json
from collections.abc import Sequence
from pathlib import Path

import numpy as np

CHECKPOINT_FORMAT = "partadvisor-checkpoint"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


class MLP:
    """Fully connected ReLU network; weights are stored as (fan_in, fan_out)."""

    def __init__(self, sizes: Sequence[int], rng: np.random.Generator | None = None):
        self.sizes = tuple(int(s) for s in sizes)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            if rng is None:
                w = np.zeros((fan_in, fan_out))
            else:
                limit = np.sqrt(3.0 / fan_in)
                w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
            self.weights.append(w)
            self.biases.append(np.zeros(fan_out))

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> MLP:
        other = MLP(self.sizes)
        other.weights = [w.copy() for w in self.weights]
        other.biases = [b.copy() for b in self.biases]
        return other

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Return outputs and the per-layer inputs needed by :meth:`backward`."""
        acts = [x]
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                h = np.maximum(h, 0.0)
            acts.append(h)
        return h, acts

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, acts: list[np.ndarray], grad_out: np.ndarray) -> list[np.ndarray]:
        """Gradients in :attr:`params` order given dLoss/dOutput."""
        grads: list[np.ndarray] = [None] * (2 * len(self.weights))  # type: ignore[list-item]
        g = grad_out
        for i in range(len(self.weights) - 1, -1, -1):
            grads[2 * i] = acts[i].T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            if i > 0:
                g = (g @ self.weights[i].T) * (acts[i] > 0)
        return grads

    def widen_input(self, extra: int) -> None:
        """Append ``extra`` zero-weight input units after the existing ones."""
        w = self.weights[0]
        self.weights[0] = np.vstack([w, np.zeros((extra, w.shape[1]))])
        self.sizes = (self.sizes[0] + extra,) + self.sizes[1:]


class Adam:
    def __init__(self, params: Sequence[np.ndarray], lr: float = 5e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-7):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        lr_t = self.lr * np.sqrt(1 - b2 ** self.t) / (1 - b1 ** self.t)
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= lr_t * m / (np.sqrt(v) + self.eps)

    def widen_input(self, extra: int) -> None:
        for moments in (self.m, self.v):
            w = moments[0]
            moments[0] = np.vstack([w, np.zeros((extra, w.shape[1]))])


class ReplayBuffer:
    """Fixed-capacity ring buffer; the oldest transition is overwritten first."""

    def __init__(self, capacity: int, state_dim: int, n_actions: int):
        self.capacity = capacity
        self.states = np.zeros((capacity, state_dim))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, state_dim))
        self.next_masks = np.zeros((capacity, n_actions), dtype=bool)
        self.size = 0
        self._next = 0

    def __len__(self) -> int:
        return self.size

    def add(self, s, a: int, r: float, s_next, next_mask) -> None:
        i = self._next
        self.states[i] = s
        self.actions[i] = a
        self.rewards[i] = r
        self.next_states[i] = s_next
        self.next_masks[i] = next_mask
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator):
        idx = rng.choice(self.size, size=min(batch_size, self.size), replace=False)
        return (self.states[idx], self.actions[idx], self.rewards[idx],
                self.next_states[idx], self.next_masks[idx])

    def widen(self, extra: int) -> None:
        pad = np.zeros((self.capacity, extra))
        self.states = np.hstack([self.states, pad])
        self.next_states = np.hstack([self.next_states, pad])


def predict_q(net: MLP, s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    if s.shape[-1] != net.sizes[0]:
        raise ValueError(f"state has {s.shape[-1]} inputs, network expects {net.sizes[0]}")
    return net(s)


def select_action(q: np.ndarray, mask: np.ndarray, epsilon: float,
                  rng: np.random.Generator) -> int:
    """Epsilon-greedy over legal actions; greedy ties go to the lowest id."""
    legal = np.flatnonzero(mask)
    if len(legal) == 0:
        raise ValueError("no legal action available")
    if epsilon > 0 and rng.random() < epsilon:
        return int(legal[rng.integers(len(legal))])
    return int(legal[np.argmax(q[legal])])


def td_targets(target: MLP, rewards: np.ndarray, next_states: np.ndarray,
               next_masks: np.ndarray, gamma: float) -> np.ndarray:
    if gamma == 0:
        return rewards.astype(float)
    q_next = np.where(next_masks, target(next_states), -np.inf)
    return rewards + gamma * q_next.max(axis=1)


def td_loss_and_grads(net: MLP, states, actions, targets) -> tuple[float, list[np.ndarray]]:
    """Mean squared TD error and its gradient w.r.t. ``net.params``."""
    out, acts = net.forward(states)
    rows = np.arange(len(actions))
    err = out[rows, actions] - targets
    grad_out = np.zeros_like(out)
    grad_out[rows, actions] = 2.0 * err / len(actions)
    return float(np.mean(err ** 2)), net.backward(acts, grad_out)


def soft_update(target: MLP, online: MLP, tau: float) -> MLP:
    if target.sizes != online.sizes:
        raise ValueError("target and online networks differ in shape")
    for t, o in zip(target.params, online.params):
        t *= 1.0 - tau
        t += tau * o
    return target


class QAgent:
    def __init__(self, n_inputs: int, n_actions: int, hidden: Sequence[int] = (128, 64),
                 lr: float = 5e-4, gamma: float = 0.99, tau: float = 1e-3, batch_size: int = 32,
                 buffer_size: int = 10000, eps_start: float = 1.0, eps_decay: float = 0.997,
                 seed: int = 0, fingerprint: str = "", target_update: str = "episode"):
        if target_update not in ("episode", "step"):
            raise ValueError("target_update must be 'episode' or 'step'")
        self.rng = np.random.default_rng(seed)
        self.hidden = tuple(hidden)
        self.online = MLP((n_inputs, *self.hidden, n_actions), self.rng)
        self.target = self.online.copy()
        self.optimizer = Adam(self.online.params, lr=lr)
        self.buffer = ReplayBuffer(buffer_size, n_inputs, n_actions)
        self.gamma = gamma
        self.tau = tau
        self.batch_size = batch_size
        self.eps_start = eps_start
        self.eps_decay = eps_decay
        self.episodes = 0
        self.fingerprint = fingerprint
        self.target_update = target_update

    @property
    def n_inputs(self) -> int:
        return self.online.sizes[0]

    @property
    def n_actions(self) -> int:
        return self.online.sizes[-1]

    @property
    def epsilon(self) -> float:
        return self.eps_start * self.eps_decay ** self.episodes

    def restart_exploration(self, eps_start: float) -> None:
        self.eps_start = eps_start
        self.episodes = 0

    def q_values(self, s: np.ndarray) -> np.ndarray:
        return predict_q(self.online, s)

    def act(self, s: np.ndarray, mask: np.ndarray, greedy: bool = False) -> int:
        eps = 0.0 if greedy else self.epsilon
        return select_action(self.q_values(s), mask, eps, self.rng)

    def remember(self, s, a, r, s_next, next_mask) -> None:
        self.buffer.add(s, a, r, s_next, next_mask)

    def train_step(self, batch=None) -> float:
        if batch is None:
            if len(self.buffer) == 0:
                raise ValueError("replay buffer is empty")
            batch = self.buffer.sample(self.batch_size, self.rng)
        states, actions, rewards, next_states, next_masks = batch
        if len(actions) == 0:
            raise ValueError("empty batch")
        y = td_targets(self.target, rewards, next_states, next_masks, self.gamma)
        loss, grads = td_loss_and_grads(self.online, states, actions, y)
        self.optimizer.step(self.online.params, grads)
        if self.target_update == "step":
            soft_update(self.target, self.online, self.tau)
        return loss

    def end_episode(self) -> None:
        self.episodes += 1
        if self.target_update == "episode":
            soft_update(self.target, self.online, self.tau)

    def widen_inputs(self, extra: int, fingerprint: str | None = None) -> None:
        """Add input units (new query frequencies) whose weights start at zero."""
        self.online.widen_input(extra)
        self.target.widen_input(extra)
        self.optimizer.widen_input(extra)
        self.buffer.widen(extra)
        if fingerprint is not None:
            self.fingerprint = fingerprint

    def clone(self, seed: int) -> QAgent:
        """Deep copy of weights and optimizer state with a fresh RNG and empty buffer."""
        other = QAgent.__new__(QAgent)
        other.__dict__.update(self.__dict__)
        other.online = self.online.copy()
        other.target = self.target.copy()
        other.optimizer = Adam(other.online.params, self.optimizer.lr)
        other.optimizer.m = [m.copy() for m in self.optimizer.m]
        other.optimizer.v = [v.copy() for v in self.optimizer.v]
        other.optimizer.t = self.optimizer.t
        other.buffer = ReplayBuffer(self.buffer.capacity, self.n_inputs, self.n_actions)
        other.rng = np.random.default_rng(seed)
        return other

    # -- checkpoints -------------------------------------------------------

    def to_document(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "fingerprint": self.fingerprint,
            "layers": [list(w.shape) for w in self.online.weights],
            "online": _pack(self.online.params),
            "target": _pack(self.target.params),
            "adam": {"m": _pack(self.optimizer.m), "v": _pack(self.optimizer.v),
                     "t": self.optimizer.t, "lr": self.optimizer.lr},
            "epsilon": {"start": self.eps_start, "decay": self.eps_decay,
                        "episodes": self.episodes},
            "hyper": {"gamma": self.gamma, "tau": self.tau, "batch_size": self.batch_size,
                      "buffer_size": self.buffer.capacity, "target_update": self.target_update},
            "rng": self.rng.bit_generator.state,
        }

    @classmethod
    def from_document(cls, doc: dict, fingerprint: str | None = None) -> QAgent:
        if doc.get("format") != CHECKPOINT_FORMAT:
            raise CheckpointError("not a partadvisor checkpoint")
        if doc.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {doc.get('version')!r}")
        if fingerprint is not None and doc["fingerprint"] != fingerprint:
            raise CheckpointError("checkpoint was trained for a different schema")
        shapes = [tuple(s) for s in doc["layers"]]
        sizes = [shapes[0][0]] + [s[1] for s in shapes]
        h = doc["hyper"]
        agent = cls(sizes[0], sizes[-1], hidden=sizes[1:-1], lr=doc["adam"]["lr"],
                    gamma=h["gamma"], tau=h["tau"], batch_size=h["batch_size"],
                    buffer_size=h["buffer_size"], eps_start=doc["epsilon"]["start"],
                    eps_decay=doc["epsilon"]["decay"], fingerprint=doc["fingerprint"],
                    target_update=h.get("target_update", "episode"))
        _unpack_into(agent.online.params, doc["online"])
        _unpack_into(agent.target.params, doc["target"])
        _unpack_into(agent.optimizer.m, doc["adam"]["m"])
        _unpack_into(agent.optimizer.v, doc["adam"]["v"])
        agent.optimizer.t = doc["adam"]["t"]
        agent.episodes = doc["epsilon"]["episodes"]
        agent.rng.bit_generator.state = doc["rng"]
        return agent

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_document()))

    @classmethod
    def load(cls, path: str | Path, fingerprint: str | None = None) -> QAgent:
        return cls.from_document(json.loads(Path(path).read_text()), fingerprint)


def _pack(arrays: Sequence[np.ndarray]) -> str:
    flat = np.concatenate([a.ravel() for a in arrays]).astype("<f8")
    return base64.b64encode(flat.tobytes()).decode("ascii")


def _unpack_into(arrays: Sequence[np.ndarray], blob: str) -> None:
    flat = np.frombuffer(base64.b64decode(blob), dtype="<f8")
    total = sum(a.size for a in arrays)
    if flat.size != total:
        raise CheckpointError(f"expected {total} values, found {flat.size}")
    pos = 0
    for a in arrays:
        a[...] = flat[pos:pos + a.size].reshape(a.shape)
        pos += a.size
