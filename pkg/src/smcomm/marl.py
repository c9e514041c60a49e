"""Emergent communication on a one-step referential game with CTDE training.

The speaker sees a one-hot target and emits a tanh message; the listener
sees only the message and picks a target. A shared critic supplies a
state-value baseline during training and is discarded afterwards.
"""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass, field

import numpy as np

from .channels import dequantize, quantize
from .errors import ConfigurationError, RejectedInputError, TrainingDivergenceError
from .nn import DenseNet, backprop, backward, forward, loss_and_output_grad, sgd_step

LOG_LEVELS = 16  # cell resolution recorded for unquantized execution


@dataclass(frozen=True)
class ReferentialEnv:
    n_targets: int

    def __post_init__(self):
        if self.n_targets < 1:
            raise ConfigurationError("n_targets must be positive")

    @property
    def states(self) -> range:
        return range(self.n_targets)

    def observe(self, states) -> np.ndarray:
        return np.eye(self.n_targets)[np.asarray(states)]

    def reward(self, states, actions) -> np.ndarray:
        return (np.asarray(states) == np.asarray(actions)).astype(np.float64)


@dataclass(frozen=True)
class TrainConfig:
    episodes: int = 20_000
    lr: float = 0.5
    critic_lr: float = 0.05
    message_dim: int = 2
    hidden: int = 16
    noise_sigma: float = 0.5
    exec_levels: int = 2
    batch_size: int = 32
    seed: int = 0
    ablate_messages: bool = False
    reward_window: int = 500

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ConfigurationError("noise_sigma must be non-negative")
        if self.exec_levels < 2:
            raise ConfigurationError("exec_levels must be at least 2")
        if self.episodes < 0 or self.batch_size < 1 or self.message_dim < 1:
            raise ConfigurationError("invalid episode, batch or message size")


@dataclass(frozen=True, eq=False)
class CommPolicy:
    """Decentralized execution: speaker, listener and the message quantizer."""

    speaker: DenseNet
    listener: DenseNet
    levels: int | None = None

    def message(self, states, env: ReferentialEnv) -> tuple[np.ndarray, np.ndarray]:
        """(cells, message the listener receives) for a batch of states."""
        raw = self.speaker(env.observe(np.atleast_1d(states)))
        if self.levels is None:
            return quantize(raw, LOG_LEVELS), raw
        cells = quantize(raw, self.levels)
        return cells, dequantize(cells, self.levels)

    def act(self, states, env: ReferentialEnv) -> tuple[np.ndarray, np.ndarray]:
        """Greedy actions (lowest index on ties) and message cells."""
        cells, msg = self.message(states, env)
        return cells, np.argmax(self.listener(msg), axis=1)


@dataclass
class CTDEResult:
    speaker: DenseNet
    listener: DenseNet
    critic: DenseNet
    reward_curve: np.ndarray  # moving average of per-episode reward
    episode_rewards: np.ndarray

    @property
    def final_reward(self) -> float:
        return float(self.reward_curve[-1]) if len(self.reward_curve) else 0.0

    def policy(self, levels: int | None) -> CommPolicy:
        return CommPolicy(self.speaker, self.listener, levels)


def init_agents(env: ReferentialEnv, config: TrainConfig, rng: np.random.Generator):
    n, m, h = env.n_targets, config.message_dim, config.hidden
    speaker = DenseNet.init([n, h, m], ["tanh", "tanh"], rng)
    listener = DenseNet.init([m, h, n], ["tanh", "softmax"], rng)
    critic = DenseNet.init([n, h, 1], ["tanh", "affine"], rng)
    return speaker, listener, critic


def moving_average(x: np.ndarray, window: int) -> np.ndarray:
    """Trailing mean over up to ``window`` previous entries."""
    x = np.asarray(x, dtype=np.float64)
    c = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(1, len(x) + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


def ctde_train(env: ReferentialEnv, config: TrainConfig) -> CTDEResult:
    """Actor-critic training with a differentiable noisy message channel.

    The listener gets a score-function gradient weighted by the advantage
    (reward minus critic value); that gradient continues through the
    message into the speaker. Gaussian noise is added to messages only here.
    """
    rng = np.random.default_rng(config.seed)
    speaker, listener, critic = init_agents(env, config, rng)
    n = env.n_targets
    rewards = np.empty(config.episodes)
    done = 0
    step = 0
    while done < config.episodes:
        b = min(config.batch_size, config.episodes - done)
        states = rng.integers(0, n, size=b)
        obs = env.observe(states)
        sp_trace = forward(speaker, obs)
        msg = sp_trace[-1]
        noisy = msg + rng.normal(0.0, config.noise_sigma, msg.shape) if config.noise_sigma else msg
        if config.ablate_messages:
            noisy = np.zeros_like(msg)
        li_trace = forward(listener, noisy)
        probs = li_trace[-1]
        u = rng.random(b)
        actions = np.minimum(np.sum(np.cumsum(probs, axis=1) <= u[:, None], axis=1), n - 1)
        r = env.reward(states, actions)
        rewards[done:done + b] = r

        cr_trace = forward(critic, obs)
        value = cr_trace[-1][:, 0]
        advantage = r - value
        _, cr_grads = backward(critic, cr_trace, "mse", r[:, None])
        # cross-entropy with target A * onehot(a) is -A log pi(a)
        _, kw = loss_and_output_grad(listener, probs, "cross_entropy",
                                     advantage[:, None] * np.eye(n)[actions])
        li_grads, grad_msg = backprop(listener, li_trace, **kw)
        if not np.all(np.isfinite(grad_msg)):
            raise TrainingDivergenceError("non-finite message gradient", step)
        critic = sgd_step(critic, cr_grads, config.critic_lr, step)
        listener = sgd_step(listener, li_grads, config.lr, step)
        if not config.ablate_messages:
            sp_grads, _ = backprop(speaker, sp_trace, grad_output=grad_msg)
            speaker = sgd_step(speaker, sp_grads, config.lr, step)
        done += b
        step += 1
    curve = moving_average(rewards, config.reward_window)
    return CTDEResult(speaker, listener, critic, curve, rewards)


@dataclass
class MessageLog:
    states: np.ndarray
    cells: np.ndarray    # (episodes, message_dim) quantizer cell ids
    actions: np.ndarray
    levels: int

    def __len__(self):
        return len(self.states)

    def rows(self):
        for s, c, a in zip(self.states, self.cells, self.actions):
            yield int(s), tuple(int(v) for v in c), int(a)

    def to_csv(self) -> str:
        lines = ["state,message_cells,action"]
        for s, c, a in self.rows():
            lines.append(f"{s},{' '.join(str(v) for v in c)},{a}")
        return "\n".join(lines) + "\n"


def execute(speaker: DenseNet, listener: DenseNet, env: ReferentialEnv,
            episodes: int | None, quantization: int | None,
            rng: np.random.Generator | None = None) -> tuple[float, MessageLog]:
    """Greedy decentralized execution; no critic involved.

    ``episodes=None`` sweeps every state once. ``quantization=None`` passes
    the real-valued message through (log cells then use 16 levels).
    """
    policy = CommPolicy(speaker, listener, quantization)
    if episodes is None:
        states = np.arange(env.n_targets)
    else:
        if rng is None:
            raise RejectedInputError("sampled execution needs an rng")
        states = rng.integers(0, env.n_targets, size=episodes)
    cells, actions = policy.act(states, env)
    reward = float(env.reward(states, actions).mean()) if len(states) else 0.0
    levels = LOG_LEVELS if quantization is None else quantization
    return reward, MessageLog(states, cells, actions, levels)


def mutual_information_bits(xs, ys) -> float:
    """Plug-in estimate of I(X; Y) from paired samples."""
    n = len(xs)
    if n == 0:
        raise RejectedInputError("no samples")
    joint = Counter(zip(xs, ys))
    px = Counter(xs)
    py = Counter(ys)
    mi = 0.0
    for (x, y), c in joint.items():
        mi += c / n * np.log2(c * n / (px[x] * py[y]))
    return float(max(mi, 0.0))


@dataclass
class EmergentSRReport:
    table: dict[int, dict[tuple[int, ...], int]] = field(default_factory=dict)
    mutual_information_bits: float = 0.0
    n_distinct_messages: int = 0

    def to_json(self) -> dict:
        return {"mutual_information_bits": self.mutual_information_bits,
                "n_distinct_messages": self.n_distinct_messages,
                "table": {str(s): {" ".join(map(str, m)): c for m, c in sorted(msgs.items())}
                          for s, msgs in sorted(self.table.items())}}


def emergent_sr_report(log: MessageLog) -> EmergentSRReport:
    if len(log) == 0:
        raise RejectedInputError("message log is empty")
    table: dict = defaultdict(Counter)
    states, msgs = [], []
    for s, c, _ in log.rows():
        table[s][c] += 1
        states.append(s)
        msgs.append(c)
    return EmergentSRReport({s: dict(cnt) for s, cnt in table.items()},
                            mutual_information_bits(states, msgs), len(set(msgs)))
