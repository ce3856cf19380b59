"""Deep Q-learning for the load-shaping policy.

Vanilla DQN: an MLP Q-network with a periodically synced target copy, a FIFO
replay buffer, epsilon-greedy exploration with a linear decay schedule, and
one squared-TD-error gradient step per environment step. Training is
single-threaded and fully deterministic under a fixed seed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, asdict, field
from pathlib import Path
from typing import Protocol

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import seeding
from .env import ActionSpace, BatteryConfig, EnvState, HouseholdEnv, feasible_action_bounds
from .errors import CheckpointError, ConfigError, TrainingDiverged
from .rewards import RewardEngine
from .serialize import load_checkpoint, save_checkpoint


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    gamma: float = 0.99
    target_sync_every: int = 10_000     # env steps between target-network copies
    episodes: int = 1500
    steps_per_episode: int = 1440
    eps_initial: float = 1.0
    eps_final: float = 0.05
    eps_decay_fraction: float = 0.1     # fraction of total steps spent decaying
    batch_size: int = 32
    learning_starts: int = 1000         # stored transitions before updates begin
    replay_capacity: int = 1_000_000
    hidden_sizes: tuple[int, int] = (64, 64)
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.gamma <= 1.0):
            raise ConfigError(f"gamma must be in (0, 1], got {self.gamma}")
        if not (0.0 <= self.eps_final <= self.eps_initial <= 1.0):
            raise ConfigError(
                f"need 0 <= eps_final <= eps_initial <= 1, got "
                f"{self.eps_final}, {self.eps_initial}")
        if not (0.0 <= self.eps_decay_fraction <= 1.0):
            raise ConfigError(f"eps_decay_fraction must be in [0, 1]")
        if min(self.episodes, self.steps_per_episode, self.batch_size,
               self.target_sync_every, self.replay_capacity) < 1:
            raise ConfigError("episodes/steps/batch/sync/capacity must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")

    @property
    def total_steps(self) -> int:
        return self.episodes * self.steps_per_episode


class QNetwork(nn.Module):
    """MLP mapping a scaled observation to one Q-value per action level."""

    def __init__(self, input_dim: int, n_actions: int, hidden_sizes=(64, 64)):
        super().__init__()
        layers: list[nn.Module] = []
        prev = input_dim
        for width in hidden_sizes:
            layers += [nn.Linear(prev, width), nn.ReLU()]
            prev = width
        layers.append(nn.Linear(prev, n_actions))
        self.net = nn.Sequential(*layers)
        self.input_dim = input_dim
        self.n_actions = n_actions

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)

    def q_values(self, obs: np.ndarray) -> np.ndarray:
        with torch.inference_mode():
            out = self(torch.as_tensor(obs, dtype=torch.float32).reshape(1, -1))
        return out.numpy()[0]


class ReplayBuffer:
    """Preallocated FIFO ring of transitions with uniform sampling."""

    def __init__(self, capacity: int, obs_dim: int):
        self.capacity = int(capacity)
        self.obs = np.zeros((capacity, obs_dim), dtype=np.float32)
        self.next_obs = np.zeros((capacity, obs_dim), dtype=np.float32)
        self.action = np.zeros(capacity, dtype=np.int64)
        self.reward = np.zeros(capacity, dtype=np.float32)
        self.done = np.zeros(capacity, dtype=np.float32)
        self._next = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def push(self, obs, action, reward, next_obs, done) -> None:
        i = self._next
        self.obs[i] = obs
        self.action[i] = action
        self.reward[i] = reward
        self.next_obs[i] = next_obs
        self.done[i] = float(done)
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, rng: np.random.Generator, batch_size: int):
        """Uniform minibatch (with replacement) over the stored transitions."""
        idx = rng.integers(0, self._size, size=batch_size)
        return (self.obs[idx], self.action[idx], self.reward[idx],
                self.next_obs[idx], self.done[idx])


def epsilon_at(global_step: int, cfg: TrainConfig) -> float:
    """Linear decay from eps_initial to eps_final, then flat."""
    horizon = cfg.eps_decay_fraction * cfg.total_steps
    if horizon <= 0:
        return cfg.eps_final
    frac = min(global_step / horizon, 1.0)
    return cfg.eps_initial + (cfg.eps_final - cfg.eps_initial) * frac


def greedy_index(q_values: np.ndarray) -> int:
    """Argmax with ties broken toward the lowest index."""
    return int(np.argmax(q_values))


def select_action(qnet: QNetwork, obs: np.ndarray, epsilon: float,
                  rng: np.random.Generator) -> int:
    """Epsilon-greedy: explore uniformly with probability epsilon."""
    if rng.random() < epsilon:
        return int(rng.integers(0, qnet.n_actions))
    return greedy_index(qnet.q_values(obs))


def td_target(reward: float, next_q_values: np.ndarray, done: bool, gamma: float) -> float:
    """Bootstrapped target: r + gamma * max_a' Q'(s', a'); just r on terminal steps."""
    if done:
        return float(reward)
    return float(reward + gamma * float(np.max(next_q_values)))


def learn_step(batch, qnet: QNetwork, target_net: QNetwork,
               optimizer: torch.optim.Optimizer, gamma: float) -> float:
    """One gradient step on the mean squared TD error of a minibatch."""
    obs, action, reward, next_obs, done = batch
    obs_t = torch.as_tensor(obs)
    next_t = torch.as_tensor(next_obs)
    act_t = torch.as_tensor(action)
    rew_t = torch.as_tensor(reward)
    done_t = torch.as_tensor(done)
    with torch.no_grad():
        next_max = target_net(next_t).max(dim=1).values
        target = rew_t + gamma * (1.0 - done_t) * next_max
    pred = qnet(obs_t).gather(1, act_t.unsqueeze(1)).squeeze(1)
    loss = F.mse_loss(pred, target)
    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    optimizer.step()
    value = float(loss.detach())
    if not math.isfinite(value):
        raise TrainingDiverged(
            f"non-finite TD loss {value}; |pred| max {float(pred.abs().max()):.3e}, "
            f"|target| max {float(target.abs().max()):.3e}")
    return value


@dataclass
class EpisodeLog:
    episode: int
    cumulative_raw_reward: float
    cumulative_total_reward: float
    epsilon: float
    loss_mean: float


class StepEnv(Protocol):
    """Minimal episodic interface the training loop drives."""

    n_actions: int
    obs_dim: int

    def reset(self) -> np.ndarray: ...

    def step(self, action_index: int) -> tuple[float, float, np.ndarray, bool]:
        """Returns (reward, raw_reward, next_obs, done)."""


def run_training(env: StepEnv, cfg: TrainConfig) -> tuple[QNetwork, list[EpisodeLog]]:
    """Alg.-style training loop over any StepEnv; deterministic under cfg.seed."""
    torch.set_num_threads(1)
    torch.manual_seed(seeding.derived_seed(cfg.seed, "agent-init"))
    explore_rng = seeding.substream(cfg.seed, "agent-explore")

    qnet = QNetwork(env.obs_dim, env.n_actions, cfg.hidden_sizes)
    target_net = QNetwork(env.obs_dim, env.n_actions, cfg.hidden_sizes)
    target_net.load_state_dict(qnet.state_dict())
    optimizer = torch.optim.Adam(qnet.parameters(), lr=cfg.learning_rate)
    buffer = ReplayBuffer(cfg.replay_capacity, env.obs_dim)

    log: list[EpisodeLog] = []
    global_step = 0
    warmup = max(cfg.batch_size, cfg.learning_starts)
    for episode in range(cfg.episodes):
        obs = env.reset()
        ep_total = 0.0
        ep_raw = 0.0
        losses: list[float] = []
        for _ in range(cfg.steps_per_episode):
            epsilon = epsilon_at(global_step, cfg)
            action = select_action(qnet, obs, epsilon, explore_rng)
            reward, raw_reward, next_obs, done = env.step(action)
            buffer.push(obs, action, reward, next_obs, done)
            if len(buffer) >= warmup:
                batch = buffer.sample(explore_rng, cfg.batch_size)
                losses.append(learn_step(batch, qnet, target_net, optimizer, cfg.gamma))
            global_step += 1
            if global_step % cfg.target_sync_every == 0:
                target_net.load_state_dict(qnet.state_dict())
            ep_total += reward
            ep_raw += raw_reward
            obs = next_obs
            if done:
                break
        log.append(EpisodeLog(
            episode=episode,
            cumulative_raw_reward=ep_raw,
            cumulative_total_reward=ep_total,
            epsilon=epsilon_at(global_step, cfg),
            loss_mean=float(np.mean(losses)) if losses else float("nan"),
        ))
    return qnet, log


class ShapingStepEnv:
    """Adapter wiring HouseholdEnv + RewardEngine into the StepEnv protocol.

    Observations are scaled to unit range: (demand / demand_scale,
    battery / b_max). The engine is scored before the detector window is
    advanced, matching the step order of the training algorithm.
    """

    def __init__(self, env: HouseholdEnv, engine: RewardEngine, demand_scale: float):
        if demand_scale <= 0:
            raise ConfigError(f"demand_scale must be positive, got {demand_scale}")
        self.env = env
        self.engine = engine
        self.demand_scale = demand_scale
        self.n_actions = env.space.n
        self.obs_dim = 2
        self._state: EnvState | None = None

    def _observe(self, state: EnvState) -> np.ndarray:
        return np.array([state.demand / self.demand_scale,
                         state.battery / self.env.cfg.b_max], dtype=np.float32)

    def reset(self) -> np.ndarray:
        self._state = self.env.reset()
        self.engine.begin_episode(self._state.demand)
        return self._observe(self._state)

    def step(self, action_index: int):
        state = self._state
        a_min, a_max = feasible_action_bounds(state, self.env.cfg)
        result = self.env.step_index(action_index)
        breakdown = self.engine.compose(
            demand=state.demand,
            masked_load=result.masked_load,
            requested_action=result.requested_action,
            feasible_min=a_min,
            feasible_max=a_max,
            battery_after=result.next_state.battery,
            minute=state.minute,
            horizon=self.env.T,
            price=result.price,
        )
        self.engine.advance_window(state.demand)
        self._state = result.next_state
        return (breakdown.total, self.engine.raw_total(breakdown),
                self._observe(self._state), result.done)


@dataclass
class TrainResult:
    qnet: QNetwork
    levels: tuple[float, ...]
    demand_scale: float
    battery: BatteryConfig
    cfg: TrainConfig
    lam: float
    log: list[EpisodeLog]


def train(env: HouseholdEnv, reward_engine: RewardEngine, cfg: TrainConfig) -> TrainResult:
    """Train a load-shaping policy on one household day."""
    if env.T != cfg.steps_per_episode:
        raise ConfigError(
            f"demand series length {env.T} != cfg.steps_per_episode {cfg.steps_per_episode}")
    demand_scale = float(np.max(env.demand)) or 1.0
    adapter = ShapingStepEnv(env, reward_engine, demand_scale)
    qnet, log = run_training(adapter, cfg)
    return TrainResult(
        qnet=qnet,
        levels=env.space.levels,
        demand_scale=demand_scale,
        battery=env.cfg,
        cfg=cfg,
        lam=reward_engine.cfg.lam,
        log=log,
    )


class GreedyPolicy:
    """Deterministic argmax policy over a trained Q-network."""

    def __init__(self, qnet: QNetwork, levels: tuple[float, ...],
                 demand_scale: float, b_max: float):
        if len(levels) != qnet.n_actions:
            raise ConfigError("action level count does not match the network head")
        self.qnet = qnet
        self.levels = levels
        self.demand_scale = demand_scale
        self.b_max = b_max

    def action_index(self, state: EnvState) -> int:
        obs = np.array([state.demand / self.demand_scale, state.battery / self.b_max],
                       dtype=np.float32)
        return greedy_index(self.qnet.q_values(obs))

    def __call__(self, state: EnvState) -> float:
        return self.levels[self.action_index(state)]


def extract_policy(result: TrainResult) -> GreedyPolicy:
    return GreedyPolicy(result.qnet, result.levels, result.demand_scale,
                        result.battery.b_max)


def constant_policy(level: float = 0.0):
    """Baseline policy: always request the same action (default: do nothing)."""

    def policy(state: EnvState) -> float:
        return level

    return policy


# --- checkpoint I/O ---------------------------------------------------------

POLICY_KIND = "dqn-policy"


def save_policy(path: str | Path, result: TrainResult) -> None:
    state = {k: v.detach().numpy() for k, v in sorted(result.qnet.state_dict().items())}
    payload = {
        "state_dict": state,
        "hidden_sizes": list(result.cfg.hidden_sizes),
        "levels": list(result.levels),
        "demand_scale": result.demand_scale,
        "battery": asdict(result.battery),
        "train_config": _config_dict(result.cfg),
        "lam": result.lam,
        "seed": result.cfg.seed,
    }
    save_checkpoint(path, POLICY_KIND, payload)


def _config_dict(cfg: TrainConfig) -> dict:
    d = asdict(cfg)
    d["hidden_sizes"] = list(cfg.hidden_sizes)
    return d


@dataclass
class LoadedPolicy:
    policy: GreedyPolicy
    levels: tuple[float, ...]
    demand_scale: float
    battery: BatteryConfig
    train_config: dict
    lam: float
    seed: int


def load_policy(path: str | Path) -> LoadedPolicy:
    payload = load_checkpoint(path, POLICY_KIND)
    levels = tuple(float(x) for x in payload["levels"])
    hidden = tuple(int(x) for x in payload["hidden_sizes"])
    qnet = QNetwork(2, len(levels), hidden)
    try:
        tensors = {k: torch.as_tensor(v) for k, v in payload["state_dict"].items()}
        qnet.load_state_dict(tensors)
    except (KeyError, RuntimeError) as exc:
        raise CheckpointError(f"{path}: incompatible network weights: {exc}") from exc
    battery = BatteryConfig(**payload["battery"])
    policy = GreedyPolicy(qnet, levels, float(payload["demand_scale"]), battery.b_max)
    return LoadedPolicy(
        policy=policy,
        levels=levels,
        demand_scale=float(payload["demand_scale"]),
        battery=battery,
        train_config=payload["train_config"],
        lam=float(payload["lam"]),
        seed=int(payload["seed"]),
    )


TRAINING_LOG_HEADER = ("episode", "cumulative_raw_reward", "cumulative_total_reward",
                       "epsilon", "loss_mean")


def write_training_log(path: str | Path, log: list[EpisodeLog]) -> None:
    lines = [",".join(TRAINING_LOG_HEADER)]
    for row in log:
        lines.append(",".join([
            str(row.episode),
            repr(row.cumulative_raw_reward),
            repr(row.cumulative_total_reward),
            repr(row.epsilon),
            repr(row.loss_mean),
        ]))
    Path(path).write_text("\n".join(lines) + "\n")
