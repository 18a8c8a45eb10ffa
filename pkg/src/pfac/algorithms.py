"""Actor-critic learners that blend a learned reward critic with the field critic.

Each agent owns an :class:`AgentLearner`; its ``critics`` list holds the
weighted critics whose action gradients are summed to drive the actor.
``ddpg`` keeps only the reward critic; the other modes weight the reward
critic by ``beta`` and the field critic by ``1 - beta``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from functools import cached_property
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from pfac import approximator as nn
from pfac.errors import ConfigurationError, UsageError
from pfac.potential_field import (
    DEFAULT_EPSILON_DIST,
    PotentialFieldSpec,
    action_gradient_from_field,
    action_value_from_field,
    evaluate_field,
)

MODES = ("ddpg", "pgddpg", "sarsa_ac2", "stochastic_ac2")
REWARD_Q = "reward_q"
POTENTIAL_FIELD = "potential_field"
LEARNER_FORMAT = "pfac.learner"
LEARNER_VERSION = 1


@dataclass(frozen=True)
class HyperParams:
    beta: float = 0.5
    gamma1: float = 0.99
    gamma2: float = 0.0
    actor_lr: float = 1e-3
    critic_lr: float = 1e-3
    tau: float = 0.01
    noise_sigma: float = 0.1
    batch_size: int = 256
    buffer_capacity: int = 100_000
    warmup_steps: int = 1000
    update_every: int = 10
    optimizer: str = "adam"
    hidden_sizes: tuple[int, ...] = (64, 64)
    hidden_activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigurationError(f"beta must lie in [0, 1], got {self.beta}")
        if not 0.0 <= self.gamma1 < 1.0:
            raise ConfigurationError(f"gamma1 must lie in [0, 1), got {self.gamma1}")
        if self.gamma2 != 0.0:
            # a bootstrapped field critic would need its own learned approximator
            raise ConfigurationError("only gamma2 = 0 is supported: the field critic is q_PF itself")
        if not (self.actor_lr >= 0 and self.critic_lr >= 0):
            raise ConfigurationError("learning rates must be nonnegative")
        if not 0.0 < self.tau <= 1.0:
            raise ConfigurationError(f"tau must lie in (0, 1], got {self.tau}")
        if self.noise_sigma < 0:
            raise ConfigurationError("noise_sigma must be nonnegative")
        for name in ("batch_size", "buffer_capacity", "update_every"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive")
        if self.warmup_steps < 0:
            raise ConfigurationError("warmup_steps must be nonnegative")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigurationError(f"optimizer must be sgd or adam, got {self.optimizer!r}")
        if self.hidden_activation not in nn.HIDDEN_ACTIVATIONS:
            raise ConfigurationError(f"unknown hidden activation {self.hidden_activation!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_sizes"] = list(self.hidden_sizes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "HyperParams":
        known = {f.name for f in fields(cls)}
        for key in d:
            if key not in known:
                raise ConfigurationError(f"unknown hyper key {key!r}")
        return cls(**d)


@dataclass(frozen=True)
class CriticHandle:
    kind: str
    weight: float
    discount: float


def critics_for(mode: str, hyper: HyperParams) -> list[CriticHandle]:
    if mode not in MODES:
        raise UsageError(f"unknown mode {mode!r}")
    if mode == "ddpg":
        return [CriticHandle(REWARD_Q, 1.0, hyper.gamma1)]
    return [
        CriticHandle(REWARD_Q, hyper.beta, hyper.gamma1),
        CriticHandle(POTENTIAL_FIELD, 1.0 - hyper.beta, hyper.gamma2),
    ]


@dataclass(frozen=True, eq=False)
class Transition:
    obs: np.ndarray
    action: np.ndarray
    reward: float
    next_obs: np.ndarray
    done: bool
    next_action: Optional[np.ndarray] = None
    pf_spec: Optional[PotentialFieldSpec] = None
    position: Optional[np.ndarray] = None

    @cached_property
    def field(self) -> tuple[float, np.ndarray, float]:
        """(U, force, epsilon) at the acting agent's position; zeros without a field."""
        if self.pf_spec is None or self.position is None:
            return 0.0, np.zeros(2), DEFAULT_EPSILON_DIST
        ev = evaluate_field(self.pf_spec, self.position)
        return ev.u_total, ev.force, self.pf_spec.epsilon_dist


@dataclass(frozen=True, eq=False)
class Batch:
    """Column-stacked transitions."""

    obs: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    next_obs: np.ndarray
    done: np.ndarray
    next_action: Optional[np.ndarray]
    u_total: np.ndarray
    force: np.ndarray
    epsilon: np.ndarray

    def __len__(self):
        return len(self.reward)

    @classmethod
    def from_transitions(cls, items: Sequence[Transition]) -> "Batch":
        if len(items) == 0:
            raise UsageError("empty batch")
        fields_ = [t.field for t in items]
        has_next = all(t.next_action is not None for t in items)
        return cls(
            obs=np.array([t.obs for t in items], dtype=np.float64),
            action=np.array([t.action for t in items], dtype=np.float64),
            reward=np.array([t.reward for t in items], dtype=np.float64),
            next_obs=np.array([t.next_obs for t in items], dtype=np.float64),
            done=np.array([bool(t.done) for t in items]),
            next_action=np.array([t.next_action for t in items], dtype=np.float64) if has_next else None,
            u_total=np.array([f[0] for f in fields_], dtype=np.float64),
            force=np.array([f[1] for f in fields_], dtype=np.float64),
            epsilon=np.array([f[2] for f in fields_], dtype=np.float64),
        )


def as_batch(batch) -> Batch:
    if isinstance(batch, Batch):
        if len(batch) == 0:
            raise UsageError("empty batch")
        return batch
    if isinstance(batch, Transition):
        return Batch.from_transitions([batch])
    return Batch.from_transitions(list(batch))


class ReplayBuffer:
    """Fixed-capacity ring of transitions with seeded uniform sampling."""

    def __init__(self, capacity: int, seed=None):
        if capacity < 1:
            raise UsageError("capacity must be positive")
        self.capacity = int(capacity)
        self.rng = np.random.default_rng(seed)
        self._items: list[Optional[Transition]] = [None] * self.capacity
        self._cols: Optional[dict] = None
        self._next = 0
        self._size = 0

    def __len__(self):
        return self._size

    def _allocate(self, t: Transition):
        c = self.capacity
        self._cols = {
            "obs": np.zeros((c, len(t.obs))),
            "action": np.zeros((c, len(t.action))),
            "reward": np.zeros(c),
            "next_obs": np.zeros((c, len(t.next_obs))),
            "done": np.zeros(c, dtype=bool),
            "next_action": np.zeros((c, len(t.action))),
            "has_next": np.zeros(c, dtype=bool),
            "u_total": np.zeros(c),
            "force": np.zeros((c, 2)),
            "epsilon": np.full(c, DEFAULT_EPSILON_DIST),
        }

    def push(self, t: Transition) -> None:
        if self._cols is None:
            self._allocate(t)
        cols, i = self._cols, self._next
        if len(t.obs) != cols["obs"].shape[1] or len(t.action) != cols["action"].shape[1]:
            raise UsageError("transition shape does not match buffer contents")
        u, f, eps = t.field
        cols["obs"][i] = t.obs
        cols["action"][i] = t.action
        cols["reward"][i] = t.reward
        cols["next_obs"][i] = t.next_obs
        cols["done"][i] = t.done
        cols["has_next"][i] = t.next_action is not None
        cols["next_action"][i] = 0.0 if t.next_action is None else t.next_action
        cols["u_total"][i] = u
        cols["force"][i] = f
        cols["epsilon"][i] = eps
        self._items[i] = t
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def transitions(self) -> list[Transition]:
        """Contents, oldest first."""
        if self._size < self.capacity:
            return list(self._items[: self._size])
        return self._items[self._next :] + self._items[: self._next]

    def sample_indices(self, k: int) -> np.ndarray:
        if k < 1 or k > self._size:
            raise UsageError(f"cannot sample {k} items from a buffer holding {self._size}")
        return self.rng.choice(self._size, size=k, replace=False)

    def sample(self, k: int) -> Batch:
        idx = self.sample_indices(k)
        c = self._cols
        return Batch(
            obs=c["obs"][idx],
            action=c["action"][idx],
            reward=c["reward"][idx],
            next_obs=c["next_obs"][idx],
            done=c["done"][idx],
            next_action=c["next_action"][idx] if np.all(c["has_next"][idx]) else None,
            u_total=c["u_total"][idx],
            force=c["force"][idx],
            epsilon=c["epsilon"][idx],
        )


def buffer_push(buffer: ReplayBuffer, t: Transition) -> None:
    buffer.push(t)


def buffer_sample(buffer: ReplayBuffer, k: int) -> Batch:
    return buffer.sample(k)


@dataclass(eq=False)
class AgentLearner:
    """Networks, critic weights and replay memory of one agent.

    Updates replace the network values in place of the old ones; nothing is
    shared between learners.
    """

    mode: str
    hyper: HyperParams
    obs_size: int
    action_size: int
    actor: nn.MlpParams
    actor_target: nn.MlpParams
    critic: nn.MlpParams
    critic_target: nn.MlpParams
    critics: list[CriticHandle]
    buffer: ReplayBuffer
    actor_opt: Optional[nn.AdamState] = None
    critic_opt: Optional[nn.AdamState] = None
    updates: int = field(default=0)

    @property
    def stochastic(self) -> bool:
        return self.mode == "stochastic_ac2"

    def is_finite(self) -> bool:
        return all(p.is_finite() for p in (self.actor, self.actor_target, self.critic, self.critic_target))


def _network_specs(mode, obs_size, action_size, hyper):
    hidden = hyper.hidden_sizes
    actor = nn.MlpSpec((obs_size, *hidden, action_size), hyper.hidden_activation, "tanh")
    critic_in = obs_size if mode == "stochastic_ac2" else obs_size + action_size
    critic = nn.MlpSpec((critic_in, *hidden, 1), hyper.hidden_activation, "identity")
    return actor, critic


def make_learner(mode: str, obs_size: int, action_size: int, hyper: HyperParams, seed) -> AgentLearner:
    """Fresh learner; networks and buffer draw from independent streams of ``seed``."""
    if mode not in MODES:
        raise UsageError(f"unknown mode {mode!r}")
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    net_ss, buf_ss = ss.spawn(2)
    rng = np.random.default_rng(net_ss)
    actor_spec, critic_spec = _network_specs(mode, obs_size, action_size, hyper)
    actor = nn.init_params(actor_spec, rng)
    critic = nn.init_params(critic_spec, rng)
    learner = AgentLearner(
        mode=mode,
        hyper=hyper,
        obs_size=obs_size,
        action_size=action_size,
        actor=actor,
        actor_target=actor,
        critic=critic,
        critic_target=critic,
        critics=critics_for(mode, hyper),
        buffer=ReplayBuffer(hyper.buffer_capacity, buf_ss),
    )
    if hyper.optimizer == "adam":
        learner.actor_opt = nn.adam_init(actor)
        learner.critic_opt = nn.adam_init(critic)
    return learner


def _step_actor(learner: AgentLearner, grads: nn.ParamGrads) -> None:
    lr = learner.hyper.actor_lr
    if learner.actor_opt is None:
        learner.actor = nn.apply_gradient_step(learner.actor, grads, lr, "ascent")
    else:
        learner.actor, learner.actor_opt = nn.adam_step(learner.actor, grads, learner.actor_opt, lr, "ascent")


def _step_critic(learner: AgentLearner, grads: nn.ParamGrads, direction: str) -> None:
    lr = learner.hyper.critic_lr
    if learner.critic_opt is None:
        learner.critic = nn.apply_gradient_step(learner.critic, grads, lr, direction)
    else:
        learner.critic, learner.critic_opt = nn.adam_step(learner.critic, grads, learner.critic_opt, lr, direction)


def _check_obs(learner: AgentLearner, obs) -> np.ndarray:
    obs = np.asarray(obs, dtype=np.float64)
    if obs.shape[-1:] != (learner.obs_size,):
        raise UsageError(f"observation shape {obs.shape} does not match actor input {learner.obs_size}")
    return obs


def select_action(learner: AgentLearner, obs, explore: bool, rng: np.random.Generator) -> np.ndarray:
    """Actor output plus Gaussian noise when exploring, clipped to [-1, 1]."""
    obs = _check_obs(learner, obs)
    a = nn.forward(learner.actor, obs)
    sigma = learner.hyper.noise_sigma
    if explore and sigma > 0:
        a = a + rng.normal(0.0, sigma, size=a.shape)
    return np.minimum(np.maximum(a, -1.0), 1.0)


def q_values(critic: nn.MlpParams, obs, action) -> np.ndarray:
    return nn.forward(critic, np.concatenate([obs, action], axis=-1))[..., 0]


def _reward_action_grad(learner: AgentLearner, obs: np.ndarray, a: np.ndarray) -> np.ndarray:
    x = np.concatenate([obs, a], axis=1)
    bundle = nn.backward(learner.critic, x, np.ones((len(obs), 1)))
    return bundle.input_grad[:, learner.obs_size :]


def blended_actor_gradient(learner: AgentLearner, batch) -> nn.ParamGrads:
    """Batch-mean policy gradient, with the action gradient summed over weighted critics."""
    if learner.stochastic:
        raise UsageError("stochastic learners use stochastic_update")
    b = as_batch(batch)
    n = len(b)

    def upstream(a):
        g = np.zeros_like(a)
        for c in learner.critics:
            # zero-weight critics are skipped so beta = 1 reproduces ddpg bit for bit
            if c.weight == 0.0:
                continue
            if c.kind == REWARD_Q:
                g = g + c.weight * _reward_action_grad(learner, b.obs, a)
            else:
                g = g + c.weight * action_gradient_from_field(b.u_total, b.force, a, b.epsilon)
        return g / n

    _, bundle = nn.forward_backward(learner.actor, b.obs, upstream)
    return bundle.param_grads


def actor_update(learner: AgentLearner, batch) -> nn.ParamGrads:
    grads = blended_actor_gradient(learner, batch)
    _step_actor(learner, grads)
    return grads


def td_targets(learner: AgentLearner, batch) -> np.ndarray:
    """Target-network TD targets, with bootstrapping masked at terminal steps."""
    b = as_batch(batch)
    a_next = nn.forward(learner.actor_target, b.next_obs)
    q_next = q_values(learner.critic_target, b.next_obs, a_next)
    return b.reward + np.where(b.done, 0.0, learner.hyper.gamma1 * q_next)


def critic_loss(critic: nn.MlpParams, batch, targets) -> float:
    b = as_batch(batch)
    q = q_values(critic, b.obs, b.action)
    return float(np.mean((targets - q) ** 2))


def critic_loss_gradient(critic: nn.MlpParams, batch, targets) -> tuple[float, nn.ParamGrads]:
    b = as_batch(batch)
    targets = np.asarray(targets, dtype=np.float64)
    x = np.concatenate([b.obs, b.action], axis=1)
    q, bundle = nn.forward_backward(critic, x, lambda q: (2.0 / len(b)) * (q - targets[:, None]))
    return float(np.mean((targets - q[:, 0]) ** 2)), bundle.param_grads


def soft_update_targets(learner: AgentLearner) -> None:
    tau = learner.hyper.tau
    learner.actor_target = nn.soft_update(learner.actor_target, learner.actor, tau)
    learner.critic_target = nn.soft_update(learner.critic_target, learner.critic, tau)


def ddpg_critic_update(learner: AgentLearner, batch) -> tuple[nn.MlpParams, float]:
    """One descent step on the mean squared TD error, then soft target updates."""
    if learner.mode not in ("ddpg", "pgddpg"):
        raise UsageError(f"ddpg_critic_update does not apply to mode {learner.mode!r}")
    b = as_batch(batch)
    y = td_targets(learner, b)
    loss, grads = critic_loss_gradient(learner.critic, b, y)
    _step_critic(learner, grads, "descent")
    soft_update_targets(learner)
    return learner.critic, loss


def train_on_batch(learner: AgentLearner, batch) -> float:
    """Critic step, then actor step; returns the critic loss."""
    b = as_batch(batch)
    _, loss = ddpg_critic_update(learner, b)
    actor_update(learner, b)
    learner.updates += 1
    return loss


def sarsa_critic_update(learner: AgentLearner, t: Transition) -> tuple[nn.MlpParams, float]:
    """On-policy TD step using the executed next action; no target networks."""
    if learner.mode != "sarsa_ac2":
        raise UsageError(f"sarsa_critic_update does not apply to mode {learner.mode!r}")
    if t.next_action is None:
        raise UsageError("sarsa update needs the next action")
    x = np.concatenate([t.obs, t.action])
    q_sa, bundle = nn.forward_backward(learner.critic, x, lambda q: np.ones_like(q))
    if t.done:
        delta = t.reward - q_sa[0]
    else:
        delta = t.reward + learner.hyper.gamma1 * q_values(learner.critic, t.next_obs, t.next_action) - q_sa[0]
    delta = float(delta)
    _step_critic(learner, bundle.param_grads.scale(delta), "ascent")
    return learner.critic, delta


def gaussian_score(learner: AgentLearner, obs, action) -> tuple[np.ndarray, nn.ParamGrads]:
    """Mean action and the gradient of log pi(action | obs) in the actor parameters."""
    sigma = learner.hyper.noise_sigma
    if not sigma > 0:
        raise UsageError("the Gaussian policy needs noise_sigma > 0")
    obs = _check_obs(learner, obs)
    action = np.asarray(action, dtype=np.float64)
    mean, bundle = nn.forward_backward(learner.actor, obs, lambda m: (action - m) / sigma**2)
    return mean, bundle.param_grads


def stochastic_update(learner: AgentLearner, t: Transition) -> float:
    """Advantage-weighted score step for the actor, TD step for the state-value critic.

    Returns the TD error.
    """
    if not learner.stochastic:
        raise UsageError(f"stochastic_update does not apply to mode {learner.mode!r}")
    _, score = gaussian_score(learner, t.obs, t.action)
    v_s, v_bundle = nn.forward_backward(learner.critic, np.asarray(t.obs, dtype=np.float64), np.ones_like)
    v_next = 0.0 if t.done else float(nn.forward(learner.critic, t.next_obs)[0])
    advantage = float(t.reward + learner.hyper.gamma1 * v_next - v_s[0])
    u, f, eps = t.field
    weight = 0.0
    for c in learner.critics:
        if c.kind == REWARD_Q:
            weight += c.weight * advantage
        else:
            weight += c.weight * float(action_value_from_field(u, f, t.action, eps))
    if weight != 0.0:
        _step_actor(learner, score.scale(weight))
    _step_critic(learner, v_bundle.param_grads.scale(advantage), "ascent")
    learner.updates += 1
    return advantage


def learner_to_dict(learner: AgentLearner) -> dict:
    return {
        "format": LEARNER_FORMAT,
        "version": LEARNER_VERSION,
        "mode": learner.mode,
        "obs_size": learner.obs_size,
        "action_size": learner.action_size,
        "hyper": learner.hyper.to_dict(),
        "critics": [asdict(c) for c in learner.critics],
        "actor": nn.params_to_dict(learner.actor),
        "actor_target": nn.params_to_dict(learner.actor_target),
        "critic": nn.params_to_dict(learner.critic),
        "critic_target": nn.params_to_dict(learner.critic_target),
    }


def learner_from_dict(doc: dict, seed=0) -> AgentLearner:
    """Rebuild a learner from a checkpoint; the replay buffer starts empty."""
    if doc.get("format") != LEARNER_FORMAT:
        raise UsageError(f"not a learner checkpoint: format={doc.get('format')!r}")
    if doc.get("version") != LEARNER_VERSION:
        raise UsageError(f"unsupported learner checkpoint version {doc.get('version')!r}")
    hyper = HyperParams.from_dict(doc["hyper"])
    learner = make_learner(doc["mode"], doc["obs_size"], doc["action_size"], hyper, seed)
    learner.actor = nn.params_from_dict(doc["actor"])
    learner.actor_target = nn.params_from_dict(doc["actor_target"])
    learner.critic = nn.params_from_dict(doc["critic"])
    learner.critic_target = nn.params_from_dict(doc["critic_target"])
    learner.critics = [CriticHandle(**c) for c in doc["critics"]]
    if learner.actor.spec.input_size != learner.obs_size:
        raise UsageError("checkpoint actor input size disagrees with obs_size")
    return learner


def save_learner(learner: AgentLearner, path) -> None:
    Path(path).write_text(json.dumps(learner_to_dict(learner)))


def load_learner(path, seed=0) -> AgentLearner:
    return learner_from_dict(json.loads(Path(path).read_text()), seed)
