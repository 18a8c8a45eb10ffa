"""Continuous 2-D predator-prey world.

Agents ``0 .. n_predators-1`` are predators and the last agent is the prey.
The world is a pure function of (state, actions); nothing is mutated.
"""

from __future__ import annotations

import csv
from functools import lru_cache
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from pfac.errors import ConfigurationError, UsageError
from pfac.potential_field import PotentialFieldSpec

CAPTURE_REWARD = 10.0
MAX_PLACEMENT_ATTEMPTS = 1000


@dataclass(frozen=True)
class WorldConfig:
    n_predators: int = 1
    predator_bound: float = 1.0
    prey_bound: float = 0.8
    predator_radius: float = 0.05
    prey_radius: float = 0.05
    max_speed: float = 1.0
    dt: float = 0.1
    damping: float = 0.75
    accel_scale: float = 5.0
    episode_max_steps: int = 100
    capture_distance: float = 0.12
    seed: int = 0

    def __post_init__(self):
        if self.n_predators < 1:
            raise ConfigurationError("n_predators must be positive")
        if not 0 < self.prey_bound < self.predator_bound:
            raise ConfigurationError("prey_bound must be positive and smaller than predator_bound")
        for name in ("predator_radius", "prey_radius", "max_speed", "dt", "accel_scale", "capture_distance"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive")
        if not 0 <= self.damping < 1:
            raise ConfigurationError("damping must lie in [0, 1)")
        if self.episode_max_steps < 1:
            raise ConfigurationError("episode_max_steps must be positive")

    @property
    def n_agents(self) -> int:
        return self.n_predators + 1

    @property
    def prey_index(self) -> int:
        return self.n_predators

    @property
    def obs_size(self) -> int:
        return 4 + 4 * (self.n_agents - 1)

    def bounds(self) -> np.ndarray:
        """Half-extent of the box each agent is confined to."""
        b = np.full(self.n_agents, self.predator_bound)
        b[self.prey_index] = self.prey_bound
        return b

    def radii(self) -> np.ndarray:
        r = np.full(self.n_agents, self.predator_radius)
        r[self.prey_index] = self.prey_radius
        return r


@dataclass(frozen=True, eq=False)
class WorldState:
    positions: np.ndarray
    velocities: np.ndarray
    step_count: int = 0
    done: bool = False


@dataclass(frozen=True, eq=False)
class StepResult:
    state: WorldState
    observations: list[np.ndarray]
    rewards: np.ndarray
    done: bool
    captured: bool


@dataclass(frozen=True)
class FieldConfig:
    """Gains used to build each agent's potential field from the world state."""

    predator_xi: float = 1.0
    predator_eta: float = 0.001
    predator_d0: float = 0.3
    prey_xi: float = 0.05
    prey_eta: float = 0.05
    prey_d0: float = 0.6
    epsilon_dist: float = 1e-6

    def __post_init__(self):
        for name in ("predator_xi", "predator_eta", "predator_d0", "prey_xi", "prey_eta", "prey_d0", "epsilon_dist"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"field.{name} must be positive")


def reset(config: WorldConfig, rng_seed: int) -> tuple[WorldState, list[np.ndarray]]:
    """Uniform, non-overlapping placement inside each role's box; agents at rest."""
    rng = np.random.default_rng(rng_seed)
    bounds, radii = config.bounds(), config.radii()
    positions = np.zeros((config.n_agents, 2))
    for i in range(config.n_agents):
        for _ in range(MAX_PLACEMENT_ATTEMPTS):
            p = rng.uniform(-bounds[i], bounds[i], size=2)
            if i == 0 or np.all(np.linalg.norm(positions[:i] - p, axis=1) > radii[:i] + radii[i]):
                positions[i] = p
                break
        else:
            raise ConfigurationError(f"could not place agent {i} without overlap; arena too crowded")
    state = WorldState(positions, np.zeros((config.n_agents, 2)))
    return state, observe_all(state, config)


def capture_predicate(state: WorldState, config: WorldConfig) -> bool:
    """True iff every predator is within capture_distance of the prey."""
    diff = state.positions[: config.n_predators] - state.positions[config.prey_index]
    d = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    return bool(np.all(d <= config.capture_distance))


def step(state: WorldState, config: WorldConfig, actions) -> StepResult:
    actions = np.asarray(actions, dtype=np.float64)
    if actions.shape != (config.n_agents, 2):
        raise UsageError(f"expected {config.n_agents} two-dimensional actions, got shape {actions.shape}")
    if not np.all(np.isfinite(actions)):
        raise UsageError("actions must be finite")
    if state.done:
        raise UsageError("episode already finished; call reset")
    actions = np.clip(actions, -1.0, 1.0)

    vel = config.damping * state.velocities + (config.dt * config.accel_scale) * actions
    speed = np.sqrt(np.einsum("ij,ij->i", vel, vel))
    fast = speed > config.max_speed
    if fast.any():
        vel[fast] *= (config.max_speed / speed[fast])[:, None]
    pos = state.positions + config.dt * vel
    bounds = config.bounds()[:, None]
    hit = np.abs(pos) > bounds
    if hit.any():
        pos = np.clip(pos, -bounds, bounds)
        vel[hit] = 0.0

    count = state.step_count + 1
    new = WorldState(pos, vel, count, False)
    captured = capture_predicate(new, config)
    done = captured or count >= config.episode_max_steps
    if done:
        new = replace(new, done=True)
    rewards = np.zeros(config.n_agents)
    if captured:
        rewards[: config.n_predators] = CAPTURE_REWARD
        rewards[config.prey_index] = -CAPTURE_REWARD
    return StepResult(new, observe_all(new, config), rewards, done, captured)


def observe(state: WorldState, config: WorldConfig, agent_index: int) -> np.ndarray:
    """Own position and velocity, then relative position and velocity of every other agent."""
    if not 0 <= agent_index < config.n_agents:
        raise UsageError(f"agent index {agent_index} out of range")
    pos, vel = state.positions, state.velocities
    others = [j for j in range(config.n_agents) if j != agent_index]
    rel_p = pos[others] - pos[agent_index]
    rel_v = vel[others] - vel[agent_index]
    return np.concatenate([pos[agent_index], vel[agent_index], np.hstack([rel_p, rel_v]).ravel()])


@lru_cache(maxsize=None)
def _others_index(n_agents: int) -> np.ndarray:
    return np.array([[j for j in range(n_agents) if j != i] for i in range(n_agents)], dtype=np.intp)


def observe_all(state: WorldState, config: WorldConfig) -> list[np.ndarray]:
    own = np.hstack([state.positions, state.velocities])
    n = config.n_agents
    rel = own[None, :, :] - own[:, None, :]
    others = rel[np.arange(n)[:, None], _others_index(n)].reshape(n, -1)
    return list(np.hstack([own, others]))


def field_spec_for_agent(
    state: WorldState,
    config: WorldConfig,
    agent_index: int,
    role: str | None = None,
    field_config: FieldConfig = FieldConfig(),
) -> PotentialFieldSpec:
    """Predators chase the prey and keep clear of each other; the prey flees all predators
    with a weak pull toward the arena center."""
    if not 0 <= agent_index < config.n_agents:
        raise UsageError(f"agent index {agent_index} out of range")
    if role is None:
        role = "prey" if agent_index == config.prey_index else "predator"
    pos = state.positions
    if role == "predator":
        others = [j for j in range(config.n_predators) if j != agent_index]
        return PotentialFieldSpec(
            xi=field_config.predator_xi,
            eta=field_config.predator_eta,
            d0=field_config.predator_d0,
            goal_points=pos[config.prey_index : config.prey_index + 1],
            obstacle_points=pos[others],
            epsilon_dist=field_config.epsilon_dist,
        )
    if role == "prey":
        return PotentialFieldSpec(
            xi=field_config.prey_xi,
            eta=field_config.prey_eta,
            d0=field_config.prey_d0,
            goal_points=np.zeros((1, 2)),
            obstacle_points=pos[: config.n_predators],
            epsilon_dist=field_config.epsilon_dist,
        )
    raise UsageError(f"role must be predator or prey, got {role!r}")


class TrajectoryWriter:
    """Per-step CSV export of positions, velocities, actions and rewards."""

    def __init__(self, fh, config: WorldConfig):
        self._writer = csv.writer(fh)
        self._config = config
        header = ["episode", "step"]
        for i in range(config.n_agents):
            header += [f"x{i}", f"y{i}", f"vx{i}", f"vy{i}", f"ax{i}", f"ay{i}"]
        header += [f"reward{i}" for i in range(config.n_agents)] + ["done"]
        self._writer.writerow(header)

    def write(self, episode: int, result: StepResult, actions: Sequence[Sequence[float]]) -> None:
        st = result.state
        row: list = [episode, st.step_count]
        for i in range(self._config.n_agents):
            row += [*map(repr, st.positions[i].tolist()), *map(repr, st.velocities[i].tolist())]
            row += [repr(float(v)) for v in actions[i]]
        row += [repr(float(r)) for r in result.rewards] + [int(result.done)]
        self._writer.writerow(row)
