"""Training and evaluation loops for the predator-prey scenarios.

Every predator acts on its own observation and learns from its own replay
memory; no parameters, actions or buffers are shared between agents.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, replace
from dataclasses import field as dc_field
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from pfac import algorithms as alg
from pfac import environment as env
from pfac.errors import ConfigurationError, TrainingDiverged, UsageError
from pfac.potential_field import evaluate_field

log = logging.getLogger(__name__)

SCENARIOS = {"one_v_one": 1, "three_v_one_pretrained": 3, "three_v_one_simultaneous": 3}
PREY_POLICIES = ("pretrained", "trained_simultaneously", "random", "stationary")
SUCCESS_WINDOW = 200
REWARD_WINDOW = 500
METRICS_COLUMNS = ["episode", "reward", "success", "success_rate_w200", "reward_avg_w500", "wall_clock_s"]
SCRIPTED_FORMAT = "pfac.scripted"
SCRIPTED_KINDS = ("field_follower", "stationary", "random")


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str = "one_v_one"
    predator_algo: str = "pgddpg"
    prey_policy: str = "random"
    prey_checkpoint: Optional[str] = None
    prey_algo: str = "ddpg"
    total_episodes: int = 20_000
    eval_every: int = 1000
    pretrain_episodes: int = 3000
    record_wall_clock: bool = False
    export_trajectories: bool = False
    seed: int = 0
    world: env.WorldConfig = dc_field(default_factory=env.WorldConfig)
    hyper: alg.HyperParams = dc_field(default_factory=alg.HyperParams)
    field: env.FieldConfig = dc_field(default_factory=env.FieldConfig)

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigurationError(f"unknown scenario {self.scenario!r}")
        if self.predator_algo not in alg.MODES:
            raise ConfigurationError(f"unknown predator_algo {self.predator_algo!r}")
        if self.prey_algo not in alg.MODES:
            raise ConfigurationError(f"unknown prey_algo {self.prey_algo!r}")
        if self.prey_policy not in PREY_POLICIES:
            raise ConfigurationError(f"unknown prey_policy {self.prey_policy!r}")
        if self.scenario == "three_v_one_simultaneous" and self.prey_policy != "trained_simultaneously":
            raise ConfigurationError("three_v_one_simultaneous needs prey_policy trained_simultaneously")
        if self.prey_policy == "pretrained" and not self.prey_checkpoint:
            raise ConfigurationError("prey_policy pretrained needs prey_checkpoint")
        for name in ("total_episodes", "eval_every", "pretrain_episodes"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive")
        n = SCENARIOS[self.scenario]
        if self.world.n_predators != n:
            object.__setattr__(self, "world", replace(self.world, n_predators=n))
        if self.world.seed != self.seed:
            object.__setattr__(self, "world", replace(self.world, seed=self.seed))


@dataclass(frozen=True)
class MetricsRecord:
    episode: int
    episode_reward_per_predator: float
    success: bool
    success_rate_w200: float
    reward_avg_w500: float
    wall_clock_s: float

    def row(self) -> list:
        return [
            self.episode,
            repr(float(self.episode_reward_per_predator)),
            int(self.success),
            repr(float(self.success_rate_w200)),
            repr(float(self.reward_avg_w500)),
            repr(float(self.wall_clock_s)),
        ]


@dataclass
class ExperimentResult:
    records: list[MetricsRecord]
    predators: list
    prey: object


def compute_windowed_metrics(history: Sequence[tuple[float, bool]]) -> tuple[float, float]:
    """(success rate over the latest 200 episodes, mean reward over the latest 500)."""
    if len(history) == 0:
        raise UsageError("empty episode history")
    wins = [bool(s) for _, s in history[-SUCCESS_WINDOW:]]
    rewards = [float(r) for r, _ in history[-REWARD_WINDOW:]]
    return sum(wins) / len(wins), float(np.mean(rewards))


class WindowedMetrics:
    """Running version of :func:`compute_windowed_metrics`."""

    def __init__(self):
        self._wins: list[bool] = []
        self._rewards: list[float] = []
        self._win_sum = 0
        self._reward_sum = 0.0

    def add(self, reward: float, success: bool) -> tuple[float, float]:
        self._wins.append(bool(success))
        self._rewards.append(float(reward))
        self._win_sum += int(success)
        if len(self._wins) > SUCCESS_WINDOW:
            self._win_sum -= int(self._wins[-SUCCESS_WINDOW - 1])
        n_w = min(len(self._wins), SUCCESS_WINDOW)
        n_r = min(len(self._rewards), REWARD_WINDOW)
        # exact recomputation keeps the stream identical to the batch formula
        return self._win_sum / n_w, float(np.mean(self._rewards[-n_r:]))


# -- policies ---------------------------------------------------------------


class LearnerPolicy:
    def __init__(self, learner: alg.AgentLearner, trainable: bool, rng: np.random.Generator):
        self.learner = learner
        self.trainable = trainable
        self.rng = rng

    def act(self, obs, state, index, config, explore):
        return alg.select_action(self.learner, obs, explore and self.trainable, self.rng)


class FieldFollower:
    """Moves at full thrust along the field force of its role."""

    def __init__(self, field_config: env.FieldConfig):
        self.field_config = field_config

    def act(self, obs, state, index, config, explore):
        spec = env.field_spec_for_agent(state, config, index, None, self.field_config)
        f = evaluate_field(spec, state.positions[index]).force
        n = np.linalg.norm(f)
        return f / n if n > spec.epsilon_dist else np.zeros(2)


class StationaryPolicy:
    def act(self, obs, state, index, config, explore):
        return np.zeros(2)


class RandomPolicy:
    def __init__(self, rng: np.random.Generator):
        self.rng = rng

    def act(self, obs, state, index, config, explore):
        return self.rng.uniform(-1.0, 1.0, size=2)


def scripted_doc(kind: str) -> dict:
    if kind not in SCRIPTED_KINDS:
        raise UsageError(f"unknown scripted policy {kind!r}")
    return {"format": SCRIPTED_FORMAT, "version": 1, "kind": kind}


def policy_from_doc(doc: dict, field_config: env.FieldConfig, rng: np.random.Generator):
    fmt = doc.get("format")
    if fmt == SCRIPTED_FORMAT:
        kind = doc.get("kind")
        if kind == "field_follower":
            return FieldFollower(field_config)
        if kind == "stationary":
            return StationaryPolicy()
        if kind == "random":
            return RandomPolicy(rng)
        raise UsageError(f"unknown scripted policy {kind!r}")
    if fmt == alg.LEARNER_FORMAT:
        return LearnerPolicy(alg.learner_from_dict(doc), trainable=False, rng=rng)
    raise UsageError(f"unrecognized checkpoint format {fmt!r}")


def policy_doc(policy) -> dict:
    if isinstance(policy, LearnerPolicy):
        return alg.learner_to_dict(policy.learner)
    if isinstance(policy, FieldFollower):
        return scripted_doc("field_follower")
    if isinstance(policy, StationaryPolicy):
        return scripted_doc("stationary")
    if isinstance(policy, RandomPolicy):
        return scripted_doc("random")
    raise UsageError(f"cannot serialize policy {policy!r}")


def load_checkpoint_doc(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return json.loads(path.read_text())


def save_checkpoints(out_dir, predators: Sequence, prey) -> Path:
    ck = Path(out_dir) / "checkpoints"
    ck.mkdir(parents=True, exist_ok=True)
    for i, p in enumerate(predators):
        (ck / f"predator_{i}.json").write_text(json.dumps(policy_doc(p)))
    (ck / "prey.json").write_text(json.dumps(policy_doc(prey)))
    return ck


# -- per-agent learning -----------------------------------------------------


class _AgentTrainer:
    """Turns one agent's experience into learner updates according to its mode."""

    def __init__(self, policy: LearnerPolicy, index: int, role: str, field_config: env.FieldConfig):
        self.policy = policy
        self.learner = policy.learner
        self.index = index
        self.role = role
        self.field_config = field_config
        self.uses_field = any(c.kind == alg.POTENTIAL_FIELD for c in self.learner.critics)
        self.steps = 0
        self._pending: Optional[alg.Transition] = None

    def field_snapshot(self, state, config):
        if not self.uses_field:
            return None, None
        spec = env.field_spec_for_agent(state, config, self.index, self.role, self.field_config)
        return spec, state.positions[self.index].copy()

    def record(self, obs, action, reward, next_obs, terminal, truncated, spec, pos, next_state, config):
        t = alg.Transition(obs, action, reward, next_obs, terminal, pf_spec=spec, position=pos)
        mode = self.learner.mode
        self.steps += 1
        if mode in ("ddpg", "pgddpg"):
            self.learner.buffer.push(t)
            h = self.learner.hyper
            if (
                len(self.learner.buffer) >= max(h.batch_size, h.warmup_steps)
                and self.steps % h.update_every == 0
            ):
                alg.train_on_batch(self.learner, self.learner.buffer.sample(h.batch_size))
        elif mode == "stochastic_ac2":
            alg.stochastic_update(self.learner, t)
        else:
            self._sarsa(t, terminal or truncated)

    def _sarsa(self, t: alg.Transition, episode_over: bool):
        # the previous transition is completed once the next action is known
        if self._pending is not None:
            self._sarsa_step(replace(self._pending, next_action=np.asarray(t.action)))
        self._pending = t
        if episode_over:
            nxt = np.zeros(self.learner.action_size)
            if not t.done:
                nxt = alg.select_action(self.learner, t.next_obs, True, self.policy.rng)
            self._sarsa_step(replace(t, next_action=nxt))
            self._pending = None

    def _sarsa_step(self, t: alg.Transition):
        alg.sarsa_critic_update(self.learner, t)
        alg.actor_update(self.learner, [t])
        self.learner.updates += 1


def _build_prey(config: ExperimentConfig, seed_seq, rng):
    obs_size = config.world.obs_size
    if config.prey_policy == "pretrained":
        doc = load_checkpoint_doc(config.prey_checkpoint)
        policy = policy_from_doc(doc, config.field, rng)
        if isinstance(policy, LearnerPolicy) and policy.learner.obs_size != obs_size:
            raise ConfigurationError(
                f"prey checkpoint expects observations of size {policy.learner.obs_size}, world gives {obs_size}"
            )
        return policy
    if config.prey_policy == "trained_simultaneously":
        learner = alg.make_learner(config.prey_algo, obs_size, 2, config.hyper, seed_seq)
        return LearnerPolicy(learner, trainable=True, rng=rng)
    if config.prey_policy == "stationary":
        return StationaryPolicy()
    return RandomPolicy(rng)


def _check_finite(policies, episode):
    for i, p in enumerate(policies):
        if isinstance(p, LearnerPolicy) and not p.learner.is_finite():
            raise TrainingDiverged(f"non-finite parameters in agent {i} after episode {episode}")


def run_experiment(
    config: ExperimentConfig,
    out_dir=None,
    on_record: Optional[Callable[[MetricsRecord], None]] = None,
    stop_when: Optional[Callable[[MetricsRecord], bool]] = None,
) -> ExperimentResult:
    """Train predators for ``total_episodes``; deterministic for a fixed config.

    With ``out_dir`` set, metrics.csv is streamed row by row and checkpoints
    are written every ``eval_every`` episodes and at the end.
    """
    world = config.world
    n_pred = world.n_predators
    root = np.random.SeedSequence(config.seed)
    env_ss, prey_ss, prey_noise_ss, *pred_ss = root.spawn(3 + 2 * n_pred)
    env_rng = np.random.default_rng(env_ss)

    predators = []
    for i in range(n_pred):
        learner = alg.make_learner(config.predator_algo, world.obs_size, 2, config.hyper, pred_ss[2 * i])
        predators.append(LearnerPolicy(learner, True, np.random.default_rng(pred_ss[2 * i + 1])))
    prey = _build_prey(config, prey_ss, np.random.default_rng(prey_noise_ss))
    policies = predators + [prey]
    trainers = [_AgentTrainer(p, i, "predator", config.field) for i, p in enumerate(predators)]
    if isinstance(prey, LearnerPolicy) and prey.trainable:
        trainers.append(_AgentTrainer(prey, world.prey_index, "prey", config.field))

    metrics_fh = traj_fh = None
    writer = traj = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        metrics_fh = open(out / "metrics.csv", "w", newline="")
        writer = csv.writer(metrics_fh)
        writer.writerow(METRICS_COLUMNS)
        if config.export_trajectories:
            traj_fh = open(out / "trajectories.csv", "w", newline="")
            traj = env.TrajectoryWriter(traj_fh, world)

    records: list[MetricsRecord] = []
    window = WindowedMetrics()
    start = time.perf_counter()
    try:
        for episode in range(1, config.total_episodes + 1):
            success, reward = _run_episode(world, config, policies, trainers, env_rng, episode, traj)
            try:
                _check_finite(policies, episode)
            except TrainingDiverged as exc:
                if out_dir is not None:
                    diag = {"episode": episode, "error": str(exc)}
                    (Path(out_dir) / "diverged.json").write_text(json.dumps(diag))
                raise
            rate, avg = window.add(reward, success)
            elapsed = time.perf_counter() - start if config.record_wall_clock else 0.0
            rec = MetricsRecord(episode, reward, success, rate, avg, elapsed)
            records.append(rec)
            if writer is not None:
                writer.writerow(rec.row())
                metrics_fh.flush()
            if on_record is not None:
                on_record(rec)
            if episode % config.eval_every == 0:
                log.info("episode %d success_rate_w200=%.3f reward_avg_w500=%.3f", episode, rate, avg)
                if out_dir is not None:
                    save_checkpoints(out_dir, predators, prey)
            if stop_when is not None and stop_when(rec):
                break
        if out_dir is not None:
            save_checkpoints(out_dir, predators, prey)
    finally:
        if metrics_fh is not None:
            metrics_fh.close()
        if traj_fh is not None:
            traj_fh.close()
    return ExperimentResult(records, predators, prey)


def _run_episode(world, config, policies, trainers, env_rng, episode, traj) -> tuple[bool, float]:
    state, obs = env.reset(world, int(env_rng.integers(2**63)))
    n_pred = world.n_predators
    total = np.zeros(world.n_agents)
    while True:
        actions = np.array([p.act(obs[i], state, i, world, True) for i, p in enumerate(policies)])
        snapshots = [t.field_snapshot(state, world) for t in trainers]
        result = env.step(state, world, actions)
        total += result.rewards
        truncated = result.done and not result.captured
        for t, (spec, pos) in zip(trainers, snapshots):
            i = t.index
            t.record(
                obs[i], actions[i], float(result.rewards[i]), result.observations[i],
                result.captured, truncated, spec, pos, result.state, world,
            )
        if traj is not None:
            traj.write(episode, result, actions)
        state, obs = result.state, result.observations
        if result.done:
            return result.captured, float(np.mean(total[:n_pred]))


def evaluate_policy(
    checkpoints,
    config: ExperimentConfig,
    n_episodes: int,
    seed: int = 0,
    out_path=None,
) -> float:
    """Capture fraction over ``n_episodes`` with exploration disabled.

    ``checkpoints`` is a directory holding predator_<i>.json and prey.json,
    or a list of checkpoint documents ordered predators first, prey last.
    """
    if n_episodes < 1:
        raise UsageError("n_episodes must be positive")
    world = config.world
    if isinstance(checkpoints, (str, Path)):
        ck = Path(checkpoints)
        docs = [load_checkpoint_doc(ck / f"predator_{i}.json") for i in range(world.n_predators)]
        docs.append(load_checkpoint_doc(ck / "prey.json"))
    else:
        docs = list(checkpoints)
    if len(docs) != world.n_agents:
        raise ConfigurationError(f"expected {world.n_agents} checkpoints, got {len(docs)}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    policies = [policy_from_doc(d, config.field, rng) for d in docs]
    for p in policies:
        if isinstance(p, LearnerPolicy) and p.learner.obs_size != world.obs_size:
            raise ConfigurationError(
                f"checkpoint expects observations of size {p.learner.obs_size}, world gives {world.obs_size}"
            )
    env_rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    outcomes = []
    for _ in range(n_episodes):
        state, obs = env.reset(world, int(env_rng.integers(2**63)))
        while True:
            actions = np.array([p.act(obs[i], state, i, world, False) for i, p in enumerate(policies)])
            result = env.step(state, world, actions)
            state, obs = result.state, result.observations
            if result.done:
                outcomes.append((result.captured, result.state.step_count))
                break
    if out_path is not None:
        with open(out_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["episode", "success", "steps"])
            for k, (captured, steps) in enumerate(outcomes, 1):
                w.writerow([k, int(captured), steps])
    return sum(c for c, _ in outcomes) / n_episodes


def pretrain_prey(config: ExperimentConfig, out_path=None) -> alg.AgentLearner:
    """DDPG prey trained against field-following predators.

    The prey earns +10 for surviving to the step limit and nothing otherwise;
    both capture and survival end its episode.
    """
    world = config.world
    root = np.random.SeedSequence([config.seed, 7])
    env_ss, learner_ss, noise_ss = root.spawn(3)
    env_rng = np.random.default_rng(env_ss)
    prey = LearnerPolicy(
        alg.make_learner("ddpg", world.obs_size, 2, config.hyper, learner_ss),
        True,
        np.random.default_rng(noise_ss),
    )
    chasers = [FieldFollower(config.field) for _ in range(world.n_predators)]
    policies = chasers + [prey]
    trainer = _AgentTrainer(prey, world.prey_index, "prey", config.field)
    for episode in range(1, config.pretrain_episodes + 1):
        state, obs = env.reset(world, int(env_rng.integers(2**63)))
        while True:
            actions = np.array([p.act(obs[i], state, i, world, True) for i, p in enumerate(policies)])
            result = env.step(state, world, actions)
            survived = result.done and not result.captured
            i = world.prey_index
            trainer.record(
                obs[i], actions[i], 10.0 if survived else 0.0, result.observations[i],
                result.done, False, None, None, result.state, world,
            )
            state, obs = result.state, result.observations
            if result.done:
                break
        if not prey.learner.is_finite():
            raise TrainingDiverged(f"prey parameters became non-finite in episode {episode}")
        if episode % config.eval_every == 0:
            log.info("prey pretraining episode %d", episode)
    if out_path is not None:
        alg.save_learner(prey.learner, out_path)
    return prey.learner
