"""Episode orchestration: observe, act, store, optimize, sync, and report.

An experiment runs E seeded episodes against one world, writing one CSV
row per episode as it finishes and aggregating means over 100-episode
blocks. Strategies plug in through a tiny interface (begin_episode,
select, after_optimize) so the same loop trains all of them.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import gmm
from .errors import ConfigError
from .explore import (
    ConvergenceParams,
    DomainNetwork,
    EpsilonSchedule,
    GuidanceConfig,
    VisitedSet,
    convergence_action,
    epsilon,
    epsilon_greedy_action,
    guidance_action,
)
from .memory import ReplayMemory, Transition
from .perception import RewardParams, augment_depth, network_state, reward
from .qpolicy import (
    OptimizerConfig,
    PolicyPair,
    build_dueling_network,
    maybe_sync,
    select_greedy,
    train_batch,
)
from .worldsim import N_ACTIONS, WorldConfig, person_bbox, render_depth, reset, step

BLOCK_SIZE = 100
EPISODE_HEADER = "episode,steps,total_reward,collided,epsilon,strategy,seed"
BLOCK_HEADER = "block_index,episodes,mean_reward,mean_steps,collision_rate"

STRATEGIES = ("epsilon_greedy", "convergence", "guidance")


@dataclass
class ExperimentConfig:
    world: WorldConfig
    strategy: str = "epsilon_greedy"
    episodes: int = 300
    seed: int = 0
    max_steps: int = 500
    warmup: int = 500
    batch_size: int = 32
    capacity: int = 5000
    input_resolution: int = 16
    hidden: tuple = (256, 128)
    lr: float = 1e-4
    algo: str = "adam"
    gamma: float = 0.99
    sync_interval: int = 200
    double_dqn: bool = False
    reward_dt: float | None = None  # defaults to the world control period
    reward_lam: float = 0.5
    reward_rho: float = 1.0
    shrink: float = 0.5
    penalty_mode: str = "height"
    eps0: float = 1.0
    eps_goal: float = 0.05
    eps_mode: str = "linear"
    tau: int = 5000
    zeta: float = 0.01
    v_size: int = 64
    visited_capacity: int = 512
    gmm_components: int = 3
    gmm_iterations: int = 20
    gmm_pseudocount: float = 1.0
    rank_alpha: float = 0.7
    refit_every: int = 1
    domain_hidden: tuple = (64,)
    domain_lr: float = 1e-3

    def reward_params(self) -> RewardParams:
        dt = self.reward_dt if self.reward_dt is not None else self.world.control_dt
        return RewardParams(dt=dt, lam=self.reward_lam, rho=self.reward_rho)


def _parse_bool(value: str) -> bool:
    low = value.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {value!r}")


def _parse_int_tuple(value: str) -> tuple:
    return tuple(int(p) for p in value.split())


# configuration keys accepted in world files and --set overrides
CONFIG_KEYS = {
    "reward.dt": ("reward_dt", float),
    "reward.lambda": ("reward_lam", float),
    "reward.rho": ("reward_rho", float),
    "reward.shrink": ("shrink", float),
    "reward.penalty_mode": ("penalty_mode", str),
    "qnet.hidden": ("hidden", _parse_int_tuple),
    "qnet.lr": ("lr", float),
    "qnet.algo": ("algo", str),
    "qnet.batch": ("batch_size", int),
    "qnet.gamma": ("gamma", float),
    "qnet.sync_interval": ("sync_interval", int),
    "qnet.double_dqn": ("double_dqn", _parse_bool),
    "qnet.input_resolution": ("input_resolution", int),
    "explore.eps0": ("eps0", float),
    "explore.eps_goal": ("eps_goal", float),
    "explore.eps_mode": ("eps_mode", str),
    "explore.tau": ("tau", int),
    "explore.zeta": ("zeta", float),
    "explore.v_size": ("v_size", int),
    "explore.visited_capacity": ("visited_capacity", int),
    "explore.gmm_components": ("gmm_components", int),
    "explore.gmm_iterations": ("gmm_iterations", int),
    "explore.gmm_pseudocount": ("gmm_pseudocount", float),
    "explore.rank_alpha": ("rank_alpha", float),
    "explore.refit_every": ("refit_every", int),
    "memory.capacity": ("capacity", int),
    "trainer.max_steps": ("max_steps", int),
    "trainer.warmup": ("warmup", int),
    "domain.hidden": ("domain_hidden", _parse_int_tuple),
    "domain.lr": ("domain_lr", float),
}


def apply_config_keys(config: ExperimentConfig, entries: dict, source: str = "<config>") -> None:
    """Apply dotted key/value settings onto an ExperimentConfig in place."""
    for key, value in entries.items():
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{source}: unknown configuration key {key!r}")
        attr, parse = CONFIG_KEYS[key]
        try:
            setattr(config, attr, parse(value))
        except ValueError as exc:
            raise ConfigError(f"{source}: bad value for {key}: {exc}") from None


def config_snapshot(config: ExperimentConfig) -> str:
    """Resolved dotted key = value lines for manifests."""
    lines = []
    for key, (attr, _) in sorted(CONFIG_KEYS.items()):
        value = getattr(config, attr)
        if value is None:
            continue
        if isinstance(value, tuple):
            value = " ".join(str(v) for v in value)
        elif isinstance(value, bool):
            value = int(value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# strategies


class EpsilonGreedyStrategy:
    name = "epsilon_greedy"
    prioritized = False

    def __init__(self, schedule: EpsilonSchedule):
        self.schedule = schedule
        self.eps = schedule.epsilon0

    def begin_episode(self, episode: int) -> None:
        self.eps = epsilon(self.schedule, episode)

    def select(self, pair, state, mem, global_step, rng) -> int:
        return epsilon_greedy_action(pair, state, self.eps, rng)

    def after_optimize(self, batch) -> None:
        pass


class ConvergenceStrategy:
    """Forced exploration for tau steps steered by online/target disagreement.

    The epsilon schedule is tracked only for the episode log; selection
    ignores it.
    """

    name = "convergence"
    prioritized = False

    def __init__(self, schedule: EpsilonSchedule, params: ConvergenceParams):
        self.schedule = schedule
        self.params = params
        self.eps = schedule.epsilon0

    def begin_episode(self, episode: int) -> None:
        self.eps = epsilon(self.schedule, episode)

    def select(self, pair, state, mem, global_step, rng) -> int:
        return convergence_action(pair, state, self.params, global_step, rng)

    def after_optimize(self, batch) -> None:
        pass


class GuidanceStrategy:
    """Novelty-directed exploration with a learned one-step predictor."""

    name = "guidance"
    prioritized = True

    def __init__(
        self,
        schedule: EpsilonSchedule,
        config: GuidanceConfig,
        domain: DomainNetwork,
        visited_capacity: int = 512,
        warmup: int = 500,
        refit_every: int = 1,
    ):
        self.schedule = schedule
        self.config = config
        self.domain = domain
        self.visited = VisitedSet(visited_capacity)
        self.warmup = max(warmup, config.v_size)
        self.refit_every = max(1, refit_every)
        self.eps = schedule.epsilon0
        self._mixture = None
        self._since_fit = 0

    def begin_episode(self, episode: int) -> None:
        self.eps = epsilon(self.schedule, episode)

    def _cached_mixture(self, mem, rng):
        """Refit on schedule; refit_every == 1 lets guidance_action fit."""
        if self.refit_every == 1:
            return None
        if self._mixture is None or self._since_fit >= self.refit_every:
            batch, _ = mem.sample_rank_prioritized(self.config.v_size, self.config.rank_alpha, rng)
            self.visited.extend(gmm.embed(t.state) for t in batch)
            self._mixture = gmm.fit(
                self.visited.array(),
                m=self.config.components,
                iterations=self.config.iterations,
                pseudocount=self.config.pseudocount,
                seed=int(rng.integers(2**31)),
            )
            self._since_fit = 0
        self._since_fit += 1
        return self._mixture

    def select(self, pair, state, mem, global_step, rng) -> int:
        if rng.random() >= self.eps:
            return select_greedy(pair, state)
        if len(mem) < self.warmup:
            return int(rng.integers(N_ACTIONS))
        mixture = self._cached_mixture(mem, rng)
        return guidance_action(
            pair, state, self.domain, mem, self.visited, self.config, rng, mixture=mixture
        )

    def after_optimize(self, batch) -> None:
        from .explore import domain_train

        domain_train(self.domain, batch)


def build_strategy(config: ExperimentConfig, domain_seed: int):
    schedule = EpsilonSchedule(
        epsilon0=config.eps0,
        epsilon_goal=config.eps_goal,
        total_episodes=config.episodes,
        mode=config.eps_mode,
    )
    if config.strategy == "epsilon_greedy":
        return EpsilonGreedyStrategy(schedule)
    if config.strategy == "convergence":
        return ConvergenceStrategy(schedule, ConvergenceParams(config.tau, config.zeta))
    if config.strategy == "guidance":
        domain = DomainNetwork(
            embedding_dim=gmm.EMBED_GRID**2,
            hidden=config.domain_hidden,
            seed=domain_seed,
            opt_config=OptimizerConfig(algo=config.algo, lr=config.domain_lr),
        )
        return GuidanceStrategy(
            schedule,
            GuidanceConfig(
                v_size=config.v_size,
                components=config.gmm_components,
                iterations=config.gmm_iterations,
                pseudocount=config.gmm_pseudocount,
                rank_alpha=config.rank_alpha,
            ),
            domain,
            visited_capacity=config.visited_capacity,
            warmup=config.warmup,
            refit_every=config.refit_every,
        )
    raise ConfigError(f"unknown strategy {config.strategy!r}; choose from {STRATEGIES}")


# ---------------------------------------------------------------------------
# episode loop


@dataclass
class EpisodeRecord:
    episode: int
    steps: int
    total_reward: float
    collided: bool
    epsilon: float


@dataclass
class BlockMetrics:
    block_index: int
    episodes_in_block: int
    mean_reward: float
    mean_steps: float
    collision_rate: float

    @property
    def partial(self) -> bool:
        return self.episodes_in_block < BLOCK_SIZE


def observe(world_state, world_config: WorldConfig, config: ExperimentConfig):
    """Depth render -> person box -> augmented depth -> network state."""
    raw = render_depth(world_state, world_config)
    box = person_bbox(world_state, world_config)
    augmented = augment_depth(raw, box, config.shrink)
    state = network_state(augmented, world_config.camera.max_range, config.input_resolution)
    return state, box


def start_state(world_config: WorldConfig, rng: np.random.Generator):
    """Reset with the person phase drawn from the experiment RNG, so
    successive episodes meet the person at varied points of its loop."""
    state = reset(world_config, seed=0)
    n = len(world_config.person_waypoints)
    if n > 1:
        k = int(rng.integers(n))
        state = dataclasses.replace(
            state,
            person_position=tuple(float(v) for v in world_config.person_waypoints[k]),
            person_waypoint_index=(k + 1) % n,
        )
    return state


def _optimize(config: ExperimentConfig, pair, strategy, mem, rng) -> None:
    if strategy.prioritized:
        batch, indices = mem.sample_rank_prioritized(config.batch_size, config.rank_alpha, rng)
    else:
        batch = mem.sample_uniform(config.batch_size, rng)
        indices = None
    _, td_errors = train_batch(pair, batch)
    if indices is not None:
        mem.update_priorities(indices, td_errors)
    strategy.after_optimize(batch)


def run_episode(
    config: ExperimentConfig,
    world_config: WorldConfig,
    initial_state,
    pair: PolicyPair,
    strategy,
    mem: ReplayMemory,
    rng: np.random.Generator,
    global_step: int,
    trace: list | None = None,
):
    """One episode: returns (total_reward, steps, collided, global_step).

    Terminates on collision or at the step cap; optimization starts once
    the memory holds the warm-up quota and runs once per environment step.
    """
    params = config.reward_params()
    cam = world_config.camera
    world_state = initial_state
    state, _ = observe(world_state, world_config, config)
    total = 0.0
    steps = 0
    collided = False
    ready = max(config.warmup, config.batch_size)
    for steps in range(1, config.max_steps + 1):
        action = strategy.select(pair, state, mem, global_step, rng)
        world_state, collided, applied_v, applied_psi = step(world_state, action, world_config)
        next_state, next_box = observe(world_state, world_config, config)
        r = reward(
            applied_v,
            applied_psi,
            next_box,
            (cam.width, cam.height),
            collided,
            params,
            config.penalty_mode,
        )
        mem.push(Transition(state, action, r, next_state, collided))
        total += r
        global_step += 1
        if trace is not None:
            x, y, z = world_state.uav_position
            trace.append(
                (steps, x, y, z, world_state.uav_heading, world_state.uav_pitch, action, r)
            )
        if len(mem) >= ready:
            _optimize(config, pair, strategy, mem, rng)
        maybe_sync(pair, global_step)
        if collided:
            break
        state = next_state
    return total, steps, collided, global_step


# ---------------------------------------------------------------------------
# experiment loop and metrics


def blocks_from_records(records) -> list:
    """Aggregate per-episode records into 100-episode blocks; a trailing
    block with fewer than 100 episodes is flagged by its episode count."""
    blocks = []
    for start_idx in range(0, len(records), BLOCK_SIZE):
        chunk = records[start_idx : start_idx + BLOCK_SIZE]
        blocks.append(
            BlockMetrics(
                block_index=start_idx // BLOCK_SIZE + 1,
                episodes_in_block=len(chunk),
                mean_reward=float(np.mean([r.total_reward for r in chunk])),
                mean_steps=float(np.mean([r.steps for r in chunk])),
                collision_rate=float(np.mean([1.0 if r.collided else 0.0 for r in chunk])),
            )
        )
    return blocks


def episode_row(record: EpisodeRecord, strategy_name: str, seed: int) -> str:
    return (
        f"{record.episode},{record.steps},{record.total_reward!r},"
        f"{int(record.collided)},{record.epsilon!r},{strategy_name},{seed}"
    )


def block_row(block: BlockMetrics) -> str:
    return (
        f"{block.block_index},{block.episodes_in_block},{block.mean_reward!r},"
        f"{block.mean_steps!r},{block.collision_rate!r}"
    )


def write_blocks_csv(path, blocks) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(BLOCK_HEADER + "\n")
        for block in blocks:
            fh.write(block_row(block) + "\n")


def read_blocks_csv(path) -> list:
    """Parse a blocks CSV, validating the documented schema."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [line.rstrip("\n") for line in fh if line.strip()]
    if not lines or lines[0] != BLOCK_HEADER:
        raise ConfigError(f"{path}: expected header {BLOCK_HEADER!r}")
    blocks = []
    for line in lines[1:]:
        parts = line.split(",")
        if len(parts) != 5:
            raise ConfigError(f"{path}: malformed row {line!r}")
        blocks.append(
            BlockMetrics(int(parts[0]), int(parts[1]), float(parts[2]), float(parts[3]), float(parts[4]))
        )
    return blocks


def read_episodes_csv(path) -> list:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [line.rstrip("\n") for line in fh if line.strip()]
    if not lines or lines[0] != EPISODE_HEADER:
        raise ConfigError(f"{path}: expected header {EPISODE_HEADER!r}")
    records = []
    for line in lines[1:]:
        parts = line.split(",")
        if len(parts) != 7:
            raise ConfigError(f"{path}: malformed row {line!r}")
        records.append(
            EpisodeRecord(int(parts[0]), int(parts[1]), float(parts[2]), bool(int(parts[3])), float(parts[4]))
        )
    return records


@dataclass
class ExperimentResult:
    records: list
    blocks: list
    pair: PolicyPair
    strategy: object
    global_steps: int
    config: ExperimentConfig = None


def run_experiment(
    config: ExperimentConfig,
    episodes_csv=None,
    progress=None,
) -> ExperimentResult:
    """Train for config.episodes episodes, streaming per-episode CSV rows.

    Fully reproducible from config.seed: the policy, the domain network,
    and every sampling decision derive from one seed sequence.
    """
    if config.episodes < 1:
        raise ConfigError("episodes must be at least 1")
    if config.strategy not in STRATEGIES:
        raise ConfigError(f"unknown strategy {config.strategy!r}; choose from {STRATEGIES}")
    children = np.random.SeedSequence(config.seed).spawn(3)
    net_seed = int(children[0].generate_state(1)[0])
    domain_seed = int(children[1].generate_state(1)[0])
    rng = np.random.default_rng(children[2])

    input_dim = config.input_resolution**2
    pair = PolicyPair(
        build_dueling_network(input_dim, config.hidden, config.gamma, seed=net_seed),
        sync_interval=config.sync_interval,
        double_dqn=config.double_dqn,
        opt_config=OptimizerConfig(algo=config.algo, lr=config.lr),
    )
    mem = ReplayMemory(config.capacity)
    strategy = build_strategy(config, domain_seed)

    out = open(episodes_csv, "w", encoding="utf-8") if episodes_csv else None
    try:
        if out:
            out.write(EPISODE_HEADER + "\n")
        records = []
        global_step = 0
        for episode in range(1, config.episodes + 1):
            strategy.begin_episode(episode)
            initial = start_state(config.world, rng)
            total, steps, collided, global_step = run_episode(
                config, config.world, initial, pair, strategy, mem, rng, global_step
            )
            record = EpisodeRecord(episode, steps, total, collided, strategy.eps)
            records.append(record)
            if out:
                out.write(episode_row(record, strategy.name, config.seed) + "\n")
                out.flush()
            if progress and episode % 25 == 0:
                progress(
                    f"episode {episode}/{config.episodes}: steps={steps} "
                    f"reward={total:.2f} eps={strategy.eps:.3f}"
                )
    finally:
        if out:
            out.close()
    blocks = blocks_from_records(records)
    return ExperimentResult(records, blocks, pair, strategy, global_step, config)
