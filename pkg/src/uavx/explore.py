"""Action selection: epsilon-greedy, convergence, and guidance exploration.

Convergence exploration spends a fixed step budget steering random picks
away from state-action pairs whose online/target networks already agree.
Guidance exploration predicts the next state per action with a learned
domain network and takes the action whose prediction has the lowest
density under a Gaussian mixture of previously visited states.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import gmm
from .tensor_nn import (
    Network,
    Optimizer,
    OptimizerConfig,
    backward_from_trace,
    forward,
    forward_trace,
    init_network,
    optimizer_step,
)
from .qpolicy import PolicyPair, q_values, select_greedy
from .worldsim import N_ACTIONS


@dataclass(frozen=True)
class EpsilonSchedule:
    epsilon0: float = 1.0
    epsilon_goal: float = 0.05
    total_episodes: int = 300
    mode: str = "linear"  # or "literal"

    def validate(self):
        if not 0.0 <= self.epsilon_goal <= self.epsilon0 <= 1.0:
            raise ValueError(
                f"need 0 <= epsilon_goal <= epsilon0 <= 1, got {self.epsilon_goal}, {self.epsilon0}"
            )
        if self.total_episodes < 1:
            raise ValueError("total_episodes must be positive")
        if self.mode not in ("linear", "literal"):
            raise ValueError(f"unknown epsilon mode {self.mode!r}")


def epsilon(schedule: EpsilonSchedule, episode: int) -> float:
    """Exploration probability for an episode (1-based).

    Linear mode decays from epsilon0 to epsilon_goal across the run; the
    literal mode divides the epsilon range by the episode number, clamped
    to [epsilon_goal, epsilon0].
    """
    schedule.validate()
    if episode < 1:
        raise ValueError(f"episode numbering starts at 1, got {episode}")
    span = schedule.epsilon0 - schedule.epsilon_goal
    if schedule.mode == "linear":
        value = schedule.epsilon0 - span * episode / schedule.total_episodes
    else:
        value = span / episode
    return float(np.clip(value, schedule.epsilon_goal, schedule.epsilon0))


def epsilon_greedy_action(pair: PolicyPair, state, eps: float, rng: np.random.Generator) -> int:
    """Uniform random action with probability eps, else the greedy one."""
    if not 0.0 <= eps <= 1.0:
        raise ValueError(f"eps must lie in [0, 1], got {eps}")
    if rng.random() < eps:
        return int(rng.integers(N_ACTIONS))
    return select_greedy(pair, state)


@dataclass(frozen=True)
class ConvergenceParams:
    tau: int = 5000   # forced exploration budget in global steps
    zeta: float = 0.01  # convergence error threshold

    def validate(self):
        if self.tau < 0:
            raise ValueError("tau must be non-negative")
        if self.zeta <= 0.0:
            raise ValueError("zeta must be positive")


def convergence_errors(pair: PolicyPair, state) -> np.ndarray:
    """Per-action squared online/target disagreement, measurable before
    executing the action; zero exactly when the pair has converged there."""
    online = q_values(pair.online, state)
    target = q_values(pair.target, state)
    return (target - online) ** 2


def convergence_action(
    pair: PolicyPair,
    state,
    params: ConvergenceParams,
    global_step: int,
    rng: np.random.Generator,
) -> int:
    """During the first tau steps, scan a random action order and take the
    first insufficiently converged action; afterwards (or when every action
    has converged) act greedily."""
    params.validate()
    if global_step >= params.tau:
        return select_greedy(pair, state)
    errors = convergence_errors(pair, state)
    for action in rng.permutation(N_ACTIONS):
        if errors[action] >= params.zeta:
            return int(action)
    return select_greedy(pair, state)


# ---------------------------------------------------------------------------
# domain network


class DomainNetwork:
    """Feed-forward one-step state predictor on (embedding, one-hot action)."""

    def __init__(
        self,
        embedding_dim: int = gmm.EMBED_GRID**2,
        hidden=(64,),
        seed: int = 0,
        opt_config: OptimizerConfig | None = None,
    ):
        dims = [embedding_dim + N_ACTIONS, *hidden, embedding_dim]
        self.embedding_dim = embedding_dim
        self.net: Network = init_network(dims, seed=seed)
        self.optimizer = Optimizer(self.net, opt_config or OptimizerConfig(algo="adam", lr=1e-3))


def _encode(embedding: np.ndarray, action: int, dim: int) -> np.ndarray:
    vec = np.zeros(dim + N_ACTIONS)
    vec[:dim] = embedding
    vec[dim + int(action)] = 1.0
    return vec


def domain_predict(domain: DomainNetwork, state_embedding, action: int) -> np.ndarray:
    """Predicted next-state embedding for one action; a pure forward pass."""
    emb = np.asarray(state_embedding, dtype=np.float64)
    return forward(domain.net, _encode(emb, action, domain.embedding_dim))


def domain_predict_all(domain: DomainNetwork, state_embedding) -> np.ndarray:
    """(N_ACTIONS, d) predictions, one row per action."""
    emb = np.asarray(state_embedding, dtype=np.float64)
    batch = np.stack([_encode(emb, a, domain.embedding_dim) for a in range(N_ACTIONS)])
    return forward(domain.net, batch)


def domain_train(domain: DomainNetwork, batch) -> float:
    """One optimizer step on the mean squared next-embedding error."""
    if not batch:
        raise ValueError("batch must not be empty")
    d = domain.embedding_dim
    inputs = np.stack([_encode(gmm.embed(t.state), t.action, d) for t in batch])
    targets = np.stack([gmm.embed(t.next_state) for t in batch])
    preds, trace = forward_trace(domain.net, inputs)
    diff = preds - targets
    b = len(batch)
    loss = float(np.sum(diff * diff) / b)
    grads, _ = backward_from_trace(domain.net, trace, 2.0 * diff / b)
    optimizer_step(domain.net, grads, domain.optimizer)
    return loss


# ---------------------------------------------------------------------------
# guidance exploration


class VisitedSet:
    """Bounded FIFO of previously visited state embeddings."""

    def __init__(self, capacity: int = 512):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._items: list[np.ndarray] = []

    def __len__(self) -> int:
        return len(self._items)

    def extend(self, embeddings) -> None:
        for e in embeddings:
            self._items.append(np.asarray(e, dtype=np.float64))
        overflow = len(self._items) - self.capacity
        if overflow > 0:
            del self._items[:overflow]

    def array(self) -> np.ndarray:
        return np.stack(self._items)


@dataclass(frozen=True)
class GuidanceConfig:
    v_size: int = 64           # visited-state sample drawn per exploration step
    components: int = 3
    iterations: int = 20
    pseudocount: float = 1.0
    rank_alpha: float = 0.7


def guidance_action(
    pair: PolicyPair,
    state,
    domain: DomainNetwork,
    mem,
    visited: VisitedSet,
    config: GuidanceConfig,
    rng: np.random.Generator,
    mixture=None,
) -> int:
    """Take the action whose predicted next state is least like past states.

    Samples v_size transitions by rank priority, folds their embeddings
    into the visited set, fits the mixture, and scores every action's
    one-step prediction; the lowest log-density wins, ties to the lower
    action id. Falls back to a uniform random action until the memory
    holds v_size transitions. A prefit mixture skips the sample-and-fit
    stage (used to refit on a schedule instead of every step).
    """
    del pair  # greedy exploitation is the caller's branch, not ours
    if mixture is None:
        if len(mem) < config.v_size:
            return int(rng.integers(N_ACTIONS))
        batch, _ = mem.sample_rank_prioritized(config.v_size, config.rank_alpha, rng)
        visited.extend(gmm.embed(t.state) for t in batch)
        mixture = gmm.fit(
            visited.array(),
            m=config.components,
            iterations=config.iterations,
            pseudocount=config.pseudocount,
            seed=int(rng.integers(2**31)),
        )
    embedding = gmm.embed(np.asarray(state, dtype=np.float64))
    predictions = domain_predict_all(domain, embedding)
    scores = np.array([gmm.log_density(mixture, p) for p in predictions])
    return int(np.argmin(scores))
