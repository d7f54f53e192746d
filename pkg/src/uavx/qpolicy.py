"""Dueling double Q-network pair: value estimation, TD targets, training.

The online and target networks share one architecture: a feature trunk
feeding a scalar state-value head and a ten-way action-advantage head,
aggregated as Q(s, a) = V(s) + A(s, a) - mean_a A(s, a). Targets bootstrap
from the target network; an optional double-Q flag selects the action with
the online network instead.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericError
from .tensor_nn import (
    Network,
    Optimizer,
    OptimizerConfig,
    backward_from_trace,
    clone_parameters,
    forward,
    forward_trace,
    init_network,
    load_network,
    optimizer_step,
    save_network,
)
from .worldsim import N_ACTIONS

_POLICY_MANIFEST = "policy.txt"
_NET_FILES = ("trunk", "value", "advantage")


@dataclass
class DuelingQNetwork:
    trunk: Network
    value_head: Network
    advantage_head: Network
    gamma: float = 0.99


def build_dueling_network(
    input_dim: int,
    hidden=(256, 128),
    gamma: float = 0.99,
    seed: int = 0,
) -> DuelingQNetwork:
    """Trunk input -> hidden dims (relu), then linear value/advantage heads."""
    if not hidden:
        raise ConfigError("need at least one hidden layer for the trunk")
    if not 0.0 < gamma < 1.0:
        raise ConfigError(f"gamma must lie in (0, 1), got {gamma}")
    dims = [input_dim, *hidden]
    trunk = init_network(dims, activations=["relu"] * (len(dims) - 1), seed=seed)
    feat = dims[-1]
    value = init_network([feat, 1], seed=seed + 1)
    advantage = init_network([feat, N_ACTIONS], seed=seed + 2)
    return DuelingQNetwork(trunk, value, advantage, gamma)


def clone_dueling(net: DuelingQNetwork) -> DuelingQNetwork:
    return DuelingQNetwork(
        clone_parameters(net.trunk),
        clone_parameters(net.value_head),
        clone_parameters(net.advantage_head),
        net.gamma,
    )


def _flatten_states(states) -> np.ndarray:
    # a bare array is one observation (1-D or 2-D); a batch arrives as a list
    if isinstance(states, np.ndarray):
        return states.reshape(1, -1)
    return np.stack([np.asarray(s, dtype=np.float64).ravel() for s in states])


def q_values_batch(net: DuelingQNetwork, states) -> np.ndarray:
    """(batch, N_ACTIONS) dueling-aggregated action values."""
    x = _flatten_states(states)
    feats = forward(net.trunk, x)
    v = forward(net.value_head, feats)
    a = forward(net.advantage_head, feats)
    return v + a - a.mean(axis=1, keepdims=True)


def q_values(net: DuelingQNetwork, state) -> np.ndarray:
    """Action values for one observation (flattened internally)."""
    return q_values_batch(net, [state])[0]


@dataclass
class PolicyPair:
    """Online network, its periodically synced target, and optimizer state."""

    online: DuelingQNetwork
    sync_interval: int = 200
    double_dqn: bool = False
    opt_config: OptimizerConfig = field(default_factory=OptimizerConfig)
    target: DuelingQNetwork = None

    def __post_init__(self):
        if self.sync_interval < 1:
            raise ConfigError(f"sync_interval must be positive, got {self.sync_interval}")
        if self.target is None:
            self.target = clone_dueling(self.online)
        self._opts = {
            "trunk": Optimizer(self.online.trunk, self.opt_config),
            "value": Optimizer(self.online.value_head, self.opt_config),
            "advantage": Optimizer(self.online.advantage_head, self.opt_config),
        }

    @property
    def gamma(self) -> float:
        return self.online.gamma


def select_greedy(pair: PolicyPair, state) -> int:
    """Argmax over online Q-values; exact ties go to the lowest action id."""
    return int(np.argmax(q_values(pair.online, state)))


def td_target(transition, pair: PolicyPair) -> float:
    """Bootstrap target: r for terminal transitions, else r + gamma * max Q'."""
    if transition.terminal:
        return float(transition.reward)
    target_q = q_values(pair.target, transition.next_state)
    if pair.double_dqn:
        pick = int(np.argmax(q_values(pair.online, transition.next_state)))
        bootstrap = target_q[pick]
    else:
        bootstrap = np.max(target_q)
    return float(transition.reward + pair.gamma * bootstrap)


def _batch_targets(pair: PolicyPair, batch) -> np.ndarray:
    rewards = np.array([t.reward for t in batch], dtype=np.float64)
    terminals = np.array([t.terminal for t in batch], dtype=bool)
    targets = rewards.copy()
    live = ~terminals
    if np.any(live):
        next_states = [batch[i].next_state for i in np.nonzero(live)[0]]
        target_q = q_values_batch(pair.target, next_states)
        if pair.double_dqn:
            online_q = q_values_batch(pair.online, next_states)
            picks = np.argmax(online_q, axis=1)
            bootstrap = target_q[np.arange(len(next_states)), picks]
        else:
            bootstrap = target_q.max(axis=1)
        targets[live] += pair.gamma * bootstrap
    return targets


def train_batch(pair: PolicyPair, batch):
    """One optimizer step on the mean squared TD error of the batch.

    The loss touches only each sample's taken action, so gradients reach
    the advantage head through the mean-centered aggregation alone.
    Returns (loss, signed per-sample TD errors y - Q(s, a) before the update).
    """
    if not batch:
        raise ValueError("batch must not be empty")
    targets = _batch_targets(pair, batch)
    states = _flatten_states([t.state for t in batch])
    actions = np.array([t.action for t in batch], dtype=np.int64)
    b = len(batch)

    feats, trunk_trace = forward_trace(pair.online.trunk, states)
    v, value_trace = forward_trace(pair.online.value_head, feats)
    a, adv_trace = forward_trace(pair.online.advantage_head, feats)
    q = v + a - a.mean(axis=1, keepdims=True)
    q_taken = q[np.arange(b), actions]
    td_errors = targets - q_taken
    loss = float(np.mean(td_errors**2))
    if not np.isfinite(loss):
        raise NumericError(f"non-finite TD loss {loss}; targets {targets}")

    dq = np.zeros_like(q)
    dq[np.arange(b), actions] = -2.0 * td_errors / b
    dv = dq.sum(axis=1, keepdims=True)
    da = dq - dq.mean(axis=1, keepdims=True)

    value_grads, dfeat_v = backward_from_trace(pair.online.value_head, value_trace, dv)
    adv_grads, dfeat_a = backward_from_trace(pair.online.advantage_head, adv_trace, da)
    trunk_grads, _ = backward_from_trace(pair.online.trunk, trunk_trace, dfeat_v + dfeat_a)

    optimizer_step(pair.online.trunk, trunk_grads, pair._opts["trunk"])
    optimizer_step(pair.online.value_head, value_grads, pair._opts["value"])
    optimizer_step(pair.online.advantage_head, adv_grads, pair._opts["advantage"])
    return loss, td_errors


def maybe_sync(pair: PolicyPair, global_step: int) -> PolicyPair:
    """Copy online parameters into the target every sync_interval steps."""
    if global_step % pair.sync_interval == 0:
        pair.target = clone_dueling(pair.online)
    return pair


# ---------------------------------------------------------------------------
# checkpointing


def save_policy(pair: PolicyPair, directory, global_step: int = 0) -> None:
    """Write online/target networks plus a plain-text policy manifest."""
    os.makedirs(directory, exist_ok=True)
    for role, net in (("online", pair.online), ("target", pair.target)):
        for part, sub in zip(_NET_FILES, (net.trunk, net.value_head, net.advantage_head)):
            save_network(sub, os.path.join(directory, f"{role}_{part}.nn"))
    with open(os.path.join(directory, _POLICY_MANIFEST), "w", encoding="utf-8") as fh:
        fh.write(f"global_step = {global_step}\n")
        fh.write(f"gamma = {pair.gamma!r}\n")
        fh.write(f"sync_interval = {pair.sync_interval}\n")
        fh.write(f"double_dqn = {int(pair.double_dqn)}\n")


def load_policy(directory) -> tuple:
    """Read a checkpoint directory. Returns (PolicyPair, global_step)."""
    manifest = os.path.join(directory, _POLICY_MANIFEST)
    if not os.path.isfile(manifest):
        raise ConfigError(f"{directory}: missing {_POLICY_MANIFEST}")
    meta = {}
    with open(manifest, "r", encoding="utf-8") as fh:
        for line in fh:
            if "=" in line:
                k, v = line.split("=", 1)
                meta[k.strip()] = v.strip()
    try:
        gamma = float(meta["gamma"])
        sync_interval = int(meta["sync_interval"])
        double_dqn = bool(int(meta.get("double_dqn", "0")))
        global_step = int(meta.get("global_step", "0"))
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"{manifest}: invalid policy manifest ({exc})") from exc
    nets = {}
    for role in ("online", "target"):
        parts = [load_network(os.path.join(directory, f"{role}_{p}.nn")) for p in _NET_FILES]
        nets[role] = DuelingQNetwork(*parts, gamma)
    pair = PolicyPair(
        nets["online"],
        sync_interval=sync_interval,
        double_dqn=double_dqn,
        target=nets["target"],
    )
    return pair, global_step
