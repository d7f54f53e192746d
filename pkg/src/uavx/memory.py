"""Transition replay storage.

One buffer serves both training modes: uniform sampling over a FIFO ring,
and rank-based prioritized sampling where the probability of the entry at
rank k (sorted by descending absolute TD error) is proportional to
(1/k)**alpha. Fresh entries receive the current maximum priority so they
are drawn at least once before their TD error is known.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import InsufficientData

DEFAULT_CAPACITY = 5000

_DUMP_MAGIC = b"UXRP0001"


@dataclass
class Transition:
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    terminal: bool


class ReplayMemory:
    """Bounded transition store with FIFO eviction by insertion order."""

    def __init__(self, capacity: int = DEFAULT_CAPACITY):
        if capacity < 1:
            raise ValueError(f"capacity must be positive, got {capacity}")
        self.capacity = capacity
        self._transitions: list[Transition] = []
        self._priorities = np.zeros(capacity, dtype=np.float64)
        self._insertion = np.zeros(capacity, dtype=np.int64)
        self._counter = 0

    def __len__(self) -> int:
        return len(self._transitions)

    def push(self, transition: Transition) -> None:
        """Store a transition; evicts the oldest insertion when full."""
        n = len(self._transitions)
        priority = float(self._priorities[:n].max()) if n else 1.0
        if n < self.capacity:
            slot = n
            self._transitions.append(transition)
        else:
            slot = int(np.argmin(self._insertion[:n]))
            self._transitions[slot] = transition
        self._priorities[slot] = priority
        self._insertion[slot] = self._counter
        self._counter += 1

    def transitions(self) -> list:
        """Entries in the current order (ranked after sort_by_td)."""
        return list(self._transitions)

    def priorities(self) -> np.ndarray:
        return self._priorities[: len(self._transitions)].copy()

    def insertion_order(self) -> np.ndarray:
        return self._insertion[: len(self._transitions)].copy()

    def sample_uniform(self, b: int, rng: np.random.Generator) -> list:
        """b distinct transitions drawn uniformly without replacement."""
        n = len(self._transitions)
        if b < 1:
            raise ValueError(f"batch size must be positive, got {b}")
        if b > n:
            raise InsufficientData(f"requested {b} samples but only {n} stored")
        idx = rng.choice(n, size=b, replace=False)
        return [self._transitions[i] for i in idx]

    def sort_by_td(self) -> None:
        """Reorder entries by descending priority, insertion order on ties."""
        n = len(self._transitions)
        if n == 0:
            return
        perm = np.lexsort((self._insertion[:n], -self._priorities[:n]))
        self._transitions = [self._transitions[i] for i in perm]
        self._priorities[:n] = self._priorities[perm]
        self._insertion[:n] = self._insertion[perm]

    def sample_rank_prioritized(self, b: int, alpha: float, rng: np.random.Generator):
        """Draw b entries without replacement with P(rank k) ~ (1/k)**alpha.

        Sorts first so ranks are current. Returns (transitions, indices);
        the indices address the ranked order and stay valid until the next
        push or sort, which is long enough to update priorities from the
        optimization pass that consumed the batch.
        """
        n = len(self._transitions)
        if b < 1:
            raise ValueError(f"batch size must be positive, got {b}")
        if b > n:
            raise InsufficientData(f"requested {b} samples but only {n} stored")
        if alpha < 0.0:
            raise ValueError(f"alpha must be non-negative, got {alpha}")
        self.sort_by_td()
        weights = (1.0 / np.arange(1, n + 1)) ** alpha
        weights /= weights.sum()
        idx = rng.choice(n, size=b, replace=False, p=weights)
        return [self._transitions[i] for i in idx], idx

    def update_priorities(self, indices, td_errors) -> None:
        """priority[i] <- |td_error[i]| for each sampled index."""
        n = len(self._transitions)
        indices = np.asarray(indices, dtype=np.int64)
        td_errors = np.asarray(td_errors, dtype=np.float64)
        if indices.shape != td_errors.shape:
            raise ValueError("indices and td_errors must have matching shapes")
        if indices.size and (indices.min() < 0 or indices.max() >= n):
            raise IndexError(f"index out of range for memory of size {n}")
        self._priorities[indices] = np.abs(td_errors)

    def dump(self, path) -> None:
        """Debug dump: magic, transition count, then per transition the
        action, reward, terminal flag, and both state arrays with shapes."""
        with open(path, "wb") as fh:
            fh.write(_DUMP_MAGIC)
            fh.write(struct.pack("<I", len(self._transitions)))
            for t in self._transitions:
                fh.write(struct.pack("<id?", int(t.action), float(t.reward), bool(t.terminal)))
                for arr in (t.state, t.next_state):
                    arr = np.asarray(arr, dtype=np.float64)
                    fh.write(struct.pack("<I", arr.ndim))
                    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
                    fh.write(arr.astype("<f8").tobytes(order="C"))


def load_dump(path) -> list:
    """Read back a replay dump written by ReplayMemory.dump."""
    out = []
    with open(path, "rb") as fh:
        if fh.read(len(_DUMP_MAGIC)) != _DUMP_MAGIC:
            raise ValueError(f"{path}: not a replay dump")
        (count,) = struct.unpack("<I", fh.read(4))
        for _ in range(count):
            action, reward, terminal = struct.unpack("<id?", fh.read(struct.calcsize("<id?")))
            arrays = []
            for _ in range(2):
                (ndim,) = struct.unpack("<I", fh.read(4))
                shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
                size = int(np.prod(shape)) if ndim else 1
                data = np.frombuffer(fh.read(8 * size), dtype="<f8")
                arrays.append(data.reshape(shape).astype(np.float64))
            out.append(Transition(arrays[0], action, reward, arrays[1], terminal))
    return out
