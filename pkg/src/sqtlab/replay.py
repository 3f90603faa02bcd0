"""FIFO replay buffer with uniform sampling with replacement."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyBufferError, ShapeError


@dataclass(frozen=True)
class Transition:
    s: np.ndarray
    a: np.ndarray
    r: float
    s_next: np.ndarray
    done: bool


@dataclass(frozen=True)
class Batch:
    """Column-stacked transitions; ``done`` is 0.0/1.0."""

    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    done: np.ndarray

    def __len__(self):
        return len(self.r)

    def transitions(self) -> list[Transition]:
        return [
            Transition(self.s[i], self.a[i], float(self.r[i]), self.s_next[i], bool(self.done[i]))
            for i in range(len(self))
        ]

    @classmethod
    def from_transitions(cls, items) -> Batch:
        items = list(items)
        return cls(
            np.array([t.s for t in items], dtype=np.float64),
            np.array([t.a for t in items], dtype=np.float64),
            np.array([t.r for t in items], dtype=np.float64),
            np.array([t.s_next for t in items], dtype=np.float64),
            np.array([float(t.done) for t in items]),
        )


class ReplayBuffer:
    """Ring buffer: once full, each push overwrites the oldest entry."""

    def __init__(self, capacity: int, state_dim: int, action_dim: int):
        if capacity < 1:
            raise ValueError(f"capacity must be positive, got {capacity}")
        self.capacity = int(capacity)
        self.state_dim = state_dim
        self.action_dim = action_dim
        self._s = np.zeros((capacity, state_dim))
        self._a = np.zeros((capacity, action_dim))
        self._r = np.zeros(capacity)
        self._s_next = np.zeros((capacity, state_dim))
        self._done = np.zeros(capacity)
        self.write_cursor = 0
        self.size = 0

    def __len__(self):
        return self.size

    def push(self, t: Transition) -> None:
        s = np.asarray(t.s, dtype=np.float64)
        a = np.asarray(t.a, dtype=np.float64)
        s_next = np.asarray(t.s_next, dtype=np.float64)
        if s.shape != (self.state_dim,) or s_next.shape != (self.state_dim,):
            raise ShapeError(f"state dims {s.shape}/{s_next.shape}, buffer wants {self.state_dim}")
        if a.shape != (self.action_dim,):
            raise ShapeError(f"action dim {a.shape}, buffer wants {self.action_dim}")
        i = self.write_cursor
        self._s[i] = s
        self._a[i] = a
        self._r[i] = t.r
        self._s_next[i] = s_next
        self._done[i] = float(t.done)
        self.write_cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def _gather(self, idx) -> Batch:
        return Batch(
            self._s[idx], self._a[idx], self._r[idx], self._s_next[idx], self._done[idx]
        )

    def sample(self, rng: np.random.Generator, batch_size: int) -> Batch:
        if self.size == 0:
            raise EmptyBufferError("cannot sample from an empty buffer")
        if batch_size < 1:
            raise ValueError(f"batch_size must be positive, got {batch_size}")
        return self._gather(rng.integers(0, self.size, size=batch_size))

    def contents(self) -> list[Transition]:
        """Stored transitions, oldest first."""
        start = self.write_cursor if self.size == self.capacity else 0
        order = (start + np.arange(self.size)) % self.capacity
        return self._gather(order).transitions()


def buffer_push(buf: ReplayBuffer, t: Transition) -> None:
    buf.push(t)


def buffer_sample(buf: ReplayBuffer, rng: np.random.Generator, batch_size: int) -> list[Transition]:
    return buf.sample(rng, batch_size).transitions()
