from __future__ import annotations

import numpy as np

from ..grid import GridCase


class ReplayBuffer:
    """Fixed-capacity FIFO store of transitions with a seeded uniform sampler.

    Each transition carries (x_{t-1}, A_t, r_t, x_t) plus the constants the
    constraint residuals need: SOC before/after, realized |v| and the demand window.
    """

    def __init__(self, capacity: int, case: GridCase, horizon: int, seed: int = 0):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        N, B, T = case.n_bus, case.n_bess, horizon
        self.capacity = capacity
        self.rng = np.random.default_rng(seed)
        self.count = 0
        self.fields = {
            "feat_prev": np.zeros((capacity, N, 2 * T), complex),
            "feat_next": np.zeros((capacity, N, 2 * T), complex),
            "block": np.zeros((capacity, T, case.action_dim)),
            "reward": np.zeros(capacity),
            "not_done": np.zeros(capacity),
            "soc_prev": np.zeros((capacity, B)),
            "soc_next": np.zeros((capacity, B)),
            "vm_next": np.zeros((capacity, N)),
            "d_p": np.zeros((capacity, T, N)),
            "d_q": np.zeros((capacity, T, N)),
            "t": np.zeros(capacity, dtype=int),
        }

    def __len__(self) -> int:
        return min(self.count, self.capacity)

    def add(self, **item) -> None:
        if set(item) != set(self.fields):
            raise ValueError(f"transition fields differ: {sorted(set(item) ^ set(self.fields))}")
        i = self.count % self.capacity
        for k, v in item.items():
            self.fields[k][i] = v
        self.count += 1

    def sample(self, n: int) -> dict[str, np.ndarray]:
        if len(self) == 0:
            raise ValueError("cannot sample from an empty buffer")
        idx = self.rng.integers(0, len(self), size=n)
        return {k: v[idx] for k, v in self.fields.items()}

    def stored_steps(self) -> np.ndarray:
        """Time stamps in insertion order (oldest first)."""
        n = len(self)
        start = self.count - n
        return np.array([self.fields["t"][k % self.capacity] for k in range(start, self.count)])
