"""Replay storage with proportional, inverse-proportional and uniform sampling views."""

from __future__ import annotations

import numpy as np

from .nn import Batch


class SumTree:
    """Array-backed binary sum tree over ``capacity`` leaves with vectorized update and lookup."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.n_leaves = 1 << max(0, (capacity - 1).bit_length())
        self.depth = self.n_leaves.bit_length() - 1
        self.nodes = np.zeros(2 * self.n_leaves - 1)

    @property
    def total(self) -> float:
        return float(self.nodes[0])

    def leaves(self) -> np.ndarray:
        start = self.n_leaves - 1
        return self.nodes[start:start + self.capacity]

    def update(self, idx, values) -> None:
        idx = np.atleast_1d(np.asarray(idx, dtype=np.int64))
        values = np.broadcast_to(np.asarray(values, dtype=np.float64), idx.shape)
        if (values < 0).any():
            raise ValueError("sum-tree values must be non-negative")
        node = idx + self.n_leaves - 1
        self.nodes[node] = values
        node = np.unique(node)
        for _ in range(self.depth):
            node = np.unique((node - 1) // 2)
            self.nodes[node] = self.nodes[2 * node + 1] + self.nodes[2 * node + 2]

    def find(self, mass) -> np.ndarray:
        """Leaf indices whose cumulative-sum interval contains each value of ``mass``."""
        mass = np.array(mass, dtype=np.float64, ndmin=1)
        node = np.zeros(mass.shape, dtype=np.int64)
        for _ in range(self.depth):
            left = 2 * node + 1
            left_sum = self.nodes[left]
            go_right = mass >= left_sum
            # never descend into an empty subtree because of round-off at the right edge
            go_right &= self.nodes[left + 1] > 0
            go_right |= left_sum <= 0
            mass = np.where(go_right, mass - left_sum, mass)
            node = np.where(go_right, left + 1, left)
        return np.minimum(node - (self.n_leaves - 1), self.capacity - 1)


class PrioritizedBuffer:
    """Ring buffer of transitions with three sampling views over the same storage.

    * proportional to ``p ** alpha`` (critic view),
    * proportional to ``(1 / p) ** alpha`` (actor view, favours small TD errors),
    * uniform.

    ``p`` is the raw priority, floored at ``p_min``.
    """

    def __init__(self, capacity: int, state_dim: int, action_dim: int, n_heads: int,
                 alpha: float = 0.6, p_min: float = 1e-6, seed: int = 0):
        self.capacity = capacity
        self.alpha = alpha
        self.p_min = p_min
        self.states = np.zeros((capacity, state_dim))
        self.next_states = np.zeros((capacity, state_dim))
        self.actions = np.zeros((capacity, action_dim), dtype=np.int64)
        self.rewards = np.zeros((capacity, n_heads))
        self.dones = np.zeros(capacity, dtype=bool)
        self.priorities = np.zeros(capacity)
        self.tree = SumTree(capacity)
        self.inv_tree = SumTree(capacity)
        self.rng = np.random.default_rng(seed)
        self.size = 0
        self.pos = 0
        self.max_priority = 1.0

    def __len__(self):
        return self.size

    def add(self, state, action, reward, next_state, done: bool) -> int:
        """Store one transition at maximal priority so it is sampled at least once soon."""
        i = self.pos
        reward = np.asarray(reward, dtype=np.float64)
        if reward.shape != self.rewards.shape[1:]:
            raise ValueError(f"reward vector has shape {reward.shape}, expected {self.rewards.shape[1:]}")
        self.states[i] = state
        self.actions[i] = np.atleast_1d(action)
        self.rewards[i] = reward
        self.next_states[i] = next_state
        self.dones[i] = done
        self._set(np.array([i]), np.array([self.max_priority]))
        self.pos = (self.pos + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        return i

    def _set(self, idx: np.ndarray, p: np.ndarray) -> None:
        p = np.maximum(np.asarray(p, dtype=np.float64), self.p_min)
        self.priorities[idx] = p
        self.tree.update(idx, p ** self.alpha)
        self.inv_tree.update(idx, (1.0 / p) ** self.alpha)

    def update_priorities(self, idx, priorities) -> None:
        idx = np.asarray(idx, dtype=np.int64)
        priorities = np.asarray(priorities, dtype=np.float64)
        if (priorities < 0).any() or not np.isfinite(priorities).all():
            raise ValueError("priorities must be finite and non-negative")
        self._set(idx, priorities)
        self.max_priority = max(self.max_priority, float(np.max(self.priorities[idx])))

    def probabilities(self, inverse: bool = False) -> np.ndarray:
        tree = self.inv_tree if inverse else self.tree
        leaves = tree.leaves()[:self.size]
        return leaves / leaves.sum()

    def _stratified(self, tree: SumTree, batch_size: int) -> np.ndarray:
        total = tree.total
        edges = np.arange(batch_size) * (total / batch_size)
        mass = edges + self.rng.random(batch_size) * (total / batch_size)
        return np.minimum(tree.find(mass), self.size - 1)

    def _check(self, batch_size: int) -> None:
        if self.size < batch_size:
            raise ValueError(f"buffer holds {self.size} transitions, need {batch_size}")

    def sample_prioritized(self, batch_size: int, beta: float = 0.4):
        """Indices and normalized importance weights ``(N P(i)) ** -beta / max``."""
        self._check(batch_size)
        idx = self._stratified(self.tree, batch_size)
        prob = self.tree.leaves()[idx] / self.tree.total
        w = (self.size * prob) ** (-beta)
        return idx, w / w.max()

    def sample_inverse(self, batch_size: int) -> np.ndarray:
        self._check(batch_size)
        return self._stratified(self.inv_tree, batch_size)

    def sample_uniform(self, batch_size: int) -> np.ndarray:
        self._check(batch_size)
        return self.rng.integers(self.size, size=batch_size)

    def batch(self, idx) -> Batch:
        actions = self.actions[idx]
        if actions.shape[1] == 1:
            actions = actions[:, 0]
        return Batch(self.states[idx], actions, self.rewards[idx], self.next_states[idx],
                     self.dones[idx])
