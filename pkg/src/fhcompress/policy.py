"""Autoregressive per-cell policies over the 27 knob-delta triples.

Cell k's action distribution is conditioned on the state and on the actions
already chosen for cells ``0..k-1``. The conditioner is pluggable: anything with
the ``MultiHeadNet`` surface (``forward(x, keep)``, ``backward``, ``params``)
works. The default feeds ``[state, one-hot prefix, one-hot position]`` to a ReLU
MLP, so the first layer adds one learned embedding per (cell, action) pair.
"""

from __future__ import annotations

import numpy as np

from .nn import MultiHeadNet


def prefix_inputs(states: np.ndarray, prefix: np.ndarray, position: int, k_cells: int,
                  n_actions: int) -> np.ndarray:
    """Encode ``(state, a_<k, k)`` rows. Entries of ``prefix`` at or after ``position`` are ignored."""
    states = np.atleast_2d(states)
    b = states.shape[0]
    onehot = np.zeros((b, k_cells * n_actions))
    rows = np.arange(b)
    for j in range(position):
        onehot[rows, j * n_actions + prefix[:, j]] = 1.0
    pos = np.zeros((b, k_cells))
    pos[:, position] = 1.0
    return np.concatenate([states, onehot, pos], axis=1)


def all_position_inputs(states: np.ndarray, actions: np.ndarray, k_cells: int,
                        n_actions: int) -> np.ndarray:
    """Stack the inputs for every position: rows ``[pos0 batch, pos1 batch, ...]``."""
    return np.concatenate([prefix_inputs(states, actions, k, k_cells, n_actions)
                           for k in range(k_cells)], axis=0)


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


class AutoregressivePolicy:
    def __init__(self, n_features: int, k_cells: int, n_actions: int = 27,
                 hidden: tuple[int, ...] = (128, 128), rng: np.random.Generator | None = None,
                 conditioner=None):
        self.n_features = n_features
        self.k_cells = k_cells
        self.n_actions = n_actions
        self.n_in = n_features + k_cells * n_actions + k_cells
        self.net = conditioner if conditioner is not None else MultiHeadNet(
            self.n_in, hidden, 1, n_actions, rng=rng)
        if self.net.n_in != self.n_in:
            raise ValueError(f"conditioner expects {self.net.n_in} inputs, policy produces {self.n_in}")

    @property
    def params(self) -> np.ndarray:
        return self.net.params

    def logits(self, states: np.ndarray, prefix: np.ndarray, position: int) -> np.ndarray:
        x = prefix_inputs(states, prefix, position, self.k_cells, self.n_actions)
        return self.net.forward(x)[:, 0, :]

    def factor_probs(self, states, prefix, position: int) -> np.ndarray:
        return np.exp(log_softmax(self.logits(states, prefix, position)))

    def sample(self, states: np.ndarray, rng: np.random.Generator | None = None,
               greedy: bool = False) -> np.ndarray:
        """Joint actions of shape ``(B, K)``, drawn cell by cell (argmax per factor if greedy)."""
        states = np.atleast_2d(states)
        b = states.shape[0]
        actions = np.zeros((b, self.k_cells), dtype=np.int64)
        for k in range(self.k_cells):
            p = self.factor_probs(states, actions, k)
            if greedy:
                actions[:, k] = np.argmax(p, axis=1)
            else:
                cdf = np.cumsum(p, axis=1)
                u = rng.random((b, 1)) * cdf[:, -1:]
                actions[:, k] = np.minimum((u >= cdf).sum(axis=1), self.n_actions - 1)
        return actions

    def log_prob(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        """``sum_k log pi(a_k | s, a_<k)`` for each row."""
        states = np.atleast_2d(states)
        actions = np.atleast_2d(actions)
        total = np.zeros(states.shape[0])
        rows = np.arange(states.shape[0])
        for k in range(self.k_cells):
            total += log_softmax(self.logits(states, actions, k))[rows, actions[:, k]]
        return total

    def kl_loss_and_grad(self, states: np.ndarray, actions: np.ndarray, target_logits: np.ndarray):
        """Factor-wise ``KL(pi_k || softmax(target_k))`` along the given action prefixes.

        ``target_logits`` has shape ``(K, B, n_actions)``. Returns the loss averaged
        over the batch and summed over factors, its parameter gradient, and the
        mean per-factor entropy of the policy.
        """
        states = np.atleast_2d(states)
        b = states.shape[0]
        x = all_position_inputs(states, actions, self.k_cells, self.n_actions)
        out, acts = self.net.forward(x, keep=True)
        logp = log_softmax(out[:, 0, :])
        p = np.exp(logp)
        logq = log_softmax(np.asarray(target_logits).reshape(-1, self.n_actions))
        diff = logp - logq
        kl = (p * diff).sum(axis=1)
        # d KL / d logits = p * (diff - KL)
        d_logits = p * (diff - kl[:, None]) / b
        grad = self.net.backward(acts, d_logits[:, None, :])
        entropy = float(-(p * logp).sum(axis=1).mean())
        return float(kl.sum() / b), grad, entropy
