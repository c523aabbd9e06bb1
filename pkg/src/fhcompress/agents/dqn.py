"""Multi-head Double DQN with Boltzmann exploration over the homogeneous action set."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..cmdp import DualVars, lambda_update
from ..env import N_CELL_ACTIONS
from ..nn import Adam, MultiHeadNet, hidden_width_for, soft_update, td_loss_and_grad
from ..replay import PrioritizedBuffer


@dataclass
class DQNConfig:
    gamma: float = 0.95
    lr_q: float = 1e-3
    lr_lambda: float = 1e-4
    kappa: float = 5e-3
    batch_size: int = 64
    buffer_size: int = 100_000
    warmup: int = 1_000
    lambda_init: tuple[float, ...] = (15.0, 15.0)
    xi: tuple[float, ...] = (0.025, 0.025)
    temp_start: float = 1.0
    temp_end: float = 0.05
    temp_decay_frac: float = 0.5
    per_alpha: float = 0.6
    per_beta0: float = 0.4
    p_min: float = 1e-6
    target_params: int = 180_000
    hidden: tuple[int, ...] | None = None
    depth: int = 2
    max_grad_norm: float | None = 10.0
    # starting level of the constraint heads; 1 is the value of never violating
    safe_head_init: float = 1.0
    # per-head scale on the squared TD errors; None weighs every head equally.
    # (1 - gamma)^2 on the utilization head matches its TD scale to the indicator heads
    head_weights: tuple[float, ...] | None = (0.0025, 1.0, 1.0)

    def validate(self) -> None:
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if self.lr_q <= 0 or self.lr_lambda < 0:
            raise ValueError("learning rates must be positive")
        if not 0 <= self.kappa <= 1:
            raise ValueError("kappa must lie in [0, 1]")
        if self.batch_size < 1 or self.buffer_size < self.batch_size:
            raise ValueError("buffer must hold at least one batch")
        if len(self.lambda_init) != len(self.xi):
            raise ValueError("one initial multiplier per constraint is required")
        if not 0 < self.temp_end <= self.temp_start:
            raise ValueError("temperatures must satisfy 0 < temp_end <= temp_start")
        if self.head_weights is not None and len(self.head_weights) != len(self.xi) + 1:
            raise ValueError("one head weight per value head is required")


def boltzmann_probs(scores: np.ndarray, temperature: float) -> np.ndarray:
    z = (scores - scores.max()) / temperature
    p = np.exp(z)
    return p / p.sum()


def dqn_act(net: MultiHeadNet, state: np.ndarray, lam, temperature: float,
            rng: np.random.Generator | None = None) -> int:
    """Sample an action index from ``softmax(lam^T Q(s, .) / temperature)``.

    ``temperature == 0`` returns the lambda-greedy action (lowest index on ties).
    """
    if temperature < 0:
        raise ValueError("temperature must be non-negative")
    scores = np.asarray(lam, dtype=np.float64) @ net.forward(state)
    if temperature == 0 or rng is None:
        return int(np.argmax(scores))
    return int(rng.choice(scores.size, p=boltzmann_probs(scores, temperature)))


class DQNAgent:
    n_actions = N_CELL_ACTIONS

    def __init__(self, n_features: int, cfg: DQNConfig | None = None, seed: int = 0):
        self.cfg = cfg or DQNConfig()
        self.cfg.validate()
        n_heads = len(self.cfg.xi) + 1
        rng = np.random.default_rng(seed)
        hidden = self.cfg.hidden or (hidden_width_for(
            n_features, n_heads * self.n_actions, self.cfg.target_params, self.cfg.depth),) * self.cfg.depth
        self.net = MultiHeadNet(n_features, hidden, n_heads, self.n_actions, rng=rng,
                                head_bias=(0.0,) + (self.cfg.safe_head_init,) * len(self.cfg.xi))
        self.target = self.net.copy()
        self.opt = Adam(self.net.n_params, lr=self.cfg.lr_q, max_grad_norm=self.cfg.max_grad_norm)
        self.buffer = PrioritizedBuffer(self.cfg.buffer_size, n_features, 1, n_heads,
                                        alpha=self.cfg.per_alpha, p_min=self.cfg.p_min,
                                        seed=seed + 1)
        self.dv = DualVars.from_levels(self.cfg.lambda_init, self.cfg.xi, step=self.cfg.lr_lambda)
        self.rng = np.random.default_rng(seed + 2)
        self.per_beta = self.cfg.per_beta0

    def act(self, state: np.ndarray, temperature: float = 0.0) -> int:
        return dqn_act(self.net, state, self.dv.lam, temperature, self.rng)

    def observe(self, state, action: int, reward, next_state, done: bool = False) -> None:
        self.buffer.add(state, action, reward, next_state, done)

    def value_estimates(self, states: np.ndarray, q: np.ndarray | None = None) -> np.ndarray:
        """Batch-mean of each head at the lambda-greedy action.

        ``q`` may carry precomputed online outputs for ``states``.
        """
        if q is None:
            q = self.net.forward(states)
        a = np.argmax(np.einsum("h,bha->ba", self.dv.lam, q), axis=1)
        return q[np.arange(len(q)), :, a].mean(axis=0)

    def train_step(self, update_lambda: bool = True) -> dict:
        """One prioritized critic update, priority refresh, soft target update and dual step."""
        cfg = self.cfg
        idx, weights = self.buffer.sample_prioritized(cfg.batch_size, self.per_beta)
        batch = self.buffer.batch(idx)
        res = td_loss_and_grad(self.net, self.target, batch, self.dv.lam, cfg.gamma, weights,
                               cfg.head_weights)
        # the dual step uses the pre-update predictions already computed for the loss
        v = self.value_estimates(batch.states, res.q)
        self.opt.step(self.net.params, res.grad)
        self.buffer.update_priorities(idx, np.abs(res.td).sum(axis=1) + cfg.p_min)
        soft_update(self.target, self.net, cfg.kappa)
        if update_lambda:
            self.dv = lambda_update(self.dv, v)
        return {"loss": res.loss, "V": v}
