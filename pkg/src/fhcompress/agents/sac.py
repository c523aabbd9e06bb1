"""Discrete multi-head SAC with an autoregressive per-cell policy and actor-replay sampling.

The critic mirrors the policy's factorization. Given the state, the actions of
cells ``0..k-1`` and the position ``k``, it outputs one value per head for each
of cell k's 27 actions. At the last position this is the ordinary joint-action
Q-function. At earlier positions it is that Q averaged over the policy's choices
for the remaining cells. Every actor factor therefore gets its KL target from a
single critic pass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..cmdp import DualVars, lambda_update
from ..env import N_CELL_ACTIONS
from ..nn import Adam, MultiHeadNet, hidden_width_for, soft_update
from ..policy import AutoregressivePolicy, all_position_inputs, log_softmax, prefix_inputs
from ..replay import PrioritizedBuffer


@dataclass
class SACConfig:
    gamma: float = 0.95
    lr_q: float = 1e-3
    lr_pi: float = 1e-4
    lr_lambda: float = 1e-4
    lr_alpha: float = 1e-3
    kappa: float = 5e-3
    batch_size: int = 64
    buffer_size: int = 100_000
    warmup: int = 1_000
    lambda_init: tuple[float, ...] = (15.0, 15.0)
    xi: tuple[float, ...] = (0.025, 0.025)
    entropy_frac: float = 0.2
    alpha_init: float = 1.0
    per_alpha: float = 0.6
    per_beta0: float = 0.4
    p_min: float = 1e-6
    target_params: int = 180_000
    critic_hidden: tuple[int, ...] | None = None
    policy_hidden: tuple[int, ...] = (128, 128)
    depth: int = 2
    max_grad_norm: float | None = 10.0
    # starting level of the constraint heads; 1 is the value of never violating
    safe_head_init: float = 1.0
    # per-head scale on the squared TD errors; None weighs every head equally.
    # (1 - gamma)^2 on the utilization head matches its TD scale to the indicator heads
    head_weights: tuple[float, ...] | None = (0.0025, 1.0, 1.0)
    first_lambda_update: bool = True

    def validate(self) -> None:
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if min(self.lr_q, self.lr_pi, self.lr_alpha) <= 0 or self.lr_lambda < 0:
            raise ValueError("learning rates must be positive")
        if not 0 <= self.kappa <= 1:
            raise ValueError("kappa must lie in [0, 1]")
        if self.batch_size < 1 or self.buffer_size < self.batch_size:
            raise ValueError("buffer must hold at least one batch")
        if len(self.lambda_init) != len(self.xi):
            raise ValueError("one initial multiplier per constraint is required")
        if not 0 < self.entropy_frac < 1:
            raise ValueError("entropy_frac must lie in (0, 1)")
        if self.head_weights is not None and len(self.head_weights) != len(self.xi) + 1:
            raise ValueError("one head weight per value head is required")


class SACAgent:
    n_actions = N_CELL_ACTIONS

    def __init__(self, n_features: int, k_cells: int, cfg: SACConfig | None = None, seed: int = 0):
        self.cfg = cfg or SACConfig()
        self.cfg.validate()
        cfg = self.cfg
        self.k_cells = k_cells
        n_heads = len(cfg.xi) + 1
        rng = np.random.default_rng(seed)
        n_in = n_features + k_cells * self.n_actions + k_cells
        hidden = cfg.critic_hidden or (hidden_width_for(
            n_in, n_heads * self.n_actions, cfg.target_params, cfg.depth),) * cfg.depth
        self.critic = MultiHeadNet(n_in, hidden, n_heads, self.n_actions, rng=rng,
                                   head_bias=(0.0,) + (cfg.safe_head_init,) * len(cfg.xi))
        self.critic_target = self.critic.copy()
        self.policy = AutoregressivePolicy(n_features, k_cells, self.n_actions,
                                           hidden=cfg.policy_hidden, rng=rng)
        self.q_opt = Adam(self.critic.n_params, lr=cfg.lr_q, max_grad_norm=cfg.max_grad_norm)
        self.pi_opt = Adam(self.policy.params.size, lr=cfg.lr_pi, max_grad_norm=cfg.max_grad_norm)
        self.buffer = PrioritizedBuffer(cfg.buffer_size, n_features, k_cells, n_heads,
                                        alpha=cfg.per_alpha, p_min=cfg.p_min, seed=seed + 1)
        self.dv = DualVars.from_levels(cfg.lambda_init, cfg.xi, step=cfg.lr_lambda)
        self.log_alpha = math.log(cfg.alpha_init)
        self.entropy_target = cfg.entropy_frac * math.log(self.n_actions)
        self.entropy = float("nan")
        self.rng = np.random.default_rng(seed + 2)
        self.per_beta = cfg.per_beta0

    @property
    def alpha(self) -> float:
        return math.exp(self.log_alpha)

    def act(self, state: np.ndarray, greedy: bool = False) -> np.ndarray:
        return self.policy.sample(state, self.rng, greedy=greedy)[0]

    def observe(self, state, action, reward, next_state, done: bool = False) -> None:
        self.buffer.add(state, action, reward, next_state, done)

    def _root_value(self, critic: MultiHeadNet, states: np.ndarray) -> np.ndarray:
        """Per-head ``E_{a ~ pi}[Q(s, a)]`` for each row, shape ``(B, n_heads)``."""
        empty = np.zeros((len(states), self.k_cells), dtype=np.int64)
        x = prefix_inputs(states, empty, 0, self.k_cells, self.n_actions)
        p = np.exp(log_softmax(self.policy.net.forward(x)[:, 0, :]))
        return np.einsum("bha,ba->bh", critic.forward(x), p)

    def value_estimates(self, states: np.ndarray) -> np.ndarray:
        return self._root_value(self.critic, states).mean(axis=0)

    def critic_loss_and_grad(self, batch, weights=None, targets=None):
        """Weighted squared errors at every position; returns ``(loss, grad, last-position TD)``.

        Targets are treated as constants (semi-gradient). Passing ``targets`` of
        shape ``(K, B, n_heads)`` pins them, which is what gradient checks need.
        """
        cfg = self.cfg
        b = len(batch)
        k_cells, n_act = self.k_cells, self.n_actions
        w = np.ones(b) if weights is None else np.asarray(weights, dtype=np.float64)
        actions = np.asarray(batch.actions, dtype=np.int64).reshape(b, k_cells)
        x = all_position_inputs(batch.states, actions, k_cells, n_act)
        q, acts = self.critic.forward(x, keep=True)
        rows = np.arange(b * k_cells)
        flat_actions = actions.T.reshape(-1)
        pred = q[rows, :, flat_actions].reshape(k_cells, b, -1)
        if targets is None:
            targets = self._critic_targets(batch, x, q)
        td = targets - pred
        hw = np.ones(td.shape[-1]) if cfg.head_weights is None else np.asarray(cfg.head_weights)
        scale = w[None, :, None] * hw
        loss = float((scale * td * td).sum() / b)
        d_out = np.zeros_like(q)
        d_out[rows, :, flat_actions] = (-2.0 * scale * td / b).reshape(b * k_cells, -1)
        return loss, self.critic.backward(acts, d_out), td[-1]

    def _critic_targets(self, batch, x, q) -> np.ndarray:
        cfg = self.cfg
        b = len(batch)
        k_cells = self.k_cells
        targets = np.empty((k_cells, b, q.shape[1]))
        if k_cells > 1:
            # intra-slot targets come from the online critic (no gradient); routing
            # them through the lagged target net slowed value propagation K-fold
            q_bar = q[b:]
            p_next = np.exp(log_softmax(self.policy.net.forward(x[b:])[:, 0, :]))
            targets[:-1] = np.einsum("nha,na->nh", q_bar, p_next).reshape(k_cells - 1, b, -1)
        not_done = 1.0 - np.asarray(batch.dones, dtype=np.float64)
        v_next = self._root_value(self.critic_target, batch.next_states)
        targets[-1] = batch.rewards + cfg.gamma * not_done[:, None] * v_next
        return targets

    def critic_step(self, idx, weights=None) -> float:
        batch = self.buffer.batch(idx)
        loss, grad, td = self.critic_loss_and_grad(batch, weights)
        self.q_opt.step(self.critic.params, grad)
        self._refresh_priorities(idx, td)
        return loss

    def _refresh_priorities(self, idx, td) -> None:
        # writes both the critic (p) and the actor (1/p) views
        self.buffer.update_priorities(idx, np.abs(td).sum(axis=1) + self.cfg.p_min)

    def actor_step(self, idx) -> float:
        """KL step toward ``softmax(lam^T Q / alpha)`` along freshly sampled prefixes."""
        states = self.buffer.states[idx]
        actions = self.policy.sample(states, self.rng)
        x = all_position_inputs(states, actions, self.k_cells, self.n_actions)
        scores = np.einsum("h,nha->na", self.dv.lam, self.critic.forward(x)) / self.alpha
        target = scores.reshape(self.k_cells, len(idx), self.n_actions)
        loss, grad, entropy = self.policy.kl_loss_and_grad(states, actions, target)
        self.pi_opt.step(self.policy.params, grad)
        self.entropy = entropy
        self.log_alpha += self.cfg.lr_alpha * (self.entropy_target - entropy)
        return loss

    def _dual_step(self, states) -> np.ndarray:
        v = self.value_estimates(states)
        self.dv = lambda_update(self.dv, v)
        return v

    def train_iteration(self) -> dict:
        """One pass of the actor-replay loop.

        Critic on a prioritized sample; critic and actor on an inverse-priority
        sample, then a dual step; critic and actor on a uniform sample; soft
        target update; second dual step. Priorities are refreshed after every
        critic step.
        """
        cfg = self.cfg
        idx, w = self.buffer.sample_prioritized(cfg.batch_size, self.per_beta)
        loss = self.critic_step(idx, w)

        idx = self.buffer.sample_inverse(cfg.batch_size)
        self.critic_step(idx)
        self.actor_step(idx)
        if cfg.first_lambda_update:
            self._dual_step(self.buffer.states[idx])

        idx = self.buffer.sample_uniform(cfg.batch_size)
        self.critic_step(idx)
        kl = self.actor_step(idx)
        soft_update(self.critic_target, self.critic, cfg.kappa)
        v = self._dual_step(self.buffer.states[idx])
        return {"loss": loss, "kl": kl, "V": v}

    train_step = train_iteration
