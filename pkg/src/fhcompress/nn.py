"""Multi-head ReLU MLP in plain numpy with hand-written backprop.

All parameters live in one flat float64 vector; layers are views into it, so
the optimizer, soft target updates, checkpoints and finite-difference checks
all operate on a single array.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numba
import numpy as np

CHECKPOINT_VERSION = 1


def hidden_width_for(n_in: int, n_out: int, target_params: int = 180_000, depth: int = 2) -> int:
    """Hidden width so a ``depth``-layer trunk plus output map has about ``target_params``."""
    # (depth-1) w^2 + (n_in + depth + n_out) w + n_out = target
    a = depth - 1
    b = n_in + depth + n_out
    c = n_out - target_params
    if a == 0:
        return max(1, round(-c / b))
    return max(1, round((-b + math.sqrt(b * b - 4 * a * c)) / (2 * a)))


class MultiHeadNet:
    """Shared ReLU trunk followed by one affine map producing ``n_heads x n_actions`` outputs."""

    def __init__(self, n_in: int, hidden: tuple[int, ...], n_heads: int, n_actions: int,
                 rng: np.random.Generator | None = None, zero_output: bool = False,
                 head_bias=None):
        self.n_in = int(n_in)
        self.hidden = tuple(int(h) for h in hidden)
        self.n_heads = int(n_heads)
        self.n_actions = int(n_actions)
        sizes = (self.n_in, *self.hidden, self.n_heads * self.n_actions)
        self.shapes = [(sizes[i], sizes[i + 1]) for i in range(len(sizes) - 1)]
        total = sum(i * o + o for i, o in self.shapes)
        self.params = np.zeros(total)
        self._bind()
        rng = rng if rng is not None else np.random.default_rng(0)
        for li, (W, b) in enumerate(self.layers):
            fan_in = W.shape[0]
            if li == len(self.layers) - 1:
                if not zero_output:
                    W[...] = rng.uniform(-1, 1, W.shape) * math.sqrt(1.0 / fan_in) * 0.1
                if head_bias is not None:
                    # per-head starting level, e.g. 1 for the normalized constraint heads
                    b[...] = np.repeat(np.asarray(head_bias, dtype=np.float64), self.n_actions)
            else:
                W[...] = rng.normal(0.0, math.sqrt(2.0 / fan_in), W.shape)

    def _bind(self):
        self.layers = []
        off = 0
        for i, o in self.shapes:
            W = self.params[off:off + i * o].reshape(i, o)
            off += i * o
            b = self.params[off:off + o]
            off += o
            self.layers.append((W, b))

    @property
    def n_params(self) -> int:
        return self.params.size

    def copy(self) -> "MultiHeadNet":
        new = object.__new__(MultiHeadNet)
        new.n_in, new.hidden = self.n_in, self.hidden
        new.n_heads, new.n_actions = self.n_heads, self.n_actions
        new.shapes = list(self.shapes)
        new.params = self.params.copy()
        new._bind()
        return new

    def set_params(self, flat: np.ndarray) -> None:
        if flat.shape != self.params.shape:
            raise ValueError(f"parameter vector has shape {flat.shape}, expected {self.params.shape}")
        self.params[...] = flat

    def forward(self, x: np.ndarray, keep: bool = False):
        """Outputs of shape ``(B, n_heads, n_actions)``; a 1-D input gives ``(n_heads, n_actions)``.

        With ``keep=True`` also returns the activation cache needed by ``backward``.
        """
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None]
        if x.shape[1] != self.n_in:
            raise ValueError(f"input has {x.shape[1]} features, net expects {self.n_in}")
        acts = [x]
        h = x
        last = len(self.layers) - 1
        for li, (W, b) in enumerate(self.layers):
            z = h @ W + b
            h = z if li == last else np.maximum(z, 0.0)
            acts.append(h)
        out = h.reshape(-1, self.n_heads, self.n_actions)
        if single:
            out = out[0]
        if keep:
            return out, acts
        return out

    def backward(self, acts, d_out: np.ndarray) -> np.ndarray:
        """Flat gradient of ``sum(d_out * out)`` with respect to the parameters."""
        grad = np.empty_like(self.params)
        g = np.asarray(d_out, dtype=np.float64).reshape(acts[-1].shape)
        off = self.params.size
        for li in range(len(self.layers) - 1, -1, -1):
            W, b = self.layers[li]
            h_in = acts[li]
            if li != len(self.layers) - 1:
                g = g * (acts[li + 1] > 0)
            n_w, n_b = W.size, b.size
            grad[off - n_b:off] = g.sum(axis=0)
            off -= n_b
            grad[off - n_w:off] = (h_in.T @ g).ravel()
            off -= n_w
            if li:
                g = g @ W.T
        return grad

    def save(self, path) -> None:
        np.savez(path, format_version=CHECKPOINT_VERSION,
                 shapes=np.array(self.shapes, dtype=np.int64),
                 meta=np.array([self.n_in, self.n_heads, self.n_actions], dtype=np.int64),
                 params=self.params)

    @classmethod
    def load(cls, path) -> "MultiHeadNet":
        with np.load(path) as data:
            version = int(data["format_version"])
            if version != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {version}")
            shapes = [tuple(int(v) for v in s) for s in data["shapes"]]
            n_in, n_heads, n_actions = (int(v) for v in data["meta"])
            params = data["params"].astype(np.float64)
        hidden = tuple(o for _, o in shapes[:-1])
        net = cls(n_in, hidden, n_heads, n_actions, zero_output=True)
        if net.shapes != shapes:
            raise ValueError(f"checkpoint shapes {shapes} are inconsistent")
        net.set_params(params)
        return net


@numba.njit(cache=True, fastmath=True)
def _blend(target, online, kappa):
    keep = 1.0 - kappa
    for i in range(target.shape[0]):
        target[i] = keep * target[i] + kappa * online[i]


def soft_update(target: MultiHeadNet, online: MultiHeadNet, kappa: float) -> MultiHeadNet:
    """``target <- (1 - kappa) target + kappa online``, in place. ``kappa == 0`` is a no-op."""
    if not 0 <= kappa <= 1:
        raise ValueError(f"kappa must lie in [0, 1], got {kappa}")
    if kappa == 1:
        target.params[...] = online.params
    elif kappa > 0:
        _blend(target.params, online.params, kappa)
    return target


# moments of parameters that stop receiving gradient decay geometrically into
# subnormal floats, which are two orders of magnitude slower; flush them to zero
_FLUSH = 1e-150


@numba.njit(cache=True, fastmath=True)
def _adam_update(params, grad, m, v, lr, b1, b2, eps, scale, c1, c2):
    for i in range(params.shape[0]):
        g = grad[i] * scale
        mi = b1 * m[i] + (1.0 - b1) * g
        vi = b2 * v[i] + (1.0 - b2) * g * g
        if abs(mi) < _FLUSH:
            mi = 0.0
        if vi < _FLUSH:
            vi = 0.0
        m[i] = mi
        v[i] = vi
        params[i] -= lr * (mi / c1) / (np.sqrt(vi / c2) + eps)


class Adam:
    def __init__(self, n_params: int, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8,
                 max_grad_norm: float | None = None):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.max_grad_norm = max_grad_norm
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> None:
        """Descent step on ``params`` in place."""
        scale = 1.0
        if self.max_grad_norm is not None:
            norm = float(np.sqrt(grad @ grad))
            if norm > self.max_grad_norm:
                scale = self.max_grad_norm / norm
        self.t += 1
        _adam_update(params, grad, self.m, self.v, self.lr, self.b1, self.b2, self.eps, scale,
                     1.0 - self.b1 ** self.t, 1.0 - self.b2 ** self.t)


@dataclass
class Batch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray

    def __len__(self):
        return len(self.actions)


class TDLoss(NamedTuple):
    loss: float
    grad: np.ndarray
    td: np.ndarray  # (B, n_heads)
    q: np.ndarray  # online predictions for the batch states, (B, n_heads, n_actions)


def td_targets(net: MultiHeadNet, target_net: MultiHeadNet, batch: Batch, lam, gamma: float):
    """Double-DQN targets: bootstrap action from the online net, values from the target net."""
    lam = np.asarray(lam, dtype=np.float64)
    q_next_online = net.forward(batch.next_states)
    a_star = np.argmax(np.einsum("h,bha->ba", lam, q_next_online), axis=1)
    q_next_target = target_net.forward(batch.next_states)
    idx = np.arange(len(batch))
    v_next = q_next_target[idx, :, a_star]
    not_done = 1.0 - np.asarray(batch.dones, dtype=np.float64)
    return batch.rewards + gamma * not_done[:, None] * v_next


def td_loss_and_grad(net: MultiHeadNet, target_net: MultiHeadNet, batch: Batch, lam, gamma: float,
                     weights=None, head_weights=None) -> TDLoss:
    """Importance-weighted sum over heads of squared TD errors, averaged over the batch.

    ``head_weights`` optionally rescales each head's squared error (default: all 1).
    """
    n = len(batch)
    if n == 0:
        raise ValueError("empty batch")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    if (w < 0).any():
        raise ValueError("importance weights must be non-negative")
    hw = np.ones(net.n_heads) if head_weights is None else np.asarray(head_weights, dtype=np.float64)
    if hw.shape != (net.n_heads,) or (hw < 0).any():
        raise ValueError(f"head_weights must be {net.n_heads} non-negative numbers")
    y = td_targets(net, target_net, batch, lam, gamma)
    q, acts = net.forward(batch.states, keep=True)
    idx = np.arange(n)
    actions = np.asarray(batch.actions, dtype=np.int64)
    pred = q[idx, :, actions]
    td = y - pred
    wt = w[:, None] * hw[None, :]
    loss = float((wt * td * td).sum() / n)
    d_out = np.zeros_like(q)
    d_out[idx, :, actions] = -2.0 * wt * td / n
    return TDLoss(loss, net.backward(acts, d_out), td, q)


@dataclass
class GradientReport:
    analytic: np.ndarray
    numeric: np.ndarray
    max_rel_error: float
    probed: np.ndarray


def gradient_check(loss_fn, params: np.ndarray, analytic: np.ndarray, n_probe: int = 64,
                   h: float = 1e-5, rng: np.random.Generator | None = None,
                   floor: float = 1e-8) -> GradientReport:
    """Compare ``analytic`` with central differences of ``loss_fn()`` on probed coordinates.

    ``loss_fn`` reads ``params`` (which is perturbed in place and restored).
    Relative error uses ``|a - n| / max(|a| + |n|, floor)``.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    n_probe = min(n_probe, params.size)
    probed = rng.choice(params.size, size=n_probe, replace=False)
    numeric = np.empty(n_probe)
    for k, i in enumerate(probed):
        old = params[i]
        params[i] = old + h
        f_plus = loss_fn()
        params[i] = old - h
        f_minus = loss_fn()
        params[i] = old
        numeric[k] = (f_plus - f_minus) / (2 * h)
    a = analytic[probed]
    rel = np.abs(a - numeric) / np.maximum(np.abs(a) + np.abs(numeric), floor)
    return GradientReport(a, numeric, float(rel.max()), probed)
