"""Exact tabular machinery for vector-valued (multi-head) constrained MDPs.

Q-tables are stored as arrays of shape ``(n_heads, n_states, n_actions)`` where
head 0 is the objective and heads 1..N are the safety indicators. Action
selection always acts on the lambda-scalarized row ``sum_i lam_i Q_i(s, .)``
and breaks ties toward the lowest action index (``np.argmax`` semantics).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (last residual {residual:.3e})")
        self.residual = residual


@dataclass
class FiniteMDP:
    P: np.ndarray  # (S, A, S')
    R: np.ndarray  # (n_heads, S, A)
    gamma: float
    p0: np.ndarray | None = None

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=np.float64)
        self.R = np.asarray(self.R, dtype=np.float64)
        if self.R.ndim == 2:
            self.R = self.R[None]
        if self.P.ndim != 3 or self.P.shape[0] != self.P.shape[2]:
            raise ValueError(f"P must have shape (S, A, S), got {self.P.shape}")
        if self.R.shape[1:] != self.P.shape[:2]:
            raise ValueError(f"R shape {self.R.shape} inconsistent with P shape {self.P.shape}")
        if (self.P < 0).any() or not np.allclose(self.P.sum(axis=2), 1.0, atol=1e-12):
            raise ValueError("transition rows must be probability vectors")
        if (self.R < 0).any():
            raise ValueError("rewards must be non-negative")
        if not 0 < self.gamma < 1:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.p0 is None:
            self.p0 = np.full(self.n_states, 1.0 / self.n_states)

    @property
    def n_states(self) -> int:
        return self.P.shape[0]

    @property
    def n_actions(self) -> int:
        return self.P.shape[1]

    @property
    def n_heads(self) -> int:
        return self.R.shape[0]

    def sample(self, s: int, a: int, rng: np.random.Generator) -> int:
        return int(rng.choice(self.n_states, p=self.P[s, a]))


@dataclass
class DualVars:
    """Multipliers ``(1, lam_1, ..., lam_N)`` and offsets ``(0, xi_1 - 1, ..., xi_N - 1)``."""

    lam: np.ndarray
    xi_offsets: np.ndarray
    step: float = 1e-4

    def __post_init__(self):
        self.lam = np.array(self.lam, dtype=np.float64)
        self.xi_offsets = np.array(self.xi_offsets, dtype=np.float64)
        if self.lam.shape != self.xi_offsets.shape or self.lam.ndim != 1:
            raise ValueError("lam and xi_offsets must be equal-length vectors")
        if self.lam[0] != 1.0:
            raise ValueError("first multiplier is pinned to 1")
        if self.xi_offsets[0] != 0.0:
            raise ValueError("first xi offset must be 0")
        if (self.lam < 0).any():
            raise ValueError("multipliers must be non-negative")

    @classmethod
    def from_levels(cls, lambdas, xis, step: float = 1e-4) -> "DualVars":
        """Build from constraint multipliers ``lambdas`` and confidence levels ``xis``."""
        lambdas = list(lambdas)
        xis = list(xis)
        return cls(np.array([1.0] + lambdas), np.array([0.0] + [x - 1.0 for x in xis]), step)

    def copy(self) -> "DualVars":
        return DualVars(self.lam.copy(), self.xi_offsets.copy(), self.step)


def lambda_update(dv: DualVars, v_estimates) -> DualVars:
    """Projected dual step ``lam_i <- max(0, lam_i - step * (V_i + xi_i))`` for i >= 1."""
    v = np.asarray(v_estimates, dtype=np.float64)
    if v.shape != dv.lam.shape:
        raise ValueError(f"expected {dv.lam.shape[0]} value estimates, got {v.shape}")
    lam = dv.lam.copy()
    lam[1:] = np.maximum(0.0, lam[1:] - dv.step * (v[1:] + dv.xi_offsets[1:]))
    return DualVars(lam, dv.xi_offsets.copy(), dv.step)


def scalarize(q: np.ndarray, lam) -> np.ndarray:
    return np.tensordot(np.asarray(lam, dtype=np.float64), q, axes=1)


def lambda_norm(q: np.ndarray, lam) -> float:
    """``max_{s,a} |lam^T Q(s, a)|``."""
    return float(np.abs(scalarize(q, lam)).max())


def greedy_actions(q: np.ndarray, lam) -> np.ndarray:
    return np.argmax(scalarize(q, lam), axis=-1)


def _check(mdp: FiniteMDP, q: np.ndarray, lam) -> None:
    if q.shape != mdp.R.shape:
        raise ValueError(f"Q shape {q.shape} does not match reward shape {mdp.R.shape}")
    if np.shape(lam) != (mdp.n_heads,):
        raise ValueError(f"lambda has shape {np.shape(lam)}, expected ({mdp.n_heads},)")


def bellman_lambda(mdp: FiniteMDP, q: np.ndarray, lam) -> np.ndarray:
    """One application of the vector Bellman operator with lambda-greedy bootstrap."""
    q = np.asarray(q, dtype=np.float64)
    lam = np.asarray(lam, dtype=np.float64)
    _check(mdp, q, lam)
    a_next = greedy_actions(q, lam)  # (S,)
    v_next = q[:, np.arange(mdp.n_states), a_next]  # (heads, S)
    return mdp.R + mdp.gamma * np.einsum("sat,ht->hsa", mdp.P, v_next)


def decomposed_value_iteration(mdp: FiniteMDP, lam, tol: float = 1e-10,
                               max_iter: int = 100_000, q0: np.ndarray | None = None,
                               history: list | None = None) -> np.ndarray:
    """Iterate ``bellman_lambda`` until the lambda-norm residual drops below ``tol``.

    If ``history`` is given, the residual of every sweep is appended to it.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    lam = np.asarray(lam, dtype=np.float64)
    q = np.zeros_like(mdp.R) if q0 is None else np.array(q0, dtype=np.float64)
    residual = np.inf
    for _ in range(max_iter):
        q_next = bellman_lambda(mdp, q, lam)
        residual = lambda_norm(q_next - q, lam)
        if history is not None:
            history.append(residual)
        q = q_next
        if residual < tol:
            return q
    raise ConvergenceError(f"value iteration did not reach tol={tol} in {max_iter} sweeps", residual)


def scalar_value_iteration(P: np.ndarray, r: np.ndarray, gamma: float, tol: float = 1e-12,
                           max_iter: int = 100_000) -> np.ndarray:
    """Textbook Q value iteration on a scalar reward ``r`` of shape (S, A)."""
    q = np.zeros_like(r, dtype=np.float64)
    for _ in range(max_iter):
        q_next = r + gamma * P @ q.max(axis=1)
        if np.abs(q_next - q).max() < tol:
            return q_next
        q = q_next
    raise ConvergenceError("scalar value iteration did not converge", float(np.abs(q_next - q).max()))


def random_mdp(rng: np.random.Generator, n_states: int = 5, n_actions: int = 3,
               n_constraints: int = 2, gamma: float = 0.9, indicator_rewards: bool = False) -> FiniteMDP:
    """Random dense MDP with non-negative rewards.

    With ``indicator_rewards`` the constraint heads take values in ``{0, 1 - gamma}``
    like the safety-set indicators of the fronthaul problem.
    """
    P = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    R = np.empty((n_constraints + 1, n_states, n_actions))
    R[0] = rng.uniform(0.0, 1.0, size=(n_states, n_actions))
    if indicator_rewards:
        R[1:] = (1.0 - gamma) * (rng.random((n_constraints, n_states, n_actions)) < 0.7)
    else:
        R[1:] = rng.uniform(0.0, 1.0, size=(n_constraints, n_states, n_actions))
    return FiniteMDP(P, R, gamma)


@dataclass
class QLearningResult:
    q: np.ndarray
    visits: np.ndarray
    checkpoints: dict = field(default_factory=dict)


@numba.njit(cache=True)
def _q_learning_run(q, qs, visits, lam, R, cdf, gamma, s, explore, random_a, trans_u, lr_exponent):
    n_heads = q.shape[0]
    for i in range(explore.shape[0]):
        if explore[i]:
            a = random_a[i]
        else:
            a = np.argmax(qs[s])
        s_next = np.searchsorted(cdf[s, a], trans_u[i], side="right")
        a_next = np.argmax(qs[s_next])
        visits[s, a] += 1
        alpha = 1.0 / (1.0 + visits[s, a]) ** lr_exponent
        total = 0.0
        for h in range(n_heads):
            target = R[h, s, a] + gamma * q[h, s_next, a_next]
            q[h, s, a] += alpha * (target - q[h, s, a])
            total += lam[h] * q[h, s, a]
        qs[s, a] = total
        s = s_next
    return s


def multiobjective_q_learning(mdp: FiniteMDP, lam, n_steps: int, rng: np.random.Generator,
                              epsilon: float = 0.2, epsilon_min: float = 0.05,
                              lr_exponent: float = 0.7, record_at=()) -> QLearningResult:
    """Per-head Q-learning with a shared lambda-greedy bootstrap action.

    Behaviour is epsilon-greedy on the scalarized table with ``epsilon`` floored
    at ``epsilon_min``. The step size for a pair is ``1 / (1 + visits) ** lr_exponent``.
    Snapshots of the table are taken after each step count in ``record_at``.
    """
    lam = np.asarray(lam, dtype=np.float64)
    _check(mdp, np.zeros_like(mdp.R), lam)
    if not 0.5 < lr_exponent <= 1.0:
        raise ValueError("lr_exponent must lie in (0.5, 1] for Robbins-Monro step sizes")
    eps = max(epsilon, epsilon_min)
    n_s, n_a = mdp.n_states, mdp.n_actions
    q = np.zeros_like(mdp.R)
    qs = np.zeros((n_s, n_a))
    visits = np.zeros((n_s, n_a), dtype=np.int64)
    cdf = np.cumsum(mdp.P, axis=2)
    cdf[..., -1] = 1.0
    s = int(rng.choice(n_s, p=mdp.p0))
    # segment boundaries: recording points and a fixed chunk size for the random draws
    marks = sorted({int(n) for n in record_at if 0 < n <= n_steps} | {n_steps})
    checkpoints = {}
    done = 0
    for mark in marks:
        while done < mark:
            m = min(65536, mark - done)
            explore = rng.random(m) < eps
            random_a = rng.integers(n_a, size=m)
            trans_u = rng.random(m)
            s = _q_learning_run(q, qs, visits, lam, mdp.R, cdf, mdp.gamma, s, explore,
                                random_a, trans_u, lr_exponent)
            done += m
        if mark in set(record_at):
            checkpoints[mark] = q.copy()
    return QLearningResult(q, visits, checkpoints)
