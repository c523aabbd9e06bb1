"""Property corpus for the tabular layer, shared by the CLI and the test-suite."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cmdp import (DualVars, FiniteMDP, bellman_lambda, decomposed_value_iteration,
                   greedy_actions, lambda_norm, lambda_update, multiobjective_q_learning,
                   random_mdp, scalar_value_iteration, scalarize)


@dataclass
class OracleResult:
    name: str
    passed: bool
    detail: str


def worked_example() -> FiniteMDP:
    """One state, two actions, rewards [1, 0] and [0, 1], gamma 0.5."""
    P = np.ones((1, 2, 1))
    R = np.array([[[1.0, 0.0]], [[0.0, 1.0]]])
    return FiniteMDP(P, R, 0.5)


WORKED_LAMBDA = np.array([1.0, 2.0])
WORKED_Q_STAR = np.array([[[1.0, 0.0]], [[1.0, 2.0]]])


def _random_case(rng):
    n_s = int(rng.integers(1, 9))
    n_a = int(rng.integers(1, 5))
    gamma = float(rng.uniform(0.5, 0.95))
    mdp = random_mdp(rng, n_s, n_a, 2, gamma, indicator_rewards=bool(rng.integers(2)))
    lam = np.concatenate([[1.0], rng.uniform(1e-3, 5.0, size=2)])
    return mdp, lam


def theorem1_equivalence(seed: int = 0, n_mdps: int = 200, tol: float = 1e-8,
                         tie_gap: float = 1e-6) -> OracleResult:
    """Scalarized decomposed fixed point equals scalar value iteration on ``lam^T R``."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    disagreements = 0
    for _ in range(n_mdps):
        mdp, lam = _random_case(rng)
        q = decomposed_value_iteration(mdp, lam, tol=1e-10 * (1 - mdp.gamma))
        oracle = scalar_value_iteration(mdp.P, scalarize(mdp.R, lam), mdp.gamma,
                                        tol=1e-12 * (1 - mdp.gamma))
        qs = scalarize(q, lam)
        worst = max(worst, float(np.abs(qs - oracle).max()))
        top2 = np.sort(oracle, axis=1)[:, -2:] if mdp.n_actions > 1 else None
        clear = np.ones(mdp.n_states, bool) if top2 is None else (top2[:, 1] - top2[:, 0]) > tie_gap
        disagreements += int((greedy_actions(q, lam) != oracle.argmax(axis=1))[clear].sum())
    ok = worst < tol and disagreements == 0
    return OracleResult("theorem1_equivalence", ok,
                        f"{n_mdps} MDPs, max error {worst:.2e}, policy disagreements {disagreements}")


def worked_example_fixed_point() -> OracleResult:
    mdp = worked_example()
    q = decomposed_value_iteration(mdp, WORKED_LAMBDA)
    err = float(np.abs(q - WORKED_Q_STAR).max())
    scal = scalarize(q, WORKED_LAMBDA)[0]
    ok = bool(err < 1e-8 and np.allclose(scal, [3.0, 4.0], atol=1e-8))
    return OracleResult("worked_example_fixed_point", ok, f"Q* error {err:.2e}, lam^T Q* = {scal.round(9)}")


def contraction(seed: int = 0, n_cases: int = 50, slack: float = 1e-11) -> OracleResult:
    """Residuals of decomposed value iteration shrink by at least gamma per sweep.

    ``slack`` absorbs round-off once the residual nears machine precision.
    """
    rng = np.random.default_rng(seed + 1)
    worst = -np.inf
    for _ in range(n_cases):
        mdp, lam = _random_case(rng)
        hist: list = []
        decomposed_value_iteration(mdp, lam, tol=1e-10, history=hist)
        h = np.asarray(hist)
        if h.size > 1:
            worst = max(worst, float((h[1:] - mdp.gamma * h[:-1]).max()))
    ok = worst <= slack
    return OracleResult("contraction", ok, f"max (r_k+1 - gamma r_k) = {worst:.2e}")


def lambda_norm_axioms(seed: int = 0, n_cases: int = 200) -> OracleResult:
    rng = np.random.default_rng(seed + 2)
    failures = 0
    for _ in range(n_cases):
        shape = (3, int(rng.integers(1, 6)), int(rng.integers(1, 5)))
        lam = np.concatenate([[1.0], rng.uniform(0, 5, 2)])
        a, b = rng.uniform(0, 3, shape), rng.uniform(0, 3, shape)
        c = float(rng.uniform(-4, 4))
        failures += lambda_norm(a + b, lam) > lambda_norm(a, lam) + lambda_norm(b, lam) + 1e-12
        failures += abs(lambda_norm(c * a, lam) - abs(c) * lambda_norm(a, lam)) > 1e-9
        failures += lambda_norm(np.zeros(shape), lam) != 0.0 or lambda_norm(a, lam) <= 0.0
    return OracleResult("lambda_norm_axioms", failures == 0, f"{failures} violations in {n_cases} cases")


def q_learning_worked_example(seed: int = 0, n_steps: int = 100_000) -> OracleResult:
    mdp = worked_example()
    res = multiobjective_q_learning(mdp, WORKED_LAMBDA, n_steps, np.random.default_rng(seed))
    err = float(np.abs(scalarize(res.q, WORKED_LAMBDA) - [[3.0, 4.0]]).max())
    return OracleResult("q_learning_worked_example", err < 1e-2, f"|lam^T Q - Q*_lam| = {err:.2e}")


def q_learning_trend(seed: int = 0, n_seeds: int = 10,
                     budgets=(10_000, 100_000, 1_000_000)) -> OracleResult:
    """Median error over seeds on random 5-state MDPs falls as the step budget grows."""
    errors = np.empty((n_seeds, len(budgets)))
    for i in range(n_seeds):
        rng = np.random.default_rng(seed * 1000 + i)
        mdp = random_mdp(rng, 5, 3, 2, 0.9)
        lam = np.concatenate([[1.0], rng.uniform(0.1, 5.0, 2)])
        oracle = scalarize(decomposed_value_iteration(mdp, lam), lam)
        res = multiobjective_q_learning(mdp, lam, max(budgets), rng, record_at=budgets)
        for j, n in enumerate(budgets):
            errors[i, j] = np.abs(scalarize(res.checkpoints[n], lam) - oracle).max()
    med = np.median(errors, axis=0)
    ok = bool(np.all(np.diff(med) < 0))
    return OracleResult("q_learning_trend", ok,
                        "median errors " + ", ".join(f"{n}: {m:.4f}" for n, m in zip(budgets, med)))


def lambda_update_examples() -> OracleResult:
    dv = DualVars.from_levels([0.5], [0.025], step=1e-4)
    grown = lambda_update(dv, [0.0, 0.9]).lam[1]
    pinned = lambda_update(DualVars.from_levels([0.0], [0.025]), [0.0, 2.0]).lam[1]
    ok = bool(abs(grown - 0.5000075) < 1e-12 and pinned == 0.0)
    return OracleResult("lambda_update_examples", ok, f"lambda_1 -> {grown:.7f}, projected -> {pinned}")


def bellman_zero_bootstrap() -> OracleResult:
    mdp = worked_example()
    out = bellman_lambda(mdp, np.zeros_like(mdp.R), WORKED_LAMBDA)
    ok = bool(np.array_equal(out, mdp.R))
    return OracleResult("bellman_zero_bootstrap", ok, f"T(0) = {out[:, 0, :].T.tolist()}")


def run_suite(seed: int = 0, quick: bool = False) -> list[OracleResult]:
    """Every tabular property; ``quick`` shrinks the random corpora and step budgets."""
    n = 40 if quick else 200
    budgets = (1_000, 10_000, 100_000) if quick else (10_000, 100_000, 1_000_000)
    return [
        bellman_zero_bootstrap(),
        worked_example_fixed_point(),
        theorem1_equivalence(seed, n_mdps=n),
        contraction(seed, n_cases=n // 4),
        lambda_norm_axioms(seed, n_cases=n),
        lambda_update_examples(),
        q_learning_worked_example(seed),
        q_learning_trend(seed, n_seeds=10, budgets=budgets),
    ]
