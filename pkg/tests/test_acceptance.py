"""Acceptance criteria, each at its stated tolerance.

Every test records a ``PASS``/``FAIL`` line that conftest prints after the run.
Criteria 7 and 8 train both agents on the default profile; the runs land in
``acceptance_runs/`` next to this directory.
"""

import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from fhcompress.agents import DQNAgent, SACAgent
from fhcompress.cmdp import multiobjective_q_learning
from fhcompress.env import EnvConfig
from fhcompress.fh_model import (CellLoad, CompressionConfig, SystemParams, data_payload_bits, fh_rate,
                                 weight_payload_bits)
from fhcompress.harness import evaluate, run_reference
from fhcompress.nn import gradient_check
from fhcompress.oracles import q_learning_trend, theorem1_equivalence
from fhcompress.traffic import TICKS_PER_PRB, init_traffic, propagate
from fhcompress.train import TrainConfig, train

P = SystemParams()
ENV = EnvConfig(params=P)
RUN_DIR = Path(__file__).resolve().parent.parent / "acceptance_runs"
EVAL_SLOTS = 100_000
EVAL_SEEDS = (101,)
BUDGET_S = 45 * 60

DQN_RUN = TrainConfig(agent="dqn", steps=80_000, seed=0, log_every=2_000, update_every=2)
SAC_RUN = TrainConfig(agent="sac", steps=40_000, seed=0, log_every=2_000, update_every=4)


def record(n: int, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")


def test_criterion_1_decomposed_fixed_point_equivalence():
    t0 = time.perf_counter()
    res = theorem1_equivalence(seed=2024, n_mdps=200, tol=1e-8, tie_gap=1e-6)
    elapsed = time.perf_counter() - t0
    ok = res.passed and elapsed < 30
    record(1, ok, f"{res.detail}, {elapsed:.1f} s")
    assert ok


def test_criterion_2_q_learning_convergence():
    from fhcompress.oracles import WORKED_LAMBDA, worked_example
    from fhcompress.cmdp import scalarize
    res = multiobjective_q_learning(worked_example(), WORKED_LAMBDA, 100_000, np.random.default_rng(0))
    err = float(np.abs(scalarize(res.q, WORKED_LAMBDA) - [[3.0, 4.0]]).max())
    trend = q_learning_trend(seed=0, n_seeds=10, budgets=(10_000, 100_000, 1_000_000))
    ok = err < 1e-2 and trend.passed
    record(2, ok, f"worked example error {err:.2e} after 1e5 steps; {trend.detail}")
    assert ok


def test_criterion_3_bit_accounting_golden_values():
    ref = CompressionConfig.from_values(P.knobs, 6, 16, 4)
    got = {
        "data(273, q=8)": (data_payload_bits(P, CellLoad(273), 8), 4_402_944),
        "data(1, q=2)": (data_payload_bits(P, CellLoad(1), 2), 4_032),
        "weights(273, r=4, b=16)": (weight_payload_bits(P, CellLoad(273), 4, 16), 847_872),
        "weights(273, r=1, b=22)": (weight_payload_bits(P, CellLoad(273), 1, 22), 4_612_608),
        "rate(273, 8/22/1)": (fh_rate(P, CellLoad(273), CompressionConfig.from_values(P.knobs, 8, 22, 1)),
                              18_031_104_000),
        "rate(273, 6/16/4)": (fh_rate(P, CellLoad(273), ref), 8_300_160_000),
        "rate(100, 6/16/4)": (fh_rate(P, CellLoad(100), ref), 3_033_600_000),
        "3 x rate(273, 6/16/4)": (3 * fh_rate(P, CellLoad(273), ref), 24_900_480_000),
    }
    bad = [k for k, (a, b) in got.items() if a != b]
    feasible = 3 * fh_rate(P, CellLoad(273), ref) <= P.c_fh
    ok = not bad and feasible
    record(3, ok, f"{len(got) - len(bad)}/{len(got)} exact, reference worst case "
                  f"{3 * fh_rate(P, CellLoad(273), ref) / 1e9:.2f} Gb/s <= {P.c_fh / 1e9:.0f}")
    assert ok


def test_criterion_4_traffic_invariants():
    s = init_traffic(P, (1, 273), seed=5)  # mean load near mid-range, so both bounds are exercised
    total = s.total_ticks
    lo, hi = TICKS_PER_PRB, 273 * TICKS_PER_PRB
    vmin, vmax, drift = min(s.ticks), max(s.ticks), 0
    for _ in range(1_000_000):
        s = propagate(s, 1)
        vmin = min(vmin, *s.ticks)
        vmax = max(vmax, *s.ticks)
        drift = max(drift, abs(s.total_ticks - total))
    ok = drift == 0 and vmin > lo and vmax < hi and s.t == 1_000_000
    record(4, ok, f"1e6 steps, K=3: max sum drift {drift} ticks, "
                  f"range [{vmin / TICKS_PER_PRB:.6f}, {vmax / TICKS_PER_PRB:.6f}] PRB within (1, 273)")
    assert ok


def _default_nets():
    n = ENV.n_features
    dqn = DQNAgent(n, seed=0).net
    sac = SACAgent(n, P.k_cells, seed=0)
    return {"dqn q-net": dqn, "sac critic": sac.critic, "sac policy": sac.policy.net}


def test_criterion_5_gradient_verification():
    rng = np.random.default_rng(5)
    worst = {}
    for name, net in _default_nets().items():
        x = rng.normal(size=(16, net.n_in))
        c = rng.normal(size=(16, net.n_heads, net.n_actions))

        def loss():
            out = net.forward(x)
            return float((c * out).sum() + 0.5 * (out * out).sum())

        out, acts = net.forward(x, keep=True)
        rep = gradient_check(loss, net.params, net.backward(acts, c + out), n_probe=64, h=1e-5, rng=rng)
        worst[name] = rep.max_rel_error
    ok = all(v < 1e-4 for v in worst.values())
    record(5, ok, "max relative error " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))
    assert ok


def test_criterion_6_reference_scheme_safety():
    rep = run_reference(ENV, EVAL_SLOTS, EVAL_SEEDS)
    ok = rep.overall_p_latency == 0.0 and rep.overall_p_loss == 0.0 and rep.n_slots == EVAL_SLOTS
    record(6, ok, f"{rep.n_slots} slots: P(latency > 260 us) = {rep.overall_p_latency}, "
                  f"P(loss) = {rep.overall_p_loss}")
    assert ok


@pytest.fixture(scope="module")
def reference_report():
    return run_reference(ENV, EVAL_SLOTS, EVAL_SEEDS)


def _lambda_converged(metrics):
    """Last-quartile SD below a quarter of the mean; a multiplier pinned at 0 counts as converged."""
    tail = metrics[-max(2, len(metrics) // 4):]
    out = []
    for key in ("lambda1", "lambda2"):
        v = np.array([row[key] for row in tail])
        mean, sd = float(v.mean()), float(v.std(ddof=1))
        out.append((key, mean, sd, sd < 0.25 * mean if mean > 0 else sd == 0.0))
    return out


def _train_and_evaluate(run: TrainConfig, reference):
    t0 = time.perf_counter()
    result = train(ENV, run, RUN_DIR / run.agent)
    report = evaluate(result.checkpoint, ENV, EVAL_SLOTS, EVAL_SEEDS, reference=reference)
    report.to_csv(RUN_DIR / run.agent / "report.csv")
    return result, report, time.perf_counter() - t0


@pytest.fixture(scope="module")
def dqn_outcome(reference_report):
    return _train_and_evaluate(DQN_RUN, reference_report)


@pytest.fixture(scope="module")
def sac_outcome(reference_report):
    return _train_and_evaluate(SAC_RUN, reference_report)


def test_criterion_7_dqn_end_to_end(dqn_outcome):
    result, rep, elapsed = dqn_outcome
    gain = rep.mean_gain(80, 220)
    lam = _lambda_converged(result.metrics)
    checks = {
        "a": gain >= 25.0,
        "b": rep.overall_p_latency < 0.025 and rep.overall_p_loss < 0.025,
        "c": all(c for *_, c in lam),
        "budget": DQN_RUN.steps <= 500_000 and elapsed < BUDGET_S,
    }
    ok = all(checks.values())
    lam_txt = ", ".join(f"{k} {m:.3f}+-{s:.4f}" for k, m, s, _ in lam)
    record(7, ok, f"(a) mid-load gain {gain:.1f}% (b) P(latency) {rep.overall_p_latency:.4f}, "
                  f"P(loss) {rep.overall_p_loss:.4f} (c) last-quartile {lam_txt}; "
                  f"{DQN_RUN.steps} steps, {elapsed / 60:.1f} min "
                  f"[{' '.join(k for k, v in checks.items() if not v) or 'all parts met'}]")
    assert ok


def test_criterion_8_sac_parity(sac_outcome, dqn_outcome):
    _, rep, elapsed = sac_outcome
    dqn_rho = dqn_outcome[1].overall_rho
    rel = (rep.overall_rho - dqn_rho) / dqn_rho
    checks = {
        "b": rep.overall_p_latency < 0.025 and rep.overall_p_loss < 0.025,
        "parity": rel >= -0.10,
        "budget": SAC_RUN.steps <= 500_000 and elapsed < BUDGET_S,
    }
    ok = all(checks.values())
    record(8, ok, f"P(latency) {rep.overall_p_latency:.4f}, P(loss) {rep.overall_p_loss:.4f}, "
                  f"mean rho {rep.overall_rho:.4f} vs DQN {dqn_rho:.4f} ({100 * rel:+.1f}%), "
                  f"mid-load gain {rep.mean_gain():.1f}%; {SAC_RUN.steps} steps, {elapsed / 60:.1f} min "
                  f"[{' '.join(k for k, v in checks.items() if not v) or 'all parts met'}]")
    assert ok
