import itertools
import math

import numpy as np
import pytest
from scipy.stats import chisquare

from fhcompress.agents import DQNAgent, DQNConfig, SACAgent, SACConfig, dqn_act
from fhcompress.nn import MultiHeadNet, gradient_check
from fhcompress.policy import AutoregressivePolicy, all_position_inputs, log_softmax

N_FEAT = 6


def small_dqn(**kw):
    base = dict(hidden=(32, 32), batch_size=16, buffer_size=512, warmup=16)
    base.update(kw)
    return DQNAgent(N_FEAT, DQNConfig(**base), seed=0)


def small_sac(k=2, **kw):
    base = dict(critic_hidden=(32, 32), policy_hidden=(32,), batch_size=16, buffer_size=512,
                warmup=16)
    base.update(kw)
    return SACAgent(N_FEAT, k, SACConfig(**base), seed=0)


def fill(agent, n, rng, k=None, reward=None):
    for _ in range(n):
        s = rng.normal(size=N_FEAT)
        a = rng.integers(27) if k is None else rng.integers(27, size=k)
        r = rng.random(3) if reward is None else reward
        agent.observe(s, a, r, rng.normal(size=N_FEAT), False)


def test_dqn_act_low_temperature_is_greedy():
    agent = small_dqn()
    s = np.random.default_rng(0).normal(size=N_FEAT)
    best = int(np.argmax(agent.dv.lam @ agent.net.forward(s)))
    rng = np.random.default_rng(1)
    picks = [dqn_act(agent.net, s, agent.dv.lam, 1e-6, rng) for _ in range(1000)]
    assert np.mean(np.array(picks) == best) >= 0.99
    assert dqn_act(agent.net, s, agent.dv.lam, 0.0) == best


def test_dqn_act_high_temperature_is_uniform():
    agent = small_dqn()
    s = np.zeros(N_FEAT)
    rng = np.random.default_rng(2)
    picks = [dqn_act(agent.net, s, agent.dv.lam, 1e9, rng) for _ in range(27 * 200)]
    assert chisquare(np.bincount(picks, minlength=27)).pvalue > 1e-3


def test_dqn_act_rejects_negative_temperature():
    agent = small_dqn()
    with pytest.raises(ValueError):
        dqn_act(agent.net, np.zeros(N_FEAT), agent.dv.lam, -1.0)


def test_dqn_safe_head_initialisation():
    agent = DQNAgent(N_FEAT, DQNConfig(hidden=(16,)), seed=0)
    q = agent.net.forward(np.zeros(N_FEAT))
    assert np.allclose(q[1:], 1.0, atol=0.5) and np.abs(q[0]).max() < 0.5


def test_dqn_train_step_refreshes_priorities():
    agent = small_dqn()
    rng = np.random.default_rng(3)
    fill(agent, 64, rng)
    before = agent.buffer.priorities[:64].copy()
    agent.train_step()
    changed = agent.buffer.priorities[:64] != before
    assert changed.any()
    # recomputed priorities match the TD errors of the pre-update network
    probe = small_dqn()
    fill(probe, 64, np.random.default_rng(3))
    idx, w = probe.buffer.sample_prioritized(16, probe.per_beta)
    from fhcompress.nn import td_loss_and_grad
    res = td_loss_and_grad(probe.net, probe.target, probe.buffer.batch(idx), probe.dv.lam, 0.95, w)
    probe.buffer.rng = np.random.default_rng(agent.buffer.rng.bit_generator.state["state"]["state"])
    expect = np.abs(res.td).sum(axis=1) + probe.cfg.p_min
    np.testing.assert_allclose(agent.buffer.priorities[idx], expect, rtol=1e-12)


def test_dqn_degenerate_lambda_ignores_constraint_heads():
    agent = small_dqn(lambda_init=(0.0, 0.0), lr_lambda=0.0)
    s = np.random.default_rng(4).normal(size=(10, N_FEAT))
    q = agent.net.forward(s)
    for row, x in zip(q, s):
        assert agent.act(x) == int(np.argmax(row[0]))


def test_dqn_zero_kappa_freezes_target():
    agent = small_dqn(kappa=0.0)
    fill(agent, 64, np.random.default_rng(5))
    frozen = agent.target.params.copy()
    for _ in range(5):
        agent.train_step()
    assert np.array_equal(agent.target.params, frozen)
    assert not np.array_equal(agent.net.params, frozen)


def test_dqn_act_has_no_side_effects():
    agent = small_dqn()
    fill(agent, 20, np.random.default_rng(6))
    snap = (agent.net.params.copy(), agent.target.params.copy(), agent.buffer.priorities.copy(),
            agent.dv.lam.copy(), len(agent.buffer))
    s = np.ones(N_FEAT)
    agent.act(s)
    agent.act(s, 0.5)
    agent.value_estimates(np.ones((4, N_FEAT)))
    after = (agent.net.params, agent.target.params, agent.buffer.priorities, agent.dv.lam,
             len(agent.buffer))
    for a, b in zip(snap, after):
        assert np.array_equal(a, b)


def test_dqn_infeasible_constraint_raises_lambda():
    # the first constraint is never met, the second always is
    agent = small_dqn(gamma=0.5, lr_lambda=1e-2, lambda_init=(1.0, 1.0), lr_q=3e-3)
    fill(agent, 256, np.random.default_rng(7), reward=np.array([0.3, 0.0, 0.5]))
    lam = [agent.dv.lam.copy()]
    for _ in range(1500):
        agent.train_step()
        lam.append(agent.dv.lam.copy())
    lam = np.array(lam)
    assert lam[-1, 1] > lam[0, 1] + 1.0
    assert lam[-1, 2] < lam[0, 2]
    assert (lam >= 0).all()


def test_dqn_config_validation():
    with pytest.raises(ValueError):
        DQNConfig(lambda_init=(1.0,)).validate()
    with pytest.raises(ValueError):
        DQNConfig(head_weights=(1.0, 1.0)).validate()
    with pytest.raises(ValueError):
        DQNConfig(kappa=2.0).validate()


@pytest.mark.parametrize("k", [1, 2, 3])
def test_autoregressive_policy_normalised(k):
    pol = AutoregressivePolicy(N_FEAT, k, hidden=(16,), rng=np.random.default_rng(k))
    s = np.random.default_rng(10).normal(size=N_FEAT)
    joint = np.array(list(itertools.product(range(27), repeat=k)))
    lp = pol.log_prob(np.repeat(s[None], len(joint), axis=0), joint)
    assert np.exp(lp).sum() == pytest.approx(1.0, abs=1e-9)


def test_policy_sampling_matches_probabilities():
    pol = AutoregressivePolicy(N_FEAT, 1, n_actions=4, hidden=(8,), rng=np.random.default_rng(0))
    s = np.zeros((20000, N_FEAT))
    draws = pol.sample(s, np.random.default_rng(1))[:, 0]
    p = pol.factor_probs(s[:1], np.zeros((1, 1), int), 0)[0]
    counts = np.bincount(draws, minlength=4)
    assert chisquare(counts, 20000 * p).pvalue > 1e-3


def test_conditioner_size_checked():
    with pytest.raises(ValueError):
        AutoregressivePolicy(N_FEAT, 2, conditioner=MultiHeadNet(5, (4,), 1, 27))


def test_kl_zero_at_fixed_point():
    pol = AutoregressivePolicy(N_FEAT, 2, hidden=(16,), rng=np.random.default_rng(0))
    rng = np.random.default_rng(1)
    s = rng.normal(size=(8, N_FEAT))
    a = pol.sample(s, rng)
    target = np.stack([pol.logits(s, a, k) for k in range(2)]) + 3.0  # shift-invariant
    loss, grad, _ = pol.kl_loss_and_grad(s, a, target)
    assert abs(loss) < 1e-12
    assert np.abs(grad).max() < 1e-12


def test_single_cell_kl_closed_form_and_gradient():
    pol = AutoregressivePolicy(N_FEAT, 1, n_actions=5, hidden=(8,), rng=np.random.default_rng(2))
    rng = np.random.default_rng(3)
    s = rng.normal(size=(6, N_FEAT))
    a = np.zeros((6, 1), int)
    target = rng.normal(size=(1, 6, 5))
    loss, grad, ent = pol.kl_loss_and_grad(s, a, target)
    logp = log_softmax(pol.logits(s, a, 0))
    logq = log_softmax(target[0])
    p = np.exp(logp)
    assert loss == pytest.approx(float((p * (logp - logq)).sum(axis=1).mean()), rel=1e-12)
    assert ent == pytest.approx(float(-(p * logp).sum(axis=1).mean()), rel=1e-12)

    def f():
        return pol.kl_loss_and_grad(s, a, target)[0]

    assert gradient_check(f, pol.params, grad, n_probe=64).max_rel_error < 1e-4


def test_sac_critic_gradient():
    agent = small_sac(k=2)
    rng = np.random.default_rng(4)
    fill(agent, 32, rng, k=2)
    batch = agent.buffer.batch(np.arange(16))
    w = rng.uniform(0.2, 1.0, 16)
    loss, grad, td = agent.critic_loss_and_grad(batch, w)
    assert td.shape == (16, 3)
    # semi-gradient: targets are constants, so pin them for the finite differences
    acts = np.asarray(batch.actions).reshape(16, 2)
    x = all_position_inputs(batch.states, acts, 2, agent.n_actions)
    targets = agent._critic_targets(batch, x, agent.critic.forward(x))
    assert agent.critic_loss_and_grad(batch, w, targets)[0] == pytest.approx(loss)

    def f():
        return agent.critic_loss_and_grad(batch, w, targets)[0]

    assert gradient_check(f, agent.critic.params, grad, n_probe=64).max_rel_error < 1e-4


def test_sac_zero_kappa_and_act_side_effects():
    agent = small_sac(k=2, kappa=0.0)
    fill(agent, 64, np.random.default_rng(5), k=2)
    frozen = agent.critic_target.params.copy()
    pol = agent.policy.params.copy()
    a = agent.act(np.zeros(N_FEAT), greedy=True)
    assert a.shape == (2,)
    assert np.array_equal(agent.policy.params, pol)
    for _ in range(3):
        out = agent.train_iteration()
    assert set(out) == {"loss", "kl", "V"}
    assert np.array_equal(agent.critic_target.params, frozen)
    assert not np.array_equal(agent.policy.params, pol)


def test_sac_bandit_entropy_tracks_target():
    # single state, one cell, reward favours one action: alpha settles where entropy hits the target
    cfg = dict(lr_pi=1e-3, lr_lambda=0.0, batch_size=32, gamma=0.5, kappa=0.05)
    agent = small_sac(k=1, **cfg)
    rng = np.random.default_rng(6)
    s = np.zeros(N_FEAT)
    for _ in range(512):
        a = rng.integers(27, size=1)
        agent.observe(s, a, np.array([float(a[0] == 3), 1.0, 1.0]), s, False)
    ent = []
    for _ in range(2000):
        agent.train_iteration()
        ent.append(agent.entropy)
    target = 0.2 * math.log(27)
    assert abs(np.mean(ent[-500:]) - target) < 0.05 * target


def test_sac_config_validation():
    with pytest.raises(ValueError):
        SACConfig(entropy_frac=1.5).validate()
    with pytest.raises(ValueError):
        SACConfig(lr_pi=0.0).validate()
