import csv
import warnings

import numpy as np
import pytest

from fhcompress.agents import DQNConfig, SACConfig
from fhcompress.env import EnvAction, EnvConfig
from fhcompress.fh_model import SystemParams
from fhcompress.train import (METRIC_COLUMNS, DualRateWarning, TrainConfig, dqn_temperature,
                              load_checkpoint, train)

ENV = EnvConfig(params=SystemParams(), episode_len=128)
SMALL_DQN = DQNConfig(hidden=(32, 32), batch_size=32, buffer_size=5_000, warmup=256)
SMALL_SAC = SACConfig(critic_hidden=(32, 32), policy_hidden=(32,), batch_size=16,
                      buffer_size=2_000, warmup=128)


def test_smoke_profile_emits_all_columns(tmp_path):
    cfg = TrainConfig(agent="dqn", steps=20_000, seed=0, log_every=2_000, update_every=4,
                      dqn=SMALL_DQN)
    res = train(ENV, cfg, tmp_path)
    rows = list(csv.DictReader(open(res.metrics_path)))
    assert tuple(rows[0]) == METRIC_COLUMNS
    assert len(rows) == 10
    for r in rows[1:]:
        for c in ("V0", "V1", "V2", "lambda1", "lambda2", "mean_rho", "p_latency_violation",
                  "p_loss", "temperature"):
            assert np.isfinite(float(r[c])), c
    assert float(rows[-1]["lambda1"]) >= 0
    policy = load_checkpoint(res.checkpoint, ENV)
    action = policy(np.zeros(ENV.n_features))
    assert isinstance(action, EnvAction) and len(action.deltas) == 3
    assert len(set(action.indices())) == 1  # homogeneous


def test_sac_smoke_and_checkpoint(tmp_path):
    cfg = TrainConfig(agent="sac", steps=400, seed=1, log_every=200, sac=SMALL_SAC)
    res = train(ENV, cfg, tmp_path)
    rows = list(csv.DictReader(open(res.metrics_path)))
    assert len(rows) == 2 and np.isfinite(float(rows[-1]["entropy"]))
    policy = load_checkpoint(res.checkpoint, ENV)
    assert policy.kind == "sac"
    assert len(policy(np.zeros(ENV.n_features)).deltas) == 3


def test_seed_replay_is_byte_identical(tmp_path):
    cfg = TrainConfig(agent="dqn", steps=1_500, seed=3, log_every=500, update_every=2,
                      dqn=SMALL_DQN)
    a = train(ENV, cfg, tmp_path / "a").metrics_path.read_bytes()
    b = train(ENV, cfg, tmp_path / "b").metrics_path.read_bytes()
    assert a == b
    c = train(ENV, TrainConfig(agent="dqn", steps=1_500, seed=4, log_every=500, update_every=2,
                               dqn=SMALL_DQN), tmp_path / "c").metrics_path.read_bytes()
    assert a != c


def test_fast_dual_rate_warns():
    fast = TrainConfig(dqn=DQNConfig(lr_q=1e-4, lr_lambda=1e-3))
    with pytest.warns(DualRateWarning):
        fast.validate()
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        TrainConfig().validate()


def test_config_errors():
    with pytest.raises(ValueError):
        TrainConfig(agent="ppo").validate()
    with pytest.raises(ValueError):
        TrainConfig(steps=0).validate()
    with pytest.raises(ValueError):
        TrainConfig(update_every=0).validate()


def test_checkpoint_shape_mismatch(tmp_path):
    cfg = TrainConfig(agent="dqn", steps=300, log_every=300, dqn=SMALL_DQN)
    res = train(ENV, cfg, tmp_path)
    single = EnvConfig(params=SystemParams(k_cells=1, c_fh=25e9 / 3))
    with pytest.raises(ValueError):
        load_checkpoint(res.checkpoint, single)


def test_temperature_schedule():
    cfg = DQNConfig()
    assert dqn_temperature(cfg, 0, 1000) == pytest.approx(1.0)
    assert dqn_temperature(cfg, 500, 1000) == pytest.approx(0.05)
    assert dqn_temperature(cfg, 900, 1000) == pytest.approx(0.05)
    mid = dqn_temperature(cfg, 250, 1000)
    assert mid == pytest.approx(np.sqrt(0.05))
