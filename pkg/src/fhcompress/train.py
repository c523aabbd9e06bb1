"""Training loop, metrics log and checkpoint I/O for both agents."""

from __future__ import annotations

import csv
import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .agents.dqn import DQNAgent, DQNConfig
from .agents.sac import SACAgent, SACConfig
from .cmdp import DualVars
from .env import EnvAction, EnvConfig, FronthaulEnv
from .nn import MultiHeadNet

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("iter", "V0", "V1", "V2", "lambda1", "lambda2", "mean_rho",
                  "p_latency_violation", "p_loss", "temperature", "entropy")


class DualRateWarning(UserWarning):
    pass


@dataclass
class TrainConfig:
    agent: str = "dqn"
    steps: int = 20_000
    seed: int = 0
    log_every: int = 1_000
    update_every: int = 1
    dqn: DQNConfig = field(default_factory=DQNConfig)
    sac: SACConfig = field(default_factory=SACConfig)

    def validate(self) -> None:
        if self.agent not in ("dqn", "sac"):
            raise ValueError(f"unknown agent {self.agent!r}")
        if self.steps < 1 or self.log_every < 1 or self.update_every < 1:
            raise ValueError("steps, log_every and update_every must be positive")
        agent_cfg = self.agent_cfg
        agent_cfg.validate()
        if agent_cfg.lr_lambda > agent_cfg.lr_q:
            warnings.warn(
                f"dual learning rate {agent_cfg.lr_lambda:g} exceeds the value learning rate "
                f"{agent_cfg.lr_q:g}; the multiplier update should be much slower than the critic",
                DualRateWarning, stacklevel=2)

    @property
    def agent_cfg(self):
        return self.dqn if self.agent == "dqn" else self.sac


def make_agent(train_cfg: TrainConfig, env_cfg: EnvConfig):
    if train_cfg.agent == "dqn":
        return DQNAgent(env_cfg.n_features, train_cfg.dqn, seed=train_cfg.seed)
    return SACAgent(env_cfg.n_features, env_cfg.params.k_cells, train_cfg.sac, seed=train_cfg.seed)


def dqn_temperature(cfg: DQNConfig, step: int, total: int) -> float:
    """Geometric decay from ``temp_start`` to ``temp_end`` over the first ``temp_decay_frac``."""
    horizon = max(1.0, cfg.temp_decay_frac * total)
    frac = min(1.0, step / horizon)
    return cfg.temp_start * (cfg.temp_end / cfg.temp_start) ** frac


@dataclass
class TrainResult:
    agent: object
    metrics: list[dict]
    checkpoint: Path | None = None
    metrics_path: Path | None = None


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def train(env_cfg: EnvConfig, train_cfg: TrainConfig, out_dir=None) -> TrainResult:
    """Interleave environment steps with agent updates; log metrics every ``log_every`` steps."""
    train_cfg.validate()
    agent = make_agent(train_cfg, env_cfg)
    env = FronthaulEnv(env_cfg, seed=train_cfg.seed + 1000)
    k = env_cfg.params.k_cells
    acfg = train_cfg.agent_cfg
    state = env.reset()
    metrics = []
    window = []
    v_acc = []
    temperature = float("nan")
    for t in range(train_cfg.steps):
        agent.per_beta = acfg.per_beta0 + (1.0 - acfg.per_beta0) * t / train_cfg.steps
        if train_cfg.agent == "dqn":
            temperature = dqn_temperature(acfg, t, train_cfg.steps)
            a = agent.act(state, temperature)
            action = EnvAction.from_indices([a] * k)
        else:
            temperature = agent.alpha
            a = agent.act(state)
            action = EnvAction.from_indices(a)
        next_state, reward, truncated, outcome = env.step(action)
        agent.observe(state, a, reward, next_state, False)
        window.append((reward[0], outcome.max_latency > env_cfg.params.l_max, outcome.total_lost > 0))
        state = env.reset() if truncated else next_state
        if (len(agent.buffer) >= max(acfg.warmup, acfg.batch_size)
                and (t + 1) % train_cfg.update_every == 0):
            v_acc.append(agent.train_step()["V"])
        if (t + 1) % train_cfg.log_every == 0:
            w = np.array(window, dtype=np.float64)
            v = np.mean(v_acc, axis=0) if v_acc else np.full(len(acfg.xi) + 1, np.nan)
            row = {"iter": t + 1, "V0": v[0], "V1": v[1], "V2": v[2],
                   "lambda1": agent.dv.lam[1], "lambda2": agent.dv.lam[2],
                   "mean_rho": w[:, 0].mean(), "p_latency_violation": w[:, 1].mean(),
                   "p_loss": w[:, 2].mean(), "temperature": temperature,
                   "entropy": getattr(agent, "entropy", float("nan"))}
            metrics.append(row)
            log.info("iter %d rho %.3f lat %.4f loss %.4f lambda %s", t + 1, row["mean_rho"],
                     row["p_latency_violation"], row["p_loss"], agent.dv.lam[1:])
            window, v_acc = [], []
    result = TrainResult(agent, metrics)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        result.metrics_path = write_metrics(out / "metrics.csv", metrics)
        result.checkpoint = save_checkpoint(out / "checkpoint", agent, env_cfg)
    return result


def write_metrics(path, metrics: list[dict]) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRIC_COLUMNS)
        for row in metrics:
            writer.writerow([_fmt(row[c]) for c in METRIC_COLUMNS])
    return path


def save_checkpoint(path, agent, env_cfg: EnvConfig) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    meta = {
        "kind": "dqn" if isinstance(agent, DQNAgent) else "sac",
        "k_cells": env_cfg.params.k_cells,
        "n_features": env_cfg.n_features,
        "lambda": [float(v) for v in agent.dv.lam],
        "xi_offsets": [float(v) for v in agent.dv.xi_offsets],
        "lambda_step": agent.dv.step,
    }
    if isinstance(agent, DQNAgent):
        agent.net.save(path / "q_net.npz")
    else:
        agent.critic.save(path / "critic.npz")
        agent.policy.net.save(path / "policy.npz")
        meta["alpha"] = agent.alpha
    (path / "meta.json").write_text(json.dumps(meta, indent=2))
    return path


class GreedyPolicy:
    """Deterministic action selection from a saved checkpoint."""

    def __init__(self, kind: str, k_cells: int, lam: np.ndarray, q_net=None, policy=None):
        self.kind = kind
        self.k_cells = k_cells
        self.lam = lam
        self.q_net = q_net
        self.policy = policy

    def __call__(self, features: np.ndarray) -> EnvAction:
        if self.kind == "dqn":
            a = int(np.argmax(self.lam @ self.q_net.forward(features)))
            return EnvAction.from_indices([a] * self.k_cells)
        return EnvAction.from_indices(self.policy.sample(features, greedy=True)[0])


def load_checkpoint(path, env_cfg: EnvConfig | None = None) -> GreedyPolicy:
    from .policy import AutoregressivePolicy

    path = Path(path)
    meta = json.loads((path / "meta.json").read_text())
    if env_cfg is not None and (meta["k_cells"] != env_cfg.params.k_cells
                                or meta["n_features"] != env_cfg.n_features):
        raise ValueError(
            f"checkpoint was trained for K={meta['k_cells']} with {meta['n_features']} features; "
            f"environment has K={env_cfg.params.k_cells} with {env_cfg.n_features}")
    lam = DualVars(meta["lambda"], meta["xi_offsets"], meta["lambda_step"]).lam
    if meta["kind"] == "dqn":
        return GreedyPolicy("dqn", meta["k_cells"], lam, q_net=MultiHeadNet.load(path / "q_net.npz"))
    net = MultiHeadNet.load(path / "policy.npz")
    policy = AutoregressivePolicy(meta["n_features"], meta["k_cells"], net.n_actions, conditioner=net)
    return GreedyPolicy("sac", meta["k_cells"], lam, policy=policy)

