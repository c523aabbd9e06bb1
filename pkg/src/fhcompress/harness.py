"""Experiment configuration, reference baseline and binned evaluation reports."""

from __future__ import annotations

import configparser
import csv
import math
import os
from ast import literal_eval
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from statistics import NormalDist

import numpy as np

from .agents.dqn import DQNConfig
from .agents.sac import SACConfig
from .env import NOOP_ACTION, EnvAction, EnvConfig, features, reset, step
from .fh_model import CompressionConfig, KnobSets, SystemParams, reference_config
from .train import TrainConfig, load_checkpoint

SEED_ENV_VAR = "FHCOMPRESS_SEED"

# named system-parameter profiles; a config file may override single fields
PROFILES = {
    "default": {},
    "single-cell": {"k_cells": 1, "c_fh": 25e9 / 3},
}


def default_seed() -> int:
    raw = os.environ.get(SEED_ENV_VAR)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise ValueError(f"{SEED_ENV_VAR}={raw!r} is not an integer") from None


def profile_params(name: str, **overrides) -> SystemParams:
    if name not in PROFILES:
        raise ValueError(f"unknown profile {name!r}; known: {', '.join(sorted(PROFILES))}")
    return SystemParams(**{**PROFILES[name], **overrides})


@dataclass
class ExperimentConfig:
    """Everything one run needs. Serializes to an INI file (see ``to_ini``)."""

    profile: str = "default"
    system: dict = field(default_factory=dict)  # field overrides on top of the profile
    traffic_bounds: tuple[float, float] | None = None
    sigma: float = 1.0
    gamma: float = 0.95
    episode_len: int = 512
    agent: str = "dqn"  # dqn | sac | reference | fixed:<q>,<b_w>,<r_w>
    train_steps: int = 20_000
    update_every: int = 1
    log_every: int = 1_000
    eval_slots: int = 100_000
    seeds: tuple[int, ...] = (0,)
    out_dir: str = "runs"
    dqn: DQNConfig = field(default_factory=DQNConfig)
    sac: SACConfig = field(default_factory=SACConfig)

    @property
    def params(self) -> SystemParams:
        system = dict(self.system)
        if "knobs" in system and not isinstance(system["knobs"], KnobSets):
            system["knobs"] = KnobSets(*system["knobs"])
        return profile_params(self.profile, **system)

    def env_config(self) -> EnvConfig:
        return EnvConfig(params=self.params, traffic_bounds=self.traffic_bounds, sigma=self.sigma,
                         gamma=self.gamma, episode_len=self.episode_len)

    def train_config(self, seed: int | None = None) -> TrainConfig:
        dqn = replace(self.dqn, gamma=self.gamma)
        sac = replace(self.sac, gamma=self.gamma)
        return TrainConfig(agent=self.agent, steps=self.train_steps,
                           seed=self.seeds[0] if seed is None else seed,
                           log_every=self.log_every, update_every=self.update_every,
                           dqn=dqn, sac=sac)

    def fixed_config(self) -> CompressionConfig | None:
        """The pinned per-cell config for ``reference`` / ``fixed:`` agents, else None."""
        params = self.params
        if self.agent == "reference":
            return reference_config(params)
        if self.agent.startswith("fixed:"):
            try:
                q, b_w, r_w = (int(v) for v in self.agent[len("fixed:"):].split(","))
            except ValueError:
                raise ValueError(f"fixed agent must look like fixed:<q>,<b_w>,<r_w>, got {self.agent!r}") from None
            return CompressionConfig.from_values(params.knobs, q, b_w, r_w)
        return None

    def validate(self) -> None:
        params = self.params  # raises on out-of-range system values
        self.env_config()
        if self.traffic_bounds is not None:
            lo, hi = self.traffic_bounds
            if not 1 <= lo < hi <= params.prb_max:
                raise ValueError(f"traffic bounds {self.traffic_bounds} outside [1, {params.prb_max}]")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if not self.seeds or any(s < 0 for s in self.seeds):
            raise ValueError("seeds must be a non-empty list of non-negative integers")
        if self.agent not in ("dqn", "sac"):
            self.fixed_config()
        else:
            self.train_config().validate()
        if self.eval_slots < 1 or self.train_steps < 1:
            raise ValueError("eval_slots and train_steps must be positive")

    # ---- INI round trip ----

    _RUN_KEYS = ("profile", "traffic_bounds", "sigma", "gamma", "episode_len", "agent",
                 "train_steps", "update_every", "log_every", "eval_slots", "seeds", "out_dir")

    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp["run"] = {k: repr(getattr(self, k)) for k in self._RUN_KEYS}
        cp["system"] = {k: repr(v) for k, v in sorted(self.system.items())}
        cp["dqn"] = {f.name: repr(getattr(self.dqn, f.name)) for f in fields(self.dqn)}
        cp["sac"] = {f.name: repr(getattr(self.sac, f.name)) for f in fields(self.sac)}
        lines = []
        for section in cp.sections():
            lines.append(f"[{section}]")
            lines.extend(f"{k} = {v}" for k, v in cp[section].items())
            lines.append("")
        return "\n".join(lines)

    @classmethod
    def from_ini(cls, text: str) -> "ExperimentConfig":
        cp = configparser.ConfigParser(interpolation=None)
        cp.read_string(text)
        unknown = set(cp.sections()) - {"run", "system", "dqn", "sac"}
        if unknown:
            raise ValueError(f"unknown config sections: {sorted(unknown)}")
        kw = {}
        if cp.has_section("run"):
            for key, raw in cp["run"].items():
                if key not in cls._RUN_KEYS:
                    raise ValueError(f"unknown key {key!r} in [run]")
                kw[key] = _literal(raw, key)
        if "seeds" in kw:
            kw["seeds"] = tuple(int(s) for s in np.atleast_1d(kw["seeds"]))
        if kw.get("traffic_bounds") is not None:
            kw["traffic_bounds"] = tuple(float(v) for v in kw["traffic_bounds"])
        known_system = {f.name for f in fields(SystemParams)}
        system = {}
        if cp.has_section("system"):
            for key, raw in cp["system"].items():
                if key not in known_system:
                    raise ValueError(f"unknown key {key!r} in [system]")
                system[key] = _literal(raw, key)
        kw["system"] = system
        for name, klass in (("dqn", DQNConfig), ("sac", SACConfig)):
            known = {f.name for f in fields(klass)}
            values = {}
            if cp.has_section(name):
                for key, raw in cp[name].items():
                    if key not in known:
                        raise ValueError(f"unknown key {key!r} in [{name}]")
                    values[key] = _literal(raw, key)
            kw[name] = klass(**values)
        return cls(**kw)

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_ini())
        return path

    @classmethod
    def load(cls, path_or_name) -> "ExperimentConfig":
        """A profile name gives that profile's defaults; anything else is read as a file."""
        if str(path_or_name) in PROFILES:
            return cls(profile=str(path_or_name))
        path = Path(path_or_name)
        if not path.is_file():
            raise FileNotFoundError(f"config {path_or_name!r} is neither a profile nor a file")
        return cls.from_ini(path.read_text())


def _literal(raw: str, key: str):
    try:
        return literal_eval(raw.strip())
    except (ValueError, SyntaxError):
        raise ValueError(f"cannot parse value {raw!r} for {key!r}") from None


# ---- rollouts and reports ----

REPORT_COLUMNS = ("bin_lo", "bin_hi", "n_slots", "rho_mean", "rho_sd", "latency_mean_us",
                  "latency_sd_us", "latency_lo3_us", "latency_hi3_us", "p_latency_violation",
                  "p_loss", "gain_pct")


@dataclass
class SlotRecord:
    """Per-slot evaluation samples after burn-in, one entry per slot."""

    mean_prb: np.ndarray
    rho: np.ndarray  # link utilization, sum over cells
    max_latency: np.ndarray
    lost: np.ndarray

    def __len__(self):
        return len(self.rho)


def wilson_interval(k: int, n: int, confidence: float = 0.95) -> tuple[float, float]:
    if n == 0:
        return 0.0, 1.0
    z = NormalDist().inv_cdf(0.5 + confidence / 2)
    p = k / n
    denom = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


def violation_probability(flags, confidence: float = 0.95) -> tuple[float, float, float]:
    """Empirical violation rate with a Wilson score interval: ``(p, lo, hi)``."""
    flags = np.asarray(flags, dtype=bool)
    k, n = int(flags.sum()), flags.size
    lo, hi = wilson_interval(k, n, confidence)
    return (k / n if n else float("nan")), lo, hi


@dataclass
class EvaluationReport:
    bin_edges: np.ndarray
    counts: np.ndarray
    rho_mean: np.ndarray
    rho_sd: np.ndarray
    latency_mean: np.ndarray  # seconds
    latency_sd: np.ndarray
    p_latency: np.ndarray
    p_loss: np.ndarray
    gain_pct: np.ndarray
    overall_rho: float
    overall_p_latency: float
    overall_p_loss: float
    n_slots: int
    label: str = ""

    @classmethod
    def from_records(cls, rec: SlotRecord, prb_max: int, l_max: float, n_bins: int = 10,
                     label: str = "") -> "EvaluationReport":
        edges = np.linspace(0.0, float(prb_max), n_bins + 1)
        which = np.clip(np.digitize(rec.mean_prb, edges[1:-1]), 0, n_bins - 1)
        nan = np.full(n_bins, np.nan)
        out = {k: nan.copy() for k in ("rho_mean", "rho_sd", "latency_mean", "latency_sd",
                                        "p_latency", "p_loss")}
        counts = np.bincount(which, minlength=n_bins)
        lat_flag = rec.max_latency > l_max
        loss_flag = rec.lost > 0
        for i in np.flatnonzero(counts):
            m = which == i
            out["rho_mean"][i] = rec.rho[m].mean()
            out["rho_sd"][i] = rec.rho[m].std(ddof=1) if counts[i] > 1 else 0.0
            out["latency_mean"][i] = rec.max_latency[m].mean()
            out["latency_sd"][i] = rec.max_latency[m].std(ddof=1) if counts[i] > 1 else 0.0
            out["p_latency"][i] = lat_flag[m].mean()
            out["p_loss"][i] = loss_flag[m].mean()
        return cls(bin_edges=edges, counts=counts, gain_pct=nan.copy(),
                   overall_rho=float(rec.rho.mean()), overall_p_latency=float(lat_flag.mean()),
                   overall_p_loss=float(loss_flag.mean()), n_slots=len(rec), label=label, **out)

    def with_gain(self, reference: "EvaluationReport") -> "EvaluationReport":
        """Per-bin ``100 (rho - rho_ref) / rho_ref``; NaN where either side has no samples."""
        if not np.array_equal(self.bin_edges, reference.bin_edges):
            raise ValueError("reports use different load bins")
        with np.errstate(invalid="ignore", divide="ignore"):
            gain = 100.0 * (self.rho_mean - reference.rho_mean) / reference.rho_mean
        return replace(self, gain_pct=gain)

    def bin_centres(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[:-1] + self.bin_edges[1:])

    def band_mask(self, lo: float, hi: float) -> np.ndarray:
        c = self.bin_centres()
        return (c >= lo) & (c <= hi) & (self.counts > 0)

    def mean_gain(self, lo: float = 80.0, hi: float = 220.0) -> float:
        """Average of the per-bin gains whose bin centre lies in ``[lo, hi]``."""
        g = self.gain_pct[self.band_mask(lo, hi)]
        g = g[np.isfinite(g)]
        return float(g.mean()) if g.size else float("nan")

    def band_rho(self, lo: float = 80.0, hi: float = 220.0) -> float:
        r = self.rho_mean[self.band_mask(lo, hi)]
        return float(np.nanmean(r)) if r.size else float("nan")

    def rows(self) -> list[dict]:
        out = []
        for i in range(len(self.counts)):
            lat, sd = self.latency_mean[i] * 1e6, self.latency_sd[i] * 1e6
            out.append({
                "bin_lo": self.bin_edges[i], "bin_hi": self.bin_edges[i + 1],
                "n_slots": int(self.counts[i]), "rho_mean": self.rho_mean[i],
                "rho_sd": self.rho_sd[i], "latency_mean_us": lat, "latency_sd_us": sd,
                "latency_lo3_us": max(0.0, lat - 3 * sd) if np.isfinite(lat) else lat,
                "latency_hi3_us": lat + 3 * sd,
                "p_latency_violation": self.p_latency[i], "p_loss": self.p_loss[i],
                "gain_pct": self.gain_pct[i],
            })
        return out

    def to_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(REPORT_COLUMNS)
            for row in self.rows():
                writer.writerow([_cell(row[c]) for c in REPORT_COLUMNS])
        return path

    def summary(self) -> str:
        return (f"{self.label or 'policy'}: {self.n_slots} slots, mean rho {self.overall_rho:.4f}, "
                f"P(latency) {self.overall_p_latency:.4f}, P(loss) {self.overall_p_loss:.4f}, "
                f"mid-load gain {self.mean_gain():.1f}%")


def _cell(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "" if not np.isfinite(v) else repr(float(v))


class FixedPolicy:
    """Pins every cell at one config and never moves it."""

    def __init__(self, config: CompressionConfig, k_cells: int):
        self.config = config
        self.k_cells = k_cells

    def initial_configs(self, params: SystemParams):
        return (self.config,) * params.k_cells

    def __call__(self, feats) -> EnvAction:
        return EnvAction.from_indices([NOOP_ACTION] * self.k_cells)


def rollout(policy, env_cfg: EnvConfig, n_slots: int, seeds=(0,), burn_in: float = 0.1) -> SlotRecord:
    """Greedy rollouts over fresh episodes until ``n_slots`` post-burn-in slots are collected.

    Each episode draws a new load level, so the samples spread over the load
    bins. The first ``burn_in`` fraction of every episode is discarded. Slots
    are split evenly across ``seeds``.
    """
    if n_slots < 1:
        raise ValueError("n_slots must be positive")
    if not 0 <= burn_in < 1:
        raise ValueError("burn_in must lie in [0, 1)")
    ep_len = env_cfg.episode_len
    skip = int(burn_in * ep_len)
    if ep_len - skip < 1:
        raise ValueError("episode too short for the burn-in fraction")
    seeds = list(seeds)
    per_seed = [n_slots // len(seeds) + (i < n_slots % len(seeds)) for i in range(len(seeds))]
    mean_prb, rho, lat, lost = [], [], [], []
    initial = getattr(policy, "initial_configs", None)
    for seed, quota in zip(seeds, per_seed):
        rng = np.random.default_rng(seed)
        got = 0
        while got < quota:
            state = reset(env_cfg, int(rng.integers(2**62)))
            if initial is not None:
                state = replace(state, configs=tuple(initial(env_cfg.params)))
            for t in range(ep_len):
                out = step(env_cfg, state, policy(features(env_cfg, state)))
                state = out.next_state
                if t < skip:
                    continue
                mean_prb.append(np.mean(state.n_prb))
                rho.append(out.reward_vec[0])
                lat.append(out.max_latency)
                lost.append(out.total_lost)
                got += 1
                if got == quota:
                    break
    return SlotRecord(np.asarray(mean_prb), np.asarray(rho), np.asarray(lat), np.asarray(lost))


def run_fixed(config: CompressionConfig, env_cfg: EnvConfig, n_slots: int = 100_000,
              seeds=(0,), label: str = "fixed") -> EvaluationReport:
    config.validate(env_cfg.params.knobs)
    policy = FixedPolicy(config, env_cfg.params.k_cells)
    rec = rollout(policy, env_cfg, n_slots, seeds)
    return EvaluationReport.from_records(rec, env_cfg.params.prb_max, env_cfg.params.l_max,
                                         label=label)


def run_reference(env_cfg: EnvConfig, n_slots: int = 100_000, seeds=(0,)) -> EvaluationReport:
    """Every cell at the highest-rate config that still carries worst-case load on all cells."""
    ref = reference_config(env_cfg.params)
    report = run_fixed(ref, env_cfg, n_slots, seeds, label="reference")
    return report.with_gain(report)


def evaluate(checkpoint, env_cfg: EnvConfig, n_slots: int = 100_000, seeds=(0,),
             reference: EvaluationReport | None = None) -> EvaluationReport:
    """Greedy evaluation of a saved agent, with gains against the reference scheme."""
    policy = load_checkpoint(checkpoint, env_cfg)
    return evaluate_policy(policy, env_cfg, n_slots, seeds, reference, label=policy.kind)


def evaluate_policy(policy, env_cfg: EnvConfig, n_slots: int = 100_000, seeds=(0,),
                    reference: EvaluationReport | None = None, label: str = "policy") -> EvaluationReport:
    rec = rollout(policy, env_cfg, n_slots, seeds)
    report = EvaluationReport.from_records(rec, env_cfg.params.prb_max, env_cfg.params.l_max,
                                           label=label)
    if reference is None:
        reference = run_reference(env_cfg, n_slots, seeds)
    return report.with_gain(reference)
