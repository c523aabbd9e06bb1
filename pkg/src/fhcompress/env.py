"""Constrained-MDP environment: K cells sharing one fronthaul link through a switch queue."""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field, replace

import numba
import numpy as np

from .fh_model import CompressionConfig, SystemParams, slot_bits, utilization
from .traffic import TrafficState, init_traffic, propagate, scheduled_prbs

DELTAS = (-1, 0, 1)
# index = 9*(dq+1) + 3*(db+1) + (dr+1)
ACTION_TRIPLES: tuple[tuple[int, int, int], ...] = tuple(itertools.product(DELTAS, repeat=3))
N_CELL_ACTIONS = len(ACTION_TRIPLES)
NOOP_ACTION = ACTION_TRIPLES.index((0, 0, 0))
N_FEATURES_PER_CELL = 6


@dataclass(frozen=True)
class EnvConfig:
    params: SystemParams = field(default_factory=SystemParams)
    traffic_bounds: tuple[float, float] | None = None
    sigma: float = 1.0
    gamma: float = 0.95
    packet_bits: int = 12_000
    # None -> C_FH * L_max, i.e. a full buffer is exactly one latency budget
    buffer_bits: float | None = None
    episode_len: int = 512

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.packet_bits < 1:
            raise ValueError("packet_bits must be >= 1")
        if self.buffer_bits is not None and self.buffer_bits < self.packet_bits:
            raise ValueError("buffer must hold at least one packet")
        if self.episode_len < 1:
            raise ValueError("episode_len must be >= 1")

    @property
    def buffer_cap(self) -> float:
        if self.buffer_bits is None:
            return self.params.c_fh * self.params.l_max
        return float(self.buffer_bits)

    @property
    def n_features(self) -> int:
        return N_FEATURES_PER_CELL * self.params.k_cells


@dataclass(frozen=True)
class EnvState:
    rho: tuple[float, ...]
    latency: tuple[float, ...]
    lost_packets: tuple[int, ...]
    configs: tuple[CompressionConfig, ...]
    n_prb: tuple[int, ...]
    backlog: float
    traffic: TrafficState

    @property
    def k_cells(self) -> int:
        return len(self.configs)


@dataclass(frozen=True)
class EnvAction:
    deltas: tuple[tuple[int, int, int], ...]

    def __post_init__(self):
        for triple in self.deltas:
            if len(triple) != 3 or any(d not in DELTAS for d in triple):
                raise ValueError(f"action components must be in {{-1, 0, 1}}, got {triple}")

    @classmethod
    def homogeneous(cls, triple, k_cells: int) -> "EnvAction":
        return cls(tuple(tuple(triple) for _ in range(k_cells)))

    @classmethod
    def from_indices(cls, indices) -> "EnvAction":
        return cls(tuple(ACTION_TRIPLES[int(i)] for i in indices))

    def indices(self) -> tuple[int, ...]:
        return tuple(ACTION_TRIPLES.index(tuple(t)) for t in self.deltas)


@dataclass(frozen=True)
class StepOutcome:
    next_state: EnvState
    reward_vec: np.ndarray
    max_latency: float
    total_lost: int


def apply_action(cfg: CompressionConfig, delta, knobs) -> CompressionConfig:
    """Move each knob index by its delta, saturating at the set boundaries."""
    dq, db, dr = delta
    nq, nb, nr = knobs.shape
    return CompressionConfig(
        min(max(cfg.q_idx + dq, 0), nq - 1),
        min(max(cfg.b_idx + db, 0), nb - 1),
        min(max(cfg.r_idx + dr, 0), nr - 1),
    )


@numba.njit(cache=True)
def _fifo_slot(bursts, backlog, buffer_cap, packet_bits, c_fh, t_slot):
    k = bursts.shape[0]
    n_pkts = np.empty(k, dtype=np.int64)
    for c in range(k):
        n_pkts[c] = (bursts[c] + packet_bits - 1) // packet_bits
    total = 0
    for c in range(k):
        total += n_pkts[c]
    latency = np.zeros(k)
    lost = np.zeros(k, dtype=np.int64)
    work = backlog
    if total == 0:
        return latency, lost, max(0.0, work - c_fh * t_slot)
    sent = np.zeros(k, dtype=np.int64)
    spacing = t_slot / total
    t_prev = 0.0
    m = 0
    while m < total:
        for c in range(k):
            if sent[c] >= n_pkts[c]:
                continue
            size = packet_bits
            if sent[c] == n_pkts[c] - 1:
                size = bursts[c] - (n_pkts[c] - 1) * packet_bits
            sent[c] += 1
            t = m * spacing
            work = max(0.0, work - c_fh * (t - t_prev))
            t_prev = t
            if work + size > buffer_cap:
                lost[c] += 1
            else:
                work += size
                delay = work / c_fh
                if delay > latency[c]:
                    latency[c] = delay
            m += 1
    work = max(0.0, work - c_fh * (t_slot - t_prev))
    return latency, lost, work


def transport_slot(params: SystemParams, bursts, queue_backlog: float, buffer_cap: float,
                   packet_bits: int = 12_000):
    """Push one slot of per-cell bursts through the shared FIFO switch queue.

    Each burst is cut into ``packet_bits`` packets (last one partial). Cells are
    interleaved round-robin and the packets arrive evenly spaced over the slot
    while the link drains at ``C_FH``. A packet that would push the queue above
    ``buffer_cap`` is dropped. A delivered packet's latency is the time until
    its last bit leaves the queue.

    Returns ``(latency_per_cell, lost_per_cell, new_backlog)``. A cell's latency
    is the maximum over its delivered packets (0 if it delivered none).
    """
    bursts = np.asarray(bursts, dtype=np.int64)
    if (bursts < 0).any() or queue_backlog < 0 or buffer_cap <= 0:
        raise ValueError("bursts and backlog must be non-negative and buffer_cap positive")
    return _fifo_slot(bursts, float(queue_backlog), float(buffer_cap), int(packet_bits),
                      float(params.c_fh), float(params.t_slot))


def _cell_rho(params, loads, configs):
    bits = [slot_bits(params, load, cfg) for load, cfg in zip(loads, configs)]
    rho = tuple(utilization(b / params.t_slot, params) for b in bits)
    return bits, rho


def reset(cfg: EnvConfig, seed: int = 0) -> EnvState:
    """Fresh episode: random loads, maximum compression on every cell, empty queue."""
    params = cfg.params
    traffic = init_traffic(params, cfg.traffic_bounds, seed=seed, sigma=cfg.sigma)
    loads = scheduled_prbs(traffic, params)
    configs = tuple(CompressionConfig.max_compression(params.knobs) for _ in range(params.k_cells))
    _, rho = _cell_rho(params, loads, configs)
    k = params.k_cells
    return EnvState(rho=rho, latency=(0.0,) * k, lost_packets=(0,) * k, configs=configs,
                    n_prb=tuple(l.n_prb for l in loads), backlog=0.0, traffic=traffic)


def step(cfg: EnvConfig, state: EnvState, action: EnvAction) -> StepOutcome:
    params = cfg.params
    if len(action.deltas) != state.k_cells:
        raise ValueError(f"action covers {len(action.deltas)} cells, state has {state.k_cells}")
    configs = tuple(apply_action(c, d, params.knobs) for c, d in zip(state.configs, action.deltas))
    traffic = propagate(state.traffic)
    loads = scheduled_prbs(traffic, params)
    bits, rho = _cell_rho(params, loads, configs)
    latency, lost, backlog = transport_slot(params, bits, state.backlog, cfg.buffer_cap,
                                            cfg.packet_bits)
    nxt = EnvState(rho=rho, latency=tuple(float(v) for v in latency),
                   lost_packets=tuple(int(v) for v in lost), configs=configs,
                   n_prb=tuple(l.n_prb for l in loads), backlog=float(backlog), traffic=traffic)
    max_latency = float(latency.max())
    total_lost = int(lost.sum())
    safe_weight = 1.0 - cfg.gamma
    reward = np.array([
        sum(rho),
        safe_weight if max_latency <= params.l_max else 0.0,
        safe_weight if total_lost == 0 else 0.0,
    ])
    return StepOutcome(nxt, reward, max_latency, total_lost)


def features(cfg: EnvConfig, state: EnvState) -> np.ndarray:
    """Per-cell (rho, L/L_max, min(LP, 1), normalized knob indices), concatenated."""
    params = cfg.params
    nq, nb, nr = params.knobs.shape
    out = np.empty(cfg.n_features)
    for k in range(state.k_cells):
        c = state.configs[k]
        out[6 * k:6 * k + 6] = (
            state.rho[k],
            state.latency[k] / params.l_max,
            min(state.lost_packets[k], 1),
            c.q_idx / max(nq - 1, 1),
            c.b_idx / max(nb - 1, 1),
            c.r_idx / max(nr - 1, 1),
        )
    return out


TRACE_COLUMNS = ("t", "cell", "n_prb", "q", "b_w", "r_w", "rho", "latency_us",
                 "lost_packets", "r0", "r1", "r2")


class TraceWriter:
    """Streams per-cell trajectory rows to CSV."""

    def __init__(self, path, params: SystemParams):
        self.params = params
        self._fh = open(path, "w", newline="")
        self._writer = csv.writer(self._fh)
        self._writer.writerow(TRACE_COLUMNS)

    def write(self, t: int, outcome: StepOutcome):
        s = outcome.next_state
        r = outcome.reward_vec
        for k in range(s.k_cells):
            q, b_w, r_w = s.configs[k].values(self.params.knobs)
            self._writer.writerow([t, k, s.n_prb[k], q, b_w, r_w, repr(float(s.rho[k])),
                                   repr(float(s.latency[k] * 1e6)), s.lost_packets[k],
                                   repr(float(r[0])), repr(float(r[1])), repr(float(r[2]))])

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class FronthaulEnv:
    """Stateful wrapper with a gym-like ``reset``/``step`` surface returning feature vectors."""

    def __init__(self, cfg: EnvConfig | None = None, seed: int = 0):
        self.cfg = cfg or EnvConfig()
        self._seed_rng = np.random.default_rng(seed)
        self.state: EnvState | None = None
        self.t = 0

    @property
    def k_cells(self) -> int:
        return self.cfg.params.k_cells

    def reset(self, seed: int | None = None) -> np.ndarray:
        if seed is None:
            seed = int(self._seed_rng.integers(2**63 - 1))
        self.state = reset(self.cfg, seed)
        self.t = 0
        return features(self.cfg, self.state)

    def step(self, action: EnvAction):
        """Returns ``(features, reward_vec, truncated, outcome)``."""
        outcome = step(self.cfg, self.state, action)
        self.state = outcome.next_state
        self.t += 1
        truncated = self.t >= self.cfg.episode_len
        return features(self.cfg, self.state), outcome.reward_vec, truncated, outcome

    def set_configs(self, configs) -> np.ndarray:
        self.state = replace(self.state, configs=tuple(configs))
        return features(self.cfg, self.state)
