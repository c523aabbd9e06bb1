"""Per-cell scheduled-PRB random process with exact sum conservation.

The process lives on a fixed-point grid of ``TICKS_PER_PRB`` ticks per PRB so
that pairwise transfers ``X_i += d; X_j -= d`` leave the total bit-exact. The
grid is fine enough (about 1e-6 PRB) to stand in for the real-valued process.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .fh_model import CellLoad, SystemParams

TICKS_PER_PRB = 1 << 20


@dataclass(frozen=True)
class TrafficState:
    ticks: tuple[int, ...]
    bounds: tuple[float, float]
    step_bound: float = 3.0
    seed: int = 0
    t: int = 0
    rng_state: dict | None = None

    @property
    def n_prb_per_cell(self) -> np.ndarray:
        return np.asarray(self.ticks, dtype=np.float64) / TICKS_PER_PRB

    @property
    def total_ticks(self) -> int:
        return sum(self.ticks)


def _tick_bounds(bounds: tuple[float, float]) -> tuple[int, int]:
    return round(bounds[0] * TICKS_PER_PRB), round(bounds[1] * TICKS_PER_PRB)


def init_traffic(params: SystemParams, bounds: tuple[float, float] | None = None,
                 seed: int = 0, sigma: float = 1.0) -> TrafficState:
    """Draw each cell's PRB occupancy uniformly inside ``bounds`` (open interval).

    ``sigma`` scales the per-pair transfer bound (``step_bound = 3 * sigma``).
    """
    if bounds is None:
        bounds = (1.0, float(params.prb_max))
    n_low, n_high = float(bounds[0]), float(bounds[1])
    if not (1.0 <= n_low < n_high <= params.prb_max):
        raise ValueError(f"traffic bounds {bounds} must satisfy 1 <= low < high <= {params.prb_max}")
    lo, hi = _tick_bounds((n_low, n_high))
    if hi - lo < 2:
        raise ValueError(f"traffic bounds {bounds} are degenerate")
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    rng = np.random.default_rng(seed)
    ticks = tuple(int(v) for v in rng.integers(lo + 1, hi, size=params.k_cells))
    return TrafficState(ticks=ticks, bounds=(n_low, n_high), step_bound=3.0 * sigma,
                        seed=seed, t=0, rng_state=rng.bit_generator.state)


def _propagate_ticks(x: list[int], lo: int, hi: int, step: int, uniforms) -> None:
    """In-place pairwise transfer sweep. Bounds use the live values of ``x``.

    The +/-1 tick margins keep every element strictly inside (lo, hi).
    """
    k = len(x)
    u = iter(uniforms)
    for i in range(k):
        for j in range(i + 1, k):
            x_low = -min(step, x[i] - lo - 1, hi - 1 - x[j])
            x_high = min(step, x[j] - lo - 1, hi - 1 - x[i])
            delta = x_low + int(next(u) * (x_high - x_low + 1))
            if delta > x_high:
                delta = x_high
            x[i] += delta
            x[j] -= delta


def propagate(state: TrafficState, n_steps: int = 1) -> TrafficState:
    """Advance the process ``n_steps`` slots."""
    k = len(state.ticks)
    x = list(state.ticks)
    if k > 1 and n_steps > 0:
        lo, hi = _tick_bounds(state.bounds)
        step = int(state.step_bound * TICKS_PER_PRB)
        rng = np.random.default_rng(0)
        rng.bit_generator.state = state.rng_state
        n_pairs = k * (k - 1) // 2
        chunk = max(1, min(n_steps, 65536))
        done = 0
        while done < n_steps:
            m = min(chunk, n_steps - done)
            draws = rng.random((m, n_pairs)).tolist()
            for row in draws:
                _propagate_ticks(x, lo, hi, step, row)
            done += m
        rng_state = rng.bit_generator.state
    else:
        rng_state = state.rng_state
    return replace(state, ticks=tuple(x), t=state.t + n_steps, rng_state=rng_state)


def scheduled_prbs(state: TrafficState, params: SystemParams) -> list[CellLoad]:
    """Round each cell's occupancy to an integer PRB count in [1, prb_max]."""
    out = []
    for v in state.n_prb_per_cell:
        n = int(np.floor(v + 0.5))
        out.append(CellLoad(min(max(n, 1), params.prb_max)))
    return out


def dump_trace(path, params: SystemParams, state: TrafficState, n_slots: int) -> TrafficState:
    """Write ``(t, cell, n_prb)`` rows for ``n_slots`` slots; returns the final state."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "cell", "n_prb"])
        for _ in range(n_slots):
            for k, load in enumerate(scheduled_prbs(state, params)):
                writer.writerow([state.t, k, load.n_prb])
            state = propagate(state)
    return state
