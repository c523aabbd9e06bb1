"""Fronthaul bit accounting: data payload, precoding-weight payload, rate and utilization."""

from __future__ import annotations

from dataclasses import dataclass, field

NR_MODULATION_ORDERS = (2, 4, 6, 8)


@dataclass(frozen=True)
class KnobSets:
    """Ordered, strictly increasing sets the compression knobs index into."""

    modulation: tuple[int, ...] = (6, 8)
    bitwidth: tuple[int, ...] = (16, 17, 18, 19, 20, 21, 22)
    granularity: tuple[int, ...] = (1, 2, 4)

    def __post_init__(self):
        for name in ("modulation", "bitwidth", "granularity"):
            values = tuple(int(v) for v in getattr(self, name))
            if not values:
                raise ValueError(f"{name} set is empty")
            if any(b <= a for a, b in zip(values, values[1:])):
                raise ValueError(f"{name} set must be strictly increasing: {values}")
            if values[0] < 1:
                raise ValueError(f"{name} set must be positive: {values}")
            object.__setattr__(self, name, values)
        bad = [q for q in self.modulation if q not in NR_MODULATION_ORDERS]
        if bad:
            raise ValueError(f"modulation orders {bad} not in {NR_MODULATION_ORDERS}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return len(self.modulation), len(self.bitwidth), len(self.granularity)


@dataclass(frozen=True)
class SystemParams:
    """Scenario constants. Defaults are the K=3, 100 MHz, 30 kHz SCS profile."""

    n_re: int = 12 * 14
    n_layers: int = 12
    n_ant: int = 64
    t_slot: float = 0.5e-3
    c_fh: float = 25e9
    k_cells: int = 3
    prb_max: int = 273
    scs_index: int = 1
    bandwidth: float = 100e6
    l_max: float = 260e-6
    xi: float = 0.025
    knobs: KnobSets = field(default_factory=KnobSets)

    def __post_init__(self):
        for name in ("n_re", "n_layers", "n_ant", "t_slot", "c_fh", "k_cells",
                     "prb_max", "bandwidth", "l_max"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive, got {getattr(self, name)}")
        if self.scs_index < 0:
            raise ValueError(f"scs_index must be non-negative, got {self.scs_index}")
        if not 0 < self.xi < 1:
            raise ValueError(f"xi must lie in (0, 1), got {self.xi}")
        if self.n_layers > self.n_ant:
            raise ValueError("n_layers cannot exceed n_ant")

    @property
    def slot_capacity_bits(self) -> float:
        """Bits the fronthaul link drains in one slot."""
        return self.c_fh * self.t_slot


@dataclass(frozen=True)
class CompressionConfig:
    q_idx: int
    b_idx: int
    r_idx: int

    def validate(self, knobs: KnobSets) -> None:
        for idx, size, name in zip(self.as_tuple(), knobs.shape, ("q_idx", "b_idx", "r_idx")):
            if not 0 <= idx < size:
                raise ValueError(f"{name}={idx} out of range [0, {size})")

    def as_tuple(self) -> tuple[int, int, int]:
        return self.q_idx, self.b_idx, self.r_idx

    def values(self, knobs: KnobSets) -> tuple[int, int, int]:
        """Physical (q, b_w, r_w) for these indices."""
        self.validate(knobs)
        return (knobs.modulation[self.q_idx], knobs.bitwidth[self.b_idx],
                knobs.granularity[self.r_idx])

    @classmethod
    def from_values(cls, knobs: KnobSets, q: int, b_w: int, r_w: int) -> "CompressionConfig":
        try:
            return cls(knobs.modulation.index(q), knobs.bitwidth.index(b_w),
                       knobs.granularity.index(r_w))
        except ValueError:
            raise ValueError(f"(q={q}, b_w={b_w}, r_w={r_w}) not representable in {knobs}") from None

    @classmethod
    def max_compression(cls, knobs: KnobSets) -> "CompressionConfig":
        """Lowest modulation, fewest weight bits, coarsest granularity."""
        return cls(0, 0, len(knobs.granularity) - 1)

    @classmethod
    def min_compression(cls, knobs: KnobSets) -> "CompressionConfig":
        return cls(len(knobs.modulation) - 1, len(knobs.bitwidth) - 1, 0)


@dataclass(frozen=True)
class CellLoad:
    n_prb: int

    def validate(self, params: SystemParams) -> None:
        if not 1 <= self.n_prb <= params.prb_max:
            raise ValueError(f"n_prb={self.n_prb} outside [1, {params.prb_max}]")


def data_payload_bits(params: SystemParams, load: CellLoad, q: int) -> int:
    if q not in NR_MODULATION_ORDERS:
        raise ValueError(f"invalid modulation order q={q}, expected one of {NR_MODULATION_ORDERS}")
    load.validate(params)
    return params.n_re * params.n_layers * load.n_prb * q


def weight_payload_bits(params: SystemParams, load: CellLoad, r_w: int, b_w: int) -> int:
    if r_w < 1:
        raise ValueError(f"precoder granularity r_w must be >= 1, got {r_w}")
    if b_w < 1:
        raise ValueError(f"weight bitwidth b_w must be >= 1, got {b_w}")
    load.validate(params)
    n_weights = -(-load.n_prb // r_w)
    return n_weights * params.n_layers * params.n_ant * b_w


def slot_bits(params: SystemParams, load: CellLoad, cfg: CompressionConfig) -> int:
    """Total fronthaul bits one cell sends in one slot."""
    q, b_w, r_w = cfg.values(params.knobs)
    return data_payload_bits(params, load, q) + weight_payload_bits(params, load, r_w, b_w)


def fh_rate(params: SystemParams, load: CellLoad, cfg: CompressionConfig) -> float:
    """Fronthaul rate in bits/s."""
    return slot_bits(params, load, cfg) / params.t_slot


def utilization(rate: float, params: SystemParams) -> float:
    if rate < 0:
        raise ValueError(f"rate must be non-negative, got {rate}")
    return rate / params.c_fh


def reference_config(params: SystemParams) -> CompressionConfig:
    """Highest-rate config that keeps all K cells at full load within C_FH.

    Raises ValueError when even maximum compression cannot carry the worst case.
    """
    knobs = params.knobs
    worst = CellLoad(params.prb_max)
    budget = params.slot_capacity_bits
    feasible = []
    for qi in range(len(knobs.modulation)):
        for bi in range(len(knobs.bitwidth)):
            for ri in range(len(knobs.granularity)):
                cfg = CompressionConfig(qi, bi, ri)
                bits = params.k_cells * slot_bits(params, worst, cfg)
                if bits <= budget:
                    feasible.append((bits, cfg.as_tuple(), cfg))
    if not feasible:
        raise ValueError("no compression config carries the worst-case load on all cells")
    return max(feasible)[2]


def all_configs(knobs: KnobSets) -> list[CompressionConfig]:
    nq, nb, nr = knobs.shape
    return [CompressionConfig(q, b, r) for q in range(nq) for b in range(nb) for r in range(nr)]
