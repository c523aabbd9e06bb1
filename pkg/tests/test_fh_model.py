from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fhcompress.fh_model import (CellLoad, CompressionConfig, KnobSets, SystemParams, all_configs,
                                 data_payload_bits, fh_rate, reference_config, slot_bits,
                                 utilization, weight_payload_bits)

P = SystemParams()


def cfg(q, b, r, knobs=P.knobs):
    return CompressionConfig.from_values(knobs, q, b, r)


def test_data_payload_golden():
    assert data_payload_bits(P, CellLoad(273), 8) == 4_402_944
    assert data_payload_bits(P, CellLoad(1), 2) == 4_032
    unit = replace(P, n_re=1, n_layers=1, n_ant=1)
    assert data_payload_bits(unit, CellLoad(1), 2) == 2


def test_weight_payload_golden():
    assert weight_payload_bits(P, CellLoad(273), 4, 16) == 847_872
    assert weight_payload_bits(P, CellLoad(273), 1, 22) == 4_612_608
    unit = replace(P, n_layers=1, n_ant=1)
    assert weight_payload_bits(unit, CellLoad(4), 4, 1) == 1


def test_rate_golden():
    assert fh_rate(P, CellLoad(273), cfg(8, 22, 1)) == 18_031_104_000
    assert fh_rate(P, CellLoad(273), cfg(6, 16, 4)) == 8_300_160_000
    assert fh_rate(P, CellLoad(100), cfg(6, 16, 4)) == 3_033_600_000
    assert 3 * fh_rate(P, CellLoad(273), cfg(6, 16, 4)) == 24_900_480_000


def test_utilization_golden():
    assert utilization(3_033_600_000, P) == pytest.approx(0.121344, abs=1e-12)
    assert utilization(0.0, P) == 0.0
    worst = 3 * utilization(fh_rate(P, CellLoad(273), cfg(8, 22, 1)), P)
    assert worst == pytest.approx(2.1637, abs=1e-4)
    with pytest.raises(ValueError):
        utilization(-1.0, P)


def test_payloads_are_integers():
    assert isinstance(slot_bits(P, CellLoad(137), cfg(8, 19, 2)), int)


def test_reference_config_is_unique_feasible():
    ref = reference_config(P)
    assert ref.values(P.knobs) == (6, 16, 4)
    feasible = [c for c in all_configs(P.knobs)
                if P.k_cells * slot_bits(P, CellLoad(273), c) <= P.slot_capacity_bits]
    assert feasible == [ref]
    assert P.k_cells * utilization(fh_rate(P, CellLoad(273), ref), P) <= 1.0


def test_reference_config_infeasible_profile_raises():
    with pytest.raises(ValueError):
        reference_config(replace(P, c_fh=20e9))


def test_reference_picks_highest_rate_when_several_fit():
    roomy = replace(P, c_fh=40e9)
    ref = reference_config(roomy)
    best = max((slot_bits(roomy, CellLoad(273), c) for c in all_configs(roomy.knobs)
                if 3 * slot_bits(roomy, CellLoad(273), c) <= roomy.slot_capacity_bits))
    assert slot_bits(roomy, CellLoad(273), ref) == best


@pytest.mark.parametrize("bad", [
    dict(modulation=(8, 6)), dict(bitwidth=()), dict(modulation=(5, 6)), dict(granularity=(0, 1)),
])
def test_knob_set_validation(bad):
    with pytest.raises(ValueError):
        KnobSets(**bad)


@pytest.mark.parametrize("field,value", [("c_fh", 0), ("t_slot", -1), ("xi", 1.0), ("k_cells", 0)])
def test_system_param_validation(field, value):
    with pytest.raises(ValueError):
        SystemParams(**{field: value})


def test_input_validation():
    with pytest.raises(ValueError):
        data_payload_bits(P, CellLoad(10), 3)
    with pytest.raises(ValueError):
        data_payload_bits(P, CellLoad(0), 6)
    with pytest.raises(ValueError):
        weight_payload_bits(P, CellLoad(274), 1, 16)
    with pytest.raises(ValueError):
        weight_payload_bits(P, CellLoad(10), 0, 16)
    with pytest.raises(ValueError):
        CompressionConfig(2, 0, 0).values(P.knobs)
    with pytest.raises(ValueError):
        CompressionConfig.from_values(P.knobs, 6, 23, 1)


def test_config_roundtrip_and_extremes():
    assert cfg(8, 20, 2).values(P.knobs) == (8, 20, 2)
    assert CompressionConfig.max_compression(P.knobs).values(P.knobs) == (6, 16, 4)
    assert CompressionConfig.min_compression(P.knobs).values(P.knobs) == (8, 22, 1)
    assert len(all_configs(P.knobs)) == 42


loads = st.integers(1, 273)
qs = st.sampled_from(P.knobs.modulation)
bs = st.sampled_from(P.knobs.bitwidth)
rs = st.sampled_from(P.knobs.granularity)


@settings(max_examples=300, deadline=None)
@given(n=loads, n2=loads, q=qs, q2=qs, b=bs, b2=bs, r=rs, r2=rs)
def test_rate_monotonicity(n, n2, q, q2, b, b2, r, r2):
    def rate(n, q, b, r):
        return fh_rate(P, CellLoad(n), cfg(q, b, r))

    base = rate(n, q, b, r)
    assert (rate(max(n, n2), q, b, r) >= base)
    assert (rate(n, max(q, q2), b, r) >= base)
    assert (rate(n, q, max(b, b2), r) >= base)
    assert (rate(n, q, b, max(r, r2)) <= base)
