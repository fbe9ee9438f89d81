import math

import pytest
from hypothesis import given, strategies as st

from borelog_sta.reductions import (
    AtterbergResult,
    CptPoint,
    DriveSet,
    PressuremeterReading,
    ReductionError,
    atterberg_liquid_limit,
    atterberg_plastic_limit,
    atterberg_reduce,
    cpt_derive,
    cpt_derive_series,
    liquid_limit_water_content,
    pressuremeter_creep_pressure,
    pressuremeter_limit_pressure,
    pressuremeter_reduce,
    reduce_spt,
    round_half_away,
    spt_energy_correct,
    spt_reduce,
)

# Shared raw readings; expected values computed by hand from the formulas
# and frozen here.
SPT_SETS = [DriveSet(1, 9, 0.5), DriveSet(2, 8, 0.5), DriveSet(3, 9, 0.5)]
CASAGRANDE = [(16, 35.2), (22, 28.6), (27, 23.1), (32, 17.4)]
PLASTIC_WC = [11.9, 11.7, 11.4]


def test_round_half_away():
    assert round_half_away(23.5) == 24
    assert round_half_away(23.4999) == 23
    assert round_half_away(-23.5) == -24
    assert round_half_away(0.0) == 0


def test_spt_fixture_n_value():
    result = spt_reduce(SPT_SETS, 0.5)
    assert result.n_value == 8 + 9 == 17
    assert result.sentinel is None


def test_spt_energy_correction():
    # 17 * 84 / 60 = 23.8 -> 24; cN = 1 leaves N1,60 equal
    assert spt_energy_correct(17, 84.0) == (24, 24)
    result = reduce_spt(SPT_SETS, 0.5, energy_transfer_ratio=84.0)
    assert (result.n_value, result.n60, result.n1_60) == (17, 24, 24)


def test_spt_overburden_factor():
    n60, n1_60 = spt_energy_correct(17, 84.0, overburden_factor=1.2)
    assert n60 == 24
    assert n1_60 == round_half_away(23.8 * 1.2)


def test_spt_weight_sentinels():
    rods = [DriveSet(1, 0, 0.5, weight_of_rods=True)]
    assert spt_reduce(rods, 0.5).sentinel == "weightOfRods"
    hammer = [DriveSet(1, 0, 0.5, weight_of_hammer=True)]
    assert spt_reduce(hammer, 0.5).sentinel == "weightOfHammer"


def test_spt_refusal_reasons():
    per_increment = [DriveSet(1, 50, 0.1)]
    assert spt_reduce(per_increment, 0.5).termination_reason == "blows-in-increment"
    total = [DriveSet(1, 40, 0.5), DriveSet(2, 40, 0.5), DriveSet(3, 20, 0.3)]
    assert spt_reduce(total, 0.5).termination_reason == "total-blows"
    stuck = [DriveSet(1, 12, 0.0)]
    assert spt_reduce(stuck, 0.5).termination_reason == "no-advance"


def test_spt_partial_drive_is_indeterminate():
    result = spt_reduce([DriveSet(1, 9, 0.5), DriveSet(2, 8, 0.5)], 0.5)
    assert result.sentinel == "indeterminate"
    assert result.n_value is None


def test_spt_input_validation():
    with pytest.raises(ReductionError):
        spt_reduce([], 0.5)
    with pytest.raises(ReductionError):
        spt_reduce([DriveSet(2, 9, 0.5)], 0.5)
    with pytest.raises(ReductionError):
        spt_reduce(SPT_SETS, 0.0)
    with pytest.raises(ReductionError):
        spt_energy_correct(17, 0.0)
    with pytest.raises(ReductionError):
        spt_energy_correct(None, 84.0)


@given(st.integers(0, 49), st.integers(0, 49), st.integers(0, 49))
def test_spt_n_is_second_plus_third(b1, b2, b3):
    sets = [DriveSet(1, b1, 0.5), DriveSet(2, b2, 0.5), DriveSet(3, b3, 0.5)]
    result = spt_reduce(sets, 0.5)
    if b1 + b2 + b3 >= 100:
        assert result.sentinel == "refusal"
    else:
        assert result.n_value == b2 + b3


def test_liquid_limit_fixture():
    # independent check: log-linear through the bracketing pair (22, 27)
    w0, w1 = 28.6, 23.1
    t = (math.log10(25) - math.log10(22)) / (math.log10(27) - math.log10(22))
    oracle = w0 + (w1 - w0) * t
    value = liquid_limit_water_content(CASAGRANDE)
    assert value == pytest.approx(oracle, abs=1e-12)
    assert value == pytest.approx(25.17, abs=0.05)
    assert atterberg_liquid_limit(CASAGRANDE) == 25


def test_liquid_limit_exact_25_point():
    assert liquid_limit_water_content([(20, 30.0), (25, 26.5), (30, 24.0)]) == 26.5


def test_liquid_limit_unbracketed():
    assert liquid_limit_water_content([(26, 30.0), (30, 25.0)]) is None
    assert atterberg_liquid_limit([(26, 30.0), (30, 25.0)]) is None


def test_liquid_limit_validation():
    with pytest.raises(ReductionError):
        liquid_limit_water_content([(22, 28.6)])
    with pytest.raises(ReductionError):
        liquid_limit_water_content([(22, 28.6), (22, 23.1)])
    with pytest.raises(ReductionError):
        liquid_limit_water_content([(0, 28.6), (27, 23.1)])


@given(
    st.integers(2, 24), st.integers(26, 60),
    st.floats(1.0, 80.0, allow_nan=False), st.floats(1.0, 80.0, allow_nan=False),
)
def test_liquid_limit_between_bracketing_contents(bc0, bc1, w0, w1):
    value = liquid_limit_water_content([(bc0, w0), (bc1, w1)])
    assert min(w0, w1) - 1e-9 <= value <= max(w0, w1) + 1e-9


def test_plastic_limit_fixture():
    assert atterberg_plastic_limit(PLASTIC_WC) == 12
    with pytest.raises(ReductionError):
        atterberg_plastic_limit([])


def test_atterberg_fixture_summary():
    ll = atterberg_liquid_limit(CASAGRANDE)
    pl = atterberg_plastic_limit(PLASTIC_WC)
    assert atterberg_reduce(ll, pl) == AtterbergResult(25, 12, 13)


def test_atterberg_non_plastic():
    assert atterberg_reduce(None, 12).non_plastic
    assert atterberg_reduce(25, None).non_plastic
    assert atterberg_reduce(12, 25).non_plastic
    assert atterberg_reduce(12, 12).non_plastic
    assert not atterberg_reduce(25, 12).non_plastic


def test_cpt_friction_ratio():
    point = cpt_derive(CptPoint(3.41, 32.0, 1.19, -0.1))
    assert point.friction_ratio == pytest.approx(100 * 1.19 / 32.0)
    assert point.friction_ratio == pytest.approx(3.72, abs=0.01)


def test_cpt_zero_cases():
    assert cpt_derive(CptPoint(1.0, 0.0, 0.0)).friction_ratio == 0.0
    with pytest.raises(ReductionError):
        cpt_derive(CptPoint(1.0, 0.0, 0.5))


def test_cpt_series_ordering():
    points = [CptPoint(1.0, 10.0, 0.1), CptPoint(2.0, 12.0, 0.2)]
    derived = cpt_derive_series(points)
    assert [p.friction_ratio for p in derived] == [pytest.approx(1.0), pytest.approx(100 * 0.2 / 12)]
    with pytest.raises(ReductionError):
        cpt_derive_series(list(reversed(points)))


def test_pressuremeter_creep_exact_lines():
    # y = 0.1 p + 1 and y = 2 p - 4.7 intersect at p = 3 exactly
    group2 = [(1.0, 1.1), (2.0, 1.2), (3.0, 1.3)]
    group3 = [(3.0, 1.3), (4.0, 3.3), (5.0, 5.3)]
    assert pressuremeter_creep_pressure(group2, group3) == pytest.approx(3.0, abs=1e-9)


def test_pressuremeter_creep_undetermined():
    parallel = pressuremeter_creep_pressure([(1.0, 1.0), (2.0, 2.0)], [(3.0, 0.0), (4.0, 1.0)])
    assert parallel is None
    # intersection far outside the reading range
    outside = pressuremeter_creep_pressure([(1.0, 1.0), (2.0, 1.1)], [(3.0, 1.0), (4.0, 1.2)])
    assert outside is None


def test_pressuremeter_creep_validation():
    with pytest.raises(ReductionError):
        pressuremeter_creep_pressure([(1.0, 1.0)], [(3.0, 0.0), (4.0, 1.0)])
    with pytest.raises(ReductionError):
        pressuremeter_creep_pressure([(1.0, 1.0), (1.0, 2.0)], [(3.0, 0.0), (4.0, 1.0)])


def test_pressuremeter_limit_bracketing():
    readings = [(0.9, 500.0), (1.0, 550.0), (1.2, 650.0)]
    assert pressuremeter_limit_pressure(readings, 600.0) == pytest.approx(1.1, abs=1e-9)


def test_pressuremeter_limit_not_reached():
    assert pressuremeter_limit_pressure([(0.9, 500.0), (1.0, 550.0)], 600.0) is None


def test_pressuremeter_limit_validation():
    with pytest.raises(ReductionError):
        pressuremeter_limit_pressure([], 600.0)
    with pytest.raises(ReductionError):
        pressuremeter_limit_pressure([(1.0, 550.0), (0.9, 500.0)], 600.0)
    with pytest.raises(ReductionError):
        pressuremeter_limit_pressure([(0.9, 700.0), (1.0, 800.0)], 600.0)


def test_pressuremeter_reduce_groups():
    readings = [
        PressuremeterReading(1.0, 400.0, creep_volume=1.1, group=2),
        PressuremeterReading(2.0, 500.0, creep_volume=1.2, group=2),
        PressuremeterReading(3.0, 550.0, creep_volume=1.3, group=2),
        PressuremeterReading(4.0, 580.0, creep_volume=3.3, group=3),
        PressuremeterReading(5.0, 700.0, creep_volume=5.3, group=3),
    ]
    result = pressuremeter_reduce(readings, 650.0)
    assert result.limit_pressure == pytest.approx(4.0 + (650 - 580) / 120, abs=1e-9)
    assert result.creep_pressure == pytest.approx(3.0, abs=1e-9)
