import numpy as np
import pytest

from aeltherm.equilibrium import (
    Ambient, Region, classify_region, heat_balance_at_set_point, solve_steady_state,
    steady_rhs, steady_state_sweep, thermal_neutral_current,
)
from aeltherm.errors import InfeasibleCoolingError, InputError
from aeltherm.lpv import current_grid


def test_lab_rated_opening(lab):
    params, amb = lab
    ss = solve_steady_state(720.0, 70.0, amb, params)
    assert ss.u == pytest.approx(0.11, abs=0.03)
    assert ss.x.t_stack == 70.0
    assert not ss.saturated_low


def test_lab_low_load_needs_no_cooling(lab):
    params, amb = lab
    ss = solve_steady_state(520.0, 70.0, amb, params)
    assert ss.u == 0.0
    assert ss.saturated_low
    assert ss.x.t_stack < 70.0


@pytest.mark.parametrize("name, t_set", [("lab", 70.0), ("mw", 90.0)])
def test_grid_residuals(name, t_set, request):
    params, amb = request.getfixturevalue(name)
    for current in current_grid(params.i_min, params.i_max, 10):
        ss = solve_steady_state(current, t_set, amb, params)
        r = steady_rhs(ss.x.as_array(), ss.u, current, amb, params)
        assert np.max(np.abs(r)) < 1e-9
        assert 0.0 <= ss.u <= 1.0


def test_current_outside_range(lab):
    params, amb = lab
    with pytest.raises(InputError):
        solve_steady_state(params.i_max + 10.0, 70.0, amb, params)


def test_infeasible_cooling(lab):
    params, amb = lab
    with pytest.raises(InfeasibleCoolingError):
        solve_steady_state(720.0, 60.0, amb, params)


def test_lab_neutral_point(lab):
    params, amb = lab
    npnt = thermal_neutral_current(70.0, amb, params)
    assert npnt.boundary == "inside"
    assert npnt.load_fraction == pytest.approx(0.70, abs=0.10)


def test_mw_neutral_point(mw):
    params, amb = mw
    npnt = thermal_neutral_current(90.0, amb, params)
    assert 0.20 <= npnt.load_fraction <= 0.40


def test_neutral_point_falls_with_ambient(lab):
    params, amb = lab
    currents = [thermal_neutral_current(70.0, Ambient(t, amb.t_c_in), params).current
                for t in (0.0, 10.0, 20.0, 30.0)]
    assert all(b < a for a, b in zip(currents, currents[1:]))


def test_neutral_point_strict_variant_differs_only_with_leakage(lab, mw):
    params, amb = lab
    with_leak = thermal_neutral_current(70.0, amb, params).current
    strict = thermal_neutral_current(70.0, amb, params, with_leakage=False).current
    assert strict < with_leak
    params, amb = mw
    assert thermal_neutral_current(90.0, amb, params).current == pytest.approx(
        thermal_neutral_current(90.0, amb, params, with_leakage=False).current)


def test_neutral_point_boundary_flags(lab):
    params, amb = lab
    # surroundings hotter than the set point heat the plant even at zero current
    hot = Ambient(80.0, amb.t_c_in)
    assert thermal_neutral_current(70.0, hot, params, with_leakage=False).boundary == "below"
    # a poorly insulated separator sheds more than rated load produces
    leaky = params.replace(r_sep=0.005)
    assert thermal_neutral_current(70.0, amb, leaky).boundary == "above"


def test_surplus_has_a_unique_zero(lab):
    params, amb = lab
    currents = np.linspace(0.0, params.i_max, 200)
    balance = [heat_balance_at_set_point(i, 70.0, amb, params) for i in currents]
    q_ele = np.array([b[0] for b in balance])
    surplus = np.array([b[0] - b[1] for b in balance])
    assert np.count_nonzero(np.diff(np.sign(surplus))) == 1
    # below the current where U_cell reaches U_th the heat term is negative
    # and not monotone; above it the heat grows strictly with current
    heating = q_ele > 0
    assert np.all(np.diff(q_ele[heating]) > 0)


def test_classify_region(lab):
    params, amb = lab
    i_th = thermal_neutral_current(70.0, amb, params).current
    assert classify_region(i_th - 40.0, 70.0, amb, params) is Region.LOW_LOAD
    assert classify_region(i_th, 70.0, amb, params) is Region.THERMAL_NEUTRAL
    assert classify_region(i_th + 40.0, 70.0, amb, params) is Region.HIGH_LOAD


def test_classify_consistent_with_neutral_point(mw):
    params, amb = mw
    i_th = thermal_neutral_current(90.0, amb, params).current
    for i in np.linspace(0.05, 1.0, 20) * params.i_max:
        region = classify_region(i, 90.0, amb, params)
        if region is not Region.THERMAL_NEUTRAL:
            assert (region is Region.LOW_LOAD) == (i < i_th)


def test_sweep_endpoints_match_single_solves(lab):
    params, amb = lab
    rows = steady_state_sweep([0.5, 0.75, 1.0], 70.0, amb, params)
    for row in (rows[0], rows[-1]):
        ss = solve_steady_state(row.current, 70.0, amb, params)
        assert row.u == ss.u
        assert row.t_stack == ss.x.t_stack


def test_sweep_annotates_failures(lab):
    params, amb = lab
    rows = steady_state_sweep([0.1, 1.0], 70.0, amb, params)
    assert rows[0].error and np.isnan(rows[0].u)
    assert rows[1].error == ""


def test_mw_heat_curves_cross_in_band(mw):
    params, amb = mw
    loads = np.linspace(0.2, 0.4, 21)
    surplus = [np.subtract(*heat_balance_at_set_point(f * params.i_max, 90.0, amb, params))
               for f in loads]
    assert surplus[0] < 0 < surplus[-1]


def test_mw_efficiency_falls_with_load(mw):
    params, amb = mw
    rows = steady_state_sweep([0.4, 1.0], 90.0, amb, params)
    assert rows[1].efficiency < rows[0].efficiency
