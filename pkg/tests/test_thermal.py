"""Thermal model unit tests: fixed points, cycle analysis, design rules."""
import numpy as np
import pytest
from dataclasses import replace

from acfleet import thermal
from acfleet.errors import (ModelDivergenceError, NeverOffError,
                            NeverOnError)
from acfleet.thermal import (
    AcParams, HeatInputs, ThermalParams, ThermalState, ac_power,
    ambient_sensitivity, carnot_cooling_rate, cycle_durations,
    design_prefactor, duty_cycle, equilibrium_state, steady_on_power,
    step_thermal, thermometer_reading,
)

T_AMB = 32.2


@pytest.fixture
def defaults():
    return ThermalParams(), AcParams(), HeatInputs()


def test_off_equilibrium_is_stationary():
    # the full-injection off fixed point bakes the house past the cold
    # exchanger's validity band, so check stationarity at a gentler load
    th, ac = ThermalParams(), AcParams()
    heat = HeatInputs(q_w_dot=50.0, q_fixed=0.0)
    eq = equilibrium_state(th, ac, heat, False, T_AMB)
    nxt = step_thermal(eq, th, ac, heat, on=False, dt=1.0)
    for name in ("t_w", "t_a", "t_1", "t_2"):
        assert abs(getattr(nxt, name) - getattr(eq, name)) < 1e-6


def test_on_equilibrium_is_stationary(defaults):
    th, ac, heat = defaults
    eq = equilibrium_state(th, ac, heat, True, T_AMB)
    nxt = step_thermal(eq, th, ac, heat, on=True, dt=1.0)
    for name in ("t_w", "t_a", "t_1", "t_2"):
        assert abs(getattr(nxt, name) - getattr(eq, name)) < 1e-6


def test_on_equilibrium_balances_heat_flows(defaults):
    th, ac, heat = defaults
    eq = equilibrium_state(th, ac, heat, True, T_AMB)
    qc = carnot_cooling_rate(eq, ac)
    # cold exchanger: heat arriving from air equals heat pumped away
    assert th.h_1 * (eq.t_a - eq.t_1) == pytest.approx(qc, rel=1e-9)
    # hot exchanger: rejected heat equals pumped heat plus electrical work
    w = ac_power(eq, ac, True)
    assert th.h_2 * (eq.t_2 - T_AMB) == pytest.approx(qc + w, rel=1e-9)


def test_cooling_rate_rejects_out_of_band_t1(defaults):
    _, ac, _ = defaults
    bad = ThermalState(t_w=25.0, t_a=25.0, t_1=90.0, t_2=45.0, t_amb=T_AMB)
    with pytest.raises(ModelDivergenceError):
        carnot_cooling_rate(bad, ac)


def test_ac_power_zero_when_off(defaults):
    th, ac, heat = defaults
    eq = equilibrium_state(th, ac, heat, False, T_AMB)
    assert ac_power(eq, ac, False) == 0.0


def test_thermometer_mixes_air_and_water():
    th = ThermalParams(f_hm=0.85)
    state = ThermalState(t_w=24.0, t_a=22.0, t_1=10.0, t_2=40.0,
                         t_amb=T_AMB)
    assert thermometer_reading(state, th) == pytest.approx(
        0.15 * 22.0 + 0.85 * 24.0)


def test_step_thermal_rejects_nonpositive_dt(defaults):
    th, ac, heat = defaults
    eq = equilibrium_state(th, ac, heat, False, T_AMB)
    with pytest.raises(ValueError):
        step_thermal(eq, th, ac, heat, on=False, dt=0.0)


def test_nominal_cycle_durations_regression(defaults):
    """Frozen regression for the default house at the anchor ambient."""
    th, ac, heat = defaults
    on_s, off_s = cycle_durations(th, ac, heat, (22.5, 23.5), T_AMB,
                                  sensor_lag_tau=12.0)
    assert on_s == pytest.approx(289.0, rel=0.01)
    assert off_s == pytest.approx(842.7, rel=0.01)
    assert duty_cycle(on_s, off_s) == pytest.approx(0.255, abs=0.01)


def test_sensor_lag_lengthens_apparent_cycle(defaults):
    th, ac, heat = defaults
    lagged = cycle_durations(th, ac, heat, (22.5, 23.5), T_AMB,
                             sensor_lag_tau=12.0)
    instant = cycle_durations(th, ac, heat, (22.5, 23.5), T_AMB,
                              sensor_lag_tau=0.0)
    assert sum(lagged) > sum(instant)


def test_never_on_when_ambient_cannot_heat_house():
    th, ac = ThermalParams(), AcParams()
    heat = HeatInputs(q_w_dot=0.0, q_fixed=0.0)
    with pytest.raises(NeverOnError):
        cycle_durations(th, ac, heat, (22.5, 23.5), t_amb=15.0)


def test_never_off_when_injection_swamps_cooling():
    th, ac = ThermalParams(), AcParams()
    heat = HeatInputs(q_w_dot=1400.0)
    with pytest.raises(NeverOffError):
        cycle_durations(th, ac, heat, (22.5, 23.5), T_AMB)


def test_cycle_rejects_inverted_deadband(defaults):
    th, ac, heat = defaults
    with pytest.raises(ValueError):
        cycle_durations(th, ac, heat, (23.5, 22.5), T_AMB)


def test_design_prefactor_reproduces_stored_value(defaults):
    th, ac, _ = defaults
    a = design_prefactor(th, ac)
    assert a == pytest.approx(ac.a, rel=1e-4)


def test_ambient_sensitivity_in_calibrated_band(defaults):
    th, ac, heat = defaults
    coeff = ambient_sensitivity(th, ac, heat, T_AMB)
    assert 0.010 <= coeff <= 0.022
    assert coeff == pytest.approx(ac.ambient_power_coeff, rel=0.01)


def test_steady_power_rises_with_ambient(defaults):
    th, ac, heat = defaults
    powers = [steady_on_power(th, ac, heat, t) for t in (28.0, 32.0, 36.0)]
    assert powers[0] < powers[1] < powers[2]


def test_parameter_validation():
    with pytest.raises(ValueError):
        ThermalParams(c_w=0.0)
    with pytest.raises(ValueError):
        ThermalParams(f_hm=1.5)
    with pytest.raises(ValueError):
        AcParams(gamma=0.5)
    with pytest.raises(ValueError):
        HeatInputs(q_w_dot=-1.0)


def test_heat_input_node_split():
    heat = HeatInputs(q_w_dot=200.0, q_a_dot=30.0, q_fixed=100.0,
                      fixed_water_fraction=0.75)
    assert heat.water_node_w == pytest.approx(275.0)
    assert heat.air_node_w == pytest.approx(55.0)
    assert heat.total_w == pytest.approx(330.0)


def test_cycle_energy_balance_single_case(defaults):
    """Over one settled cycle the pumped heat equals injection plus
    wall leak (node energies return to their cycle-start values)."""
    from acfleet.house import HouseParams, param_row
    from acfleet import _kernels as K

    params = HouseParams()
    p = param_row(params)
    s = np.zeros(K.N_STATE)
    s[K.S_TW] = s[K.S_TA] = s[K.S_T1] = params.setpoint
    s[K.S_T2] = T_AMB
    s[K.S_TMEAS] = params.setpoint
    K.house_trajectory(p, s, T_AMB, 1.0, 4 * 3600.0)
    events, _, status = K.house_trajectory(p, s, T_AMB, 1.0, 2 * 3600.0)
    assert status == K.OK
    ons = events[events[:, 1] == K.EV_ON]
    assert len(ons) >= 3
    pumped = ons[-1, 2] - ons[-2, 2]
    injected = ons[-1, 3] - ons[-2, 3]
    leaked = ons[-1, 4] - ons[-2, 4]
    assert pumped == pytest.approx(injected + leaked, rel=0.01)


def test_replace_keeps_frozen_semantics(defaults):
    th, _, _ = defaults
    assert replace(th, u_a=6.0).u_a == 6.0
    assert th.u_a == 5.0
