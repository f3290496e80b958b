"""Extended ETP thermal model of one air-conditioned house.

Four lumped nodes exchange heat: the water/furnishings mass (T_w), the
room air (T_a), and the AC's cold and hot heat exchangers (T_1, T_2).

    C_w dT_w/dt = H_m (T_a - T_w) + Q_w
    C_a dT_a/dt = U_a (T_amb - T_a) + H_m (T_w - T_a) + Q_a + H_1 (T_1 - T_a)
    C_1 dT_1/dt = H_1 (T_a - T_1) - Qc
    C_2 dT_2/dt = H_2 (T_amb - T_2) + Qc + W_ac

The AC is a Carnot heat pump with extra losses: the pumped heat follows
the refrigerant vapor-pressure curve, Qc = A exp(-L/(R T_1)) / T_1 with
T_1 absolute, and the electrical draw is

    W_ac = gamma * Qc * (T_2 - T_1) / T_1 + W_fric.

The thermostat does not sense T_a directly; the reading mixes in the
slow water node, T_therm = (1 - f_Hm) T_a + f_Hm T_w, which is what
makes cycle durations much longer than the air time constant alone
would suggest.

All temperatures are stored in degC; Carnot expressions convert to
Kelvin internally.  Integration is fixed-step classical RK4 (default
1 s) so runs are bit-reproducible; deadband crossings are localized by
bisection to 10 ms in the cycle-analysis path.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import _kernels as K
from ._kernels import KELVIN, T1_MIN_C, T1_MAX_C
from .errors import (
    IntegrationError, ModelDivergenceError, NeverOffError, NeverOnError,
)

DT_PHYSICS = 1.0          # default physics step (s)
BISECT_TOL = 0.01         # deadband-crossing localization (s)

# Nameplate cooling of the modeled window unit: 5000 BTU/h.
RATED_COOLING_W = 1465.0


@dataclass(frozen=True)
class ThermalParams:
    """Lumped thermal network of one house.

    Heat capacities in J/degC, conductances in W/degC.  ``f_hm`` sets how
    strongly the thermostat reading couples to the water node (0 = pure
    air, 1 = pure water).
    """
    c_w: float = 4.0e5
    c_a: float = 2.0e4
    c_1: float = 4.5e3
    c_2: float = 6.0e3
    h_m: float = 250.0
    h_1: float = 100.0
    h_2: float = 120.0
    u_a: float = 5.0
    f_hm: float = 0.85

    def __post_init__(self):
        for name in ("c_w", "c_a", "c_1", "c_2", "h_m", "h_1", "h_2", "u_a"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be strictly positive")
        if not 0.0 <= self.f_hm <= 1.0:
            raise ValueError("f_hm must lie in [0, 1]")


@dataclass(frozen=True)
class AcParams:
    """Lossy-Carnot air conditioner.

    ``a`` (W*K) absorbs the refrigerant-flow prefactor; ``l_over_r`` (K)
    is the latent heat over the gas constant for the vapor-pressure
    exponential (default fitted to R410A near room temperature).
    ``ambient_power_coeff`` (1/degC) records the calibrated fractional
    rise of steady on-power per degC of outdoor temperature; it is
    descriptive, not a model input.
    """
    a: float = 2.0797e9
    l_over_r: float = 2400.0
    gamma: float = 1.5
    w_fric: float = 150.0
    inrush_multiple: float = 5.5
    inrush_duration: float = 0.15
    lockout_duration: float = 180.0
    ambient_power_coeff: float = 0.0117

    def __post_init__(self):
        if self.a <= 0.0 or self.l_over_r <= 0.0:
            raise ValueError("a and l_over_r must be strictly positive")
        if self.gamma < 1.0:
            raise ValueError("gamma must be >= 1")
        if self.w_fric < 0.0:
            raise ValueError("w_fric must be >= 0")
        if self.inrush_multiple < 1.0:
            raise ValueError("inrush_multiple must be >= 1")
        if self.lockout_duration < 0.0:
            raise ValueError("lockout_duration must be >= 0")


@dataclass(frozen=True)
class HeatInputs:
    """Heat injected into the house (W).

    ``q_w_dot`` is the programmable water-heater injection, ``q_a_dot``
    direct air injection (negligible in practice, default 0), and
    ``q_fixed`` the constant fan+pump load.  ``fixed_water_fraction``
    sets how much of the fixed load lands on the water node (the rest
    goes to air); duct and pump surfaces sit in the water loop, so it
    defaults to all-water.
    """
    q_w_dot: float = 200.0
    q_a_dot: float = 0.0
    q_fixed: float = 125.0
    fixed_water_fraction: float = 1.0

    def __post_init__(self):
        if min(self.q_w_dot, self.q_a_dot, self.q_fixed) < 0.0:
            raise ValueError("heat inputs must be >= 0")
        if not 0.0 <= self.fixed_water_fraction <= 1.0:
            raise ValueError("fixed_water_fraction must lie in [0, 1]")

    @property
    def water_node_w(self) -> float:
        return self.q_w_dot + self.q_fixed * self.fixed_water_fraction

    @property
    def air_node_w(self) -> float:
        return self.q_a_dot + self.q_fixed * (1.0 - self.fixed_water_fraction)

    @property
    def total_w(self) -> float:
        return self.q_w_dot + self.q_a_dot + self.q_fixed


@dataclass(frozen=True)
class ThermalState:
    """Node temperatures plus the ambient they are exposed to (degC)."""
    t_w: float
    t_a: float
    t_1: float
    t_2: float
    t_amb: float

    @classmethod
    def uniform(cls, temp: float, t_amb: float) -> "ThermalState":
        return cls(t_w=temp, t_a=temp, t_1=temp, t_2=t_amb, t_amb=t_amb)


def carnot_cooling_rate(state: ThermalState, ac: AcParams) -> float:
    """Heat pumped out of the cold heat exchanger (W) while running.

    Raises ModelDivergenceError when T_1 has left the plausible band,
    which is the signature of an integration blow-up upstream.
    """
    if not T1_MIN_C <= state.t_1 <= T1_MAX_C:
        raise ModelDivergenceError(
            f"cold-exchanger temperature {state.t_1:.2f} degC outside "
            f"[{T1_MIN_C:.0f}, {T1_MAX_C:.0f}]")
    return K.cooling_rate(state.t_1, ac.a, ac.l_over_r)


def ac_power(state: ThermalState, ac: AcParams, on: bool) -> float:
    """Electrical draw of the AC (W); zero when off."""
    if not on:
        return 0.0
    qc = carnot_cooling_rate(state, ac)
    return K.electrical_power(state.t_1, state.t_2, qc, ac.gamma, ac.w_fric)


def thermometer_reading(state: ThermalState, params: ThermalParams) -> float:
    """Temperature the thermostat sensor sees before any lag (degC)."""
    return (1.0 - params.f_hm) * state.t_a + params.f_hm * state.t_w


# ------------------------------------------------------------ row plumbing

def build_param_row(params: ThermalParams, ac: AcParams, inputs: HeatInputs,
                    setpoint: float = 0.0, deadband_halfwidth: float = 0.0,
                    sensor_lag_tau: float = 0.0,
                    min_on_duration: float = 0.0) -> np.ndarray:
    """Flatten model parameters into the kernel row layout."""
    row = np.zeros(K.N_PARAMS)
    row[K.P_CW] = params.c_w
    row[K.P_CA] = params.c_a
    row[K.P_C1] = params.c_1
    row[K.P_C2] = params.c_2
    row[K.P_HM] = params.h_m
    row[K.P_H1] = params.h_1
    row[K.P_H2] = params.h_2
    row[K.P_UA] = params.u_a
    row[K.P_FHM] = params.f_hm
    row[K.P_A] = ac.a
    row[K.P_LR] = ac.l_over_r
    row[K.P_GAMMA] = ac.gamma
    row[K.P_WFRIC] = ac.w_fric
    row[K.P_QW] = inputs.q_w_dot
    row[K.P_QA] = inputs.q_a_dot
    row[K.P_QFIX] = inputs.q_fixed
    row[K.P_FIXWF] = inputs.fixed_water_fraction
    row[K.P_SETPOINT] = setpoint
    row[K.P_DBHALF] = deadband_halfwidth
    row[K.P_TAU] = sensor_lag_tau
    row[K.P_LOCKOUT] = ac.lockout_duration
    row[K.P_MINON] = min_on_duration
    row[K.P_INMULT] = ac.inrush_multiple
    row[K.P_INDUR] = ac.inrush_duration
    return row


def step_thermal(state: ThermalState, params: ThermalParams, ac: AcParams,
                 inputs: HeatInputs, on: bool,
                 dt: float = DT_PHYSICS) -> ThermalState:
    """Advance the four node temperatures by one RK4 step of length dt."""
    if dt <= 0.0:
        raise ValueError("dt must be > 0")
    p = build_param_row(params, ac, inputs)
    s = np.zeros(K.N_STATE)
    s[K.S_TW] = state.t_w
    s[K.S_TA] = state.t_a
    s[K.S_T1] = state.t_1
    s[K.S_T2] = state.t_2
    s[K.S_ON] = 1.0 if on else 0.0
    status = K.step_house(p, s, state.t_amb, dt)
    if status == K.ERR_NONFINITE:
        raise IntegrationError("thermal step produced a non-finite state")
    if status == K.ERR_T1_BAND:
        raise ModelDivergenceError(
            "cold-exchanger temperature left the plausible band")
    return replace(state, t_w=s[K.S_TW], t_a=s[K.S_TA], t_1=s[K.S_T1],
                   t_2=s[K.S_T2])


# ------------------------------------------------------- analytic anchors

def equilibrium_state(params: ThermalParams, ac: AcParams,
                      inputs: HeatInputs, on: bool,
                      t_amb: float) -> ThermalState:
    """Fixed point of the heat-flow equations with the compressor held
    on or off and the thermostat ignored.

    The off case is linear.  The on case reduces to a scalar root in
    T_1: eliminating T_w and T_a leaves H_1-coupled heat arriving at the
    cold exchanger as a strictly decreasing function of T_1 while the
    pumped heat is strictly increasing, so bisection on the plausible
    band finds the unique balance point.
    """
    qw = inputs.water_node_w
    qa = inputs.air_node_w
    if not on:
        t_a = t_amb + (qw + qa) / params.u_a
        t_w = t_a + qw / params.h_m
        return ThermalState(t_w=t_w, t_a=t_a, t_1=t_a, t_2=t_amb,
                            t_amb=t_amb)

    def arriving_minus_pumped(t_1: float) -> float:
        arriving = params.h_1 * (params.u_a * (t_amb - t_1) + qw + qa) \
            / (params.u_a + params.h_1)
        return arriving - K.cooling_rate(t_1, ac.a, ac.l_over_r)

    lo, hi = T1_MIN_C, T1_MAX_C
    if arriving_minus_pumped(lo) < 0.0 or arriving_minus_pumped(hi) > 0.0:
        raise ModelDivergenceError(
            "no on-state equilibrium inside the plausible T_1 band")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if arriving_minus_pumped(mid) > 0.0:
            lo = mid
        else:
            hi = mid
    t_1 = 0.5 * (lo + hi)
    t_a = (params.u_a * t_amb + qw + qa + params.h_1 * t_1) \
        / (params.u_a + params.h_1)
    t_w = t_a + qw / params.h_m
    qc = K.cooling_rate(t_1, ac.a, ac.l_over_r)
    t_1k = t_1 + KELVIN
    denom = params.h_2 - ac.gamma * qc / t_1k
    if denom <= 0.0:
        raise ModelDivergenceError(
            "hot exchanger cannot reject the pumped heat")
    t_2 = (params.h_2 * t_amb + qc * (1.0 - ac.gamma * t_1 / t_1k)
           + ac.w_fric) / denom
    return ThermalState(t_w=t_w, t_a=t_a, t_1=t_1, t_2=t_2, t_amb=t_amb)


def steady_on_power(params: ThermalParams, ac: AcParams, inputs: HeatInputs,
                    t_amb: float) -> float:
    """Electrical draw (W) at the run-forever equilibrium."""
    eq = equilibrium_state(params, ac, inputs, True, t_amb)
    return ac_power(eq, ac, True)


def operating_point_power(params: ThermalParams, ac: AcParams, t_amb: float,
                          operating_air_temp: float) -> float:
    """Electrical plateau (W) with room air held at ``operating_air_temp``.

    Unlike the run-forever equilibrium, this is the level a cycling house
    actually plateaus at: the thermostat keeps the air near the setpoint
    while T_1 and T_2 settle within a couple of minutes of turn-on.
    """
    def imbalance(t_1: float) -> float:
        return params.h_1 * (operating_air_temp - t_1) \
            - K.cooling_rate(t_1, ac.a, ac.l_over_r)

    lo, hi = T1_MIN_C, min(T1_MAX_C, operating_air_temp)
    if imbalance(lo) < 0.0:
        raise ModelDivergenceError("no cold-exchanger balance point")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if imbalance(mid) > 0.0:
            lo = mid
        else:
            hi = mid
    t_1 = 0.5 * (lo + hi)
    qc = K.cooling_rate(t_1, ac.a, ac.l_over_r)
    t_1k = t_1 + KELVIN
    denom = params.h_2 - ac.gamma * qc / t_1k
    if denom <= 0.0:
        raise ModelDivergenceError(
            "hot exchanger cannot reject the pumped heat")
    t_2 = (params.h_2 * t_amb + qc * (1.0 - ac.gamma * t_1 / t_1k)
           + ac.w_fric) / denom
    return K.electrical_power(t_1, t_2, qc, ac.gamma, ac.w_fric)


def cycle_durations(params: ThermalParams, ac: AcParams, inputs: HeatInputs,
                    deadband: tuple[float, float], t_amb: float,
                    sensor_lag_tau: float = 0.0, dt: float = DT_PHYSICS,
                    max_cycles: int = 400,
                    rel_tol: float = 0.005) -> tuple[float, float]:
    """Steady limit-cycle on and off durations (s) for one house.

    Integrates from mid-deadband with the compressor off until two
    consecutive cycles agree within ``rel_tol`` on both durations.
    Infeasible regimes raise before any integration: injection at or
    above cooling capacity -> NeverOffError, injection too weak to lift
    the house to the upper deadband edge -> NeverOnError.
    """
    t_minus, t_plus = deadband
    if not t_minus < t_plus:
        raise ValueError("deadband must satisfy T_minus < T_plus")
    setpoint = 0.5 * (t_minus + t_plus)
    halfwidth = 0.5 * (t_plus - t_minus)

    off_eq = equilibrium_state(params, ac, inputs, False, t_amb)
    if thermometer_reading(off_eq, params) < t_plus:
        raise NeverOnError(
            f"off-state thermometer settles at "
            f"{thermometer_reading(off_eq, params):.2f} degC, below the "
            f"upper deadband edge {t_plus:.2f} degC")
    on_eq = equilibrium_state(params, ac, inputs, True, t_amb)
    if thermometer_reading(on_eq, params) > t_minus:
        raise NeverOffError(
            f"on-state thermometer settles at "
            f"{thermometer_reading(on_eq, params):.2f} degC, above the "
            f"lower deadband edge {t_minus:.2f} degC")

    p = build_param_row(params, ac, inputs, setpoint=setpoint,
                        deadband_halfwidth=halfwidth,
                        sensor_lag_tau=sensor_lag_tau)
    # cycle analysis wants the pure thermal limit cycle; lockout would
    # only matter when it exceeds the natural off-time
    p[K.P_LOCKOUT] = 0.0
    s = np.zeros(K.N_STATE)
    s[K.S_TW] = s[K.S_TA] = s[K.S_T1] = setpoint
    s[K.S_T2] = t_amb
    s[K.S_TMEAS] = thermometer_reading(
        ThermalState(setpoint, setpoint, setpoint, t_amb, t_amb), params)

    chunk_s = 200000.0
    total_limit = 40 * chunk_s
    on_times: list[float] = []
    off_times: list[float] = []
    last_on_at: float | None = None
    last_off_at: float | None = None
    elapsed = 0.0
    while elapsed < total_limit:
        events, _, status = K.house_trajectory(
            p, s, t_amb, dt, chunk_s, max_events=4 * max_cycles,
            bisect_tol=BISECT_TOL)
        if status != K.OK:
            raise IntegrationError("limit-cycle integration diverged")
        for t_ev, kind, _, _, _ in events:
            t_abs = elapsed + t_ev
            if kind == K.EV_ON:
                if last_off_at is not None:
                    off_times.append(t_abs - last_off_at)
                last_on_at = t_abs
            else:
                if last_on_at is not None:
                    on_times.append(t_abs - last_on_at)
                last_off_at = t_abs
            if len(on_times) >= 2 and len(off_times) >= 2:
                d_on = abs(on_times[-1] - on_times[-2]) / on_times[-1]
                d_off = abs(off_times[-1] - off_times[-2]) / off_times[-1]
                if d_on < rel_tol and d_off < rel_tol:
                    return on_times[-1], off_times[-1]
        if len(on_times) + len(off_times) >= 2 * max_cycles:
            break
        elapsed += chunk_s
    raise IntegrationError(
        f"limit cycle did not converge within {max_cycles} cycles "
        f"({len(on_times)} on-periods observed)")


def duty_cycle(on_time: float, off_time: float) -> float:
    return on_time / (on_time + off_time)


def ambient_sensitivity(params: ThermalParams, ac: AcParams,
                        inputs: HeatInputs, t_amb: float,
                        delta: float = 1.0) -> float:
    """Fractional steady on-power rise per degC of ambient (1/degC)."""
    lo = steady_on_power(params, ac, inputs, t_amb - 0.5 * delta)
    hi = steady_on_power(params, ac, inputs, t_amb + 0.5 * delta)
    mid = steady_on_power(params, ac, inputs, t_amb)
    return (hi - lo) / (delta * mid)


def design_prefactor(params: ThermalParams, ac: AcParams,
                     operating_air_temp: float = 23.0,
                     rated_w: float = RATED_COOLING_W) -> float:
    """Pumped-heat prefactor A that delivers ``rated_w`` of cooling when
    the room air sits at ``operating_air_temp``.

    At the operating point the cold exchanger settles where the heat
    arriving from the air equals the pumped heat, T_1 = T_a - rated/H_1;
    inverting the vapor-pressure law at that T_1 fixes A.
    """
    t_1 = operating_air_temp - rated_w / params.h_1
    t_1k = t_1 + KELVIN
    return rated_w * t_1k * math.exp(ac.l_over_r / t_1k)
