"""Single-house state machine: thermostat, lockout, sensor lag, inrush.

Wraps the thermal model with the switching logic a real window unit and
its data-acquisition harness impose: a deadband thermostat acting on the
lagged sensor reading, a compressor off->on lockout against
short-cycling, an optional minimum-on hold, and feasibility filtering of
externally commanded switches.

This module is the scalar reference implementation; fleets are stepped
through the array kernels, which the test suite holds to the same
behavior.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels as K
from . import thermal
from .errors import IntegrationError, ModelDivergenceError
from .thermal import (
    AcParams, HeatInputs, ThermalParams, ThermalState, ac_power,
    thermometer_reading,
)


class CompressorMode(enum.Enum):
    ON = "on"
    OFF = "off"
    LOCKED_OFF = "locked_off"
    LOCKED_ON = "locked_on"


@dataclass(frozen=True)
class Compressor:
    """Compressor switching state.

    ``remaining`` is the lockout countdown for LOCKED_OFF and the
    minimum-on countdown for LOCKED_ON; zero for the plain states.
    """
    mode: CompressorMode = CompressorMode.OFF
    remaining: float = 0.0

    def __post_init__(self):
        if self.mode in (CompressorMode.ON, CompressorMode.OFF):
            if self.remaining != 0.0:
                raise ValueError(f"{self.mode.value} carries no countdown")
        elif self.remaining <= 0.0:
            raise ValueError(f"{self.mode.value} requires remaining > 0")

    @property
    def is_on(self) -> bool:
        return self.mode in (CompressorMode.ON, CompressorMode.LOCKED_ON)

    @property
    def can_turn_on(self) -> bool:
        return self.mode == CompressorMode.OFF

    @property
    def can_turn_off(self) -> bool:
        return self.mode == CompressorMode.ON

    @staticmethod
    def make(on: bool, lockout_remaining: float = 0.0,
             min_on_remaining: float = 0.0) -> "Compressor":
        if on:
            if min_on_remaining > 0.0:
                return Compressor(CompressorMode.LOCKED_ON, min_on_remaining)
            return Compressor(CompressorMode.ON)
        if lockout_remaining > 0.0:
            return Compressor(CompressorMode.LOCKED_OFF, lockout_remaining)
        return Compressor(CompressorMode.OFF)


class CommandTarget(enum.Enum):
    ON = "on"
    OFF = "off"
    NO_CHANGE = "no_change"


class CommandSource(enum.Enum):
    THERMOSTAT = "thermostat"
    AGGREGATOR = "aggregator"


@dataclass(frozen=True)
class SwitchCommand:
    target: CommandTarget
    source: CommandSource = CommandSource.AGGREGATOR

    @staticmethod
    def no_change() -> "SwitchCommand":
        return _NO_CHANGE


_NO_CHANGE = SwitchCommand(CommandTarget.NO_CHANGE, CommandSource.AGGREGATOR)


@dataclass(frozen=True)
class HouseParams:
    thermal: ThermalParams = field(default_factory=ThermalParams)
    ac: AcParams = field(default_factory=AcParams)
    heat: HeatInputs = field(default_factory=HeatInputs)
    setpoint: float = 23.0
    deadband_halfwidth: float = 0.5
    sensor_lag_tau: float = 12.0
    min_on_duration: float = 0.0
    house_id: str = "house-0"

    def __post_init__(self):
        if self.deadband_halfwidth <= 0.0:
            raise ValueError("deadband_halfwidth must be > 0")
        if self.sensor_lag_tau < 0.0:
            raise ValueError("sensor_lag_tau must be >= 0")
        if self.min_on_duration < 0.0:
            raise ValueError("min_on_duration must be >= 0")

    @property
    def deadband(self) -> tuple[float, float]:
        return (self.setpoint - self.deadband_halfwidth,
                self.setpoint + self.deadband_halfwidth)


@dataclass(frozen=True)
class HouseState:
    thermal: ThermalState
    t_measured: float
    compressor: Compressor = field(default_factory=Compressor)
    time_in_state: float = 0.0
    cycle_phase_time: float = 0.0

    @staticmethod
    def at_rest(params: HouseParams, t_amb: float,
                temp: float | None = None) -> "HouseState":
        """House sitting at a uniform interior temperature, compressor off."""
        temp = params.setpoint if temp is None else temp
        ts = ThermalState.uniform(temp, t_amb)
        return HouseState(thermal=ts,
                          t_measured=thermometer_reading(ts, params.thermal))


@dataclass(frozen=True)
class InrushEvent:
    """Sub-timestep startup current spike, recorded for transformer
    stress accounting rather than energy accounting."""
    house_id: str
    peak_w: float
    duration_s: float


def plateau_power(params: HouseParams, t_amb: float) -> float:
    """Mid-cycle electrical plateau (W): the draw once the exchangers
    settle while the thermostat holds room air near the setpoint."""
    return thermal.operating_point_power(params.thermal, params.ac, t_amb,
                                         params.setpoint)


def thermostat_decision(state: HouseState,
                        params: HouseParams) -> SwitchCommand:
    """Deadband law on the lagged sensor reading.

    Returns an actionable command only: upper-edge heat with the
    compressor locked out yields NoChange (the temperature excursion
    beyond the deadband is the expected consequence).
    """
    t_minus, t_plus = params.deadband
    comp = state.compressor
    if state.t_measured >= t_plus and comp.can_turn_on:
        return SwitchCommand(CommandTarget.ON, CommandSource.THERMOSTAT)
    if state.t_measured <= t_minus and comp.is_on:
        return SwitchCommand(CommandTarget.OFF, CommandSource.THERMOSTAT)
    return SwitchCommand.no_change()


def apply_command(state: HouseState, cmd: SwitchCommand,
                  params: HouseParams) -> tuple[HouseState, bool]:
    """Apply a switch command if feasible.

    Redundant commands (On while on, Off while off) are accepted no-ops;
    they must not reset cycle phase or emit inrush.  On during lockout
    and Off during a minimum-on hold are rejected with the state
    untouched.
    """
    comp = state.compressor
    if cmd.target is CommandTarget.NO_CHANGE:
        return state, True
    if cmd.target is CommandTarget.ON:
        if comp.is_on:
            return state, True
        if comp.mode is CompressorMode.LOCKED_OFF:
            return state, False
        new_comp = Compressor.make(True,
                                   min_on_remaining=params.min_on_duration)
        return replace(state, compressor=new_comp, time_in_state=0.0,
                       cycle_phase_time=0.0), True
    # Off
    if not comp.is_on:
        return state, True
    if comp.mode is CompressorMode.LOCKED_ON:
        return state, False
    new_comp = Compressor.make(False,
                               lockout_remaining=params.ac.lockout_duration)
    return replace(state, compressor=new_comp, time_in_state=0.0), True


def _state_to_row(state: HouseState, params: HouseParams) -> np.ndarray:
    s = np.zeros(K.N_STATE)
    s[K.S_TW] = state.thermal.t_w
    s[K.S_TA] = state.thermal.t_a
    s[K.S_T1] = state.thermal.t_1
    s[K.S_T2] = state.thermal.t_2
    s[K.S_TMEAS] = state.t_measured
    comp = state.compressor
    s[K.S_ON] = 1.0 if comp.is_on else 0.0
    if comp.mode is CompressorMode.LOCKED_OFF:
        s[K.S_LOCK] = comp.remaining
    if comp.mode is CompressorMode.LOCKED_ON:
        s[K.S_MINON] = comp.remaining
    s[K.S_PHASE] = state.cycle_phase_time
    s[K.S_TIS] = state.time_in_state
    return s


def _row_to_state(s: np.ndarray, t_amb: float) -> HouseState:
    ts = ThermalState(t_w=s[K.S_TW], t_a=s[K.S_TA], t_1=s[K.S_T1],
                      t_2=s[K.S_T2], t_amb=t_amb)
    comp = Compressor.make(s[K.S_ON] != 0.0, lockout_remaining=s[K.S_LOCK],
                           min_on_remaining=s[K.S_MINON])
    return HouseState(thermal=ts, t_measured=s[K.S_TMEAS], compressor=comp,
                      time_in_state=s[K.S_TIS], cycle_phase_time=s[K.S_PHASE])


def param_row(params: HouseParams) -> np.ndarray:
    return thermal.build_param_row(
        params.thermal, params.ac, params.heat, setpoint=params.setpoint,
        deadband_halfwidth=params.deadband_halfwidth,
        sensor_lag_tau=params.sensor_lag_tau,
        min_on_duration=params.min_on_duration)


def step_house(state: HouseState, params: HouseParams, t_amb: float,
               dt: float = thermal.DT_PHYSICS) -> HouseState:
    """Advance one house by ``dt``: physics, then timers, then the
    thermostat, which decides on the post-step sensor reading."""
    if dt <= 0.0:
        raise ValueError("dt must be > 0")
    p = param_row(params)
    s = _state_to_row(state, params)
    status = K.step_house(p, s, t_amb, dt)
    if status == K.ERR_NONFINITE:
        raise IntegrationError(
            f"house {params.house_id}: non-finite state after step")
    if status == K.ERR_T1_BAND:
        raise ModelDivergenceError(
            f"house {params.house_id}: cold-exchanger temperature left "
            f"the plausible band")
    s[K.S_LOCK] = max(0.0, s[K.S_LOCK] - dt)
    s[K.S_MINON] = max(0.0, s[K.S_MINON] - dt)
    s[K.S_PHASE] += dt
    s[K.S_TIS] += dt
    new_state = _row_to_state(s, t_amb)
    decision = thermostat_decision(new_state, params)
    new_state, _ = apply_command(new_state, decision, params)
    return new_state


def instantaneous_power(
        state: HouseState,
        params: HouseParams) -> tuple[float, InrushEvent | None]:
    """Electrical draw (W) plus an inrush peak record on fresh starts.

    The inrush spike lasts a handful of AC line cycles, far below the
    physics step, so it is reported as an event (peak level, duration)
    for transformer stress accounting and contributes no energy.
    """
    comp = state.compressor
    if not comp.is_on:
        return 0.0, None
    power = ac_power(state.thermal, params.ac, True)
    event = None
    if state.cycle_phase_time < params.ac.inrush_duration:
        event = InrushEvent(
            house_id=params.house_id,
            peak_w=params.ac.inrush_multiple
            * plateau_power(params, state.thermal.t_amb),
            duration_s=params.ac.inrush_duration)
    return power, event
