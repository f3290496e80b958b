"""Heterogeneous house populations stepped in lockstep.

Houses are generated around a nominal parameter set with independent
uniform variation per scalar parameter, then scaled so the fleet's
average on-state draw hits a target (the nominal calibration describes
a small window unit; the target rescales the extensive parameters,
which leaves every temperature trajectory and duty cycle unchanged and
multiplies power).

The fleet keeps its state in the flat kernel arrays; per-house dataclass
views are materialized only on request.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels as K
from . import thermal
from .errors import AcFleetError, IntegrationError, ModelDivergenceError
from .house import (
    CommandTarget, HouseParams, HouseState, InrushEvent, SwitchCommand,
    param_row, _row_to_state,
)

# reference ambient at which the on-power scale anchor is measured (degC)
SCALE_ANCHOR_T_AMB = 32.2

# thermal/AC scalar fields subject to heterogeneity.  l_over_r is a
# refrigerant property shared by every unit and ambient_power_coeff is a
# descriptive calibration record, so neither is varied.
_VARIED_THERMAL = ("c_w", "c_a", "c_1", "c_2", "h_m", "h_1", "h_2", "u_a",
                   "f_hm")
_VARIED_AC = ("a", "gamma", "w_fric", "inrush_multiple", "inrush_duration",
              "lockout_duration")
_VARIED_HEAT = ("q_w_dot", "q_a_dot", "q_fixed")

# extensive fields: multiplying these by one common factor scales every
# heat flow and capacity together, preserving temperatures exactly
_EXTENSIVE_THERMAL = ("c_w", "c_a", "c_1", "c_2", "h_m", "h_1", "h_2", "u_a")
_EXTENSIVE_AC = ("a", "w_fric")
_EXTENSIVE_HEAT = ("q_w_dot", "q_a_dot", "q_fixed")


class SyncTimeoutError(AcFleetError):
    """Forced synchronization did not converge within the horizon."""


@dataclass(frozen=True)
class FleetSpec:
    n_houses: int
    nominal: HouseParams = field(default_factory=HouseParams)
    heterogeneity_fraction: float = 0.20
    rng_seed: int = 0
    avg_on_power_target: float = 2600.0

    def __post_init__(self):
        if self.n_houses < 1:
            raise ValueError("n_houses must be >= 1")
        if not 0.0 <= self.heterogeneity_fraction < 1.0:
            raise ValueError("heterogeneity_fraction must lie in [0, 1)")


_cycle_cache: dict[tuple, "CycleTable"] = {}


@dataclass(frozen=True)
class CycleTable:
    """One settled limit cycle of a house, sampled at 1 s.

    ``samples`` columns: t_w, t_a, t_1, t_2, t_meas, on, time_in_state.
    Time runs from one on-switch to the next, so row index is cycle
    phase.  Used for occupancy-faithful fleet seeding and as the
    on-power scale anchor.
    """
    samples: np.ndarray
    on_time: float
    off_time: float
    mean_on_power: float

    @property
    def period(self) -> float:
        return self.on_time + self.off_time


def cycle_table(params: HouseParams,
                t_amb: float = SCALE_ANCHOR_T_AMB) -> CycleTable:
    """Settle one house and capture a full limit cycle (cached)."""
    key = (params.thermal, params.ac, params.heat, params.setpoint,
           params.deadband_halfwidth, params.sensor_lag_tau, t_amb)
    if key in _cycle_cache:
        return _cycle_cache[key]
    p = param_row(params)
    s = np.zeros(K.N_STATE)
    s[K.S_TW] = s[K.S_TA] = s[K.S_T1] = params.setpoint
    s[K.S_T2] = t_amb
    s[K.S_TMEAS] = params.setpoint
    _, _, status = K.house_trajectory(p, s, t_amb, 1.0, 4 * 3600.0)
    events, samples, status2 = K.house_trajectory(
        p, s, t_amb, 1.0, 2 * 3600.0, record_dt=1.0)
    if status or status2:
        raise IntegrationError("house diverged while settling its "
                               "limit cycle")
    on_starts = events[events[:, 1] == K.EV_ON, 0]
    on_ends = events[events[:, 1] == K.EV_OFF, 0]
    if len(on_starts) < 2:
        raise IntegrationError("house never reached a limit cycle")
    t0, t1 = on_starts[-2], on_starts[-1]
    off_at = on_ends[(on_ends > t0) & (on_ends < t1)]
    if len(off_at) != 1:
        raise IntegrationError("malformed limit cycle")
    sel = (samples[:, 0] >= t0) & (samples[:, 0] < t1)
    seg = samples[sel]
    rel_t = seg[:, 0] - t0
    on = seg[:, 6]
    time_in_state = np.where(on == 1.0, rel_t, rel_t - (off_at[0] - t0))
    table = np.column_stack([seg[:, 1:7], time_in_state])
    on_rows = table[:, 5] == 1.0
    t1c = table[on_rows, 2]
    t2c = table[on_rows, 3]
    t1k = t1c + K.KELVIN
    qc = params.ac.a * np.exp(-params.ac.l_over_r / t1k) / t1k
    w = params.ac.gamma * qc * (t2c - t1c) / t1k + params.ac.w_fric
    result = CycleTable(samples=table,
                        on_time=float(off_at[0] - t0),
                        off_time=float(t1 - off_at[0]),
                        mean_on_power=float(w.mean()))
    _cycle_cache[key] = result
    return result


def mean_on_power(params: HouseParams, t_amb: float = SCALE_ANCHOR_T_AMB,
                  ) -> float:
    """Time-averaged electrical draw over the on-phase of the settled
    limit cycle (W).  This anchors fleet power scaling."""
    return cycle_table(params, t_amb).mean_on_power


def _scaled(params: HouseParams, factor: float) -> HouseParams:
    th = replace(params.thermal, **{f: getattr(params.thermal, f) * factor
                                    for f in _EXTENSIVE_THERMAL})
    ac = replace(params.ac, **{f: getattr(params.ac, f) * factor
                               for f in _EXTENSIVE_AC})
    heat = replace(params.heat, **{f: getattr(params.heat, f) * factor
                                   for f in _EXTENSIVE_HEAT})
    return replace(params, thermal=th, ac=ac, heat=heat)


def _perturbed(params: HouseParams, h: float,
               rng: np.random.Generator) -> HouseParams:
    """One heterogeneous draw: every varied scalar gets an independent
    uniform factor in [1-h, 1+h].  Draw order is fixed by the field
    tuples above; changing it would silently reshuffle every seeded
    fleet."""
    def factors(n):
        return rng.uniform(1.0 - h, 1.0 + h, n)

    th_f = factors(len(_VARIED_THERMAL))
    ac_f = factors(len(_VARIED_AC))
    heat_f = factors(len(_VARIED_HEAT))
    th_kw = {f: getattr(params.thermal, f) * th_f[i]
             for i, f in enumerate(_VARIED_THERMAL)}
    th_kw["f_hm"] = min(1.0, max(0.0, th_kw["f_hm"]))
    ac_kw = {f: getattr(params.ac, f) * ac_f[i]
             for i, f in enumerate(_VARIED_AC)}
    heat_kw = {f: getattr(params.heat, f) * heat_f[i]
               for i, f in enumerate(_VARIED_HEAT)}
    return replace(params,
                   thermal=replace(params.thermal, **th_kw),
                   ac=replace(params.ac, **ac_kw),
                   heat=replace(params.heat, **heat_kw))


def house_rngs(spec: FleetSpec) -> list[np.random.Generator]:
    """Independent per-house RNG streams.

    Streams are spawned by house index from the master seed, so growing
    the fleet appends houses without reshuffling existing ones.
    """
    root = np.random.SeedSequence(spec.rng_seed)
    return [np.random.default_rng(child) for child in root.spawn(spec.n_houses)]


def generate_fleet(spec: FleetSpec) -> list[HouseParams]:
    """Draw the heterogeneous, power-scaled house population."""
    anchor = mean_on_power(spec.nominal)
    factor = spec.avg_on_power_target / anchor
    scaled = _scaled(spec.nominal, factor)
    width = max(3, len(str(spec.n_houses - 1)))
    houses = []
    for i, rng in enumerate(house_rngs(spec)):
        hp = _perturbed(scaled, spec.heterogeneity_fraction, rng)
        houses.append(replace(hp, house_id=f"h{i:0{width}d}"))
    return houses


@dataclass
class TelemetryFrame:
    """Everything observable about one control interval.

    Arrays are per-house in fleet order.  ``power_w`` is the draw
    averaged over the interval; ``on``/``lockout_remaining`` etc. are
    end-of-interval snapshots.
    """
    t: float
    dt: float
    t_amb: float
    house_ids: list[str]
    power_w: np.ndarray
    t_measured: np.ndarray
    on: np.ndarray
    lockout_remaining: np.ndarray
    min_on_remaining: np.ndarray
    cmd_accepted: np.ndarray
    went_on: np.ndarray
    inrush_events: list[InrushEvent]

    @property
    def aggregate_power_w(self) -> float:
        return float(self.power_w.sum())

    @property
    def counts(self) -> tuple[int, int, int]:
        """(n_on, n_off, n_locked); always partitions the fleet."""
        n_on = int(self.on.sum())
        n_locked = int(((~self.on) & (self.lockout_remaining > 0.0)).sum())
        return n_on, len(self.house_ids) - n_on - n_locked, n_locked


class Fleet:
    """A population of houses stepped in lockstep over kernel arrays."""

    def __init__(self, houses: list[HouseParams], states: list[HouseState],
                 n_remote: int = 0):
        if len(houses) != len(states):
            raise ValueError("houses and states must align")
        if not 0 <= n_remote <= len(houses):
            raise ValueError("n_remote out of range")
        self.houses = list(houses)
        self.house_ids = [h.house_id for h in self.houses]
        self.n = len(self.houses)
        self.P = np.stack([param_row(h) for h in self.houses])
        self.S = np.zeros((self.n, K.N_STATE))
        for i, (h, st) in enumerate(zip(self.houses, states)):
            self._load_state(i, st)
        self.sim_time = 0.0
        # remote-plant partition tag: controllers never see it; analysis
        # and the wire boundary do
        self.remote_mask = np.zeros(self.n, dtype=bool)
        self.remote_mask[:n_remote] = True
        self._plateau_cache: tuple[float, np.ndarray] | None = None
        # aggregate power trace recorded while pre-settling (see build)
        self.presettle_power: np.ndarray = np.empty(0)
        self.presettle_dt: float = 0.0

    # -------------------------------------------------- construction

    @classmethod
    def build(cls, spec: FleetSpec, t_amb: float, n_remote: int = 0,
              presettle_s: float = 10800.0) -> "Fleet":
        """Generate the population in its statistical steady state.

        Each house draws a uniform phase along the nominal settled limit
        cycle and starts from the state at that phase (temperatures,
        compressor flag, timers); a free pre-settle run then lets every
        house relax into its own steady band (the water node needs a few
        of its ~25 min time constants).  ``sim_time`` starts at zero
        after pre-settling.  Fully deterministic given ``spec.rng_seed``.
        """
        houses = generate_fleet(spec)
        table = cycle_table(spec.nominal, SCALE_ANCHOR_T_AMB)
        rows = table.samples
        fleet = cls(houses,
                    [HouseState.at_rest(h, t_amb) for h in houses],
                    n_remote=n_remote)
        for i, (hp, rng) in enumerate(zip(houses, house_rngs(spec))):
            # skip past the draws consumed by parameter generation
            rng.uniform(size=len(_VARIED_THERMAL) + len(_VARIED_AC)
                        + len(_VARIED_HEAT))
            row = rows[int(rng.uniform() * len(rows)) % len(rows)]
            s = fleet.S[i]
            s[K.S_TW], s[K.S_TA], s[K.S_T1] = row[0], row[1], row[2]
            s[K.S_T2] = t_amb + (row[3] - SCALE_ANCHOR_T_AMB)
            s[K.S_TMEAS] = row[4]
            on = row[5] != 0.0
            tis = row[6]
            s[K.S_ON] = 1.0 if on else 0.0
            s[K.S_LOCK] = 0.0 if on else max(
                0.0, hp.ac.lockout_duration - tis)
            s[K.S_MINON] = 0.0
            s[K.S_PHASE] = tis if on else table.on_time + tis
            s[K.S_TIS] = tis
        if presettle_s > 0.0:
            # chunked so the aggregate trace survives; the runner wants
            # an uncontrolled window spanning several natural cycles to
            # estimate baseline power, and the pre-settle run is free
            chunk = 60.0
            n_chunks = int(round(presettle_s / chunk))
            samples = np.empty(n_chunks)
            n_sub = int(round(chunk / thermal.DT_PHYSICS))
            for k in range(n_chunks):
                power, _, status = K.step_fleet_arrays(
                    fleet.P, fleet.S, t_amb, thermal.DT_PHYSICS, n_sub)
                if status != K.OK:
                    raise IntegrationError(
                        fleet._blame("fleet diverged during pre-settling"))
                samples[k] = power.sum()
            fleet.presettle_power = samples
            fleet.presettle_dt = chunk
        return fleet

    def _load_state(self, i: int, st: HouseState) -> None:
        from .house import _state_to_row
        self.S[i] = _state_to_row(st, self.houses[i])

    def state_of(self, i: int, t_amb: float) -> HouseState:
        return _row_to_state(self.S[i], t_amb)

    def clone_state(self) -> np.ndarray:
        return self.S.copy()

    def restore_state(self, S: np.ndarray, sim_time: float | None = None):
        self.S[...] = S
        if sim_time is not None:
            self.sim_time = sim_time

    # ------------------------------------------------------ stepping

    def plateau_powers(self, t_amb: float) -> np.ndarray:
        """Per-house mid-cycle plateau draw (W), cached per ambient."""
        if self._plateau_cache is not None \
                and self._plateau_cache[0] == t_amb:
            return self._plateau_cache[1]
        vals = np.array([
            thermal.operating_point_power(h.thermal, h.ac, t_amb, h.setpoint)
            for h in self.houses])
        self._plateau_cache = (t_amb, vals)
        return vals

    def apply_commands(self, targets: np.ndarray) -> tuple[np.ndarray,
                                                           np.ndarray]:
        """Feasibility-filter and apply switch targets.

        ``targets`` is int8 per house: +1 on, -1 off, 0 leave alone.
        Returns (accepted, switched_on) boolean arrays.  Semantics match
        the scalar house rules: On during lockout and Off during a
        minimum-on hold are rejected; redundant commands are accepted
        no-ops that emit no inrush and reset no phase.
        """
        S = self.S
        on = S[:, K.S_ON] != 0.0
        want_on = targets > 0
        want_off = targets < 0
        ok_on = want_on & ~on & (S[:, K.S_LOCK] <= 0.0)
        ok_off = want_off & on & (S[:, K.S_MINON] <= 0.0)
        accepted = (~(want_on | want_off)) | (want_on & on) \
            | (want_off & ~on) | ok_on | ok_off
        if ok_on.any():
            S[ok_on, K.S_ON] = 1.0
            S[ok_on, K.S_MINON] = self.P[ok_on, K.P_MINON]
            S[ok_on, K.S_PHASE] = 0.0
            S[ok_on, K.S_TIS] = 0.0
        if ok_off.any():
            S[ok_off, K.S_ON] = 0.0
            S[ok_off, K.S_LOCK] = self.P[ok_off, K.P_LOCKOUT]
            S[ok_off, K.S_TIS] = 0.0
        return accepted, ok_on

    def snapshot(self, t_amb: float) -> TelemetryFrame:
        """Instantaneous telemetry without advancing time (dt = 0).

        Power is the plateau draw for houses currently on; used to
        prime a control loop before its first physics step.
        """
        on = self.S[:, K.S_ON] != 0.0
        power = np.where(on, self.plateau_powers(t_amb), 0.0)
        n = self.n
        return TelemetryFrame(
            t=self.sim_time, dt=0.0, t_amb=t_amb,
            house_ids=self.house_ids,
            power_w=power,
            t_measured=self.S[:, K.S_TMEAS].copy(),
            on=on,
            lockout_remaining=self.S[:, K.S_LOCK].copy(),
            min_on_remaining=self.S[:, K.S_MINON].copy(),
            cmd_accepted=np.ones(n, dtype=bool),
            went_on=np.zeros(n, dtype=bool),
            inrush_events=[])

    def step(self, t_amb: float, dt_control: float,
             targets: np.ndarray | list[SwitchCommand] | None = None,
             dt_physics: float = thermal.DT_PHYSICS) -> TelemetryFrame:
        """Apply commands, then advance all houses one control interval.

        The interval is split into whole physics substeps; thermostat
        decisions happen at substep boundaries inside the kernel.
        """
        if targets is None:
            tv = np.zeros(self.n, dtype=np.int8)
        elif isinstance(targets, np.ndarray):
            tv = targets.astype(np.int8)
        else:
            if len(targets) != self.n:
                raise ValueError("one command per house required")
            tv = np.array([_target_int(c) for c in targets], dtype=np.int8)
        n_sub = int(round(dt_control / dt_physics))
        if n_sub < 1 or abs(n_sub * dt_physics - dt_control) > 1e-9:
            raise ValueError("dt_control must be a whole number of "
                             "physics steps")
        accepted, cmd_on = self.apply_commands(tv)
        power, kernel_on, status = K.step_fleet_arrays(
            self.P, self.S, t_amb, dt_physics, n_sub)
        if status == K.ERR_NONFINITE:
            raise IntegrationError(self._blame("non-finite state"))
        if status == K.ERR_T1_BAND:
            raise ModelDivergenceError(
                self._blame("cold-exchanger temperature out of band"))
        went_on = cmd_on | (kernel_on != 0)
        self.sim_time += dt_control
        events = []
        if went_on.any():
            plateau = self.plateau_powers(t_amb)
            for i in np.flatnonzero(went_on):
                h = self.houses[i]
                events.append(InrushEvent(
                    house_id=h.house_id,
                    peak_w=h.ac.inrush_multiple * plateau[i],
                    duration_s=h.ac.inrush_duration))
        return TelemetryFrame(
            t=self.sim_time, dt=dt_control, t_amb=t_amb,
            house_ids=self.house_ids,
            power_w=power,
            t_measured=self.S[:, K.S_TMEAS].copy(),
            on=self.S[:, K.S_ON] != 0.0,
            lockout_remaining=self.S[:, K.S_LOCK].copy(),
            min_on_remaining=self.S[:, K.S_MINON].copy(),
            cmd_accepted=accepted,
            went_on=went_on,
            inrush_events=events)

    def _blame(self, what: str) -> str:
        bad = ~np.isfinite(self.S[:, :K.S_TMEAS + 1]).all(axis=1)
        bad |= (self.S[:, K.S_T1] < K.T1_MIN_C) \
            | (self.S[:, K.S_T1] > K.T1_MAX_C)
        ids = [self.house_ids[i] for i in np.flatnonzero(bad)[:5]]
        return f"{what} (houses: {', '.join(ids) if ids else 'unknown'})"

    # ------------------------------------------- forced synchronization

    def natural_rise_time(self, t_amb: float) -> float:
        """Slowest house's transit time across the deadband with the
        compressor off (s); sets how long forced alignment must hold."""
        P = self.P
        inj = P[:, K.P_QW] + P[:, K.P_QA] + P[:, K.P_QFIX]
        leak = P[:, K.P_UA] * (t_amb - P[:, K.P_SETPOINT])
        rate = (inj + np.maximum(leak, 0.0)) / (P[:, K.P_CW] + P[:, K.P_CA])
        width = 2.0 * P[:, K.P_DBHALF]
        return float(np.max(width / np.maximum(rate, 1e-12)))


def _target_int(cmd: SwitchCommand) -> int:
    if cmd.target is CommandTarget.ON:
        return 1
    if cmd.target is CommandTarget.OFF:
        return -1
    return 0


def force_synchronize(fleet: Fleet, t_amb: float, direction: str,
                      threshold: float = 0.95, dt_control: float = 2.0,
                      hold_s: float | None = None,
                      horizon_s: float = 14400.0) -> float:
    """Drive the whole fleet toward one compressor state and hold it
    there until the population's phases align.

    ``direction`` is "on" or "off".  Every control interval each house
    is commanded toward the direction; the thermostat safety still acts,
    so houses pile up against the deadband edge and flap briefly, which
    is exactly the aligned condition.  After ``hold_s`` (default: 1.3x
    the slowest house's deadband transit plus one lockout) the fleet must
    have >= ``threshold`` of houses sharing an on/off state; returns the
    simulated seconds spent, raises SyncTimeoutError otherwise.
    """
    if direction not in ("on", "off"):
        raise ValueError("direction must be 'on' or 'off'")
    tv = np.full(fleet.n, 1 if direction == "on" else -1, dtype=np.int8)
    if hold_s is None:
        hold_s = 1.3 * fleet.natural_rise_time(t_amb) \
            + float(fleet.P[:, K.P_LOCKOUT].max())
    elapsed = 0.0
    while elapsed < horizon_s:
        frame = fleet.step(t_amb, dt_control, tv)
        elapsed += dt_control
        if elapsed < hold_s:
            continue
        frac_on = frame.on.mean()
        if max(frac_on, 1.0 - frac_on) >= threshold:
            return elapsed
    raise SyncTimeoutError(
        f"fleet did not align within {horizon_s:.0f} s simulated")
