"""Aggregator-side controllers that steer the fleet onto a reference.

Three strategies with very different information needs:

* PI: feedback on the aggregate power error only, actuated by
  switching a signed fraction of eligible devices each step, picked by
  temperature priority.
* Markov: a binned temperature-state model of the population predicts
  the next-step power, and the shortfall is dispatched as a broadcast
  switching probability (devices flip independently).
* PEM: devices ask for fixed-duration energy packets at a rate set by
  their thermostat position; the aggregator grants or denies against a
  running projection of aggregate power.

All controllers speak the same language: they see the latest reported
per-device state (possibly stale, the channel permitting), the
observed aggregate, and the reference, and they emit a batch of
per-device on/off targets.  None of them will knowingly command On to
a device that last reported an active lockout; the plant enforces the
hard rule regardless.
"""
from __future__ import annotations

import abc
import collections
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import InsufficientDataError


@dataclass(frozen=True)
class DeviceFeedback:
    """Latest per-device reports, aligned arrays."""
    house_ids: tuple
    t_measured: np.ndarray
    power_w: np.ndarray
    on: np.ndarray
    lockout_remaining: np.ndarray
    t: float

    @property
    def n(self) -> int:
        return len(self.house_ids)


def feedback_from_frame(frame) -> DeviceFeedback:
    """Adapt a fleet telemetry frame into controller feedback."""
    return DeviceFeedback(
        house_ids=tuple(frame.house_ids),
        t_measured=np.asarray(frame.t_measured, dtype=float),
        power_w=np.asarray(frame.power_w, dtype=float),
        on=np.asarray(frame.on, dtype=bool),
        lockout_remaining=np.asarray(frame.lockout_remaining, dtype=float),
        t=float(frame.t))


@dataclass
class CommandBatch:
    """Per-device switch targets: +1 on, -1 off, 0 leave alone."""
    house_ids: tuple
    targets: np.ndarray
    saturated: bool = False

    @property
    def n_commands(self) -> int:
        return int(np.count_nonzero(self.targets))

    def nonzero(self):
        """Yield (house_id, target) for devices actually commanded."""
        for i in np.flatnonzero(self.targets):
            yield self.house_ids[i], int(self.targets[i])

    @classmethod
    def empty(cls, house_ids, saturated: bool = False) -> "CommandBatch":
        return cls(house_ids=tuple(house_ids),
                   targets=np.zeros(len(house_ids), dtype=np.int8),
                   saturated=saturated)


class ControllerInterface(abc.ABC):
    """One control step: feedback in, command batch out."""

    @abc.abstractmethod
    def step(self, observed_aggregate_power: float, reference_power: float,
             device_feedback: DeviceFeedback, sim_time: float
             ) -> CommandBatch:
        ...

    def reset(self) -> None:
        """Clear accumulated state between experiment phases."""


def _eligible_masks(fb: DeviceFeedback):
    can_on = (~fb.on) & (fb.lockout_remaining <= 0.0)
    can_off = fb.on.copy()
    return can_on, can_off


# ---------------------------------------------------------------- PI --


@dataclass(frozen=True)
class PiConfig:
    """Gains act on the error normalized by ``norm_power`` (the
    uncontrolled baseline); the output is a signed fraction of the
    eligible devices.  ``anti_windup_limit`` caps the integral term in
    those same fraction units."""
    kp: float = 0.0
    ki: float = 0.0
    anti_windup_limit: float = 10.0
    norm_power: float = 1.0

    def __post_init__(self):
        if self.anti_windup_limit < 0.0:
            raise ValueError("anti_windup_limit must be >= 0")
        if self.norm_power <= 0.0:
            raise ValueError("norm_power must be > 0")


class PiController(ControllerInterface):
    def __init__(self, config: PiConfig):
        self.config = config
        self._integral = 0.0
        self._last_t: Optional[float] = None

    def reset(self) -> None:
        self._integral = 0.0
        self._last_t = None

    def step(self, observed_aggregate_power, reference_power,
             device_feedback, sim_time) -> CommandBatch:
        cfg = self.config
        e = (reference_power - observed_aggregate_power) / cfg.norm_power
        dt = 0.0 if self._last_t is None else sim_time - self._last_t
        self._last_t = sim_time
        self._integral = float(np.clip(
            self._integral + cfg.ki * e * dt,
            -cfg.anti_windup_limit, cfg.anti_windup_limit))
        u = cfg.kp * e + self._integral
        batch = CommandBatch.empty(device_feedback.house_ids)
        if u == 0.0:
            return batch
        can_on, can_off = _eligible_masks(device_feedback)
        eligible = can_on if u > 0.0 else can_off
        idx = np.flatnonzero(eligible)
        if len(idx) == 0:
            batch.saturated = True
            return batch
        n_switch = int(round(min(1.0, abs(u)) * len(idx)))
        if n_switch == 0:
            return batch
        temps = device_feedback.t_measured[idx]
        # temperature priority: warmest first when adding load, coolest
        # first when shedding; stable sort keeps ties deterministic
        order = np.argsort(-temps if u > 0.0 else temps, kind="stable")
        chosen = idx[order[:n_switch]]
        batch.targets[chosen] = 1 if u > 0.0 else -1
        if n_switch == len(idx):
            batch.saturated = True
        return batch


# ------------------------------------------------------------ Markov --


@dataclass(frozen=True)
class MarkovConfig:
    """Binned-population model settings.

    States: ``n_temp_bins`` off-branch bins spanning the deadband (cold
    to hot), the same again for the on branch, then one lockout state.
    ``avg_on_power`` converts on-state occupancy into watts.  With
    ``use_delayed_dynamics`` the prediction looks ``delay_s`` ahead
    through the chain and credits commands still in flight.
    ``dispatch_gain`` scales the switching probability; below 1 it
    trades response speed for less churn, which pays off when commands
    arrive late and the full correction would overshoot into lockouts.
    """
    setpoint: float = 23.0
    deadband_halfwidth: float = 0.5
    n_temp_bins: int = 20
    avg_on_power: float = 2600.0
    transition_matrix: Optional[np.ndarray] = None
    use_delayed_dynamics: bool = False
    delay_s: float = 18.0
    dt_control: float = 2.0
    dispatch_gain: float = 1.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_temp_bins < 2:
            raise ValueError("need at least 2 temperature bins")
        if self.avg_on_power <= 0.0:
            raise ValueError("avg_on_power must be > 0")
        if not 0.0 < self.dispatch_gain <= 1.0:
            raise ValueError("dispatch_gain must be in (0, 1]")
        if self.transition_matrix is not None:
            m = np.asarray(self.transition_matrix)
            n = self.n_states
            if m.shape != (n, n):
                raise ValueError(f"transition matrix must be {n}x{n}")
            if np.any(np.abs(m.sum(axis=1) - 1.0) > 1e-9) or np.any(m < 0.0):
                raise ValueError("transition matrix rows must be "
                                 "stochastic to 1e-9")

    @property
    def n_states(self) -> int:
        return 2 * self.n_temp_bins + 1

    @property
    def lockout_state(self) -> int:
        return 2 * self.n_temp_bins


def bin_states(cfg: MarkovConfig, t_measured: np.ndarray, on: np.ndarray,
               locked_off: np.ndarray) -> np.ndarray:
    """Map device reports onto chain states.

    Temperatures clamp into the deadband before binning; the lockout
    state wins over the off branch.
    """
    lo = cfg.setpoint - cfg.deadband_halfwidth
    width = 2.0 * cfg.deadband_halfwidth
    frac = np.clip((np.asarray(t_measured) - lo) / width, 0.0, 1.0)
    b = np.minimum((frac * cfg.n_temp_bins).astype(np.intp),
                   cfg.n_temp_bins - 1)
    state = np.where(on, cfg.n_temp_bins + b, b)
    state[(~np.asarray(on, dtype=bool)) & np.asarray(locked_off,
                                                     dtype=bool)] = \
        cfg.lockout_state
    return state


class TransitionCounter:
    """Streaming transition-count accumulator, so day-long telemetry
    never has to sit in memory at once."""

    def __init__(self, cfg: MarkovConfig):
        self.cfg = cfg
        self.counts = np.zeros((cfg.n_states, cfg.n_states))
        self._prev: Optional[np.ndarray] = None
        self.frames = 0

    def update(self, t_measured, on, locked_off) -> None:
        cur = bin_states(self.cfg, t_measured, on, locked_off)
        if self._prev is not None:
            np.add.at(self.counts, (self._prev, cur), 1.0)
        self._prev = cur
        self.frames += 1

    def matrix(self) -> np.ndarray:
        """Row-normalized transition matrix; states never visited get a
        hold-in-place row."""
        if self.frames < 2:
            raise InsufficientDataError(
                "transition estimation needs at least two telemetry "
                "frames")
        row = self.counts.sum(axis=1)
        safe = np.where(row > 0.0, row, 1.0)
        matrix = self.counts / safe[:, None]
        missing = np.flatnonzero(row == 0.0)
        matrix[missing, :] = 0.0
        matrix[missing, missing] = 1.0
        return matrix


def estimate_transition_matrix(cfg: MarkovConfig, t_measured: np.ndarray,
                               on: np.ndarray, locked_off: np.ndarray
                               ) -> np.ndarray:
    """Convenience wrapper over TransitionCounter for in-memory
    telemetry matrices (T, n_houses)."""
    counter = TransitionCounter(cfg)
    for k in range(t_measured.shape[0]):
        counter.update(t_measured[k], on[k], locked_off[k])
    return counter.matrix()


def predict_on_fraction(cfg: MarkovConfig, occupancy: np.ndarray,
                        steps: int) -> float:
    """On-branch probability mass after advancing the chain."""
    x = occupancy
    for _ in range(steps):
        x = x @ cfg.transition_matrix
    return float(x[cfg.n_temp_bins:2 * cfg.n_temp_bins].sum())


class MarkovController(ControllerInterface):
    def __init__(self, config: MarkovConfig):
        if config.transition_matrix is None:
            raise ValueError("MarkovController needs a transition matrix; "
                             "estimate one from free-run telemetry")
        self.config = config
        self._rng = np.random.default_rng(np.random.SeedSequence(
            config.rng_seed))
        self._in_flight: collections.deque = collections.deque()
        self._horizon = 1
        if config.use_delayed_dynamics:
            self._horizon = 1 + max(0, int(round(config.delay_s
                                                 / config.dt_control)))

    def reset(self) -> None:
        self._in_flight.clear()

    def step(self, observed_aggregate_power, reference_power,
             device_feedback, sim_time) -> CommandBatch:
        cfg = self.config
        fb = device_feedback
        n = fb.n
        locked = (~fb.on) & (fb.lockout_remaining > 0.0)
        states = bin_states(cfg, fb.t_measured, fb.on, locked)
        occupancy = np.bincount(states, minlength=cfg.n_states) / n
        on_now = float(occupancy[cfg.n_temp_bins:2 * cfg.n_temp_bins].sum())
        on_frac = predict_on_fraction(cfg, occupancy, self._horizon)
        # anchor at the measured aggregate and let the chain supply the
        # expected drift; an absolute chain estimate would bake in the
        # binning and composition error as a standing offset
        predicted = observed_aggregate_power \
            + cfg.avg_on_power * n * (on_frac - on_now)
        # commands already launched but not yet visible in feedback
        # will land within the horizon; credit them once each
        predicted += cfg.avg_on_power * sum(self._in_flight)
        can_on, can_off = _eligible_masks(fb)
        shortfall = reference_power - predicted
        eligible = can_on if shortfall > 0.0 else can_off
        idx = np.flatnonzero(eligible)
        batch = CommandBatch.empty(fb.house_ids)
        capacity = cfg.avg_on_power * len(idx)
        if capacity == 0.0:
            batch.saturated = True
            self._note_launched(0)
            return batch
        u = float(np.clip(cfg.dispatch_gain * shortfall / capacity,
                          -1.0, 1.0))
        if abs(u) >= 1.0:
            batch.saturated = True
        flips = idx[self._rng.random(len(idx)) < abs(u)]
        batch.targets[flips] = 1 if u > 0.0 else -1
        self._note_launched(int(len(flips)) * (1 if u > 0.0 else -1))
        return batch

    def _note_launched(self, net: int) -> None:
        if self._horizon <= 1:
            return
        self._in_flight.append(net)
        while len(self._in_flight) > self._horizon - 1:
            self._in_flight.popleft()


# --------------------------------------------------------------- PEM --


def default_request_rate(position: np.ndarray) -> np.ndarray:
    """Per-step request probability given position in the deadband
    (0 at the cold edge, 1 at the hot edge).  Quiet below the middle,
    rising quadratically and pinned at certainty over the hottest
    quarter; the aggregator rations grants, so eager requests cost
    nothing when power is not wanted."""
    return np.clip(4.0 * position - 2.0, 0.0, 1.0) ** 2


@dataclass(frozen=True)
class PemConfig:
    """Packet coordination settings.  ``quantum_w`` is the expected
    draw of one device while on (the size of one granted packet)."""
    epoch_length: float = 180.0
    quantum_w: float = 2600.0
    setpoint: float = 23.0
    deadband_halfwidth: float = 0.5
    request_rate_fn: Callable[[np.ndarray], np.ndarray] = \
        default_request_rate
    allow_turn_off_requests: bool = True
    rng_seed: int = 0

    def __post_init__(self):
        if self.epoch_length <= 0.0:
            raise ValueError("epoch_length must be > 0")
        if self.quantum_w <= 0.0:
            raise ValueError("quantum_w must be > 0")


class PemController(ControllerInterface):
    """Grants fixed-length On packets against a power projection.

    Devices request asynchronously (their thermostat position sets the
    rate); the aggregator walks On requests hottest first, granting
    while the projection sits at or below the reference, and Off
    requests coldest first while it sits at or above.  A granted On
    runs for the epoch length; at expiry the device is first in line
    to be shed, but if the target still wants its power the packet
    renews in place rather than forcing an Off and a lockout spell.
    Thermostat safety still overrides at the band edges; the
    projection is re-anchored to the observed aggregate every step, so
    uncommanded switches wash out.
    """

    def __init__(self, config: PemConfig):
        self.config = config
        self._rng = np.random.default_rng(np.random.SeedSequence(
            config.rng_seed))
        self._packets: dict = {}

    def reset(self) -> None:
        self._packets.clear()

    def step(self, observed_aggregate_power, reference_power,
             device_feedback, sim_time) -> CommandBatch:
        cfg = self.config
        fb = device_feedback
        batch = CommandBatch.empty(fb.house_ids)
        index = {h: i for i, h in enumerate(fb.house_ids)}
        projected = float(observed_aggregate_power)

        # 1. expired packets: still-running holders become renewal
        # candidates rather than being dropped outright
        expired = []
        for hid in [h for h, exp in self._packets.items()
                    if exp <= sim_time]:
            del self._packets[hid]
            i = index.get(hid)
            if i is not None and fb.on[i]:
                expired.append(i)

        # 2. collect device requests from their thermostat position
        lo = cfg.setpoint - cfg.deadband_halfwidth
        position = np.clip((fb.t_measured - lo)
                           / (2.0 * cfg.deadband_halfwidth), 0.0, 1.0)
        can_on, can_off = _eligible_masks(fb)
        draws = self._rng.random(fb.n)
        on_req = can_on & (draws < cfg.request_rate_fn(position))
        if cfg.allow_turn_off_requests:
            off_req = can_off & (draws < cfg.request_rate_fn(1.0 - position))
        else:
            off_req = np.zeros(fb.n, dtype=bool)
        off_req[expired] = False

        # 3. shedding while over target: lapsed packets go first (their
        # lease is up), then off requesters, coolest first within each
        coldest = lambda j: (fb.t_measured[j], j)  # noqa: E731
        shed = sorted(expired, key=coldest) \
            + sorted(np.flatnonzero(off_req), key=coldest)
        kept = set(expired)
        for i in shed:
            if projected < reference_power:
                break
            batch.targets[i] = -1
            projected -= cfg.quantum_w
            kept.discard(i)
            self._packets.pop(fb.house_ids[i], None)
        # whatever lapsed but was not shed renews in place: already on,
        # already counted in the observed aggregate, no command needed
        for i in kept:
            self._packets[fb.house_ids[i]] = sim_time + cfg.epoch_length

        # 4. on grants while at or under target, warmest first
        for i in sorted(np.flatnonzero(on_req),
                        key=lambda j: (-fb.t_measured[j], j)):
            if projected > reference_power:
                break
            batch.targets[i] = 1
            projected += cfg.quantum_w
            self._packets[fb.house_ids[i]] = sim_time + cfg.epoch_length

        return batch


def make_controller(kind: str, config) -> ControllerInterface:
    """Factory keyed by the controller name used in experiment configs."""
    table = {"pi": PiController, "markov": MarkovController,
             "pem": PemController}
    try:
        cls = table[kind]
    except KeyError:
        raise ValueError(f"unknown controller kind {kind!r}; expected one "
                         f"of {sorted(table)}") from None
    return cls(config)
