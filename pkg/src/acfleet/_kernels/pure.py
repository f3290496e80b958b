"""Pure-Python stepping kernels.

Fallback backend used when the compiled extension is unavailable (set
``ACFLEET_PURE_PY=1`` to force it).  Semantics are identical to the
compiled kernels; only throughput differs.

Two entry points:

``step_fleet_arrays``
    Vectorized fixed-step RK4 over every house for one control interval.
    Thermostat decisions are taken at physics-substep boundaries, which
    matches what a 1 Hz data-acquisition loop would do on real hardware.

``house_trajectory``
    Scalar single-house integration with deadband crossings localized by
    bisection to a 10 ms tolerance.  Used for cycle-duration studies and
    as the reference the fleet path is checked against.
"""
from __future__ import annotations

import math

import numpy as np

from .layout import (
    KELVIN, T1_MIN_C, T1_MAX_C, OK, ERR_NONFINITE, ERR_T1_BAND, EV_ON, EV_OFF,
    P_CW, P_CA, P_C1, P_C2, P_HM, P_H1, P_H2, P_UA, P_FHM, P_A, P_LR,
    P_GAMMA, P_WFRIC, P_QW, P_QA, P_QFIX, P_FIXWF, P_SETPOINT, P_DBHALF,
    P_TAU, P_LOCKOUT, P_MINON,
    S_TW, S_TA, S_T1, S_T2, S_TMEAS, S_ON, S_LOCK, S_MINON, S_PHASE, S_TIS,
)

BACKEND = "pure"


def cooling_rate(t1_c: float, a: float, l_over_r: float) -> float:
    """Heat pumped out of the cold heat exchanger at temperature ``t1_c``."""
    t1k = t1_c + KELVIN
    return a * math.exp(-l_over_r / t1k) / t1k


def electrical_power(t1_c: float, t2_c: float, qc: float, gamma: float,
                     w_fric: float) -> float:
    """Compressor electrical draw for a pumping rate ``qc`` (W)."""
    return gamma * qc * (t2_c - t1_c) / (t1_c + KELVIN) + w_fric


# ---------------------------------------------------------------- scalar

def _derivs(tw, ta, t1, t2, tm, on, p, t_amb):
    """Time derivatives of the five thermal states (+ run heat tallies)."""
    if on:
        t1k = t1 + KELVIN
        qc = p[P_A] * math.exp(-p[P_LR] / t1k) / t1k
        wac = p[P_GAMMA] * qc * (t2 - t1) / t1k + p[P_WFRIC]
    else:
        qc = 0.0
        wac = 0.0
    qw = p[P_QW] + p[P_QFIX] * p[P_FIXWF]
    qa = p[P_QA] + p[P_QFIX] * (1.0 - p[P_FIXWF])
    leak = p[P_UA] * (t_amb - ta)
    dtw = (p[P_HM] * (ta - tw) + qw) / p[P_CW]
    dta = (leak + p[P_HM] * (tw - ta) + qa + p[P_H1] * (t1 - ta)) / p[P_CA]
    dt1 = (p[P_H1] * (ta - t1) - qc) / p[P_C1]
    dt2 = (p[P_H2] * (t_amb - t2) + qc + wac) / p[P_C2]
    therm = (1.0 - p[P_FHM]) * ta + p[P_FHM] * tw
    if p[P_TAU] > 0.0:
        dtm = (therm - tm) / p[P_TAU]
    else:
        dtm = 0.0
    return dtw, dta, dt1, dt2, dtm, qc, qw + qa, leak


def _rk4(y, on, p, t_amb, h):
    """One classical RK4 step of the augmented (5 temps + 3 tallies) state.

    ``y`` is an 8-tuple (tw, ta, t1, t2, tm, e_qc, e_in, e_leak).
    """
    tw, ta, t1, t2, tm, eq, ei, el = y
    k1 = _derivs(tw, ta, t1, t2, tm, on, p, t_amb)
    h2 = 0.5 * h
    k2 = _derivs(tw + h2 * k1[0], ta + h2 * k1[1], t1 + h2 * k1[2],
                 t2 + h2 * k1[3], tm + h2 * k1[4], on, p, t_amb)
    k3 = _derivs(tw + h2 * k2[0], ta + h2 * k2[1], t1 + h2 * k2[2],
                 t2 + h2 * k2[3], tm + h2 * k2[4], on, p, t_amb)
    k4 = _derivs(tw + h * k3[0], ta + h * k3[1], t1 + h * k3[2],
                 t2 + h * k3[3], tm + h * k3[4], on, p, t_amb)
    w = h / 6.0
    out = (
        tw + w * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        ta + w * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        t1 + w * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2]),
        t2 + w * (k1[3] + 2.0 * k2[3] + 2.0 * k3[3] + k4[3]),
        tm + w * (k1[4] + 2.0 * k2[4] + 2.0 * k3[4] + k4[4]),
        eq + w * (k1[5] + 2.0 * k2[5] + 2.0 * k3[5] + k4[5]),
        ei + w * (k1[6] + 2.0 * k2[6] + 2.0 * k3[6] + k4[6]),
        el + w * (k1[7] + 2.0 * k2[7] + 2.0 * k3[7] + k4[7]),
    )
    if p[P_TAU] <= 0.0:
        therm = (1.0 - p[P_FHM]) * out[1] + p[P_FHM] * out[0]
        out = out[:4] + (therm,) + out[5:]
    return out


def _check(y):
    for v in y[:5]:
        if not math.isfinite(v):
            return ERR_NONFINITE
    if y[2] < T1_MIN_C or y[2] > T1_MAX_C:
        return ERR_T1_BAND
    return OK


def step_house(p, s, t_amb, h):
    """Advance one house's thermal state by ``h`` seconds (no thermostat).

    Timers and the compressor flag are left untouched; returns a status
    code.  ``p`` and ``s`` are layout rows (anything indexable).
    """
    y = (s[S_TW], s[S_TA], s[S_T1], s[S_T2], s[S_TMEAS], 0.0, 0.0, 0.0)
    y = _rk4(y, s[S_ON] != 0.0, p, t_amb, h)
    st = _check(y)
    if st == OK:
        s[S_TW], s[S_TA], s[S_T1], s[S_T2], s[S_TMEAS] = y[:5]
    return st


def _bisect_crossing(y0, on, p, t_amb, h, thresh, rising, tol):
    """Earliest s in (0, h] where the sensor temperature crosses ``thresh``.

    Assumes no crossing at s=0 and a crossing by s=h.  The sensor moves
    monotonically between deadband edges on the timescale of one physics
    step, so plain bisection on the step is adequate.
    """
    lo, hi = 0.0, h
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        tm = _rk4(y0, on, p, t_amb, mid)[4]
        crossed = tm >= thresh if rising else tm <= thresh
        if crossed:
            hi = mid
        else:
            lo = mid
    return hi


def house_trajectory(p, s, t_amb, dt, t_max, max_events=200000,
                     record_dt=0.0, bisect_tol=0.01):
    """Integrate one thermostat-controlled house for ``t_max`` seconds.

    Compressor switching instants are localized by bisection within the
    physics step: an off-switch happens where the sensor falls to the
    lower deadband edge (or where minimum-on expires, if later), an
    on-switch where it reaches the upper edge (or where lockout expires,
    if later).  The step containing an event is re-integrated from the
    step-start state up to the event time so results do not depend on
    how the crossing was found.

    Returns ``(events, samples, status)``:

    * events -- float64 array (k, 5): time, kind (+1 on / -1 off), and
      the cumulative pumped heat, injected heat and wall-leak integrals
      at the event instant (J).
    * samples -- float64 array (m, 7): time, tw, ta, t1, t2, tmeas, on;
      recorded every ``record_dt`` seconds (0 disables).
    * status -- OK or an error code; integration stops early on error.

    ``s`` is updated in place to the final state.
    """
    t_plus = p[P_SETPOINT] + p[P_DBHALF]
    t_minus = p[P_SETPOINT] - p[P_DBHALF]
    on = s[S_ON] != 0.0
    lock = s[S_LOCK]
    minon = s[S_MINON]
    phase = s[S_PHASE]
    tis = s[S_TIS]
    if p[P_TAU] <= 0.0:
        s[S_TMEAS] = (1.0 - p[P_FHM]) * s[S_TA] + p[P_FHM] * s[S_TW]
    y = (s[S_TW], s[S_TA], s[S_T1], s[S_T2], s[S_TMEAS], 0.0, 0.0, 0.0)

    events = []
    samples = []
    t = 0.0
    next_rec = 0.0
    status = OK

    def emit(kind):
        events.append((t, float(kind), y[5], y[6], y[7]))

    while True:
        # state-change checks at the current instant
        if on and y[4] <= t_minus and minon <= 0.0:
            on = False
            lock = p[P_LOCKOUT]
            tis = 0.0
            emit(EV_OFF)
        elif (not on) and y[4] >= t_plus and lock <= 0.0:
            on = True
            minon = p[P_MINON]
            phase = 0.0
            tis = 0.0
            emit(EV_ON)
        if len(events) >= max_events:
            break
        if record_dt > 0.0:
            while next_rec <= t + 1e-9:
                samples.append((next_rec, y[0], y[1], y[2], y[3], y[4],
                                1.0 if on else 0.0))
                next_rec += record_dt
        if t >= t_max - 1e-9:
            break

        h = min(dt, t_max - t)
        y_try = _rk4(y, on, p, t_amb, h)
        status = _check(y_try)
        if status != OK:
            break

        s_event = -1.0
        if on:
            gate = max(minon, 0.0)
            if y_try[4] <= t_minus and gate < h:
                if y[4] <= t_minus:
                    s_cross = 0.0
                else:
                    s_cross = _bisect_crossing(y, on, p, t_amb, h, t_minus,
                                               False, bisect_tol)
                s_event = max(s_cross, gate)
        else:
            gate = max(lock, 0.0)
            if y_try[4] >= t_plus and gate < h:
                if y[4] >= t_plus:
                    s_cross = 0.0
                else:
                    s_cross = _bisect_crossing(y, on, p, t_amb, h, t_plus,
                                               True, bisect_tol)
                s_event = max(s_cross, gate)

        if 0.0 < s_event < h:
            y = _rk4(y, on, p, t_amb, s_event)
            status = _check(y)
            if status != OK:
                break
            h = s_event
        else:
            y = y_try
        t += h
        if lock > 0.0:
            lock = max(0.0, lock - h)
        if minon > 0.0:
            minon = max(0.0, minon - h)
        phase += h
        tis += h
        # loop top handles any switch due at the new instant

    s[S_TW], s[S_TA], s[S_T1], s[S_T2], s[S_TMEAS] = y[:5]
    s[S_ON] = 1.0 if on else 0.0
    s[S_LOCK] = lock
    s[S_MINON] = minon
    s[S_PHASE] = phase
    s[S_TIS] = tis
    ev = np.asarray(events, dtype=np.float64).reshape(-1, 5)
    sm = np.asarray(samples, dtype=np.float64).reshape(-1, 7)
    return ev, sm, status


# ----------------------------------------------------------------- fleet

def _fleet_derivs(P, tw, ta, t1, t2, tm, on, t_amb):
    t1k = t1 + KELVIN
    qc = on * (P[:, P_A] * np.exp(-P[:, P_LR] / t1k) / t1k)
    wac = on * (P[:, P_GAMMA] * qc * (t2 - t1) / t1k + P[:, P_WFRIC])
    qw = P[:, P_QW] + P[:, P_QFIX] * P[:, P_FIXWF]
    qa = P[:, P_QA] + P[:, P_QFIX] * (1.0 - P[:, P_FIXWF])
    dtw = (P[:, P_HM] * (ta - tw) + qw) / P[:, P_CW]
    dta = (P[:, P_UA] * (t_amb - ta) + P[:, P_HM] * (tw - ta) + qa
           + P[:, P_H1] * (t1 - ta)) / P[:, P_CA]
    dt1 = (P[:, P_H1] * (ta - t1) - qc) / P[:, P_C1]
    dt2 = (P[:, P_H2] * (t_amb - t2) + qc + wac) / P[:, P_C2]
    therm = (1.0 - P[:, P_FHM]) * ta + P[:, P_FHM] * tw
    tau = P[:, P_TAU]
    dtm = np.where(tau > 0.0, (therm - tm) / np.where(tau > 0.0, tau, 1.0),
                   0.0)
    return dtw, dta, dt1, dt2, dtm


def step_fleet_arrays(P, S, t_amb, dt, n_sub):
    """Advance every house by ``n_sub`` physics substeps of length ``dt``.

    ``P`` is (n, N_PARAMS) and ``S`` (n, N_STATE); ``S`` is updated in
    place.  After each substep the timers advance and the thermostat acts,
    so switching resolution equals the physics step, exactly as in the
    compiled kernel.

    Returns ``(power, on_transitions, status)`` where ``power`` is the
    per-house electrical draw (W) averaged over the interval (fixed loads
    count only while the compressor runs), ``on_transitions`` is a uint8
    mask of houses that switched on at least once during the interval,
    and ``status`` is OK or the first error encountered.
    """
    tw = S[:, S_TW]
    ta = S[:, S_TA]
    t1 = S[:, S_T1]
    t2 = S[:, S_T2]
    tm = S[:, S_TMEAS]
    energy = np.zeros(len(S))
    went_on = np.zeros(len(S), dtype=np.uint8)
    status = OK
    for _ in range(n_sub):
        on = S[:, S_ON].copy()
        # electrical power at substep start, trapezoid would be overkill
        t1k = t1 + KELVIN
        qc = on * (P[:, P_A] * np.exp(-P[:, P_LR] / t1k) / t1k)
        w_el = on * (P[:, P_GAMMA] * qc * (t2 - t1) / t1k + P[:, P_WFRIC])
        energy += w_el * dt

        k1 = _fleet_derivs(P, tw, ta, t1, t2, tm, on, t_amb)
        h2 = 0.5 * dt
        k2 = _fleet_derivs(P, tw + h2 * k1[0], ta + h2 * k1[1],
                           t1 + h2 * k1[2], t2 + h2 * k1[3],
                           tm + h2 * k1[4], on, t_amb)
        k3 = _fleet_derivs(P, tw + h2 * k2[0], ta + h2 * k2[1],
                           t1 + h2 * k2[2], t2 + h2 * k2[3],
                           tm + h2 * k2[4], on, t_amb)
        k4 = _fleet_derivs(P, tw + dt * k3[0], ta + dt * k3[1],
                           t1 + dt * k3[2], t2 + dt * k3[3],
                           tm + dt * k3[4], on, t_amb)
        w = dt / 6.0
        tw += w * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
        ta += w * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
        t1 += w * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2])
        t2 += w * (k1[3] + 2.0 * k2[3] + 2.0 * k3[3] + k4[3])
        tm += w * (k1[4] + 2.0 * k2[4] + 2.0 * k3[4] + k4[4])
        lag_free = P[:, P_TAU] <= 0.0
        if lag_free.any():
            therm = (1.0 - P[:, P_FHM]) * ta + P[:, P_FHM] * tw
            np.copyto(tm, therm, where=lag_free)

        if not (np.isfinite(tw).all() and np.isfinite(ta).all()
                and np.isfinite(t1).all() and np.isfinite(t2).all()
                and np.isfinite(tm).all()):
            status = ERR_NONFINITE
            break
        if ((t1 < T1_MIN_C) | (t1 > T1_MAX_C)).any():
            status = ERR_T1_BAND
            break

        S[:, S_LOCK] = np.maximum(0.0, S[:, S_LOCK] - dt)
        S[:, S_MINON] = np.maximum(0.0, S[:, S_MINON] - dt)
        S[:, S_PHASE] += dt
        S[:, S_TIS] += dt

        is_on = S[:, S_ON] != 0.0
        go_off = is_on & (tm <= P[:, P_SETPOINT] - P[:, P_DBHALF]) \
            & (S[:, S_MINON] <= 0.0)
        go_on = (~is_on) & (tm >= P[:, P_SETPOINT] + P[:, P_DBHALF]) \
            & (S[:, S_LOCK] <= 0.0)
        if go_off.any():
            S[go_off, S_ON] = 0.0
            S[go_off, S_LOCK] = P[go_off, P_LOCKOUT]
            S[go_off, S_TIS] = 0.0
        if go_on.any():
            S[go_on, S_ON] = 1.0
            S[go_on, S_MINON] = P[go_on, P_MINON]
            S[go_on, S_PHASE] = 0.0
            S[go_on, S_TIS] = 0.0
            went_on[go_on] = 1
    power = energy / (n_sub * dt)
    return power, went_on, status
