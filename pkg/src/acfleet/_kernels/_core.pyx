# cython: boundscheck=False, wraparound=False, cdivision=True
# cython: language_level=3
"""Compiled stepping kernels.

Semantics mirror :mod:`acfleet._kernels.pure` exactly; see that module
for the contract.  The layout constants are duplicated here as a C enum
and cross-checked against the Python layout module by the test suite.
"""
import numpy as np

cimport numpy as cnp
from libc.math cimport exp, isfinite

cnp.import_array()

BACKEND = "compiled"

cdef enum:
    P_CW, P_CA, P_C1, P_C2, P_HM, P_H1, P_H2, P_UA, P_FHM, P_A, P_LR, \
    P_GAMMA, P_WFRIC, P_QW, P_QA, P_QFIX, P_FIXWF, P_SETPOINT, P_DBHALF, \
    P_TAU, P_LOCKOUT, P_MINON, P_INMULT, P_INDUR, N_PARAMS

cdef enum:
    S_TW, S_TA, S_T1, S_T2, S_TMEAS, S_ON, S_LOCK, S_MINON, S_PHASE, \
    S_TIS, N_STATE

cdef double KELVIN = 273.15
cdef double T1_MIN_C = -50.0
cdef double T1_MAX_C = 60.0

cdef int OK = 0
cdef int ERR_NONFINITE = 1
cdef int ERR_T1_BAND = 2

cdef int EV_ON = 1
cdef int EV_OFF = -1


cdef inline void _derivs(const double* p, double t_amb, double tw, double ta,
                         double t1, double t2, double tm, bint on,
                         double* out) noexcept nogil:
    cdef double qc = 0.0
    cdef double wac = 0.0
    cdef double t1k
    if on:
        t1k = t1 + KELVIN
        qc = p[P_A] * exp(-p[P_LR] / t1k) / t1k
        wac = p[P_GAMMA] * qc * (t2 - t1) / t1k + p[P_WFRIC]
    cdef double qw = p[P_QW] + p[P_QFIX] * p[P_FIXWF]
    cdef double qa = p[P_QA] + p[P_QFIX] * (1.0 - p[P_FIXWF])
    cdef double leak = p[P_UA] * (t_amb - ta)
    out[0] = (p[P_HM] * (ta - tw) + qw) / p[P_CW]
    out[1] = (leak + p[P_HM] * (tw - ta) + qa + p[P_H1] * (t1 - ta)) / p[P_CA]
    out[2] = (p[P_H1] * (ta - t1) - qc) / p[P_C1]
    out[3] = (p[P_H2] * (t_amb - t2) + qc + wac) / p[P_C2]
    cdef double therm = (1.0 - p[P_FHM]) * ta + p[P_FHM] * tw
    if p[P_TAU] > 0.0:
        out[4] = (therm - tm) / p[P_TAU]
    else:
        out[4] = 0.0
    out[5] = qc
    out[6] = qw + qa
    out[7] = leak


cdef inline int _rk4(const double* p, double t_amb, double* y, bint on,
                     double h) noexcept nogil:
    """Advance the 8-component augmented state in place; returns status."""
    cdef double k1[8]
    cdef double k2[8]
    cdef double k3[8]
    cdef double k4[8]
    cdef double h2 = 0.5 * h
    cdef double w = h / 6.0
    cdef int i
    _derivs(p, t_amb, y[0], y[1], y[2], y[3], y[4], on, k1)
    _derivs(p, t_amb, y[0] + h2 * k1[0], y[1] + h2 * k1[1],
            y[2] + h2 * k1[2], y[3] + h2 * k1[3], y[4] + h2 * k1[4], on, k2)
    _derivs(p, t_amb, y[0] + h2 * k2[0], y[1] + h2 * k2[1],
            y[2] + h2 * k2[2], y[3] + h2 * k2[3], y[4] + h2 * k2[4], on, k3)
    _derivs(p, t_amb, y[0] + h * k3[0], y[1] + h * k3[1],
            y[2] + h * k3[2], y[3] + h * k3[3], y[4] + h * k3[4], on, k4)
    for i in range(8):
        y[i] = y[i] + w * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
    if p[P_TAU] <= 0.0:
        y[4] = (1.0 - p[P_FHM]) * y[1] + p[P_FHM] * y[0]
    for i in range(5):
        if not isfinite(y[i]):
            return ERR_NONFINITE
    if y[2] < T1_MIN_C or y[2] > T1_MAX_C:
        return ERR_T1_BAND
    return OK


def step_house(double[:] p, double[:] s, double t_amb, double h):
    """Advance one house's thermal state by ``h`` seconds (no thermostat)."""
    cdef double y[8]
    cdef int st
    y[0] = s[S_TW]; y[1] = s[S_TA]; y[2] = s[S_T1]; y[3] = s[S_T2]
    y[4] = s[S_TMEAS]; y[5] = 0.0; y[6] = 0.0; y[7] = 0.0
    st = _rk4(&p[0], t_amb, y, s[S_ON] != 0.0, h)
    if st == OK:
        s[S_TW] = y[0]; s[S_TA] = y[1]; s[S_T1] = y[2]; s[S_T2] = y[3]
        s[S_TMEAS] = y[4]
    return st


cdef double _bisect_crossing(const double* p, double t_amb, double* y0,
                             bint on, double h, double thresh, bint rising,
                             double tol) noexcept nogil:
    cdef double lo = 0.0
    cdef double hi = h
    cdef double mid, tm
    cdef double y[8]
    cdef int i
    cdef bint crossed
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        for i in range(8):
            y[i] = y0[i]
        _rk4(p, t_amb, y, on, mid)
        tm = y[4]
        crossed = tm >= thresh if rising else tm <= thresh
        if crossed:
            hi = mid
        else:
            lo = mid
    return hi


def house_trajectory(double[:] pv, double[:] s, double t_amb, double dt,
                     double t_max, int max_events=200000,
                     double record_dt=0.0, double bisect_tol=0.01):
    """Single-house integration with bisection-localized deadband events.

    Same contract as the pure-backend function of the same name.
    """
    cdef const double* p = &pv[0]
    cdef double t_plus = p[P_SETPOINT] + p[P_DBHALF]
    cdef double t_minus = p[P_SETPOINT] - p[P_DBHALF]
    cdef bint on = s[S_ON] != 0.0
    cdef double lock = s[S_LOCK]
    cdef double minon = s[S_MINON]
    cdef double phase = s[S_PHASE]
    cdef double tis = s[S_TIS]

    cdef cnp.ndarray ev_arr = np.empty((max_events, 5), dtype=np.float64)
    cdef double[:, :] ev = ev_arr
    cdef Py_ssize_t n_ev = 0
    cdef Py_ssize_t max_samples = 0
    if record_dt > 0.0:
        max_samples = <Py_ssize_t> (t_max / record_dt) + 2
    cdef cnp.ndarray sm_arr = np.empty((max_samples, 7), dtype=np.float64)
    cdef double[:, :] sm = sm_arr
    cdef Py_ssize_t n_sm = 0

    cdef double y[8]
    cdef double y_try[8]
    cdef int i, status = OK
    cdef double t = 0.0
    cdef double next_rec = 0.0
    cdef double h, s_event, s_cross, gate

    if p[P_TAU] <= 0.0:
        s[S_TMEAS] = (1.0 - p[P_FHM]) * s[S_TA] + p[P_FHM] * s[S_TW]
    y[0] = s[S_TW]; y[1] = s[S_TA]; y[2] = s[S_T1]; y[3] = s[S_T2]
    y[4] = s[S_TMEAS]; y[5] = 0.0; y[6] = 0.0; y[7] = 0.0

    while True:
        if on and y[4] <= t_minus and minon <= 0.0:
            on = False
            lock = p[P_LOCKOUT]
            tis = 0.0
            ev[n_ev, 0] = t; ev[n_ev, 1] = EV_OFF
            ev[n_ev, 2] = y[5]; ev[n_ev, 3] = y[6]; ev[n_ev, 4] = y[7]
            n_ev += 1
        elif (not on) and y[4] >= t_plus and lock <= 0.0:
            on = True
            minon = p[P_MINON]
            phase = 0.0
            tis = 0.0
            ev[n_ev, 0] = t; ev[n_ev, 1] = EV_ON
            ev[n_ev, 2] = y[5]; ev[n_ev, 3] = y[6]; ev[n_ev, 4] = y[7]
            n_ev += 1
        if n_ev >= max_events:
            break
        if record_dt > 0.0:
            while next_rec <= t + 1e-9 and n_sm < max_samples:
                sm[n_sm, 0] = next_rec
                sm[n_sm, 1] = y[0]; sm[n_sm, 2] = y[1]; sm[n_sm, 3] = y[2]
                sm[n_sm, 4] = y[3]; sm[n_sm, 5] = y[4]
                sm[n_sm, 6] = 1.0 if on else 0.0
                n_sm += 1
                next_rec += record_dt
        if t >= t_max - 1e-9:
            break

        h = dt if dt < t_max - t else t_max - t
        for i in range(8):
            y_try[i] = y[i]
        status = _rk4(p, t_amb, y_try, on, h)
        if status != OK:
            break

        s_event = -1.0
        if on:
            gate = minon if minon > 0.0 else 0.0
            if y_try[4] <= t_minus and gate < h:
                if y[4] <= t_minus:
                    s_cross = 0.0
                else:
                    s_cross = _bisect_crossing(p, t_amb, y, on, h, t_minus,
                                               False, bisect_tol)
                s_event = s_cross if s_cross > gate else gate
        else:
            gate = lock if lock > 0.0 else 0.0
            if y_try[4] >= t_plus and gate < h:
                if y[4] >= t_plus:
                    s_cross = 0.0
                else:
                    s_cross = _bisect_crossing(p, t_amb, y, on, h, t_plus,
                                               True, bisect_tol)
                s_event = s_cross if s_cross > gate else gate

        if 0.0 < s_event and s_event < h:
            status = _rk4(p, t_amb, y, on, s_event)
            if status != OK:
                break
            h = s_event
        else:
            for i in range(8):
                y[i] = y_try[i]
        t += h
        if lock > 0.0:
            lock = lock - h if lock > h else 0.0
        if minon > 0.0:
            minon = minon - h if minon > h else 0.0
        phase += h
        tis += h

    s[S_TW] = y[0]; s[S_TA] = y[1]; s[S_T1] = y[2]; s[S_T2] = y[3]
    s[S_TMEAS] = y[4]
    s[S_ON] = 1.0 if on else 0.0
    s[S_LOCK] = lock
    s[S_MINON] = minon
    s[S_PHASE] = phase
    s[S_TIS] = tis
    return ev_arr[:n_ev].copy(), sm_arr[:n_sm].copy(), status


def step_fleet_arrays(double[:, :] P, double[:, :] S, double t_amb,
                      double dt, int n_sub):
    """Advance every house ``n_sub`` substeps with thermostat action at
    substep boundaries; same contract as the pure-backend version."""
    cdef Py_ssize_t n = P.shape[0]
    cdef cnp.ndarray power_arr = np.zeros(n, dtype=np.float64)
    cdef cnp.ndarray went_arr = np.zeros(n, dtype=np.uint8)
    cdef double[:] power = power_arr
    cdef unsigned char[:] went_on = went_arr
    cdef int status = OK
    cdef Py_ssize_t i
    cdef int k, st
    cdef double y[8]
    cdef const double* p
    cdef double energy, t1k, qc, w_el, lock, minon, phase, tis
    cdef bint on

    for i in range(n):
        p = &P[i, 0]
        y[0] = S[i, S_TW]; y[1] = S[i, S_TA]; y[2] = S[i, S_T1]
        y[3] = S[i, S_T2]; y[4] = S[i, S_TMEAS]
        y[5] = 0.0; y[6] = 0.0; y[7] = 0.0
        on = S[i, S_ON] != 0.0
        lock = S[i, S_LOCK]
        minon = S[i, S_MINON]
        phase = S[i, S_PHASE]
        tis = S[i, S_TIS]
        energy = 0.0
        for k in range(n_sub):
            if on:
                t1k = y[2] + KELVIN
                qc = p[P_A] * exp(-p[P_LR] / t1k) / t1k
                w_el = p[P_GAMMA] * qc * (y[3] - y[2]) / t1k + p[P_WFRIC]
                energy += w_el * dt
            st = _rk4(p, t_amb, y, on, dt)
            if st != OK:
                status = st
                break
            if lock > 0.0:
                lock = lock - dt if lock > dt else 0.0
            if minon > 0.0:
                minon = minon - dt if minon > dt else 0.0
            phase += dt
            tis += dt
            if on:
                if y[4] <= p[P_SETPOINT] - p[P_DBHALF] and minon <= 0.0:
                    on = False
                    lock = p[P_LOCKOUT]
                    tis = 0.0
            else:
                if y[4] >= p[P_SETPOINT] + p[P_DBHALF] and lock <= 0.0:
                    on = True
                    minon = p[P_MINON]
                    phase = 0.0
                    tis = 0.0
                    went_on[i] = 1
        S[i, S_TW] = y[0]; S[i, S_TA] = y[1]; S[i, S_T1] = y[2]
        S[i, S_T2] = y[3]; S[i, S_TMEAS] = y[4]
        S[i, S_ON] = 1.0 if on else 0.0
        S[i, S_LOCK] = lock
        S[i, S_MINON] = minon
        S[i, S_PHASE] = phase
        S[i, S_TIS] = tis
        power[i] = energy / (n_sub * dt)
        if status != OK:
            break
    return power_arr, went_arr, status
