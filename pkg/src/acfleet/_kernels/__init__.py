"""Stepping-kernel backend selection.

Prefers the compiled extension and falls back to the pure-Python
implementation when the extension is absent or ``ACFLEET_PURE_PY`` is set
to a non-empty value other than ``0``.  Both backends share the row
layouts in :mod:`acfleet._kernels.layout` and the same stepping
semantics.
"""
from __future__ import annotations

import os

from .layout import (  # noqa: F401
    N_PARAMS, N_STATE, KELVIN, OK, ERR_NONFINITE, ERR_T1_BAND, EV_ON, EV_OFF,
    T1_MIN_C, T1_MAX_C,
    P_CW, P_CA, P_C1, P_C2, P_HM, P_H1, P_H2, P_UA, P_FHM, P_A, P_LR,
    P_GAMMA, P_WFRIC, P_QW, P_QA, P_QFIX, P_FIXWF, P_SETPOINT, P_DBHALF,
    P_TAU, P_LOCKOUT, P_MINON, P_INMULT, P_INDUR,
    S_TW, S_TA, S_T1, S_T2, S_TMEAS, S_ON, S_LOCK, S_MINON, S_PHASE, S_TIS,
)

from . import pure


def _select():
    forced = os.environ.get("ACFLEET_PURE_PY", "").strip()
    if forced and forced != "0":
        return pure
    try:
        from . import _core
        return _core
    except ImportError:
        return pure


_impl = _select()

BACKEND: str = _impl.BACKEND
step_fleet_arrays = _impl.step_fleet_arrays
house_trajectory = _impl.house_trajectory
step_house = _impl.step_house
cooling_rate = pure.cooling_rate
electrical_power = pure.electrical_power
