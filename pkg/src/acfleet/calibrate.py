"""Calibration report: where the frozen model constants come from.

The nominal parameter set in ``thermal`` and ``house`` carries several
derived literals (the pumped-heat prefactor, the fleet power scale, the
ambient sensitivity record).  This module recomputes each one from its
design rule and reports the stored value next to the recomputed one, so
drift between the two is visible instead of silent.  It can also
regenerate the bundled reference trace.
"""
from __future__ import annotations

from dataclasses import replace

import numpy as np

from . import signals
from .fleet import SCALE_ANCHOR_T_AMB, FleetSpec, cycle_table, mean_on_power
from .house import HouseParams
from .thermal import (RATED_COOLING_W, ambient_sensitivity, design_prefactor,
                      duty_cycle)

TRACE_SEED = 1
TRACE_DURATION_S = 3600.0
TRACE_SAMPLE_PERIOD_S = 2.0


def prefactor_check(params: HouseParams | None = None) -> dict:
    """Recompute the pumped-heat prefactor from the nameplate rating."""
    params = params or HouseParams()
    a = design_prefactor(params.thermal, params.ac,
                         operating_air_temp=params.setpoint,
                         rated_w=RATED_COOLING_W)
    stored = params.ac.a
    return {
        "rated_cooling_w": RATED_COOLING_W,
        "operating_air_temp_c": params.setpoint,
        "recomputed_a": a,
        "stored_a": stored,
        "relative_error": abs(a - stored) / stored,
    }


def nominal_cycle_check(params: HouseParams | None = None,
                        t_amb: float = SCALE_ANCHOR_T_AMB) -> dict:
    """Settled limit cycle of the nominal house at the anchor ambient."""
    params = params or HouseParams()
    table = cycle_table(params, t_amb)
    return {
        "t_amb_c": t_amb,
        "on_time_s": table.on_time,
        "off_time_s": table.off_time,
        "period_s": table.period,
        "duty": duty_cycle(table.on_time, table.off_time),
        "mean_on_power_w": table.mean_on_power,
    }


def power_scale_check(params: HouseParams | None = None,
                      target_w: float | None = None) -> dict:
    """Extensive scale factor taking the nominal unit to the fleet's
    average on-power target.  Scaling every capacity, conductance, and
    heat flow by the same factor leaves all temperatures (hence cycle
    timing) unchanged while multiplying electrical power."""
    params = params or HouseParams()
    if target_w is None:
        target_w = FleetSpec(n_houses=1).avg_on_power_target
    anchor = mean_on_power(params)
    return {
        "anchor_on_power_w": anchor,
        "target_on_power_w": target_w,
        "scale_factor": target_w / anchor,
    }


def ambient_sensitivity_check(params: HouseParams | None = None,
                              t_amb: float = SCALE_ANCHOR_T_AMB) -> dict:
    """Fractional on-power rise per degC of outdoor temperature,
    recomputed around the anchor ambient and compared with the
    descriptive constant stored on the AC parameters."""
    params = params or HouseParams()
    coeff = ambient_sensitivity(params.thermal, params.ac, params.heat,
                                t_amb)
    stored = params.ac.ambient_power_coeff
    return {
        "t_amb_c": t_amb,
        "recomputed_coeff_per_c": coeff,
        "stored_coeff_per_c": stored,
        "relative_error": abs(coeff - stored) / stored,
    }


def friction_balance_check(params: HouseParams | None = None) -> dict:
    """The friction draw splits total electrical power into a pumping
    term that grows with lift and a constant term that does not; their
    ratio at the operating point sets how strongly power responds to
    ambient.  Reported so retuning w_fric shows its consequence."""
    from .house import plateau_power
    params = params or HouseParams()
    plateau = plateau_power(params, SCALE_ANCHOR_T_AMB)
    return {
        "w_fric_w": params.ac.w_fric,
        "plateau_w": plateau,
        "friction_fraction": params.ac.w_fric / plateau,
    }


def write_reference_trace(path=None) -> str:
    """Regenerate the bundled band-limited reference trace.

    Deterministic: same seed, duration, and sample period as the
    shipped file, so a rewrite is byte-stable.
    """
    import pathlib
    if path is None:
        path = pathlib.Path(__file__).parent / "data" / "regd_like.csv"
    times, values = signals.synthetic_regd(
        TRACE_DURATION_S, TRACE_SAMPLE_PERIOD_S, seed=TRACE_SEED)
    signals.write_trace(path, times, values)
    return str(path)


def trace_check() -> dict:
    """Bundled trace sanity: zero-mean enough that scoring against it
    cannot smuggle in a baseline offset."""
    ref = signals.bundled_regd_trace(baseline=1.0, amplitude_fraction=1.0,
                                     sample_period=TRACE_SAMPLE_PERIOD_S)
    values = ref.samples - 1.0
    return {
        "n_samples": len(values),
        "duration_s": ref.duration,
        "mean_abs": float(abs(values.mean())),
        "peak": float(np.abs(values).max()),
    }


def calibration_report(params: HouseParams | None = None) -> dict:
    params = params or HouseParams()
    return {
        "prefactor": prefactor_check(params),
        "nominal_cycle": nominal_cycle_check(params),
        "power_scale": power_scale_check(params),
        "ambient_sensitivity": ambient_sensitivity_check(params),
        "friction_balance": friction_balance_check(params),
        "reference_trace": trace_check(),
    }


def duty_sweep(params: HouseParams | None = None,
               heat_gains_w=(150.0, 200.0, 300.0, 375.0, 500.0),
               t_amb: float = SCALE_ANCHOR_T_AMB) -> list[dict]:
    """Cycle timing across the programmable heat injection range;
    shows where the duty window used by the experiments sits."""
    params = params or HouseParams()
    rows = []
    for q in heat_gains_w:
        p = replace(params, heat=replace(params.heat, q_w_dot=q))
        table = cycle_table(p, t_amb)
        rows.append({
            "heat_gain_w": q,
            "on_time_s": table.on_time,
            "off_time_s": table.off_time,
            "duty": duty_cycle(table.on_time, table.off_time),
        })
    return rows


def format_report(report: dict) -> str:
    """Plain-text rendering for the CLI."""
    lines = []
    pf = report["prefactor"]
    lines.append("pumped-heat prefactor")
    lines.append(f"  rated cooling        {pf['rated_cooling_w']:.0f} W at "
                 f"{pf['operating_air_temp_c']:.1f} degC room air")
    lines.append(f"  recomputed A         {pf['recomputed_a']:.4e}")
    lines.append(f"  stored A             {pf['stored_a']:.4e}"
                 f"   (rel err {pf['relative_error']:.2e})")
    cy = report["nominal_cycle"]
    lines.append("nominal limit cycle")
    lines.append(f"  on/off               {cy['on_time_s']:.1f} s / "
                 f"{cy['off_time_s']:.1f} s  (duty {cy['duty']:.3f})")
    lines.append(f"  mean on-power        {cy['mean_on_power_w']:.1f} W")
    sc = report["power_scale"]
    lines.append("fleet power scale")
    lines.append(f"  anchor -> target     {sc['anchor_on_power_w']:.1f} W -> "
                 f"{sc['target_on_power_w']:.0f} W  "
                 f"(factor {sc['scale_factor']:.3f})")
    am = report["ambient_sensitivity"]
    lines.append("ambient sensitivity")
    lines.append(f"  recomputed           {100 * am['recomputed_coeff_per_c']:.2f} %/degC")
    lines.append(f"  stored               {100 * am['stored_coeff_per_c']:.2f} %/degC"
                 f"   (rel err {am['relative_error']:.2e})")
    fr = report["friction_balance"]
    lines.append("friction balance")
    lines.append(f"  w_fric / plateau     {fr['w_fric_w']:.0f} W / "
                 f"{fr['plateau_w']:.1f} W = {fr['friction_fraction']:.3f}")
    tr = report["reference_trace"]
    lines.append("bundled reference trace")
    lines.append(f"  {tr['n_samples']} samples over {tr['duration_s']:.0f} s, "
                 f"|mean| {tr['mean_abs']:.2e}, peak {tr['peak']:.3f}")
    return "\n".join(lines)
