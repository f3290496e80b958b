#!/usr/bin/env python3
"""Time the pure-Python stepping kernels against the compiled extension.

Two workloads, matching how the simulator actually calls the kernels:

  trajectory   one thermostat-controlled house integrated for hours at
               a 1 s physics step (event localization included)
  fleet        a whole fleet advanced control-step by control-step with
               thermostat action after every substep

Both backends run the identical inputs; final states are cross-checked
before any numbers are reported, so a speedup never hides a divergence.

    python3 benchmarks/bench_kernels.py
    python3 benchmarks/bench_kernels.py --houses 500 --steps 600
"""
import argparse
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from acfleet._kernels import layout, pure              # noqa: E402
from acfleet.fleet import Fleet, FleetSpec             # noqa: E402
from acfleet.house import HouseParams, param_row       # noqa: E402

try:
    from acfleet._kernels import _core
except ImportError:
    _core = None

T_AMB = 32.2


def bench(fn, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def run_trajectory(impl, hours):
    p = param_row(HouseParams())
    s = np.zeros(layout.N_STATE)
    s[pure.S_TW] = s[pure.S_TA] = s[pure.S_T1] = 23.0
    s[pure.S_T2] = T_AMB
    s[pure.S_TMEAS] = 23.0
    _, _, status = impl.house_trajectory(p, s, T_AMB, 1.0, hours * 3600.0)
    assert status == pure.OK
    return s


def run_fleet(impl, P, S0, steps):
    S = S0.copy()
    for _ in range(steps):
        _, _, status = impl.step_fleet_arrays(P, S, T_AMB, 1.0, 2)
        assert status == pure.OK
    return S


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--houses", type=int, default=200)
    ap.add_argument("--steps", type=int, default=300,
                    help="2 s control steps for the fleet workload")
    ap.add_argument("--hours", type=float, default=2.0,
                    help="simulated hours for the trajectory workload")
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args()

    if _core is None:
        print("compiled extension not importable; build it first "
              "(pip install -e .)")
        return 1

    fleet = Fleet.build(FleetSpec(n_houses=args.houses, rng_seed=0),
                        T_AMB, presettle_s=0.0)
    P, S0 = fleet.P, fleet.S.copy()

    results = []

    t_pure, s_pure = bench(lambda: run_trajectory(pure, args.hours),
                           args.repeats)
    t_fast, s_fast = bench(lambda: run_trajectory(_core, args.hours),
                           args.repeats)
    if not np.allclose(s_pure, s_fast, rtol=1e-9, atol=1e-9):
        print("trajectory backends disagree; refusing to report timings")
        return 1
    n = args.hours * 3600.0
    results.append(("trajectory", f"{args.hours:g} h, dt=1 s",
                    n, t_pure, t_fast))

    t_pure, f_pure = bench(lambda: run_fleet(pure, P, S0, args.steps),
                           args.repeats)
    t_fast, f_fast = bench(lambda: run_fleet(_core, P, S0, args.steps),
                           args.repeats)
    if not np.allclose(f_pure, f_fast, rtol=1e-9, atol=1e-9):
        print("fleet backends disagree; refusing to report timings")
        return 1
    n = args.houses * args.steps * 2.0
    results.append(("fleet", f"{args.houses} houses, {args.steps} steps",
                    n, t_pure, t_fast))

    print(f"{'workload':<12} {'size':<24} {'pure':>10} {'compiled':>10} "
          f"{'speedup':>8} {'compiled rate':>16}")
    for name, size, n, tp, tf in results:
        print(f"{name:<12} {size:<24} {tp * 1e3:>8.1f}ms {tf * 1e3:>8.1f}ms "
              f"{tp / tf:>7.1f}x {n / tf / 1e6:>12.2f} Msub/s")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
