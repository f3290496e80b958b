"""Command-line entry points.

Five subcommands: ``run`` (one experiment, from a config file or a
matrix case), ``matrix`` (the full case grid), ``validate`` (open-loop
physics presets), ``serve-plant`` (standalone TCP plant for an external
aggregator), and ``calibrate`` (design-constant report).

Config files are YAML mappings mirroring ExperimentConfig field names;
the ``conditions`` sub-mapping holds the condition axes.  Unknown keys
are rejected rather than ignored, so a typo cannot silently become a
default.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import pathlib
import sys
import time

from .errors import AcFleetError, ConfigError
from .runner import (MATRIX_CASES, VALIDATION_PRESETS, Conditions,
                     ExperimentConfig, case_config, run_experiment,
                     run_matrix, run_validation_preset)


def load_config(path) -> ExperimentConfig:
    """Read a YAML experiment config, strictly."""
    import yaml
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path} is not valid YAML: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config root must be a mapping")
    doc = dict(doc)
    cond_doc = doc.pop("conditions", None) or {}
    if not isinstance(cond_doc, dict):
        raise ConfigError("conditions must be a mapping")
    known = {f.name for f in dataclasses.fields(ExperimentConfig)} \
        - {"conditions"}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    cond_known = {f.name for f in dataclasses.fields(Conditions)}
    unknown = sorted(set(cond_doc) - cond_known)
    if unknown:
        raise ConfigError(f"unknown conditions keys: {', '.join(unknown)}")
    try:
        return ExperimentConfig(conditions=Conditions(**cond_doc), **doc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad config value: {exc}") from exc


def _out_dir(args) -> pathlib.Path:
    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _cmd_run(args) -> int:
    if (args.config is None) == (args.case is None):
        print("run: give either --config FILE or --case N", file=sys.stderr)
        return 2
    if args.config is not None:
        cfg = load_config(args.config)
        if args.controller is not None:
            cfg = dataclasses.replace(cfg, controller=args.controller)
    else:
        cfg = case_config(args.case, args.controller or "pem")
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    out = _out_dir(args)
    telemetry = None
    if args.telemetry:
        telemetry = str(out / f"{cfg.label}.telemetry.csv")
    result = run_experiment(cfg, telemetry_path=telemetry)
    metrics_path = out / f"{cfg.label}.metrics.json"
    with open(metrics_path, "w") as fh:
        json.dump({"config": cfg.to_dict(), **result.metrics_dict()},
                  fh, indent=2)
    print(f"{cfg.label}: nrmse {100 * result.nrmse:.2f}%"
          + (f", score {result.pjm['score']:.3f}" if result.pjm else "")
          + f", baseline {result.baseline_w / 1e3:.1f} kW"
          + f"  ({result.runtime_s:.1f} s)")
    print(f"metrics: {metrics_path}")
    if telemetry:
        print(f"telemetry: {telemetry}")
    return 0


def _cmd_matrix(args) -> int:
    cases = None
    if args.cases:
        try:
            cases = sorted({int(c) for c in args.cases.split(",")})
        except ValueError:
            print(f"matrix: bad case list {args.cases!r}", file=sys.stderr)
            return 2
        bad = [c for c in cases if c not in MATRIX_CASES]
        if bad:
            print(f"matrix: unknown cases {bad}", file=sys.stderr)
            return 2
    controllers = tuple(args.controllers.split(","))
    out = _out_dir(args)
    t0 = time.perf_counter()
    cells = run_matrix(out, seed=args.seed or 0, jobs=args.jobs,
                       cases=cases, controllers=controllers)
    failed = [c for c in cells if not c["ok"]]
    print(f"{len(cells)} cells in {time.perf_counter() - t0:.0f} s, "
          f"{len(failed)} failed")
    for c in failed:
        print(f"  case {c['case']} {c['controller']}: {c['error']}")
    print(f"table: {out / 'matrix.csv'}")
    return 1 if failed else 0


def _cmd_validate(args) -> int:
    names = sorted(VALIDATION_PRESETS) if args.name == "all" else [args.name]
    results = []
    worst = 0
    for name in names:
        res = run_validation_preset(name, seed=args.seed or 0)
        results.append(res)
        verdict = "pass" if res["pass"] else "FAIL"
        print(f"{name}: {verdict}")
        for check, ok in res["checks"].items():
            print(f"    {'ok ' if ok else 'BAD'} {check}")
        if not res["pass"]:
            worst = 1
    if args.out is not None:
        out = _out_dir(args)
        path = out / "validation.json"
        with open(path, "w") as fh:
            json.dump(results, fh, indent=2)
        print(f"details: {path}")
    return worst


def _cmd_serve_plant(args) -> int:
    from dataclasses import replace as dreplace

    from .fleet import Fleet, FleetSpec
    from .house import HouseParams
    from .plantlink import PlantServer
    from .runner import derive_seeds

    seeds = derive_seeds(args.seed or 0)
    nominal = HouseParams()
    nominal = dreplace(nominal, heat=dreplace(nominal.heat,
                                              q_w_dot=args.heat_gain))
    spec = FleetSpec(n_houses=args.n_houses, nominal=nominal,
                     heterogeneity_fraction=args.heterogeneity,
                     rng_seed=seeds["fleet"])
    print(f"settling {args.n_houses} houses at {args.t_amb:.1f} degC ...",
          flush=True)
    fleet = Fleet.build(spec, args.t_amb)
    server = PlantServer(fleet, args.t_amb, dt_control=args.dt_control,
                         timeout=args.timeout, host=args.host,
                         port=args.port, max_steps=args.max_steps,
                         realtime=args.realtime)
    host, port = server.start()
    print(f"plant listening on {host}:{port} "
          f"(dt {args.dt_control:.0f} s, "
          f"{'realtime' if args.realtime else 'free-running'})", flush=True)
    try:
        while server._thread.is_alive():
            server._thread.join(timeout=0.5)
    except KeyboardInterrupt:
        print("stopping")
    finally:
        server.stop()
    s = server.stats
    print(f"served {s.frames_sent} frames, {s.commands_applied} command "
          f"batches, {s.missed_commands} missed, "
          f"{s.protocol_errors} protocol errors")
    return 0


def _cmd_calibrate(args) -> int:
    from . import calibrate

    report = calibrate.calibration_report()
    report["duty_sweep"] = calibrate.duty_sweep()
    print(calibrate.format_report(report))
    if args.write_data:
        path = calibrate.write_reference_trace()
        print(f"rewrote bundled trace: {path}")
    if args.out is not None:
        out = _out_dir(args)
        path = out / "calibration.json"
        with open(path, "w") as fh:
            json.dump(report, fh, indent=2)
        print(f"details: {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="acfleet",
        description="Air-conditioner fleet simulator for grid frequency "
                    "regulation studies.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one experiment")
    p.add_argument("--config", metavar="FILE",
                   help="YAML experiment config")
    p.add_argument("--case", type=int, metavar="N",
                   help=f"matrix case 1..{len(MATRIX_CASES)}")
    p.add_argument("--controller", choices=("pi", "markov", "pem"),
                   help="override the controller")
    p.add_argument("--seed", type=int, help="override the master seed")
    p.add_argument("--out", default="runs", help="output directory")
    p.add_argument("--telemetry", action="store_true",
                   help="also write per-house telemetry CSV")
    p.set_defaults(fn=_cmd_run)

    p = sub.add_parser("matrix", help="run the full experiment grid")
    p.add_argument("--cases", metavar="N,N,...",
                   help="subset of cases (default: all)")
    p.add_argument("--controllers", default="pi,markov,pem",
                   metavar="A,B,...")
    p.add_argument("--jobs", type=int, default=1,
                   help="parallel worker processes")
    p.add_argument("--seed", type=int, help="master seed (default 0)")
    p.add_argument("--out", default="runs/matrix", help="output directory")
    p.set_defaults(fn=_cmd_matrix)

    p = sub.add_parser("validate", help="open-loop physics presets")
    p.add_argument("name", nargs="?", default="all",
                   choices=("all", *sorted(VALIDATION_PRESETS)))
    p.add_argument("--seed", type=int, help="master seed (default 0)")
    p.add_argument("--out", help="also write validation.json here")
    p.set_defaults(fn=_cmd_validate)

    p = sub.add_parser("serve-plant",
                       help="serve a virtual plant over TCP")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=0,
                   help="0 picks a free port")
    p.add_argument("--n-houses", type=int, default=543)
    p.add_argument("--heterogeneity", type=float, default=0.20)
    p.add_argument("--t-amb", type=float, default=32.2,
                   help="outdoor temperature (degC)")
    p.add_argument("--heat-gain", type=float, default=200.0,
                   help="per-house water-side injection (W)")
    p.add_argument("--dt-control", type=float, default=2.0)
    p.add_argument("--timeout", type=float, default=None,
                   help="command wait per step (default 2x dt)")
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--seed", type=int, help="master seed (default 0)")
    p.add_argument("--realtime", action="store_true",
                   help="pace steps to wall-clock dt")
    p.set_defaults(fn=_cmd_serve_plant)

    p = sub.add_parser("calibrate", help="design-constant report")
    p.add_argument("--out", help="also write calibration.json here")
    p.add_argument("--write-data", action="store_true",
                   help="regenerate the bundled reference trace")
    p.set_defaults(fn=_cmd_calibrate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except AcFleetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
