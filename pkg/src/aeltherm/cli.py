"""Command-line entry point: ``aeltherm <subcommand> [options]``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""
import argparse
import json
import logging
import sys

import numpy as np

from .equilibrium import solve_steady_state, thermal_neutral_current
from .errors import AelthermError, ConfigError, InputError, ParameterError
from .lpv import build_table, export_table
from .presets import PRESETS
from .scenario import (
    CONTROLLERS, compare_controllers, default_config, efficiency_report, load_config,
    run_scenario, tune_set_point,
)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


def _config(args):
    if args.config:
        cfg = load_config(args.config, args.preset)
    else:
        cfg = default_config(args.preset or "lab-5nm3")
    if args.controller:
        cfg = cfg.with_(controller=args.controller)
    if getattr(args, "t_set", None) is not None:
        cfg = cfg.with_(t_set=args.t_set)
    return cfg


def _dump(obj):
    print(json.dumps(obj, indent=2, sort_keys=True, default=float))


def cmd_simulate(args):
    cfg = _config(args)
    if args.out:
        cfg = cfg.with_(output=args.out)
    res = run_scenario(cfg)
    if not args.out:
        res.write_csv(sys.stdout)
    else:
        _dump(res.metrics)


def cmd_compare(args):
    cfg = _config(args)
    names = [args.controller] if args.controller else list(CONTROLLERS)
    _dump(compare_controllers(cfg, names))


def cmd_steady(args):
    cfg = _config(args)
    p = cfg.params
    current = args.current if args.current is not None else args.load * p.i_max
    ss = solve_steady_state(current, cfg.t_set, cfg.ambient, p)
    _dump({"current_a": current, "t_set_c": cfg.t_set, "t_stack_c": ss.x.t_stack,
           "t_sep_c": ss.x.t_sep, "t_c_c": ss.x.t_c, "y_valve": ss.u,
           "saturated_low": ss.saturated_low})


def cmd_neutral(args):
    cfg = _config(args)
    npt = thermal_neutral_current(cfg.t_set, cfg.ambient, cfg.params)
    _dump({"current_a": npt.current, "load_frac": npt.load_fraction, "boundary": npt.boundary,
           "t_set_c": cfg.t_set})


def cmd_lpv(args):
    cfg = _config(args)
    table = build_table(cfg.params, cfg.t_set, cfg.mpc.n_s, cfg.mpc.tau_s, cfg.ambient)
    export_table(table, args.out or sys.stdout)


def cmd_tune(args):
    cfg = _config(args)
    names = [args.controller] if args.controller else list(CONTROLLERS)
    out, runs = {}, {}
    for name in names:
        tr = tune_set_point(cfg, name, t_limit=args.t_limit, bracket=(args.lower, None))
        out[name] = {"t_set_c": tr.t_set, "peak_t_stack_c": tr.peak}
        runs[name] = tr.result
    if "mpc" in runs and "pid" in runs:
        out["efficiency_gain_pp"] = efficiency_report(runs["mpc"], runs["pid"])
    _dump(out)


def build_parser():
    parser = argparse.ArgumentParser(prog="aeltherm", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML scenario file")
    common.add_argument("--preset", choices=sorted(PRESETS), help="system preset")
    common.add_argument("--controller", choices=CONTROLLERS)
    common.add_argument("--out", help="output path (CSV, LPV table)")
    common.add_argument("--seed", type=int, help="RNG seed (fuzz runs only)")
    common.add_argument("--t-set", type=float, dest="t_set", help="set point, degC")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("simulate", parents=[common], help="run one scenario").set_defaults(
        func=cmd_simulate)
    sub.add_parser("compare", parents=[common], help="run each controller").set_defaults(
        func=cmd_compare)
    p = sub.add_parser("steady", parents=[common], help="steady state at one load")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--current", type=float, help="stack current, A")
    g.add_argument("--load", type=float, default=1.0, help="fraction of rated current")
    p.set_defaults(func=cmd_steady)
    sub.add_parser("neutral-point", parents=[common],
                   help="thermal-neutral current").set_defaults(func=cmd_neutral)
    sub.add_parser("lpv-table", parents=[common], help="export the LPV table").set_defaults(
        func=cmd_lpv)
    p = sub.add_parser("tune-setpoint", parents=[common], help="highest admissible set point")
    p.add_argument("--t-limit", type=float, default=95.0, help="peak limit, degC")
    p.add_argument("--lower", type=float, help="lower bisection bound, degC")
    p.set_defaults(func=cmd_tune)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.seed is not None:
        np.random.seed(args.seed)
    try:
        args.func(args)
    except (ConfigError, InputError, ParameterError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AelthermError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
