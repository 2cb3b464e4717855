"""Command-line driver: ``ecpic run | fit-growth | check-identities``."""
import argparse
import sys

from . import io
from .identities import run_identity_suite
from .scenario import PRESETS, DegenerateWindow, RunAborted, fit_growth_rate, run

DEFAULT_TOLERANCES = {"residue": 1e-10, "sumD": 1e-12, "charge": 1e-12}


def _parse_set(items):
    out = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise argparse.ArgumentTypeError(f"expected key=value, got {item!r}")
        out[key.strip()] = value.strip()
    return out


def _cmd_run(args):
    overrides = _parse_set(args.set)
    if args.seed is not None:
        overrides["rng_seed"] = str(args.seed)
    if args.steps is not None:
        overrides["n_steps"] = str(args.steps)
    try:
        cfg = PRESETS[args.preset](**overrides)
    except (KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    def progress(step, state, diag):
        if args.verbose and step % 100 == 0:
            print(f"step {step} t={state.time:.6g} picard={diag.picard_iterations}",
                  file=sys.stderr)

    try:
        out = run(cfg, args.out, callback=progress, tolerances=DEFAULT_TOLERANCES)
    except RunAborted as exc:
        print(f"aborted at step {exc.step}: {exc}", file=sys.stderr)
        return 3
    last = out.timeseries[-1]
    print(f"{cfg.name}: {out.state.step_index} steps in {out.wall_time:.1f} s, "
          f"energy drift {last['drift']:.3e}, breaches {len(out.breaches)}")
    for step, kind, value in out.breaches[:10]:
        print(f"  breach step {step}: {kind} = {value:.3e}")
    return 1 if out.breaches else 0


def _cmd_fit(args):
    try:
        a, b = (float(s) for s in args.window.split(","))
    except ValueError:
        print("error: --window expects a,b", file=sys.stderr)
        return 2
    rows = io.read_timeseries(args.input)
    try:
        gamma = fit_growth_rate(rows, a, b)
    except DegenerateWindow as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(io.fmt(gamma))
    return 0


def _cmd_identities(args):
    res = run_identity_suite(args.seeds)
    for name, err in res["worst"].items():
        print(f"{name:22s} {err:.3e}")
    print(f"{'negative_control_min':22s} {res['negative_control_min']:.3e}")
    print("PASS" if res["passed"] else "FAIL")
    return 0 if res["passed"] else 1


def build_parser():
    p = argparse.ArgumentParser(prog="ecpic", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a preset scenario")
    r.add_argument("--preset", choices=sorted(PRESETS), default="mtsi")
    r.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config field, or <species>.<field>")
    r.add_argument("--out", default=None, help="output directory")
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--steps", type=int, default=None)
    r.add_argument("-v", "--verbose", action="store_true")
    r.set_defaults(func=_cmd_run)
    f = sub.add_parser("fit-growth", help="fit a growth rate to timeseries.csv")
    f.add_argument("--in", dest="input", required=True)
    f.add_argument("--window", required=True, help="t_start,t_end")
    f.set_defaults(func=_cmd_fit)
    c = sub.add_parser("check-identities", help="evaluate the 2D identity kernels")
    c.add_argument("--seeds", type=int, default=100)
    c.set_defaults(func=_cmd_identities)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
