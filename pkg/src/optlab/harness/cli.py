"""Command-line entry point.

    optlab <family> run --config FILE [--seed N] [--out CSV]
    optlab bench suite <name> [--out-dir DIR]
    optlab check invariants

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""
import argparse
import os
import sys
import time
from importlib import resources

import numpy as np

from ..problems import ReferenceSolverError
from ..splitting import StepsizeConditionError
from .config import FAMILIES, ConfigError, RunConfig
from .runner import run
from .traceio import trace_to_csv

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def bundled_configs(family=None):
    """``{name: RunConfig}`` of the configs shipped in ``optlab/configs``."""
    out = {}
    for entry in sorted(resources.files("optlab.configs").iterdir(), key=lambda e: e.name):
        if entry.name.endswith(".json"):
            cfg = RunConfig.from_json(entry.read_text(encoding="utf-8"))
            if family is None or cfg.family == family:
                out[entry.name[:-5]] = cfg
    return out


def _resolve_seed(flag, cfg):
    if flag is not None:
        return flag
    if cfg.seed is not None:
        return cfg.seed
    env = os.environ.get("OPTLAB_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise ConfigError(f"OPTLAB_SEED must be an integer, got {env!r}") from None


def _execute(cfg, seed):
    """Run a config and map failures to exit codes; returns ``(code, trace, message)``."""
    try:
        with np.errstate(over="raise", invalid="ignore", divide="ignore"):
            trace = run(cfg, seed)
    except (ConfigError, StepsizeConditionError) as err:
        return EXIT_CONFIG, None, f"config error: {err}"
    except (FloatingPointError, ReferenceSolverError, OverflowError) as err:
        return EXIT_NUMERIC, None, f"numerical failure: {err}"
    except (ValueError, KeyError, TypeError) as err:
        return EXIT_CONFIG, None, f"config error: {err}"
    last = np.array(trace.rows[-1][4:6])
    if np.any(np.isinf(last)):
        return EXIT_NUMERIC, trace, "numerical failure: metrics became infinite"
    return EXIT_OK, trace, ""


def _cmd_run(args):
    try:
        cfg = RunConfig.load(args.config)
        if cfg.family != args.family:
            raise ConfigError(f"config family {cfg.family!r} does not match subcommand {args.family!r}")
        seed = _resolve_seed(args.seed, cfg)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    code, trace, msg = _execute(cfg, seed)
    if msg:
        print(msg, file=sys.stderr)
    if trace is None:
        return code
    text = trace_to_csv(trace)
    out = args.out or cfg.output
    if out:
        try:
            with open(out, "w", encoding="ascii", newline="\n") as fh:
                fh.write(text)
        except OSError as err:
            print(f"error: cannot write {out}: {err.strerror}", file=sys.stderr)
            return EXIT_CONFIG
    else:
        sys.stdout.write(text)
    return code


def _cmd_bench(args):
    family = None if args.name in ("smoke", "all") else args.name
    if family is not None and family not in FAMILIES:
        print(f"error: unknown suite {args.name!r}; use smoke or one of {', '.join(FAMILIES)}",
              file=sys.stderr)
        return EXIT_CONFIG
    configs = bundled_configs(family)
    worst = EXIT_OK
    for name, cfg in configs.items():
        t0 = time.perf_counter()
        code, trace, msg = _execute(cfg, _resolve_seed(None, cfg))
        dt = time.perf_counter() - t0
        status = "ok" if code == EXIT_OK else f"exit {code}"
        final = "" if trace is None else f" f_gap={trace.rows[-1][4]:.3e} dist_sq={trace.rows[-1][5]:.3e}"
        print(f"{name:<28s} {status:<7s} {dt:7.3f}s{final} {msg}".rstrip())
        if trace is not None and args.out_dir:
            os.makedirs(args.out_dir, exist_ok=True)
            with open(os.path.join(args.out_dir, name + ".csv"), "w", encoding="ascii", newline="\n") as fh:
                fh.write(trace_to_csv(trace))
        worst = max(worst, code)
    return worst


def _cmd_check(args):
    from .invariants import run_invariants

    t0 = time.perf_counter()
    results = run_invariants()
    failed = 0
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
        failed += not ok
    print(f"{len(results) - failed}/{len(results)} invariants hold ({time.perf_counter() - t0:.1f}s)")
    return EXIT_OK if failed == 0 else EXIT_NUMERIC


def build_parser():
    parser = argparse.ArgumentParser(prog="optlab", description="Deterministic stochastic-optimization runs.")
    sub = parser.add_subparsers(dest="command", required=True)
    for fam in FAMILIES:
        fp = sub.add_parser(fam, help=f"{fam} solvers")
        fsub = fp.add_subparsers(dest="action", required=True)
        rp = fsub.add_parser("run", help="run one config")
        rp.add_argument("--config", required=True, help="JSON run config")
        rp.add_argument("--seed", type=int, help="override the config seed")
        rp.add_argument("--out", help="CSV output path (default: config output or stdout)")
        rp.set_defaults(func=_cmd_run, family=fam)
    bp = sub.add_parser("bench", help="run bundled configs")
    bsub = bp.add_subparsers(dest="action", required=True)
    sp = bsub.add_parser("suite", help="run a named suite: smoke or a family name")
    sp.add_argument("name")
    sp.add_argument("--out-dir", help="write one CSV per config here")
    sp.set_defaults(func=_cmd_bench)
    cp = sub.add_parser("check", help="self checks")
    csub = cp.add_subparsers(dest="action", required=True)
    ip = csub.add_parser("invariants", help="run the numerical property checks")
    ip.set_defaults(func=_cmd_check)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
