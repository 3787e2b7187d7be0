"""Command-line entry point: ``python -m vinrs <subcommand>``."""

import argparse
import ctypes
import ctypes.util
import sys

from . import harness
from .env import dumps_map, make_world


def _keep_freed_memory():
    """Stop glibc from returning large blocks to the OS after every free.

    The network allocates many short-lived arrays of a few hundred KB;
    without this each one is a fresh mmap and page faults dominate runtime.
    """
    name = ctypes.util.find_library("c")
    if not name or not sys.platform.startswith("linux"):
        return
    try:
        libc = ctypes.CDLL(name)
        M_TRIM_THRESHOLD, M_MMAP_THRESHOLD = -1, -3
        libc.mallopt(M_MMAP_THRESHOLD, 1 << 30)
        libc.mallopt(M_TRIM_THRESHOLD, 1 << 30)
    except (OSError, AttributeError):
        pass


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vinrs", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run every (mode, seed) pair from a config file")
    r.add_argument("config")
    r.add_argument("--output-dir", default=None, help="overrides output_dir in the config")

    s = sub.add_parser("selfcheck", help="oracle, gradient, planning, message and invariance checks")
    s.add_argument("--corrupt-grad", action="store_true", help=argparse.SUPPRESS)

    pd = sub.add_parser("plotdata", help="mean/std columns per mode from run CSVs")
    pd.add_argument("csv_dir")
    pd.add_argument("--output-dir", default=None)

    g = sub.add_parser("gradcheck", help="finite-difference check of the full network loss")
    g.add_argument("--corrupt-grad", action="store_true", help=argparse.SUPPRESS)

    m = sub.add_parser("map-dump", help="print an environment in the text map format")
    m.add_argument("env", choices=["four_rooms", "four_rooms_traps"])
    m.add_argument("--trap-seed", type=int, default=0)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _keep_freed_memory()
    try:
        if args.command == "run":
            out = harness.run(args.config, args.output_dir)
            print(f"wrote results to {out}")
            return harness.EXIT_OK
        if args.command == "plotdata":
            for path in harness.plotdata(args.csv_dir, args.output_dir):
                print(path)
            return harness.EXIT_OK
        if args.command == "selfcheck":
            results = harness.selfcheck(args.corrupt_grad)
            return harness.EXIT_OK if all(r.ok for r in results) else harness.EXIT_CHECK_FAILED
        if args.command == "gradcheck":
            r = harness.gradcheck(args.corrupt_grad)
            return harness.EXIT_OK if r.ok else harness.EXIT_CHECK_FAILED
        if args.command == "map-dump":
            kwargs = {"seed": args.trap_seed} if args.env == "four_rooms_traps" else {}
            sys.stdout.write(dumps_map(make_world(args.env, **kwargs)))
            return harness.EXIT_OK
    except harness.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return harness.EXIT_CONFIG
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return harness.EXIT_CONFIG
    return harness.EXIT_CONFIG
