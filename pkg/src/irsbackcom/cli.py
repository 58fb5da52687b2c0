"""Command-line driver: ``irsbackcom --config scenario.yaml --sweep sweep.yaml --out out.csv``."""

from __future__ import annotations

import argparse
import logging
import secrets
import sys
from pathlib import Path

from .config import ConfigError, load_scenario, load_sweep
from .experiments import METHODS, run_sweep, write_csv

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="irsbackcom",
        description="Monte Carlo sweeps of CE transmit power in an IRS-aided bistatic "
                    "backscatter network.")
    p.add_argument("--config", required=True, help="scenario YAML file")
    p.add_argument("--sweep", required=True, help="sweep spec YAML file")
    p.add_argument("--out", default="-", help="CSV output path ('-' for stdout)")
    p.add_argument("--seed", type=int, default=None,
                   help="master seed (overrides the sweep file; random if neither sets it)")
    p.add_argument("--realizations", type=int, default=None,
                   help="channel realizations per swept value")
    p.add_argument("--methods", default=None,
                   help=f"comma-separated subset of {','.join(METHODS)}")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("--avg", choices=("linear", "db"), default="db",
                   help="average dB values (default) or linear powers")
    p.add_argument("--append", action="store_true", help="append rows without a header")
    p.add_argument("--no-timing", action="store_true",
                   help="write 0 in the seconds column so reruns are byte-identical")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        scenario, layout = load_scenario(args.config)
        spec = load_sweep(args.sweep)
        if args.realizations is not None:
            spec.realizations = args.realizations
        if args.methods:
            spec.methods = [m.strip() for m in args.methods.split(",") if m.strip()]
        if args.seed is not None:
            spec.master_seed = args.seed
        elif spec.master_seed is None:
            spec.master_seed = secrets.randbits(63)
        spec.__post_init__()
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"master seed: {spec.master_seed}", file=sys.stderr)

    def report(row):
        logging.info("%s=%g %s: %.2f dBm (%d/%d feasible)", spec.swept_variable, row.swept,
                     row.method, row.mean_dbm, row.n_feasible, row.n_total)

    try:
        rows = run_sweep(spec, scenario, jobs=args.jobs, avg=args.avg,
                         timing=not args.no_timing, tag_center=layout["tag_center"],
                         tag_radius=layout["tag_radius"], progress=report)
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    header = not args.append
    if args.out == "-":
        write_csv(rows, sys.stdout, header)
    else:
        path = Path(args.out)
        header = header or not path.exists() or path.stat().st_size == 0
        with open(path, "a" if args.append else "w", newline="") as fh:
            write_csv(rows, fh, header)
    if all(r.n_feasible == 0 for r in rows):
        print("every realization was infeasible", file=sys.stderr)
        return EXIT_INFEASIBLE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
