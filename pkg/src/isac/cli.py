"""Command line entry point: ``isac run``, ``isac dump-scenario``, ``isac verify``.

Exit codes: 0 on success, 2 for an invalid configuration or arguments, 3
when a solver fails or a verification check does not pass.
"""

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ConfigError, load_config, loads_config, validate
from .experiments import run_experiment, trial_rng
from .model import dump_scenario

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3

log = logging.getLogger("isac")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def _overrides(spec, args):
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "trials", None) is not None:
        changes["trials"] = args.trials
    if getattr(args, "workers", None) is not None:
        changes["workers"] = args.workers
    if changes:
        spec = replace(spec, **changes)
        validate(spec)
    return spec


def _load(args, default_kind):
    if args.config is not None:
        return load_config(args.config)
    return loads_config(f'kind = "{default_kind}"')


def cmd_run(args):
    spec = _overrides(load_config(args.config), args)
    out = Path(args.out) if args.out else Path("results") / spec.kind
    result = run_experiment(spec, out)
    n_err = sum(1 for r in result.rows if getattr(r, "error", "")) if spec.kind != "verify" else 0
    print(f"{spec.kind}: {len(result.rows)} rows written to {out}")
    if result.failed:
        print(f"{n_err} solver error(s); see the error column" if n_err else "checks failed", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def cmd_dump(args):
    spec = _overrides(_load(args, "convergence"), args)
    power = args.power_dbm if args.power_dbm is not None else spec.power_dbm[0]
    sc = spec.scenario.build(trial_rng(spec.seed, args.trial, 0), power)
    out = Path(args.out) if args.out else Path("scenario")
    dump_scenario(sc, out)
    print(f"scenario (seed {spec.seed}, trial {args.trial}, {power} dBm) written to {out}")
    return EXIT_OK


def cmd_verify(args):
    spec = _overrides(_load(args, "verify"), args)
    if spec.kind != "verify":
        spec = replace(spec, kind="verify")
    out = Path(args.out) if args.out else None
    result = run_experiment(spec, out)
    width = max(len(k) for k in result.by_check())
    for check, rows in result.by_check().items():
        worst = max((r.value for r in rows), default=np.nan)
        ok = all(r.passed for r in rows)
        thr = rows[0].threshold
        print(f"{'PASS' if ok else 'FAIL'}  {check:<{width}}  worst={worst:.3e}  threshold={thr:.1e}  n={len(rows)}")
    return EXIT_SOLVER if result.failed else EXIT_OK


def build_parser():
    p = _Parser(prog="isac", description="Joint communication and sensing transceiver experiments.")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="run an experiment described by a TOML config")
    r.add_argument("--config", required=True, help="experiment TOML file")
    r.add_argument("--seed", type=int, help="override the master seed")
    r.add_argument("--trials", type=int, help="override the number of Monte Carlo trials")
    r.add_argument("--out", help="output directory (default results/<kind>)")
    r.add_argument("--workers", type=int, help="worker processes for trials")
    r.set_defaults(func=cmd_run)

    d = sub.add_parser("dump-scenario", help="write the realized matrices of one trial as CSV")
    d.add_argument("--config", help="experiment TOML file (default: convergence defaults)")
    d.add_argument("--seed", type=int, help="override the master seed")
    d.add_argument("--trial", type=int, default=0, help="trial index (default 0)")
    d.add_argument("--power-dbm", type=float, help="transmit power (default: first sweep value)")
    d.add_argument("--out", help="output directory (default ./scenario)")
    d.set_defaults(func=cmd_dump)

    v = sub.add_parser("verify", help="run the oracle battery on small instances")
    v.add_argument("--config", help="verify TOML file (default: built-in small instance)")
    v.add_argument("--seed", type=int, help="override the master seed")
    v.add_argument("--trials", type=int, help="number of instances")
    v.add_argument("--out", help="also write verify.csv to this directory")
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        log.debug("solver failure", exc_info=True)
        print(f"solver failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
