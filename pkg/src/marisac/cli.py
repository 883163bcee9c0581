"""Command-line entry point."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .ao import InitializationError, feasibility_report, initialize
from .channel import sample_realization
from .config import ConfigError, ScenarioConfig, load_config
from .experiments import AXES, SCHEMES, ExperimentSpec, beampattern_tables, channel_landscape, run_experiment
from .metrics import write_sweep_csv


def _values(axis: str | None, raw: str | None) -> tuple:
    if axis is None:
        return ()
    if not raw:
        raise SystemExit("--sweep needs --values")
    conv = float if axis == "p0" else int
    return tuple(conv(v) for v in raw.split(","))


def _load(path) -> ScenarioConfig:
    try:
        cfg = load_config(path)
        cfg.validate()
    except (OSError, ValueError, ConfigError) as exc:
        raise SystemExit(f"invalid configuration {path}: {exc}") from None
    return cfg


def cmd_run(args) -> int:
    cfg = _load(args.config)
    schemes = tuple(s.strip() for s in args.schemes.split(",") if s.strip())
    spec = ExperimentSpec(
        base=cfg,
        axis=args.sweep,
        values=_values(args.sweep, args.values),
        realizations=args.realizations,
        schemes=schemes,
        out_dir=args.out,
        seed=args.seed,
    )
    try:
        result = run_experiment(spec)
    except ValueError as exc:
        raise SystemExit(str(exc)) from None
    print("axis,value,scheme,n_paired,n_failed,mean_gain,stderr_gain")
    for d in result.summary():
        print(",".join(str(d[k]) for k in ("axis", "value", "scheme", "n_paired", "n_failed", "mean_gain", "stderr_gain")))
    return 0


def cmd_sweep(args) -> int:
    cfg = _load(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tables = beampattern_tables(cfg, tuple(args.schemes.split(",")), args.points)
    if not tables:
        print("no scheme produced a solution (infeasible realization)", file=sys.stderr)
        return 1
    for scheme, table in tables.items():
        write_sweep_csv(table, out / f"beampattern_{scheme}.csv")
        print(f"{scheme}: wrote {out / f'beampattern_{scheme}.csv'}")
    return 0


def cmd_check(args) -> int:
    cfg = _load(args.config)
    real = sample_realization(cfg, cfg.seed if args.seed is None else args.seed)
    try:
        state = initialize(cfg, real)
    except InitializationError as exc:
        print(f"infeasible: {exc}")
        return 1
    rep = feasibility_report(cfg, real, state)
    print(json.dumps({"feasible": True, "margins": rep}, indent=2, sort_keys=True))
    return 0


def cmd_landscape(args) -> int:
    cfg = _load(args.config)
    table = channel_landscape(cfg, args.points)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "landscape.csv"
    np.savetxt(path, table, delimiter=",", header="x,y,channel_gain", comments="", fmt="%.17g")
    print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="marisac", description=__doc__)
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="Monte-Carlo comparison of schemes, optionally over a sweep")
    r.add_argument("--config", required=True)
    r.add_argument("--sweep", choices=sorted(AXES), default=None)
    r.add_argument("--values", help="comma-separated axis values")
    r.add_argument("--schemes", default="ma,fpa", help=f"comma-separated subset of {','.join(SCHEMES)}")
    r.add_argument("--realizations", type=int, default=1)
    r.add_argument("--seed", type=int, default=None, help="base seed (defaults to the config seed)")
    r.add_argument("--out", default="results")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep-beampattern", help="beampattern over [-90, 90] degrees for one realization")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--schemes", default="ma,fpa")
    s.add_argument("--points", type=int, default=361)
    s.set_defaults(func=cmd_sweep)

    c = sub.add_parser("check", help="validate a configuration and its initial feasibility")
    c.add_argument("--config", required=True)
    c.add_argument("--seed", type=int, default=None)
    c.set_defaults(func=cmd_check)

    g = sub.add_parser("landscape", help="single-antenna BS-RIS channel gain over the region")
    g.add_argument("--config", required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--points", type=int, default=101)
    g.set_defaults(func=cmd_landscape)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
