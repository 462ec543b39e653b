"""Command-line interface.

Exit codes: 0 success, 2 infeasible design or invalid input, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline
from .errors import (AllInfeasible, DomainError, NoEquilibrium, StructureError, Unreachable,
                     ZDShapeError)
from .scenario import ScenarioConfig, default_scenario

EXIT_OK, EXIT_INFEASIBLE, EXIT_NUMERICAL = 0, 2, 3
INFEASIBLE = (AllInfeasible, NoEquilibrium, Unreachable, DomainError, StructureError)


def _scenario(args) -> ScenarioConfig:
    sc = ScenarioConfig.load(args.scenario) if args.scenario else default_scenario()
    if args.seed is not None:
        sc.seed = args.seed
    return sc


def _outdir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _result_path(args, out: Path):
    return Path(args.result) if args.result else out / "result.json"


def cmd_scan(args):
    sc = _scenario(args)
    parts = [Path(p) for p in args.out.split(",")]
    if len(parts) == 1 and parts[0].suffix == "":
        out = _outdir(parts[0])
        grid, svg = out / "grid.csv", out / "heatmap.svg"
    else:
        grid = parts[0]
        svg = parts[1] if len(parts) > 1 else None
        grid.parent.mkdir(parents=True, exist_ok=True)
    land, _ = pipeline.stage_scan(sc, grid, svg, args.res, tuple(args.axes.split(",")))
    kb, kt, J = land.minimum
    print(f"grid minimum J = {J:.6g} at kb = {kb:.6g}, kt = {kt:.6g}; "
          f"{int((~land.feasible).sum())} infeasible cells, "
          f"{len(land.local_minima())} strict local minima")


def cmd_optimize(args):
    sc = _scenario(args)
    target = Path(args.out)
    if target.suffix != ".json":
        target = _outdir(target) / "result.json"
    target.parent.mkdir(parents=True, exist_ok=True)
    res, _ = pipeline.stage_optimize(sc, target, args.solver, sc.seed)
    print(f"{args.solver}: p* = {res.p_star}, J* = {res.J_star:.9g}, evaluations = {res.n_evals}")


def cmd_simulate_zd(args):
    sc = _scenario(args)
    out = _outdir(args.out)
    p = pipeline.resolve_design(sc, _result_path(args, out))
    _, _, info, _ = pipeline.stage_simulate_zd(sc, p, out)
    print(json.dumps(info, indent=2))


def _stabilized(sc, args):
    out = _outdir(args.out)
    p = pipeline.resolve_design(sc, _result_path(args, out))
    model, orbit, _, _ = pipeline.stage_simulate_zd(sc, p, out)
    syn, diag, _ = pipeline.stage_stabilize(sc, model, orbit, out)
    return out, p, orbit, syn, diag


def cmd_stabilize(args):
    sc = _scenario(args)
    *_, diag = _stabilized(sc, args)
    print(json.dumps(diag, indent=2))


def cmd_closed_loop(args):
    sc = _scenario(args)
    out, p, orbit, syn, _ = _stabilized(sc, args)
    _, info, _ = pipeline.stage_closed_loop(sc, p, syn, orbit, out)
    print(json.dumps(info, indent=2))
    if not info["complete"]:
        raise ZDShapeError(info["diagnostic"])


def cmd_report(args):
    if args.regenerate:
        paths = pipeline.stage_report(_outdir(args.out))
        print(f"regenerated {len(paths)} files in {args.out}")
        return
    man = pipeline.run_scenario(_scenario(args), args.out, solver=args.solver,
                                scan_resolution=args.res)
    print(f"manifest {man.digest}: {len(man.outputs)} artifacts, stages {man.stages}")


def build_parser():
    ap = argparse.ArgumentParser(prog="zdshape", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(name, fn, help_, out_default):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--scenario", help="scenario JSON (default: packaged scenario)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=out_default)
        p.set_defaults(func=fn)
        return p

    p = common("scan", cmd_scan, "cost landscape over (kb, kt)", "grid.csv,heatmap.svg")
    p.add_argument("--axes", default="kb,kt")
    p.add_argument("--res", type=int, default=100)
    p = common("optimize", cmd_optimize, "PSO or GA design search", "result.json")
    p.add_argument("--solver", choices=("pso", "ga"), default="pso")
    for name, fn, h in (("simulate-zd", cmd_simulate_zd, "zero dynamics and orbit"),
                        ("stabilize", cmd_stabilize, "periodic Riccati gain"),
                        ("closed-loop", cmd_closed_loop, "closed-loop simulation")):
        p = common(name, fn, h, "run")
        p.add_argument("--result", help="optimization result JSON (default: OUT/result.json)")
    p = common("report", cmd_report, "full pipeline, or figure regeneration", "run")
    p.add_argument("--solver", choices=("pso", "ga"), default="pso")
    p.add_argument("--res", type=int, default=0, help="add a landscape grid of this resolution")
    p.add_argument("--regenerate", action="store_true", help="only redraw figures from CSVs")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except INFEASIBLE as exc:
        print(f"infeasible: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ZDShapeError, FloatingPointError, ArithmeticError) as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (FileNotFoundError, ValueError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
