"""Command-line front end.

    bilevel-maas solve --example1 --method sdbb --rule bp
    bilevel-maas benchmark --group MaaS-4-3 --count 20 --seed 0
    bilevel-maas sensitivity --axis bmax_ratio --grid 1.5,2,3,4 --group MaaS-4-3

Set BILEVEL_LOG to off, info or trace for progress on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .bnb import TRACE, BnbConfig, SolveReport, brute_force_oracle, solve_bardmoore, solve_sdbb
from .instgen import GroupSpec, PRESETS, example1, generate, preset_overrides
from .model import EffectKind, MarketInstance

log = logging.getLogger("artifact")

METHODS = {"sdbb": solve_sdbb, "bardmoore": solve_bardmoore, "oracle": brute_force_oracle}
BENCH_FIELDS = ["group", "instance", "method", "rule", "k", "LB", "gap", "T_s", "time_limit_hit"]
SWEEP_FIELDS = ["axis", "value", "replication", "profit", "mean_x", "mean_y", "delta"]
AXES = ("bmax_ratio", "betamax_ratio", "C_lo", "C_hi")
LOG_LEVELS = {"off": logging.WARNING, "info": logging.INFO, "trace": TRACE}


def _sig(v) -> str:
    """Six significant digits; blanks for missing values."""
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.6g}"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, set, frozenset)):
        return [_jsonable(v) for v in (sorted(obj) if isinstance(obj, (set, frozenset)) else obj)]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def _setup_logging():
    level = os.environ.get("BILEVEL_LOG", "off").lower()
    if level not in LOG_LEVELS:
        print(f"warning: BILEVEL_LOG={level!r} not in {sorted(LOG_LEVELS)}; using off",
              file=sys.stderr)
        level = "off"
    logging.addLevelName(TRACE, "TRACE")
    logging.basicConfig(level=LOG_LEVELS[level], stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


# -- argument parsing ------------------------------------------------------------
def _add_solver_flags(p: argparse.ArgumentParser):
    p.add_argument("--model", choices=[k.value for k in EffectKind], default=None,
                   help="network-effect model (default linear; instance files keep their own)")
    p.add_argument("--rule", choices=["bp", "diffob", "wi"], default="bp")
    p.add_argument("--theta", type=float, default=0.5, help="gap weight of the wi rule")
    p.add_argument("--eps", type=float, default=1e-4, help="follower audit tolerance")
    p.add_argument("--gap-tol", type=float, default=1e-6)
    p.add_argument("--time-limit", type=float, default=10800.0, help="seconds per solve")
    p.add_argument("--lambda-max", type=float, default=None, help="cap on dual multipliers")
    p.add_argument("--preset", choices=sorted(PRESETS), default="default",
                   help="generator ranges for --group instances")
    p.add_argument("--out", type=Path, default=Path("out"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bilevel-maas",
                                     description="Bilevel pricing for mobility-as-a-service markets")
    sub = parser.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("solve", help="solve one instance or a seeded group")
    src = ps.add_mutually_exclusive_group(required=True)
    src.add_argument("--instance", type=Path)
    src.add_argument("--example1", action="store_true")
    src.add_argument("--group", help="MaaS-N-K")
    ps.add_argument("--count", type=int, default=1)
    ps.add_argument("--seed", type=int, default=0)
    ps.add_argument("--method", choices=sorted(METHODS), default="sdbb")
    _add_solver_flags(ps)

    pb = sub.add_parser("benchmark", help="methods x instances x groups to CSV")
    pb.add_argument("--group", action="append", required=True, help="MaaS-N-K; repeatable")
    pb.add_argument("--count", type=int, default=20)
    pb.add_argument("--seed", type=int, default=0)
    pb.add_argument("--method", action="append", choices=sorted(METHODS),
                    help="repeatable; default sdbb, bardmoore and oracle")
    pb.add_argument("--jobs", type=int, default=1, help="worker processes")
    _add_solver_flags(pb)

    pv = sub.add_parser("sensitivity", help="sweep one generator or bound parameter")
    pv.add_argument("--axis", choices=AXES, required=True)
    pv.add_argument("--grid", required=True, help="comma-separated axis values")
    pv.add_argument("--group", default="MaaS-4-3")
    pv.add_argument("--count", type=int, default=20, help="replications per grid point")
    pv.add_argument("--seed", type=int, default=0)
    pv.add_argument("--method", choices=sorted(METHODS), default="sdbb")
    _add_solver_flags(pv)
    return parser


def _config(args) -> BnbConfig:
    return BnbConfig(rule=args.rule, theta=args.theta, eps_follower=args.eps,
                     gap_tol=args.gap_tol, time_limit_s=args.time_limit,
                     lambda_max=args.lambda_max)


def _kind(args) -> EffectKind:
    return EffectKind(args.model or "linear")


def _group_instance(group: str, seed: int, args, **spec_kw) -> MarketInstance:
    kind = _kind(args)
    spec = GroupSpec.from_name(group, seed=seed, kind=kind,
                               overrides=preset_overrides(args.preset, kind), **spec_kw)
    return generate(spec)


def run_method(method: str, inst: MarketInstance, cfg: BnbConfig) -> SolveReport:
    return METHODS[method](inst, cfg)


# -- solve -------------------------------------------------------------------------
def _write_report(dirpath: Path, inst: MarketInstance, rep: SolveReport, args):
    dirpath.mkdir(parents=True, exist_ok=True)
    body = {"instance": inst.name, "model": inst.effect.kind.value,
            "config": {"rule": args.rule, "theta": args.theta, "eps": args.eps,
                       "gap_tol": args.gap_tol, "time_limit": args.time_limit,
                       "lambda_max": args.lambda_max},
            **rep.to_dict()}
    (dirpath / "report.json").write_text(json.dumps(_jsonable(body), indent=2))
    with open(dirpath / "trace.jsonl", "w") as fh:
        for rec in rep.trace:
            fh.write(json.dumps(_jsonable(rec)) + "\n")


def _summary_line(label: str, rep: SolveReport) -> str:
    lb = "-inf" if rep.LB is None else f"{rep.LB:.6g}"
    gap = f"{rep.gap:.6g} (abs)" if rep.gap_absolute else f"{100 * rep.gap:.4g}"
    flag = "  time limit" if rep.time_limit_hit else ""
    return f"{label:<24} {rep.k:>6} {lb:>12} {gap:>14} {rep.wall_time:>9.3f}{flag}"


def cmd_solve(args) -> int:
    jobs = []
    if args.instance is not None:
        if not args.instance.is_file():
            print(f"error: instance file {args.instance} not found", file=sys.stderr)
            return 2
        try:
            inst = MarketInstance.load(args.instance)
        except (ValueError, KeyError, json.JSONDecodeError) as exc:
            print(f"error: cannot read {args.instance}: {exc}", file=sys.stderr)
            return 2
        if args.model and EffectKind(args.model) != inst.effect.kind:
            print(f"error: --model {args.model} conflicts with the instance's "
                  f"{inst.effect.kind.value} effect", file=sys.stderr)
            return 2
        jobs.append((args.instance.stem, inst))
    elif args.example1:
        jobs.append(("example1", example1(_kind(args))))
    else:
        try:
            for j in range(args.count):
                jobs.append((f"{args.group}-{args.seed + j}",
                             _group_instance(args.group, args.seed + j, args)))
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
    cfg = _config(args)
    print(f"{'instance':<24} {'k':>6} {'LB':>12} {'Gap(%)':>14} {'T(s)':>9}")
    for label, inst in jobs:
        rep = run_method(args.method, inst, cfg)
        out = args.out if len(jobs) == 1 else args.out / label
        _write_report(out, inst, rep, args)
        print(_summary_line(label, rep))
    return 0


# -- benchmark ---------------------------------------------------------------------
def _bench_task(task):
    group, j, seed, method, args = task
    inst = _group_instance(group, seed, args)
    rep = run_method(method, inst, _config(args))
    return {"group": group, "instance": j, "method": method,
            "rule": args.rule if method == "sdbb" else "", "k": rep.k, "LB": rep.LB,
            "gap": rep.gap, "T_s": rep.wall_time, "time_limit_hit": rep.time_limit_hit}


def cmd_benchmark(args) -> int:
    methods = args.method or ["sdbb", "bardmoore", "oracle"]
    try:
        for g in args.group:
            GroupSpec.from_name(g)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    tasks = [(g, j, args.seed + j, m, args) for g in args.group for j in range(args.count)
             for m in methods]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            rows = list(pool.map(_bench_task, tasks))
    else:
        rows = [_bench_task(t) for t in tasks]
    args.out.mkdir(parents=True, exist_ok=True)
    path = args.out / "benchmark.csv"
    _write_csv(path, BENCH_FIELDS, rows)
    _write_csv(sys.stdout, BENCH_FIELDS, rows)
    return 0


def _write_csv(dest, fields, rows):
    fh = open(dest, "w", newline="") if isinstance(dest, Path) else dest
    try:
        wr = csv.DictWriter(fh, fieldnames=fields)
        wr.writeheader()
        for r in rows:
            wr.writerow({k: _sig(r[k]) if not isinstance(r[k], str) else r[k] for k in fields})
    finally:
        if fh is not dest:
            fh.close()


# -- sensitivity -------------------------------------------------------------------
def sweep_instance(axis: str, value: float, group: str, seed: int, args) -> MarketInstance:
    """Instance for one grid point. Generator axes regenerate from the same seed, so
    each replication changes only the swept quantity; bound axes keep the effect fixed."""
    if axis == "bmax_ratio":
        return _group_instance(group, seed, args, bmax_ratio=value)
    if axis == "betamax_ratio":
        return _group_instance(group, seed, args, betamax_ratio=value)
    base = _group_instance(group, seed, args)
    if axis == "C_lo":
        return base.with_bounds(gap_lower=value)
    return base.with_bounds(gap_upper=value)


def sweep_row(axis, value, rep_idx, rep: SolveReport) -> dict:
    row = {"axis": axis, "value": value, "replication": rep_idx}
    dec = rep.incumbent
    if dec is None:
        row.update(profit=None, mean_x=None, mean_y=None, delta=None)
    else:
        row.update(profit=rep.LB, mean_x=float(np.mean(dec.x)) if len(dec.x) else 0.0,
                   mean_y=float(np.mean(dec.y)) if len(dec.y) else 0.0, delta=dec.delta)
    return row


def cmd_sensitivity(args) -> int:
    try:
        grid = [float(v) for v in args.grid.split(",") if v.strip()]
        GroupSpec.from_name(args.group)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    cfg = _config(args)
    rows = []
    for value in grid:
        for r in range(args.count):
            try:
                inst = sweep_instance(args.axis, value, args.group, args.seed + r, args)
            except ValueError as exc:
                print(f"error: grid value {value}: {exc}", file=sys.stderr)
                return 2
            rows.append(sweep_row(args.axis, value, r, run_method(args.method, inst, cfg)))
    args.out.mkdir(parents=True, exist_ok=True)
    _write_csv(args.out / f"sensitivity_{args.axis}.csv", SWEEP_FIELDS, rows)
    _write_csv(sys.stdout, SWEEP_FIELDS, rows)
    return 0


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    handler = {"solve": cmd_solve, "benchmark": cmd_benchmark, "sensitivity": cmd_sensitivity}
    return handler[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
