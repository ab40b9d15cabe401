"""Command-line entry point: ``python -m mulgpmp <command> ...``."""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import os
import random
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from .factors import NoiseWeights
from .graph_solver import SolverConfig
from .io import load_scenario, render_svg, write_result
from .scenarios import RUNNERS, Scenario, benchmark

EXIT_OK, EXIT_ERROR, EXIT_UNSUCCESSFUL = 0, 1, 2
GRID_KEYS = ("eps_obs", "sigma_obs", "eps_mul", "sigma_mul")
_SCENARIO_FIELDS = ("t_total", "N", "n_p", "qc", "init", "lateral_offset", "astar_downsample")
_SOLVER_FIELDS = tuple(f.name for f in fields(SolverConfig) if f.name not in ("weights", "n_p", "qc"))


class CliError(Exception):
    pass


def _coerce(raw: str, like):
    if isinstance(like, bool):
        return raw.lower() in ("1", "true", "yes")
    if isinstance(like, int):
        return int(raw)
    if isinstance(like, float):
        return float(raw)
    return raw


def apply_overrides(scenario: Scenario, config: SolverConfig, pairs) -> tuple:
    """Apply ``key=value`` pairs to the scenario, its weights, or the solver config."""
    sc_kw, w_kw, cfg_kw = {}, {}, {}
    for pair in pairs:
        key, sep, raw = pair.partition("=")
        key = key.strip()
        if not sep:
            raise CliError(f"--set expects key=value, got {pair!r}")
        try:
            if key in _SCENARIO_FIELDS:
                sc_kw[key] = _coerce(raw, getattr(scenario, key))
            elif key in GRID_KEYS:
                w_kw[key] = float(raw)
            elif key in _SOLVER_FIELDS:
                cfg_kw[key] = _coerce(raw, getattr(config, key))
            else:
                raise CliError(f"unknown override key {key!r}")
        except ValueError:
            raise CliError(f"bad value for {key}: {raw!r}") from None
    if w_kw:
        sc_kw["weights"] = replace(scenario.weights, **w_kw)
    return replace(scenario, **sc_kw), replace(config, **cfg_kw)


def _seed():
    seed = os.environ.get("PLANNER_SEED")
    if seed is not None:
        try:
            value = int(seed)
        except ValueError:
            raise CliError(f"PLANNER_SEED must be an integer, got {seed!r}") from None
        random.seed(value)
        np.random.seed(value)


def cmd_solve(args) -> int:
    scenario = load_scenario(args.scenario)
    scenario, config = apply_overrides(scenario, SolverConfig(), args.set or [])
    scenario.validate()
    result = RUNNERS[args.method](scenario, config)
    out = Path(args.out)
    write_result(result, out)
    (out / "trajectories.svg").write_text(render_svg(scenario, result.trajectories))
    status = "success" if result.success else "FAILED"
    print(f"{scenario.name or args.scenario}: {args.method} {status} in {result.time_ms:.1f} ms, "
          f"{result.iterations} iterations, min agent clearance {result.min_agent_clearance:.3f}")
    if result.reason and not result.success:
        print(f"  reason: {result.reason}")
    return EXIT_OK if result.success else EXIT_UNSUCCESSFUL


def cmd_benchmark(args) -> int:
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    bad = [m for m in methods if m not in RUNNERS]
    if bad or not methods:
        raise CliError(f"unknown methods: {bad or args.methods!r}")
    jobs = args.jobs or os.cpu_count() or 1
    report = benchmark(methods=methods, jobs=jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=1) + "\n")
    table = report.table()
    (out / "table.txt").write_text(table + "\n")
    print(table)
    if "joint" not in methods:
        return EXIT_OK
    ok = all(r["success_pct"] == 100.0 for r in report.rows if r["method"] == "joint")
    return EXIT_OK if ok else EXIT_UNSUCCESSFUL


def pareto_mask(rows) -> list:
    """Non-dominated rows: maximize success, minimize smoothness and time."""
    keys = [(-float(r["success"]), r["smoothness"], r["time_ms"]) for r in rows]
    mask = []
    for a in keys:
        dominated = any(all(x <= y for x, y in zip(b, a)) and b != a for b in keys)
        mask.append(not dominated)
    return mask


def cmd_gridsearch(args) -> int:
    scenario = load_scenario(args.scenario)
    scenario.validate()
    try:
        grid = json.loads(Path(args.grid).read_text())
    except json.JSONDecodeError as exc:
        raise CliError(f"{args.grid}: invalid JSON ({exc})") from None
    if not isinstance(grid, dict) or not any(k in grid for k in GRID_KEYS):
        raise CliError("empty grid: give at least one of " + ", ".join(GRID_KEYS))
    unknown = set(grid) - set(GRID_KEYS)
    if unknown:
        raise CliError(f"unknown grid keys: {sorted(unknown)}")
    axes = []
    for k in GRID_KEYS:
        values = grid.get(k, [getattr(scenario.weights, k)])
        if not isinstance(values, list):
            values = [values]
        if not values:
            raise CliError(f"empty grid axis {k}")
        axes.append([float(v) for v in values])

    rows = []
    for combo in itertools.product(*axes):
        weights = NoiseWeights(**dict(zip(GRID_KEYS, combo)))
        res = RUNNERS["joint"](replace(scenario, weights=weights))
        rows.append({**dict(zip(GRID_KEYS, combo)), "success": bool(res.success), "smoothness": res.smoothness,
                     "time_ms": res.time_ms, "iterations": res.iterations,
                     "min_agent_clearance": res.min_agent_clearance,
                     "min_static_clearance": res.min_static_clearance})
    for r, p in zip(rows, pareto_mask(rows)):
        r["pareto"] = p
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "gridsearch.csv").open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    n_ok = sum(r["success"] for r in rows)
    print(f"{len(rows)} combinations, {n_ok} successful, {sum(r['pareto'] for r in rows)} on the Pareto front")
    return EXIT_OK if n_ok else EXIT_UNSUCCESSFUL


def cmd_render(args) -> int:
    scenario = load_scenario(args.scenario)
    data = json.loads(Path(args.result).read_text())
    svg = render_svg(scenario, np.asarray(data["trajectories"], dtype=float))
    out = Path(args.out)
    if out.suffix != ".svg":
        out.mkdir(parents=True, exist_ok=True)
        out = out / "trajectories.svg"
    out.write_text(svg)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mulgpmp", description="Multi-agent GP motion planning")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="solve one scenario file")
    s.add_argument("--scenario", required=True)
    s.add_argument("--method", choices=sorted(RUNNERS), default="joint")
    s.add_argument("--out", required=True)
    s.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a scenario or solver field")
    s.set_defaults(func=cmd_solve)

    b = sub.add_parser("benchmark", help="run the 150-problem formation suite")
    b.add_argument("--out", required=True)
    b.add_argument("--jobs", type=int, default=None, help="worker processes (default: all cores)")
    b.add_argument("--methods", default="joint,sequential")
    b.set_defaults(func=cmd_benchmark)

    g = sub.add_parser("gridsearch", help="sweep obstacle/mutual weights with the joint method")
    g.add_argument("--scenario", required=True)
    g.add_argument("--grid", required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gridsearch)

    r = sub.add_parser("render", help="draw a stored result as SVG")
    r.add_argument("--scenario", required=True)
    r.add_argument("--result", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_render)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _seed()
        return args.func(args)
    except (CliError, ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
