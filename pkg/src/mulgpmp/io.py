"""Scenario files, result files and SVG renders."""

from __future__ import annotations

import csv
import json
from dataclasses import replace
from pathlib import Path

import numpy as np

from .environment import load_map, save_map
from .scenarios import Agent, RunResult, Scenario

SCENARIO_KEYS = ("t_total", "N", "n_p", "qc", "init", "name", "lateral_offset", "astar_downsample")
WEIGHT_KEYS = ("eps_obs", "sigma_obs", "eps_mul", "sigma_mul")


def scenario_from_dict(data: dict, base_dir=".") -> Scenario:
    try:
        agents = [Agent(tuple(map(float, a["start"])), tuple(map(float, a["goal"])), float(a.get("radius", 1.0)))
                  for a in data["agents"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"malformed agents list: {exc}") from None
    defaults = Scenario(agents=[])
    kwargs = {k: data[k] for k in SCENARIO_KEYS if k in data}
    for k, v in kwargs.items():
        kind = type(getattr(defaults, k))
        if kind is int and float(v) != int(v):
            raise ValueError(f"{k} must be an integer, got {v!r}")
        kwargs[k] = kind(v)
    weights = {k: float(data[k]) for k in WEIGHT_KEYS if k in data}
    kwargs["weights"] = replace(defaults.weights, **weights)
    map_path = data.get("map")
    grid = None
    if map_path is not None:
        path = Path(map_path)
        if not path.is_absolute():
            path = Path(base_dir) / path
        grid = load_map(path)
    unknown = set(data) - set(SCENARIO_KEYS) - set(WEIGHT_KEYS) - {"agents", "map"}
    if unknown:
        raise ValueError(f"unknown scenario fields: {sorted(unknown)}")
    return Scenario(agents=agents, grid=grid, map_path=map_path, **kwargs)


def scenario_to_dict(scenario: Scenario) -> dict:
    out = {
        "agents": [{"start": list(a.start), "goal": list(a.goal), "radius": a.radius} for a in scenario.agents],
        "map": scenario.map_path,
    }
    for k in SCENARIO_KEYS:
        out[k] = getattr(scenario, k)
    for k in WEIGHT_KEYS:
        out[k] = getattr(scenario.weights, k)
    return out


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: invalid JSON ({exc})") from None
    data.setdefault("name", path.stem)
    return scenario_from_dict(data, base_dir=path.parent)


def save_scenario(scenario: Scenario, path) -> None:
    """Write a scenario file; an in-memory grid goes to ``<stem>.map`` next to it."""
    path = Path(path)
    if scenario.grid is not None and scenario.map_path is None:
        map_file = path.with_suffix(".map")
        save_map(scenario.grid, map_file)
        scenario = replace(scenario, map_path=map_file.name)
    path.write_text(json.dumps(scenario_to_dict(scenario), indent=2) + "\n")


def write_result(result: RunResult, out_dir) -> list:
    """result.json plus one agent_<j>.csv (t,x,y,vx,vy) per agent."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = [out_dir / "result.json"]
    written[0].write_text(json.dumps(result.to_dict(), indent=1) + "\n")
    for j, traj in enumerate(result.trajectories):
        p = out_dir / f"agent_{j}.csv"
        with p.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x", "y", "vx", "vy"])
            for t, s in zip(result.times, traj):
                w.writerow([f"{t:.6f}"] + [f"{v:.6f}" for v in s[:4]])
        written.append(p)
    return written


_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"]


def render_svg(scenario: Scenario, trajectories, size: int = 800) -> str:
    """SVG of the world with start circles, goal crosses and dense paths.

    World-to-viewport: uniform scale, y up, 5% margin.
    """
    grid = scenario.workspace_grid()
    trajectories = np.asarray(trajectories, dtype=float)
    x0, y0, x1, y1 = grid.extent
    pts = trajectories[:, :, :2].reshape(-1, 2)
    x0, y0 = min(x0, pts[:, 0].min()), min(y0, pts[:, 1].min())
    x1, y1 = max(x1, pts[:, 0].max()), max(y1, pts[:, 1].max())
    span = max(x1 - x0, y1 - y0)
    scale = 0.9 * size / span
    margin = 0.05 * size
    width = 2 * margin + scale * (x1 - x0)
    height = 2 * margin + scale * (y1 - y0)

    def tx(x):
        return margin + scale * (x - x0)

    def ty(y):
        return height - margin - scale * (y - y0)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.1f}" height="{height:.1f}" '
        f'viewBox="0 0 {width:.1f} {height:.1f}">',
        f'<rect x="0" y="0" width="{width:.1f}" height="{height:.1f}" fill="white"/>',
    ]
    cs = grid.cell_size
    for r, row in enumerate(grid.cells):
        c = 0
        while c < len(row):
            if not row[c]:
                c += 1
                continue
            start = c
            while c < len(row) and row[c]:
                c += 1
            gx = grid.origin[0] + start * cs
            gy = grid.origin[1] + (r + 1) * cs
            out.append(f'<rect x="{tx(gx):.2f}" y="{ty(gy):.2f}" width="{scale * (c - start) * cs:.2f}" '
                       f'height="{scale * cs:.2f}" fill="#444"/>')
    for j, (agent, traj) in enumerate(zip(scenario.agents, trajectories)):
        color = _COLORS[j % len(_COLORS)]
        path = " ".join(f"{tx(x):.2f},{ty(y):.2f}" for x, y in traj[:, :2])
        out.append(f'<polyline points="{path}" fill="none" stroke="{color}" stroke-width="2"/>')
        sx, sy = agent.start
        out.append(f'<circle cx="{tx(sx):.2f}" cy="{ty(sy):.2f}" r="{scale * agent.radius:.2f}" '
                   f'fill="none" stroke="{color}" stroke-width="2"/>')
        gx, gy = agent.goal
        d = scale * agent.radius * 0.7
        out.append(f'<path d="M{tx(gx) - d:.2f},{ty(gy) - d:.2f} L{tx(gx) + d:.2f},{ty(gy) + d:.2f} '
                   f'M{tx(gx) - d:.2f},{ty(gy) + d:.2f} L{tx(gx) + d:.2f},{ty(gy) - d:.2f}" '
                   f'stroke="{color}" stroke-width="2"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
