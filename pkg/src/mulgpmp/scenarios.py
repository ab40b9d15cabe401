"""Planning scenarios, the joint planner and the replanning baseline.

Includes the formation-permutation suite, the two-room hallway world,
collision checking and the benchmark aggregation.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from itertools import combinations, permutations

import numpy as np

from .environment import OccupancyGrid, astar_path, compute_sdf, path_to_trajectory, sdf_query
from .factors import NoiseWeights
from .gp_prior import ConstantVelocityModel
from .graph_solver import FactorGraph, JointTrajectory, SolverConfig, build_graph, densify, optimize


GOAL_TOLERANCE = 0.5
COLLISION_TOL = 1e-6


class ScenarioValidationError(ValueError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("invalid scenario: " + "; ".join(self.violations))


@dataclass(frozen=True)
class Agent:
    start: tuple
    goal: tuple
    radius: float = 1.0


@dataclass
class Scenario:
    """Declarative multi-agent planning problem.

    ``grid`` is optional; without it the world is obstacle free and a blank
    grid around the agents is used wherever a field is needed.
    """

    agents: list
    grid: OccupancyGrid | None = None
    t_total: float = 10.0
    N: int = 9
    n_p: int = 9
    weights: NoiseWeights = field(default_factory=NoiseWeights)
    qc: float = 1.0
    init: str = "line"
    name: str = ""
    map_path: str | None = None
    astar_downsample: int = 4
    lateral_offset: float = 0.5
    workspace_cell_size: float = 0.2

    @property
    def n_agents(self) -> int:
        return len(self.agents)

    @property
    def radii(self) -> np.ndarray:
        return np.array([a.radius for a in self.agents], dtype=float)

    @property
    def starts(self) -> np.ndarray:
        return np.array([a.start for a in self.agents], dtype=float)

    @property
    def goals(self) -> np.ndarray:
        return np.array([a.goal for a in self.agents], dtype=float)

    def violations(self) -> list:
        out = []
        if self.n_agents < 1:
            out.append("scenario needs at least one agent")
        if self.init not in ("line", "astar"):
            out.append(f"unknown init mode {self.init!r}")
        if self.N < 1:
            out.append("N must be >= 1")
        if not self.t_total > 0:
            out.append("t_total must be positive")
        if self.n_p < 0:
            out.append("n_p must be >= 0")
        for j, a in enumerate(self.agents):
            if not a.radius > 0:
                out.append(f"agent {j}: radius must be positive")
        for i, j in combinations(range(self.n_agents), 2):
            a, b = self.agents[i], self.agents[j]
            d = math.dist(a.start, b.start)
            if d < a.radius + b.radius:
                out.append(f"agents {i} and {j}: starts {d:.3g} m apart, need >= {a.radius + b.radius:.3g}")
        if self.grid is not None:
            for j, a in enumerate(self.agents):
                if self.grid.occupied_at(a.start):
                    out.append(f"agent {j}: start {tuple(a.start)} is occupied")
                if self.grid.occupied_at(a.goal):
                    out.append(f"agent {j}: goal {tuple(a.goal)} is occupied")
        return out

    def validate(self) -> None:
        v = self.violations()
        if v:
            raise ScenarioValidationError(v)

    def solver_config(self, base: SolverConfig | None = None) -> SolverConfig:
        base = SolverConfig() if base is None else base
        return replace(base, n_p=self.n_p, weights=self.weights, qc=self.qc)

    def workspace_grid(self) -> OccupancyGrid:
        if self.grid is not None:
            return self.grid
        pts = np.vstack([self.starts, self.goals])
        margin = 10.0
        lo = np.floor(pts.min(axis=0) - margin)
        hi = np.ceil(pts.max(axis=0) + margin)
        return OccupancyGrid.empty(lo[0], lo[1], hi[0], hi[1], self.workspace_cell_size)

    def sdf(self):
        return _cached_sdf(self)

    def prior_mean(self) -> JointTrajectory:
        """Constant-velocity straight lines, or A* paths at constant speed."""
        trajs = []
        for a in self.agents:
            if self.init == "astar" and not np.allclose(a.start, a.goal):
                path = astar_path(self.workspace_grid(), a.start, a.goal, self.astar_downsample, a.radius)
                wp = np.vstack([a.start, path.waypoints[1:-1], a.goal])
            else:
                wp = np.array([a.start, a.goal], dtype=float)
            trajs.append(path_to_trajectory(wp, self.N, 0.0, self.t_total))
        return JointTrajectory.from_agents(trajs)

    def initial_guess(self, config: SolverConfig | None = None) -> JointTrajectory:
        """Prior mean, nudged sideways for straight-line multi-agent starts.

        Each moving agent is shifted to its right by ``lateral_offset`` times
        a half-sine over the horizon (endpoints untouched). This breaks the
        mirror symmetry of head-on swaps, whose straight-line configuration
        is a saddle the solver cannot leave on its own.
        """
        mean = self.prior_mean()
        if self.init != "line" or self.n_agents < 2 or self.lateral_offset == 0:
            return mean
        states = np.stack([nudge_right(mean.states[j], mean.times, a.goal, self.lateral_offset)
                           for j, a in enumerate(self.agents)])
        return JointTrajectory(mean.t0, mean.tN, states)

    def goal_states(self, mean: JointTrajectory) -> np.ndarray:
        """Goal anchor targets: goal position with the mean's final velocity."""
        g = mean.states[:, -1].copy()
        g[:, :2] = self.goals
        return g


def nudge_right(states, times, goal, amplitude: float) -> np.ndarray:
    """Shift a support trajectory to the right of its start-to-goal heading
    by ``amplitude`` times a half-sine in time; endpoints are unchanged."""
    out = np.array(states, dtype=float)
    heading = np.subtract(goal, out[0, :2])
    norm = np.linalg.norm(heading)
    if norm == 0 or amplitude == 0:
        return out
    right = np.array([heading[1], -heading[0]]) / norm
    T = times[-1] - times[0]
    phase = np.pi * (times - times[0]) / T
    out[1:-1, :2] += amplitude * np.sin(phase[1:-1, None]) * right
    out[1:-1, 2:] += amplitude * np.pi / T * np.cos(phase[1:-1, None]) * right
    return out


_SDF_CACHE: dict = {}


def _cached_sdf(scenario: Scenario):
    grid = scenario.workspace_grid()
    key = (grid.origin, grid.cell_size, grid.cells.shape, grid.cells.tobytes())
    sdf = _SDF_CACHE.get(key)
    if sdf is None:
        if len(_SDF_CACHE) > 32:
            _SDF_CACHE.clear()
        sdf = _SDF_CACHE[key] = compute_sdf(grid)
    return sdf


@dataclass
class RunResult:
    name: str
    method: str
    success: bool
    times: np.ndarray
    trajectories: np.ndarray  # (n_ag, M, 2d) dense states
    support: np.ndarray  # (n_ag, N+1, 2d)
    min_agent_clearance: float
    min_static_clearance: float
    goal_errors: np.ndarray
    time_ms: float
    iterations: int
    smoothness: float
    collision_free: bool = True
    failure_step: int | None = None
    cost_trace: list = field(default_factory=list)
    reason: str = ""

    def to_dict(self) -> dict:
        def num(v):
            return None if v is None or not math.isfinite(v) else float(v)

        return {
            "name": self.name,
            "method": self.method,
            "success": bool(self.success),
            "collision_free": bool(self.collision_free),
            "min_agent_clearance": num(self.min_agent_clearance),
            "min_static_clearance": num(self.min_static_clearance),
            "goal_errors": [float(e) for e in self.goal_errors],
            "time_ms": float(self.time_ms),
            "iterations": int(self.iterations),
            "smoothness": float(self.smoothness),
            "failure_step": self.failure_step,
            "reason": self.reason,
            "cost_trace": [float(c) for c in self.cost_trace],
            "times": self.times.tolist(),
            "support": self.support.tolist(),
            "trajectories": self.trajectories.tolist(),
        }


def clearances(positions: np.ndarray, radii, sdf=None):
    """Minimum center distance between any two agents and minimum sdf(p) - r.

    ``positions`` has shape (n_ag, M, 2). Also returns the collision flag.
    """
    radii = np.asarray(radii, dtype=float)
    n = positions.shape[0]
    min_agent = math.inf
    collide = False
    for i, j in combinations(range(n), 2):
        d = np.linalg.norm(positions[i] - positions[j], axis=1)
        min_agent = min(min_agent, float(d.min()))
        if np.any(d < radii[i] + radii[j] - COLLISION_TOL):
            collide = True
    min_static = math.inf
    if sdf is not None:
        for j in range(n):
            dist, _ = sdf_query(sdf, positions[j])
            c = float(np.min(dist - radii[j]))
            min_static = min(min_static, c)
        if min_static < -COLLISION_TOL:
            collide = True
    return not collide, min_agent, min_static


def check_collision_free(X: JointTrajectory, radii, sdf=None, per_interval: int = 10, qc=1.0):
    """Collision check on GP-densified trajectories.

    ``per_interval`` = 10 gives the 91-state sampling of a 10-knot horizon.
    Returns (collision_free, min_agent_clearance, min_static_clearance).
    """
    model = ConstantVelocityModel(X.states.shape[2] // 2, qc)
    _, dense = densify(X, model, per_interval)
    return clearances(dense[:, :, : model.workspace_dim], radii, sdf)


def _finish(scenario: Scenario, method: str, X: JointTrajectory, config: SolverConfig, elapsed_ms: float,
            iterations: int, smoothness: float, **extra) -> RunResult:
    model = ConstantVelocityModel(2, config.qc)
    times, dense = densify(X, model, config.n_p + 1)
    free, min_agent, min_static = clearances(dense[:, :, :2], scenario.radii, scenario.sdf())
    goal_err = np.linalg.norm(dense[:, -1, :2] - scenario.goals, axis=1)
    success = free and bool(np.all(goal_err <= GOAL_TOLERANCE)) and extra.get("failure_step") is None
    return RunResult(
        name=scenario.name,
        method=method,
        success=success,
        times=times,
        trajectories=dense,
        support=np.array(X.states),
        min_agent_clearance=min_agent,
        min_static_clearance=min_static,
        goal_errors=goal_err,
        time_ms=elapsed_ms,
        iterations=iterations,
        smoothness=smoothness,
        collision_free=free,
        **extra,
    )


def run_joint(scenario: Scenario, config: SolverConfig | None = None) -> RunResult:
    """Plan all agents at once on the joint factor graph."""
    config = scenario.solver_config(config)
    tic = time.perf_counter()
    mean = scenario.prior_mean()
    graph = build_graph(scenario, config, mean=mean)
    X, stats = optimize(graph, scenario.initial_guess(config), config)
    elapsed = 1e3 * (time.perf_counter() - tic)
    return _finish(scenario, "joint", X, config, elapsed, stats.iterations, graph.prior_cost(X),
                   cost_trace=stats.cost_trace, reason=stats.reason)


def smoothness_cost(X: JointTrajectory, qc=1.0, mean: JointTrajectory | None = None) -> float:
    """GP prior cost of a trajectory with respect to ``mean`` (zero mean if omitted)."""
    model = ConstantVelocityModel(X.states.shape[2] // 2, qc)
    dev = X.states if mean is None else X.states - mean.states
    phi = model.transition(X.dt)
    q_inv = model.process_noise_inv(X.dt)
    e = dev[:, :-1] @ phi.T - dev[:, 1:]
    return float(0.5 * np.einsum("ani,ij,anj->", e, q_inv, e))


def run_sequential_baseline(scenario: Scenario, config: SolverConfig | None = None) -> RunResult:
    """Individual replanning: every step, each agent replans with the others
    rasterized into its distance field at their current positions."""
    config = scenario.solver_config(config)
    scenario.validate()
    model = ConstantVelocityModel(2, config.qc)
    mean = scenario.prior_mean()
    goals = scenario.goal_states(mean)
    N, dt = scenario.N, mean.dt
    radii = scenario.radii
    base = scenario.workspace_grid()
    n = scenario.n_agents

    init = scenario.initial_guess(config)
    plans = [init.states[j].copy() for j in range(n)]
    executed = [mean.states[:, 0].copy()]
    elapsed = 0.0
    iterations = 0
    failure_step = None
    reason = ""
    for k in range(N):
        t_k = mean.t0 + k * dt
        current = np.array([p[0] for p in plans])
        for j in range(n):
            tic = time.perf_counter()
            try:
                others = np.delete(current[:, :2], j, axis=0)
                grid = base
                for r_o, c in zip(np.delete(radii, j), others):
                    grid = grid.with_discs(c[None], r_o)
                sdf = compute_sdf(grid)
                prior = JointTrajectory(t_k, mean.tN, model.propagate_mean(current[j], N - k, dt)[None])
                graph = FactorGraph(prior, config, radii[j : j + 1], sdf=sdf, goals=goals[j : j + 1], mutual=False)
                x0 = plans[j].copy()
                x0[0] = current[j]
                x0 = nudge_right(x0, prior.times, scenario.agents[j].goal, scenario.lateral_offset)
                X, stats = optimize(graph, JointTrajectory(t_k, mean.tN, x0[None]), config)
                plans[j] = np.array(X.states[0])
                iterations += stats.iterations
            except Exception as exc:  # a failed replan ends the episode
                failure_step = k
                reason = f"replan failed for agent {j} at step {k}: {exc}"
            elapsed += 1e3 * (time.perf_counter() - tic)
            if failure_step is not None:
                break
        if failure_step is not None:
            break
        for j in range(n):
            plans[j] = plans[j][1:]
        executed.append(np.array([p[0] for p in plans]))

    if failure_step is not None:
        # hold the last executed state for the rest of the horizon
        while len(executed) < N + 1:
            executed.append(executed[-1])
    X = JointTrajectory(mean.t0, mean.tN, np.stack(executed, axis=1))
    return _finish(scenario, "sequential", X, config, elapsed, iterations, smoothness_cost(X, config.qc, mean),
                   failure_step=failure_step, reason=reason)


def formation_slots(n: int, circumradius: float = 10.0) -> np.ndarray:
    """Canonical formation positions centered at the origin."""
    if n in (3, 5):
        ang = np.deg2rad([90.0, 210.0, 330.0])
        verts = circumradius * np.column_stack([np.cos(ang), np.sin(ang)])
        if n == 3:
            return verts
        return np.vstack([verts, (verts[0] + verts[1]) / 2, (verts[0] + verts[2]) / 2])
    if n == 4:
        ang = np.deg2rad([45.0, 135.0, 225.0, 315.0])
        return circumradius * np.column_stack([np.cos(ang), np.sin(ang)])
    raise ValueError(f"formations exist for 3, 4 or 5 agents, not {n}")


def formation_permutations(n: int, radius: float = 1.0, **overrides) -> list:
    """All n! slot permutations of the n-agent formation, identity first."""
    slots = formation_slots(n)
    out = []
    for perm in permutations(range(n)):
        agents = [Agent(tuple(slots[k]), tuple(slots[p]), radius) for k, p in enumerate(perm)]
        name = f"formation{n}_" + "".join(map(str, perm))
        out.append(Scenario(agents=agents, name=name, **overrides))
    return out


HALLWAY_CELL = 0.2
# Tuned by grid search over (eps_obs, sigma_obs, eps_mul, sigma_mul); the
# formation weights let both agents rush the corridor at the same time.
HALLWAY_WEIGHTS = NoiseWeights(sigma_obs=0.3, sigma_mul=0.3, eps_obs=1.0, eps_mul=7.0)


def hallway_grid() -> OccupancyGrid:
    """Two 10 m x 10 m rooms joined by a 12 m long, 3.6 m wide corridor.

    Walls are 1 m thick. The corridor runs flush with the top of the rooms,
    so the straight line between the room centers crosses solid wall.
    """
    wall = 1.0
    room = 10.0
    length = 12.0
    width = 3.6
    xmin, ymin = -wall, -wall
    xmax, ymax = 2 * room + length + wall, room + wall
    grid = OccupancyGrid.empty(xmin, ymin, xmax, ymax, HALLWAY_CELL)
    grid = grid.with_rectangles([(xmin, ymin, xmax, ymax)])
    y_top = room
    free = [
        (0.0, 0.0, room, room),
        (room + length, 0.0, 2 * room + length, room),
        (room - 0.01, y_top - width, room + length + 0.01, y_top),
    ]
    return grid.with_rectangles(free, occupied=False)


def hallway_scenario(**overrides) -> Scenario:
    """Two agents swapping rooms through a corridor too narrow to pass abreast."""
    params = dict(
        agents=[Agent((5.0, 5.0), (27.0, 5.0), 1.0), Agent((27.0, 5.0), (5.0, 5.0), 1.0)],
        grid=hallway_grid(),
        init="astar",
        name="hallway",
        astar_downsample=4,
        weights=HALLWAY_WEIGHTS,
    )
    params.update(overrides)
    return Scenario(**params)


@dataclass
class BenchmarkReport:
    rows: list  # dicts: n, method, problems, successes, success_pct, mean_time_ms
    results: list  # per-problem summaries

    def row(self, n: int, method: str) -> dict:
        for r in self.rows:
            if r["n"] == n and r["method"] == method:
                return r
        raise KeyError((n, method))

    def to_dict(self) -> dict:
        return {"rows": self.rows, "results": self.results}

    def table(self) -> str:
        methods = sorted({r["method"] for r in self.rows}, key=["sequential", "joint"].index)
        ns = sorted({r["n"] for r in self.rows})
        head = f"{'robots':>6}" + "".join(f" | {m + ' %':>14} {m + ' ms':>15}" for m in methods)
        lines = [head, "-" * len(head)]
        for n in ns:
            cells = "".join(
                f" | {self.row(n, m)['success_pct']:14.1f} {self.row(n, m)['mean_time_ms']:15.1f}" for m in methods
            )
            lines.append(f"{n:>6}{cells}")
        return "\n".join(lines)


RUNNERS = {"joint": run_joint, "sequential": run_sequential_baseline}


def _run_one(args):
    scenario, method, config = args
    try:
        res = RUNNERS[method](scenario, config)
        return {"name": scenario.name, "n": scenario.n_agents, "method": method, "success": bool(res.success),
                "time_ms": res.time_ms, "iterations": res.iterations, "smoothness": res.smoothness,
                "min_agent_clearance": res.min_agent_clearance, "reason": res.reason,
                "cost_trace": [float(c) for c in res.cost_trace]}
    except Exception as exc:
        return {"name": scenario.name, "n": scenario.n_agents, "method": method, "success": False,
                "time_ms": float("nan"), "iterations": 0, "smoothness": float("nan"),
                "min_agent_clearance": float("nan"), "reason": f"error: {exc}", "cost_trace": []}


def benchmark(ns=(3, 4, 5), methods=("joint", "sequential"), config: SolverConfig | None = None,
              jobs: int = 1, progress=None) -> BenchmarkReport:
    """Run every formation problem with every method and aggregate."""
    tasks = [(sc, m, config) for n in ns for sc in formation_permutations(n) for m in methods]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_one, tasks, chunksize=4))
    else:
        results = []
        for t in tasks:
            results.append(_run_one(t))
            if progress is not None:
                progress(results[-1])
    rows = []
    for n in ns:
        for m in methods:
            sel = [r for r in results if r["n"] == n and r["method"] == m]
            succ = sum(r["success"] for r in sel)
            t = [r["time_ms"] for r in sel if math.isfinite(r["time_ms"])]
            rows.append({"n": n, "method": m, "problems": len(sel), "successes": succ,
                         "success_pct": 100.0 * succ / len(sel) if sel else 0.0,
                         "mean_time_ms": float(np.mean(t)) if t else float("nan")})
    return BenchmarkReport(rows, results)
