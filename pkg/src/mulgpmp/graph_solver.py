"""Joint multi-agent factor graph and its Levenberg-Marquardt solver.

Variables are the support states of every agent. Internally they are laid
out time-major (knot, then agent) so that the normal-equation matrix is
banded: GP prior factors couple adjacent knots of one agent, inter-agent
factors couple the same or adjacent knots of two agents. The banded system
is factorized with a banded Cholesky.

Agents are processed in a canonical order (sorted by start, goal and
radius) regardless of the order they were given in, which makes solves
exactly equivariant under agent relabeling.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .environment import SignedDistanceField
from .factors import (
    FactorLinearization,
    NoiseWeights,
    anchor_factor,
    gp_prior_factor,
    interpolated_factor,
    mutual_factor,
    mutual_hinge_batch,
    static_factor,
    static_hinge_batch,
)
from .gp_prior import ConstantVelocityModel, InterpolationCoeffs, NumericalError, SupportTrajectory


class FactorizationError(NumericalError):
    """The damped system was not positive definite; increase the damping."""


@dataclass(frozen=True)
class JointTrajectory:
    """Support states of all agents on a shared knot grid, shape (n_ag, N+1, 2d)."""

    t0: float
    tN: float
    states: np.ndarray

    def __post_init__(self):
        states = np.array(self.states, dtype=float)
        if states.ndim != 3 or states.shape[1] < 2:
            raise ValueError(f"states must be (n_ag, N+1, 2d), got {states.shape}")
        states.setflags(write=False)
        object.__setattr__(self, "states", states)

    @classmethod
    def from_agents(cls, trajectories) -> "JointTrajectory":
        trajectories = list(trajectories)
        first = trajectories[0]
        for tr in trajectories[1:]:
            if (tr.t0, tr.tN, tr.states.shape) != (first.t0, first.tN, first.states.shape):
                raise ValueError("all agents must share t0, tN, N and workspace dimension")
        return cls(first.t0, first.tN, np.stack([tr.states for tr in trajectories]))

    @property
    def n_agents(self) -> int:
        return self.states.shape[0]

    @property
    def num_intervals(self) -> int:
        return self.states.shape[1] - 1

    @property
    def dt(self) -> float:
        return (self.tN - self.t0) / self.num_intervals

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.num_intervals + 1)

    def agent(self, j: int) -> SupportTrajectory:
        return SupportTrajectory(self.t0, self.tN, self.states[j])


@dataclass(frozen=True)
class SolverConfig:
    max_iterations: int = 100
    relative_cost_tolerance: float = 1e-5
    absolute_cost_tolerance: float = 1e-12
    lambda0: float = 0.01
    lambda_factor: float = 10.0
    lambda_max: float = 1e10
    step_tolerance: float = 1e-10
    n_p: int = 9
    weights: NoiseWeights = field(default_factory=NoiseWeights)
    qc: float = 1.0
    k0: float = 1e-6
    sigma_anchor: float = 1e-4

    def __post_init__(self):
        if self.relative_cost_tolerance < 0 or self.absolute_cost_tolerance < 0:
            raise ValueError("tolerances must be non-negative")
        if self.n_p < 0:
            raise ValueError("n_p must be non-negative")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass
class SolveStats:
    iterations: int
    initial_cost: float
    final_cost: float
    cost_trace: list
    time_ms: float
    reason: str


@dataclass(frozen=True)
class Factor:
    """One factor of the graph, in user agent indices.

    ``tau_index`` is 0 for factors on a support state and k >= 1 for the
    k-th interpolated time inside the interval starting at ``knot``.
    """

    kind: str  # "gp" | "start" | "goal" | "static" | "mutual"
    agents: tuple
    knot: int
    tau_index: int = 0

    @property
    def interpolated(self) -> bool:
        return self.tau_index > 0

    @property
    def variables(self) -> list:
        if self.kind == "gp" or self.interpolated:
            return [(a, k) for a in self.agents for k in (self.knot, self.knot + 1)]
        return [(a, self.knot) for a in self.agents]


def _whitener(information: np.ndarray) -> np.ndarray:
    """Upper factor U with U^T U = information."""
    return np.linalg.cholesky(information).T


class FactorGraph:
    """Factors over the support states of ``n_ag`` agents.

    Parameters
    ----------
    mean : (n_ag, N+1, 2d) prior mean; its first state is also the start anchor.
    goals : (n_ag, 2d) goal anchor targets; defaults to the last mean state.
    radii : per-agent body radii.
    sdf : field used by static factors; ``None`` leaves them out.
    mutual : whether to add inter-agent factors.
    """

    def __init__(self, mean: JointTrajectory, config: SolverConfig, radii, sdf: SignedDistanceField | None = None,
                 goals=None, mutual: bool = True):
        self.config = config
        self.t0, self.tN = mean.t0, mean.tN
        self.n_agents = mean.n_agents
        self.N = mean.num_intervals
        self.dt = mean.dt
        self.state_dim = mean.states.shape[2]
        self.dim = self.state_dim // 2
        self.model = ConstantVelocityModel(self.dim, config.qc)
        self.sdf = sdf
        self.radii = np.broadcast_to(np.asarray(radii, dtype=float), (self.n_agents,)).copy()
        self.mean = mean
        goals = mean.states[:, -1] if goals is None else np.asarray(goals, dtype=float)
        self.goals = np.array(goals, dtype=float).reshape(self.n_agents, self.state_dim)

        keys = [tuple(mean.states[j, 0]) + tuple(self.goals[j]) + (self.radii[j],) for j in range(self.n_agents)]
        self.order = sorted(range(self.n_agents), key=lambda j: keys[j])  # rank -> user index
        self.rank = np.empty(self.n_agents, dtype=int)
        self.rank[self.order] = np.arange(self.n_agents)

        n_p = config.n_p
        self.coeffs = [self.model.interp_coeffs(self.dt, k * self.dt / (n_p + 1)) for k in range(n_p + 1)]
        self.factors = self._make_factors(sdf is not None, mutual and self.n_agents > 1)
        self._compile()

    # ----- structure -------------------------------------------------------
    def variable_index(self, agent: int, knot: int) -> int:
        """First row/column of the variable (agent, knot) in the system."""
        return (knot * self.n_agents + self.rank[agent]) * self.state_dim

    @property
    def num_variables(self) -> int:
        return self.n_agents * (self.N + 1) * self.state_dim

    def _make_factors(self, with_static, with_mutual) -> list:
        N, n_p = self.N, self.config.n_p
        factors = []
        for j in self.order:
            factors.append(Factor("start", (j,), 0))
            factors.extend(Factor("gp", (j,), i) for i in range(N))
            factors.append(Factor("goal", (j,), N))
            if with_static:
                factors.extend(Factor("static", (j,), i) for i in range(N + 1))
                factors.extend(Factor("static", (j,), i, k) for i in range(N) for k in range(1, n_p + 1))
        if with_mutual:
            for ra, rb in combinations(range(self.n_agents), 2):
                pair = (self.order[ra], self.order[rb])
                factors.extend(Factor("mutual", pair, i) for i in range(N + 1))
                factors.extend(Factor("mutual", pair, i, k) for i in range(N) for k in range(1, n_p + 1))
        return factors

    def count(self, kind: str, interpolated: bool | None = None) -> int:
        return sum(1 for f in self.factors if f.kind == kind and (interpolated is None or f.interpolated == interpolated))

    def describe(self) -> str:
        """Plain-text dump of the factor inventory."""
        lines = [f"FactorGraph: {self.n_agents} agents, {self.N} intervals, n_p={self.config.n_p}"]
        for kind in ("start", "goal", "gp", "static", "mutual"):
            lines.append(f"  {kind:7s} support={self.count(kind, False):5d} interpolated={self.count(kind, True):5d}")
        return "\n".join(lines)

    def _point_coeffs(self, knot, tau_index):
        """(interval, lam, psi) locating a knot or interpolated time."""
        if tau_index == 0 and knot == self.N:
            return knot - 1, np.zeros((self.state_dim,) * 2), np.eye(self.state_dim)
        c = self.coeffs[tau_index]
        return knot, c.lam, c.psi

    def _compile(self):
        s = self.state_dim
        d = self.dim
        cfg = self.config
        mean = self.mean.states

        # Prior part: linear in x, so its Hessian is constant.
        q_inv = self.model.process_noise_inv(self.dt)
        self._gp_white = _whitener(q_inv)
        self._k0_white = _whitener(np.eye(s) / cfg.k0)
        self._phi = self.model.transition(self.dt)

        rows, cols, vals = [], [], []
        def add_block(r0, c0, B):
            rr, cc = np.meshgrid(np.arange(B.shape[0]), np.arange(B.shape[1]), indexing="ij")
            rows.append((r0 + rr).ravel())
            cols.append((c0 + cc).ravel())
            vals.append(B.ravel())

        gp_diag_first = self._phi.T @ q_inv @ self._phi
        gp_off = -self._phi.T @ q_inv
        anchor_goal = np.eye(s) / cfg.sigma_anchor**2
        for j in self.order:
            for i in range(self.N):
                a = self.variable_index(j, i)
                b = self.variable_index(j, i + 1)
                add_block(a, a, gp_diag_first)
                add_block(a, b, gp_off)
                add_block(b, a, gp_off.T)
                add_block(b, b, q_inv)
            a0 = self.variable_index(j, 0)
            add_block(a0, a0, np.eye(s) / cfg.k0)
            aN = self.variable_index(j, self.N)
            add_block(aN, aN, anchor_goal)
        n = self.num_variables
        self._prior_hessian = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
        )

        # Canonical-order views used by the batched evaluation.
        self._mean_c = mean[self.order]
        self._goals_c = self.goals[self.order]

        def point_tables(fs, n_agents_per):
            m = len(fs)
            L = np.empty((m, d, s))
            P = np.empty((m, d, s))
            ag = np.empty((m, n_agents_per), dtype=int)
            iv = np.empty(m, dtype=int)
            for idx, f in enumerate(fs):
                interval, lam, psi = self._point_coeffs(f.knot, f.tau_index)
                L[idx] = lam[:d]
                P[idx] = psi[:d]
                ag[idx] = [self.rank[a] for a in f.agents]
                iv[idx] = interval
            return L, P, ag, iv

        static = [f for f in self.factors if f.kind == "static"]
        self._static = point_tables(static, 1) if static else None
        mutual = [f for f in self.factors if f.kind == "mutual"]
        self._mutual = point_tables(mutual, 2) if mutual else None

        # Column index for every (rank, knot) state block.
        na = self.n_agents
        self._col0 = (np.arange(self.N + 1)[None, :] * na + np.arange(na)[:, None]) * s  # (rank, knot)

        u = (2 * na) * s - 1 if self.N >= 1 else s - 1
        self._bandwidth = min(u, n - 1)

    # ----- state conversion ----------------------------------------------
    def _to_canonical(self, X: JointTrajectory) -> np.ndarray:
        if X.states.shape != self.mean.states.shape:
            raise ValueError(f"trajectory shape {X.states.shape} does not match graph {self.mean.states.shape}")
        return X.states[self.order]

    def _flatten(self, Xc: np.ndarray) -> np.ndarray:
        # time-major: (knot, rank, state)
        return np.ascontiguousarray(Xc.transpose(1, 0, 2)).ravel()

    def _unflatten(self, x: np.ndarray) -> np.ndarray:
        na, s = self.n_agents, self.state_dim
        return x.reshape(self.N + 1, na, s).transpose(1, 0, 2)

    def flatten(self, X: JointTrajectory) -> np.ndarray:
        """Stacked variable vector in system order."""
        return self._flatten(self._to_canonical(X))

    def unflatten(self, x: np.ndarray) -> JointTrajectory:
        Xc = self._unflatten(np.asarray(x, dtype=float))
        states = np.empty_like(Xc)
        states[self.order] = Xc
        return JointTrajectory(self.t0, self.tN, states)

    # ----- residuals -------------------------------------------------------
    def _prior_residuals(self, Xc):
        dev = Xc - self._mean_c
        gp = dev[:, :-1] @ self._phi.T - dev[:, 1:]  # (na, N, s)
        start = dev[:, 0]
        goal = Xc[:, -1] - self._goals_c
        return gp, start, goal

    def _hinge_points(self, table, Xc, slot):
        L, P, ag, iv = table
        xa = Xc[ag[:, slot], iv]
        xb = Xc[ag[:, slot], iv + 1]
        return np.einsum("mij,mj->mi", L, xa) + np.einsum("mij,mj->mi", P, xb)

    def _hinges(self, Xc):
        """Errors and position Jacobians of all static and mutual factors."""
        w = self.config.weights
        out = {}
        if self._static is not None:
            p = self._hinge_points(self._static, Xc, 0)
            radius = self.radii[self.order][self._static[2][:, 0]]
            out["static"] = static_hinge_batch(p, self.sdf, radius, w.eps_obs)
        if self._mutual is not None:
            pa = self._hinge_points(self._mutual, Xc, 0)
            pb = self._hinge_points(self._mutual, Xc, 1)
            out["mutual"] = mutual_hinge_batch(pa, pb, w.eps_mul)
        return out

    def _cost_canonical(self, Xc) -> float:
        gp, start, goal = self._prior_residuals(Xc)
        cfg = self.config
        cost = 0.5 * np.sum((gp @ self._gp_white.T) ** 2)
        cost += 0.5 * np.sum(start**2) / cfg.k0
        cost += 0.5 * np.sum(goal**2) / cfg.sigma_anchor**2
        hinges = self._hinges(Xc)
        if "static" in hinges:
            cost += 0.5 * np.sum(hinges["static"][0] ** 2) / cfg.weights.sigma_obs**2
        if "mutual" in hinges:
            cost += 0.5 * np.sum(hinges["mutual"][0] ** 2) / cfg.weights.sigma_mul**2
        return float(cost)

    def total_cost(self, X: JointTrajectory) -> float:
        """Sum of 1/2 ||e||^2 weighted by each factor's information."""
        return self._cost_canonical(self._to_canonical(X))

    def prior_cost(self, X: JointTrajectory) -> float:
        """Cost of the GP prior factors only (no anchors): the smoothness cost."""
        gp, _, _ = self._prior_residuals(self._to_canonical(X))
        return float(0.5 * np.sum((gp @ self._gp_white.T) ** 2))

    # ----- linearization ---------------------------------------------------
    def _hinge_jacobian(self, Xc):
        """Whitened residuals and sparse Jacobian of the active hinge factors."""
        w = self.config.weights
        hinges = self._hinges(Xc)
        res, rows, cols, vals = [], [], [], []
        nrow = 0
        for kind, sigma, slots in (("static", w.sigma_obs, 1), ("mutual", w.sigma_mul, 2)):
            if kind not in hinges:
                continue
            err, g = hinges[kind]
            table = self._static if kind == "static" else self._mutual
            L, P, ag, iv = table
            if not (np.all(np.isfinite(err)) and np.all(np.isfinite(g))):
                bad = int(np.flatnonzero(~np.isfinite(err) | ~np.isfinite(g).all(axis=1))[0])
                raise NumericalError(f"non-finite {kind} factor #{bad}")
            active = err != 0
            if not active.any():
                continue
            err, g = err[active], g[active]
            L, P, ag, iv = L[active], P[active], ag[active], iv[active]
            m = err.size
            blocks, colsets = [], []
            for slot in range(slots):
                sign = 1.0 if slot == 0 else -1.0
                gs = sign * g / sigma
                blocks.append(np.einsum("mi,mij->mj", gs, L))
                blocks.append(np.einsum("mi,mij->mj", gs, P))
                colsets.append(self._col0[ag[:, slot], iv])
                colsets.append(self._col0[ag[:, slot], iv + 1])
            s = self.state_dim
            J = np.concatenate(blocks, axis=1)  # (m, 2*slots*s)
            C = np.concatenate([c[:, None] + np.arange(s)[None, :] for c in colsets], axis=1)
            rows.append(np.repeat(np.arange(nrow, nrow + m), J.shape[1]))
            cols.append(C.ravel())
            vals.append(J.ravel())
            res.append(err / sigma)
            nrow += m
        n = self.num_variables
        if nrow == 0:
            return np.zeros(0), sp.csr_matrix((0, n))
        Jw = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(nrow, n))
        return np.concatenate(res), Jw

    def _prior_gradient(self, Xc) -> np.ndarray:
        """J^T W e of the prior and anchor factors, in system order."""
        cfg = self.config
        gp, start, goal = self._prior_residuals(Xc)
        q_inv = self._gp_white.T @ self._gp_white
        we = gp @ q_inv  # (na, N, s), weighted residuals
        grad = np.zeros_like(Xc)
        grad[:, :-1] += we @ self._phi
        grad[:, 1:] -= we
        grad[:, 0] += start / cfg.k0
        grad[:, -1] += goal / cfg.sigma_anchor**2
        return self._flatten(grad)

    def linearize(self, X: JointTrajectory):
        """Normal equations (Lambda_sys, b) at X, in system order."""
        return self._linearize_canonical(self._to_canonical(X))

    def _linearize_canonical(self, Xc):
        res, Jw = self._hinge_jacobian(Xc)
        H = self._prior_hessian + (Jw.T @ Jw).tocsr()
        b = -self._prior_gradient(Xc) - Jw.T @ res
        return H.tocsr(), b

    # ----- per-factor route -----------------------------------------------
    def linearize_factor(self, f: Factor, X: JointTrajectory) -> FactorLinearization:
        """Linearize a single factor with the scalar factor functions."""
        S = X.states
        cfg = self.config
        mean = self.mean.states
        if f.kind == "gp":
            (j,) = f.agents
            return gp_prior_factor(S[j, f.knot], S[j, f.knot + 1], self.dt, self.model.qc,
                                   mean[j, f.knot], mean[j, f.knot + 1])
        if f.kind == "start":
            (j,) = f.agents
            return anchor_factor(S[j, 0], mean[j, 0], math.sqrt(cfg.k0))
        if f.kind == "goal":
            (j,) = f.agents
            return anchor_factor(S[j, -1], self.goals[j], cfg.sigma_anchor)
        coeffs = self.coeffs[f.tau_index]
        if f.kind == "static":
            (j,) = f.agents
            if f.interpolated:
                return interpolated_factor("static", (S[j, f.knot], S[j, f.knot + 1]), coeffs, cfg.weights,
                                           sdf=self.sdf, radius=self.radii[j], dt_interval=self.dt)
            return static_factor(S[j, f.knot], self.sdf, self.radii[j], cfg.weights)
        if f.kind == "mutual":
            a, b = f.agents
            if f.interpolated:
                states = (S[a, f.knot], S[a, f.knot + 1], S[b, f.knot], S[b, f.knot + 1])
                return interpolated_factor("mutual", states, coeffs, cfg.weights, dt_interval=self.dt)
            return mutual_factor(S[a, f.knot], S[b, f.knot], cfg.weights)
        raise ValueError(f"unknown factor kind {f.kind!r}")

    # ----- densification ---------------------------------------------------
    def densify(self, X: JointTrajectory, per_interval: int | None = None):
        """Support plus GP-interpolated states, ``per_interval - 1`` inside each interval.

        Returns (times, states) with states shaped (n_ag, N*per_interval + 1, 2d).
        """
        per = self.config.n_p + 1 if per_interval is None else per_interval
        return densify(X, self.model, per)


def densify(X: JointTrajectory, model: ConstantVelocityModel, per_interval: int):
    S = X.states
    N, dt = X.num_intervals, X.dt
    coeffs = [model.interp_coeffs(dt, k * dt / per_interval) for k in range(per_interval)]
    lam = np.stack([c.lam for c in coeffs])
    psi = np.stack([c.psi for c in coeffs])
    # (n_ag, N, per, s)
    inner = np.einsum("kij,anj->anki", lam, S[:, :-1]) + np.einsum("kij,anj->anki", psi, S[:, 1:])
    # the k = 0 points are the support states themselves; keep them exact
    inner[:, :, 0] = S[:, :-1]
    dense = np.concatenate([inner.reshape(S.shape[0], N * per_interval, -1), S[:, -1:]], axis=1)
    times = X.t0 + dt * np.arange(N * per_interval + 1) / per_interval
    return times, dense


def build_graph(scenario, config: SolverConfig | None = None, mean: JointTrajectory | None = None) -> FactorGraph:
    """Joint factor graph of a scenario around its prior mean."""
    config = scenario.solver_config() if config is None else config
    scenario.validate()
    if mean is None:
        mean = scenario.prior_mean()
    return FactorGraph(mean, config, scenario.radii, sdf=scenario.sdf(), goals=scenario.goal_states(mean))


def total_cost(graph: FactorGraph, X: JointTrajectory) -> float:
    return graph.total_cost(X)


def linearize(graph: FactorGraph, X: JointTrajectory):
    return graph.linearize(X)


def _to_banded(A: sp.csr_matrix, u: int) -> np.ndarray:
    coo = A.tocoo()
    upper = coo.row <= coo.col
    r, c, v = coo.row[upper], coo.col[upper], coo.data[upper]
    if np.any(c - r > u):
        raise ValueError("matrix bandwidth exceeds the declared band")
    ab = np.zeros((u + 1, A.shape[0]))
    np.add.at(ab, (u + r - c, c), v)
    return ab


def _bandwidth(A: sp.spmatrix) -> int:
    coo = A.tocoo()
    return int(np.max(np.abs(coo.col - coo.row))) if coo.nnz else 0


def solve_normal_equations(H, b, damping: float = 0.0, bandwidth: int | None = None) -> np.ndarray:
    """Solve (H + damping * diag(H)) dx = b with a banded Cholesky.

    Raises FactorizationError if the damped matrix is not positive definite.
    """
    if damping < 0:
        raise ValueError("damping must be non-negative")
    H = sp.csr_matrix(H)
    b = np.asarray(b, dtype=float)
    if damping:
        H = H + damping * sp.diags(H.diagonal())
    u = _bandwidth(H) if bandwidth is None else bandwidth
    ab = _to_banded(H, u)
    try:
        cb = sla.cholesky_banded(ab, lower=False, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise FactorizationError(f"damped system is not positive definite ({exc}); increase damping") from None
    dx = sla.cho_solve_banded((cb, False), b, check_finite=False)
    # one step of iterative refinement for badly scaled anchors
    r = b - H @ dx
    dx += sla.cho_solve_banded((cb, False), r, check_finite=False)
    return dx


def optimize(graph: FactorGraph, X0: JointTrajectory, config: SolverConfig | None = None):
    """Levenberg-Marquardt on the joint graph. Returns (X*, SolveStats)."""
    cfg = graph.config if config is None else config
    tic = time.perf_counter()
    Xc = graph._to_canonical(X0)
    x = graph._flatten(Xc)
    cost = graph._cost_canonical(Xc)
    if not math.isfinite(cost):
        raise ValueError("initial trajectory has non-finite cost")
    initial = cost
    trace = [cost]
    lam = cfg.lambda0
    reason = "max iterations"
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        H, b = graph._linearize_canonical(graph._unflatten(x))
        try:
            dx = solve_normal_equations(H, b, lam, graph._bandwidth)
        except FactorizationError:
            lam *= cfg.lambda_factor
            if lam > cfg.lambda_max:
                reason = "damping overflow"
                break
            continue
        if np.linalg.norm(dx) < cfg.step_tolerance:
            reason = "small step"
            break
        x_new = x + dx
        new_cost = graph._cost_canonical(graph._unflatten(x_new))
        if new_cost < cost:
            rel = (cost - new_cost) / max(cost, 1e-300)
            x, cost = x_new, new_cost
            trace.append(cost)
            lam = max(lam / cfg.lambda_factor, 1e-12)
            if rel < cfg.relative_cost_tolerance:
                reason = "relative tolerance"
                break
            if cost <= cfg.absolute_cost_tolerance:
                reason = "absolute tolerance"
                break
        else:
            lam *= cfg.lambda_factor
            if lam > cfg.lambda_max:
                reason = "damping overflow"
                break
    stats = SolveStats(
        iterations=it,
        initial_cost=initial,
        final_cost=cost,
        cost_trace=trace,
        time_ms=1e3 * (time.perf_counter() - tic),
        reason=reason,
    )
    return graph.unflatten(x), stats
