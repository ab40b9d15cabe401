"""Cost factors: GP prior, static-obstacle hinge, inter-agent hinge,
GP-interpolated variants and boundary anchors.

Each ``*_factor`` function linearizes one factor at given states. The
``*_hinge_batch`` helpers do the same arithmetic for many points at once
and are what the graph solver calls in its inner loop.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .environment import SignedDistanceField, sdf_query
from .gp_prior import InterpolationCoeffs, gp_prior_error, process_noise_inv, transition


@dataclass(frozen=True)
class NoiseWeights:
    sigma_obs: float = 0.3
    sigma_mul: float = 0.7
    eps_obs: float = 2.0
    eps_mul: float = 15.0

    def __post_init__(self):
        for name in ("sigma_obs", "sigma_mul", "eps_obs", "eps_mul"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")


@dataclass
class FactorLinearization:
    """Error, one Jacobian block per connected variable, and its weight.

    Isotropic factors carry ``sigma``; the GP prior factor carries a full
    ``information`` matrix instead.
    """

    error: np.ndarray
    jacobians: list
    sigma: float | None = None
    information: np.ndarray | None = None

    def __post_init__(self):
        self.error = np.atleast_1d(np.asarray(self.error, dtype=float))
        m = self.error.size
        if self.information is None:
            if self.sigma is None:
                raise ValueError("either sigma or information is required")
            self.information = np.eye(m) / self.sigma**2
        for J in self.jacobians:
            if J.shape[0] != m:
                raise ValueError("Jacobian rows must match the error dimension")

    @property
    def cost(self) -> float:
        return 0.5 * float(self.error @ self.information @ self.error)

    def hessian_blocks(self):
        """Blocks J_a^T W J_b over all pairs of connected variables."""
        W = self.information
        return [[Ja.T @ W @ Jb for Jb in self.jacobians] for Ja in self.jacobians]


def hinge_static(d_signed, eps_obs):
    d = np.asarray(d_signed, dtype=float)
    out = np.where(d <= eps_obs, eps_obs - d, 0.0)
    return float(out) if out.ndim == 0 else out


def hinge_mutual(p_j, p_j2, eps_mul) -> float:
    d = float(np.linalg.norm(np.asarray(p_j, float) - np.asarray(p_j2, float)))
    return eps_mul - d if d <= eps_mul else 0.0


def mutual_jacobian(p_j, p_j2, eps_mul) -> np.ndarray:
    """d(hinge)/d(p_j); the block for the other agent is its negation."""
    rel = np.asarray(p_j2, float) - np.asarray(p_j, float)
    d = float(np.linalg.norm(rel))
    if d == 0.0 or d > eps_mul:
        return np.zeros_like(rel)
    if d == eps_mul:
        return 0.5 * rel / d
    return rel / d


def static_hinge_batch(points, sdf: SignedDistanceField, radius, eps_obs):
    """Errors (n,) and position Jacobians (n, 2) of static hinges at many points."""
    dist, grad = sdf_query(sdf, np.atleast_2d(points))
    clearance = dist - radius
    active = clearance <= eps_obs
    err = np.where(active, eps_obs - clearance, 0.0)
    jac = np.where(active[:, None], -grad, 0.0)
    return err, jac


def mutual_hinge_batch(p_a, p_b, eps_mul):
    """Errors (n,) and Jacobians (n, 2) w.r.t. ``p_a`` for many agent pairs."""
    rel = p_b - p_a
    d = np.sqrt(np.einsum("ij,ij->i", rel, rel))
    err = np.where(d <= eps_mul, eps_mul - d, 0.0)
    scale = np.zeros_like(d)
    inside = (d < eps_mul) & (d > 0)
    scale[inside] = 1.0 / d[inside]
    edge = d == eps_mul
    scale[edge] = 0.5 / d[edge]
    return err, rel * scale[:, None]


def _pos_dim(state) -> int:
    return np.asarray(state).size // 2


def static_factor(state, sdf: SignedDistanceField, radius: float, weights: NoiseWeights) -> FactorLinearization:
    state = np.asarray(state, dtype=float)
    d = _pos_dim(state)
    err, jac = static_hinge_batch(state[None, :d], sdf, radius, weights.eps_obs)
    J = np.zeros((1, 2 * d))
    J[0, :d] = jac[0]
    return FactorLinearization(err, [J], sigma=weights.sigma_obs)


def mutual_factor(x_j, x_j2, weights: NoiseWeights) -> FactorLinearization:
    x_j = np.asarray(x_j, dtype=float)
    x_j2 = np.asarray(x_j2, dtype=float)
    if x_j.shape != x_j2.shape:
        raise ValueError("agents must share the workspace dimension")
    d = _pos_dim(x_j)
    err, g = mutual_hinge_batch(x_j[None, :d], x_j2[None, :d], weights.eps_mul)
    Ja = np.zeros((1, 2 * d))
    Jb = np.zeros((1, 2 * d))
    Ja[0, :d] = g[0]
    Jb[0, :d] = -g[0]
    return FactorLinearization(err, [Ja, Jb], sigma=weights.sigma_mul)


def interpolated_factor(kind, states, coeffs: InterpolationCoeffs, weights: NoiseWeights,
                        sdf=None, radius=None, dt_interval=None) -> FactorLinearization:
    """Collision factor evaluated at a GP-interpolated state.

    ``states`` is ``(x_i, x_next)`` for ``kind="static"`` and
    ``(x_i, x_next, y_i, y_next)`` for ``kind="mutual"``. Jacobians are
    chained onto every support state through lam and psi.
    """
    if dt_interval is not None and not np.isclose(coeffs.dt_interval, dt_interval, rtol=1e-12, atol=0):
        raise ValueError(f"coefficients built for dt={coeffs.dt_interval}, interval has dt={dt_interval}")
    lam, psi = coeffs.lam, coeffs.psi

    def at_tau(a, b):
        return lam @ np.asarray(a, float) + psi @ np.asarray(b, float)

    if kind == "static":
        if len(states) != 2:
            raise ValueError("static interpolated factor takes two support states")
        base = static_factor(at_tau(*states), sdf, radius, weights)
        J = base.jacobians[0]
        return FactorLinearization(base.error, [J @ lam, J @ psi], sigma=base.sigma)
    if kind == "mutual":
        if len(states) != 4:
            raise ValueError("mutual interpolated factor takes four support states")
        x_i, x_next, y_i, y_next = states
        base = mutual_factor(at_tau(x_i, x_next), at_tau(y_i, y_next), weights)
        Ja, Jb = base.jacobians
        return FactorLinearization(base.error, [Ja @ lam, Ja @ psi, Jb @ lam, Jb @ psi], sigma=base.sigma)
    raise ValueError(f"unknown factor kind {kind!r}")


def anchor_factor(state, target, sigma_anchor: float = 1e-4) -> FactorLinearization:
    state = np.asarray(state, dtype=float)
    return FactorLinearization(state - np.asarray(target, float), [np.eye(state.size)], sigma=sigma_anchor)


def gp_prior_factor(x_i, x_next, dt: float, qc, mu_i=None, mu_next=None) -> FactorLinearization:
    err = gp_prior_error(x_i, x_next, dt, mu_i, mu_next)
    n = err.size
    return FactorLinearization(err, [transition(dt, n // 2), -np.eye(n)], information=process_noise_inv(dt, qc))
