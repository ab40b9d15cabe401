"""Constant-velocity Gaussian-process trajectory prior.

The prior is generated by a white-noise-on-acceleration double integrator.
Everything here is closed form: the transition matrix, the process noise
covariance between two times, the O(1) interpolation coefficients and the
block-tridiagonal inverse kernel of a whole support trajectory.

State layout is ``[position (d), velocity (d)]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


class NumericalError(ArithmeticError):
    """A matrix that must be invertible/finite was not."""


def _check_qc(qc) -> np.ndarray:
    qc = np.atleast_2d(np.asarray(qc, dtype=float))
    if qc.shape[0] != qc.shape[1]:
        raise ValueError(f"qc must be square, got shape {qc.shape}")
    if not np.allclose(qc, qc.T):
        raise ValueError("qc must be symmetric")
    try:
        np.linalg.cholesky(qc)
    except np.linalg.LinAlgError:
        raise ValueError("qc must be positive definite") from None
    return qc


def transition(dt: float, d: int = 2) -> np.ndarray:
    """State transition Phi(t + dt, t) of the double integrator."""
    if dt < 0:
        raise ValueError(f"dt must be non-negative, got {dt}")
    eye = np.eye(d)
    phi = np.eye(2 * d)
    phi[:d, d:] = dt * eye
    return phi


def _noise_blocks(dt: float) -> np.ndarray:
    return np.array([[dt**3 / 3.0, dt**2 / 2.0], [dt**2 / 2.0, dt]])


def _noise_cov(dt: float, qc: np.ndarray) -> np.ndarray:
    # dt = 0 allowed here; interpolation needs Q(0) = 0.
    return np.kron(_noise_blocks(dt), qc)


def process_noise_cov(dt: float, qc) -> np.ndarray:
    """Process noise covariance Q accumulated over an interval of length dt."""
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    return _noise_cov(dt, _check_qc(qc))


def process_noise_inv(dt: float, qc) -> np.ndarray:
    """Closed-form inverse of :func:`process_noise_cov`."""
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    qc = _check_qc(qc)
    m_inv = np.array([[12.0 / dt**3, -6.0 / dt**2], [-6.0 / dt**2, 4.0 / dt]])
    return np.kron(m_inv, np.linalg.inv(qc))


@dataclass(frozen=True)
class ConstantVelocityModel:
    """Double-integrator LTV-SDE with power spectral density ``qc``.

    ``qc`` may be given as a scalar (isotropic) or a d x d SPD matrix.
    """

    workspace_dim: int = 2
    qc: np.ndarray = field(default=1.0)

    def __post_init__(self):
        qc = np.asarray(self.qc, dtype=float)
        if qc.ndim == 0:
            qc = float(qc) * np.eye(self.workspace_dim)
        qc = _check_qc(qc)
        if qc.shape[0] != self.workspace_dim:
            raise ValueError("qc dimension does not match workspace_dim")
        qc.setflags(write=False)
        object.__setattr__(self, "qc", qc)

    @property
    def state_dim(self) -> int:
        return 2 * self.workspace_dim

    def transition(self, dt: float) -> np.ndarray:
        return transition(dt, self.workspace_dim)

    def process_noise_cov(self, dt: float) -> np.ndarray:
        return process_noise_cov(dt, self.qc)

    def process_noise_inv(self, dt: float) -> np.ndarray:
        return process_noise_inv(dt, self.qc)

    def interp_coeffs(self, dt_interval: float, tau_offset: float) -> "InterpolationCoeffs":
        return interp_coeffs(dt_interval, tau_offset, self.qc)

    def propagate_mean(self, x0, num_intervals: int, dt: float) -> np.ndarray:
        """Zero-input mean trajectory started at ``x0``."""
        phi = self.transition(dt)
        out = np.empty((num_intervals + 1, self.state_dim))
        out[0] = x0
        for i in range(num_intervals):
            out[i + 1] = phi @ out[i]
        return out


@dataclass(frozen=True)
class SupportTrajectory:
    """States at N+1 equidistant knot times between t0 and tN."""

    t0: float
    tN: float
    states: np.ndarray

    def __post_init__(self):
        states = np.array(self.states, dtype=float)
        if states.ndim != 2 or states.shape[0] < 2 or states.shape[1] % 2:
            raise ValueError(f"states must be (N+1, 2d) with N >= 1, got {states.shape}")
        if not self.tN > self.t0:
            raise ValueError("tN must be greater than t0")
        states.setflags(write=False)
        object.__setattr__(self, "states", states)

    @property
    def num_intervals(self) -> int:
        return self.states.shape[0] - 1

    @property
    def dt(self) -> float:
        return (self.tN - self.t0) / self.num_intervals

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.num_intervals + 1)

    @property
    def workspace_dim(self) -> int:
        return self.states.shape[1] // 2

    @property
    def positions(self) -> np.ndarray:
        return self.states[:, : self.workspace_dim]

    @property
    def velocities(self) -> np.ndarray:
        return self.states[:, self.workspace_dim :]


@dataclass(frozen=True)
class PriorMean:
    mean: np.ndarray
    K0: np.ndarray

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float)
        K0 = np.array(self.K0, dtype=float)
        if K0.shape != (mean.shape[1], mean.shape[1]):
            raise ValueError("K0 must be (2d, 2d)")
        mean.setflags(write=False)
        K0.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "K0", K0)


@dataclass(frozen=True)
class InterpolationCoeffs:
    lam: np.ndarray
    psi: np.ndarray
    tau: float
    dt_interval: float


def interp_coeffs(dt_interval: float, tau_offset: float, qc) -> InterpolationCoeffs:
    """Coefficients such that x(tau) - mu(tau) = lam (x_i - mu_i) + psi (x_{i+1} - mu_{i+1})."""
    if dt_interval <= 0:
        raise ValueError(f"dt_interval must be positive, got {dt_interval}")
    if not 0.0 <= tau_offset <= dt_interval:
        raise ValueError(f"tau_offset {tau_offset} outside [0, {dt_interval}]")
    qc = _check_qc(qc)
    d = qc.shape[0]
    q_tau = _noise_cov(tau_offset, qc)
    phi_rest = transition(dt_interval - tau_offset, d)
    psi = q_tau @ phi_rest.T @ process_noise_inv(dt_interval, qc)
    lam = transition(tau_offset, d) - psi @ transition(dt_interval, d)
    return InterpolationCoeffs(lam=lam, psi=psi, tau=tau_offset, dt_interval=dt_interval)


def interpolate(x_i, x_next, coeffs: InterpolationCoeffs, mu_i=None, mu_next=None, mu_tau=None):
    """GP-interpolated state between two support states.

    Mean arguments default to zero; any constant-velocity mean gives the same
    result as the zero mean.
    """
    x_i = np.asarray(x_i, dtype=float)
    x_next = np.asarray(x_next, dtype=float)
    n = coeffs.lam.shape[0]
    zero = np.zeros(n)
    mu_i = zero if mu_i is None else np.asarray(mu_i, dtype=float)
    mu_next = zero if mu_next is None else np.asarray(mu_next, dtype=float)
    mu_tau = zero if mu_tau is None else np.asarray(mu_tau, dtype=float)
    for name, v in (("x_i", x_i), ("x_next", x_next), ("mu_i", mu_i), ("mu_next", mu_next), ("mu_tau", mu_tau)):
        if v.shape != (n,):
            raise ValueError(f"{name} has shape {v.shape}, expected ({n},)")
    return mu_tau + coeffs.lam @ (x_i - mu_i) + coeffs.psi @ (x_next - mu_next)


def gp_prior_error(x_i, x_next, dt: float, mu_i=None, mu_next=None) -> np.ndarray:
    """Error of the GP prior factor between two consecutive support states."""
    x_i = np.asarray(x_i, dtype=float)
    x_next = np.asarray(x_next, dtype=float)
    if x_i.shape != x_next.shape or x_i.ndim != 1 or x_i.size % 2:
        raise ValueError(f"state shapes {x_i.shape} and {x_next.shape} are incompatible")
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if mu_i is not None:
        x_i = x_i - np.asarray(mu_i, dtype=float)
    if mu_next is not None:
        x_next = x_next - np.asarray(mu_next, dtype=float)
    return transition(dt, x_i.size // 2) @ x_i - x_next


def assemble_inverse_kernel(model: ConstantVelocityModel, prior: PriorMean, N: int, dt: float) -> sp.csr_matrix:
    """Sparse block-tridiagonal K^{-1} = A^{-T} Q^{-1} A^{-1} of one agent.

    Built block by block rather than through the triple product, so that
    blocks with |i - j| >= 2 are structurally absent.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    n = model.state_dim
    try:
        k0_inv = np.linalg.inv(prior.K0)
    except np.linalg.LinAlgError:
        raise NumericalError("K0 (block 0) is not invertible") from None
    if not np.all(np.isfinite(k0_inv)):
        raise NumericalError("K0 (block 0) is not invertible")
    try:
        q_inv = model.process_noise_inv(dt)
    except ValueError as exc:
        raise NumericalError(f"Q block 1 is not invertible: {exc}") from None

    phi = model.transition(dt)
    diag_first = phi.T @ q_inv @ phi
    off = -phi.T @ q_inv  # block (i, i+1)

    blocks = [[None] * (N + 1) for _ in range(N + 1)]
    for i in range(N + 1):
        block = np.zeros((n, n))
        block += k0_inv if i == 0 else q_inv
        if i < N:
            block += diag_first
            blocks[i][i + 1] = sp.coo_matrix(off)
            blocks[i + 1][i] = sp.coo_matrix(off.T)
        blocks[i][i] = sp.coo_matrix(block)
    return sp.bmat(blocks, format="csr")
