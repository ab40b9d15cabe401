# Constant-velocity GP prior: transition, process noise, interpolation
# and the sparse inverse kernel.
import numpy as np

from mulgpmp import ConstantVelocityModel, PriorMean, assemble_inverse_kernel, interp_coeffs, interpolate

np.set_printoptions(precision=3, suppress=True, linewidth=120)

# %% one interval of a 2-D double integrator
model = ConstantVelocityModel(workspace_dim=2, qc=1.0)
dt = 10.0 / 9
print("Phi(dt) =\n", model.transition(dt))
print("Q(dt) =\n", model.process_noise_cov(dt))

# %% interpolating between two support states
x0 = np.array([0.0, 0.0, 1.0, 0.0])
x1 = np.array([1.0, 0.5, 1.0, 1.0])
for k in range(0, 11, 2):
    tau = k * dt / 10
    print(f"tau={tau:5.3f}  x(tau) = {interpolate(x0, x1, interp_coeffs(dt, tau, np.eye(2)))}")

# a straight line at constant speed stays exactly on the line
x_cv = model.transition(dt) @ x0
mid = interpolate(x0, x_cv, model.interp_coeffs(dt, dt / 2))
print("midpoint of a constant-velocity interval:", mid, "expected", model.transition(dt / 2) @ x0)

# %% inverse kernel: block tridiagonal, one 4x4 block per support state
N = 5
Kinv = assemble_inverse_kernel(model, PriorMean(np.zeros((N + 1, 4)), 1e-2 * np.eye(4)), N, dt)
pattern = (abs(Kinv.toarray()).reshape(N + 1, 4, N + 1, 4).sum(axis=(1, 3)) > 0).astype(int)
print("nonzero block pattern of K^-1:\n", pattern)
