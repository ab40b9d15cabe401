# Collision factors and their Jacobians.
import numpy as np

from mulgpmp import NoiseWeights, interp_coeffs, interpolated_factor, mutual_factor
from mulgpmp.factors import hinge_mutual, hinge_static, mutual_jacobian

w = NoiseWeights()  # eps_obs=2, sigma_obs=0.3, eps_mul=15, sigma_mul=0.7
print(w)

# the two hinges are flat outside the safety distance and linear inside
for d in [3.0, 2.0, 0.5, -0.5]:
    print(f"static hinge at d={d:4.1f}: {hinge_static(d, w.eps_obs)}")
for other in [(20, 0), (10, 0), (3, 4), (0, 0)]:
    print(f"mutual hinge (0,0)-{other}: {hinge_mutual((0, 0), other, w.eps_mul):5.1f}, "
          f"grad {mutual_jacobian((0, 0), other, w.eps_mul)}")

# %% a mutual factor between two agents 10 m apart pushes them apart
lin = mutual_factor([0, 0, 1, 0], [10, 0, -1, 0], w)
print("error", lin.error, "cost", round(lin.cost, 3))
print("J_a", lin.jacobians[0], "J_b", lin.jacobians[1])

# %% the interpolated version spreads the same gradient over four support states
dt = 10.0 / 9
c = interp_coeffs(dt, 0.4 * dt, np.eye(2))
states = [np.array(s, float) for s in ([0, 0, 1, 0], [1.1, 0, 1, 0], [6, 0, -1, 0], [4.9, 0, -1, 0])]
lin = interpolated_factor("mutual", states, c, w, dt_interval=dt)
for name, J in zip(["x_i", "x_i+1", "y_i", "y_i+1"], lin.jacobians):
    print(f"d e / d {name:5s} = {np.round(J, 3)}")
