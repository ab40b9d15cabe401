# Two robots swap rooms through a 3.6 m corridor. Straight-line seeds
# get stuck on the wall; A* seeds let the predictive factors sort out
# who waits.
import numpy as np

from mulgpmp import hallway_scenario, render_svg, run_joint

for init in ("line", "astar"):
    scenario = hallway_scenario(init=init)
    res = run_joint(scenario)
    print(f"{init:6s} success={res.success}  static clearance {res.min_static_clearance:6.2f} m  "
          f"agent distance {res.min_agent_clearance:5.2f} m  {res.iterations} iterations")

np.set_printoptions(precision=1, suppress=True, linewidth=120)
print("support positions (agent 0 | agent 1):")
print(np.hstack([res.support[0, :, :2], res.support[1, :, :2]]))

with open("hallway.svg", "w") as fh:
    fh.write(render_svg(scenario, res.trajectories))
print("wrote hallway.svg")
