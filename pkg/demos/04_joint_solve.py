# Joint planning of a five-robot formation change on one factor graph.
import numpy as np

from mulgpmp import build_graph, formation_permutations, optimize, run_joint

scenario = formation_permutations(5)[57]
print(scenario.name, "starts\n", np.round(scenario.starts, 2), "\ngoals\n", np.round(scenario.goals, 2))

graph = build_graph(scenario)
print(graph.describe())
print("system size", graph.num_variables, "bandwidth", graph._bandwidth)

# %% Levenberg-Marquardt from the (slightly nudged) straight lines
X, stats = optimize(graph, scenario.initial_guess())
print(f"{stats.iterations} iterations, reason: {stats.reason}")
print("cost trace:", np.round(stats.cost_trace, 1))

# %% full run: densify to 91 states and check collisions
result = run_joint(scenario)
print(f"success={result.success}  min center distance {result.min_agent_clearance:.2f} m  "
      f"smoothness {result.smoothness:.2f}  time {result.time_ms:.1f} ms")
