# Occupancy grids, signed distance fields and A* seeding.
import os
import tempfile

import numpy as np

from mulgpmp import OccupancyGrid, astar_path, compute_sdf, path_to_trajectory, sdf_query
from mulgpmp.environment import dump_map, load_map

# %% a 20 m x 12 m room with a wall that has a gap on top
grid = OccupancyGrid.empty(0, 0, 20, 12, 0.25).with_rectangles([(9, 0, 11, 8)])
print(dump_map(grid).splitlines()[0], "(header: width height cell_size origin_x origin_y)")

# %% signed distance and its gradient
sdf = compute_sdf(grid)
for p in [(5.0, 5.0), (8.5, 4.0), (10.0, 4.0), (10.0, 10.0)]:
    d, g = sdf_query(sdf, p)
    print(f"sdf{p} = {d:6.2f}  grad = {np.round(g, 2)}")

# %% A* on the inflated, coarsened grid, resampled into support states
path = astar_path(grid, (3, 3), (17, 3), downsample_factor=2, inflation=1.0)
print(f"A* path: {len(path.waypoints)} waypoints, {path.length:.2f} m")
traj = path_to_trajectory(path, N=9, t0=0.0, tN=10.0)
print("support positions:\n", np.round(traj.positions, 2))

# %% maps round-trip through the text format
with tempfile.TemporaryDirectory() as tmp:
    f = os.path.join(tmp, "room.map")
    with open(f, "w") as fh:
        fh.write(dump_map(grid))
    print("round trip equal:", load_map(f) == grid)
